// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "simcr/vocab.hpp"

namespace simcr {

using ad::Tensor;

namespace {

constexpr double kMaskedScore = -1e9;

Tensor linear(const Tensor& x, const Linear& l) {
  return ad::affine(x, l.weight, l.bias);
}

Tensor norm(const Tensor& x, const Norm& n) {
  return ad::layer_norm(x, n.gain, n.bias);
}

// Multi-head attention over padded batches. `mask` has B*H*Tq*Tk entries,
// nonzero where the key is hidden from the query.
Tensor attention(const Attention& p, const Tensor& xq, const Tensor& xkv,
                 std::size_t heads, const std::vector<std::uint8_t>& mask) {
  const std::size_t bs = xq.dim(0), tq = xq.dim(1), tk = xkv.dim(1);
  const std::size_t d = xq.dim(2), dh = d / heads;
  auto split_heads = [&](const Tensor& t, std::size_t len) {
    return ad::transpose_as(t, {bs, len, heads, dh}, 1, 2, {bs * heads, len, dh});
  };
  Tensor q = split_heads(linear(xq, p.query), tq);
  Tensor k = split_heads(linear(xkv, p.key), tk);
  Tensor v = split_heads(linear(xkv, p.value), tk);
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k, 1, 2)),
                            1.0 / std::sqrt(static_cast<double>(dh)));
  scores = ad::masked_fill(scores, mask, kMaskedScore);
  Tensor weights = ad::softmax(scores, 2);
  Tensor ctx = ad::matmul(weights, v);  // [B*H, Tq, dh]
  ctx = ad::transpose_as(ctx, {bs, heads, tq, dh}, 1, 2, {bs, tq, d});
  return linear(ctx, p.out);
}

std::vector<std::uint8_t> key_padding_mask(const std::vector<std::size_t>& lengths,
                                           std::size_t heads, std::size_t tq,
                                           std::size_t tk, bool causal) {
  std::vector<std::uint8_t> mask(lengths.size() * heads * tq * tk, 0);
  std::size_t i = 0;
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t q = 0; q < tq; ++q) {
        for (std::size_t k = 0; k < tk; ++k, ++i) {
          mask[i] = (k >= lengths[b]) || (causal && k > q);
        }
      }
    }
  }
  return mask;
}

Tensor xavier(Rng& rng, ad::Shape shape, double fan_in, double fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear make_linear(Rng& rng, std::size_t in, std::size_t out) {
  return {xavier(rng, {in, out}, static_cast<double>(in), static_cast<double>(out)),
          Tensor::zeros({out}, true)};
}

Norm make_norm(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

Attention make_attention(Rng& rng, std::size_t d) {
  Attention a;
  a.query = make_linear(rng, d, d);
  a.key = make_linear(rng, d, d);
  a.value = make_linear(rng, d, d);
  a.out = make_linear(rng, d, d);
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("ModelConfig: " + what);
  };
  if (d_model == 0 || n_heads == 0) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_model % 2 != 0) fail("d_model must be even (sinusoidal positions)");
  if (vocab_size <= static_cast<std::size_t>(Vocab::kFirstWord)) {
    fail("vocab_size must exceed the reserved and tag tokens");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0,1)");
  if (conv_layers == 0 || conv_kernel == 0 || conv_stride == 0) {
    fail("conv stack must have positive layers, kernel and stride");
  }
  if (frame_dim == 0 || d_ffn == 0 || max_positions == 0) {
    fail("frame_dim, d_ffn and max_positions must be positive");
  }
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "d_model=" << d_model << "\nn_heads=" << n_heads
     << "\nn_enc_layers=" << n_enc_layers << "\nn_dec_layers=" << n_dec_layers
     << "\nd_ffn=" << d_ffn << "\nvocab_size=" << vocab_size
     << "\nmax_positions=" << max_positions << "\nframe_dim=" << frame_dim
     << "\nconv_kernel=" << conv_kernel << "\nconv_stride=" << conv_stride
     << "\nconv_padding=" << conv_padding << "\nconv_layers=" << conv_layers
     << "\nconv_channels=" << conv_channels << '\n';
  return os.str();
}

std::uint64_t ModelConfig::hash() const { return fnv1a(canonical()); }

std::size_t ModelConfig::frontend_length(std::size_t frames) const {
  const ad::Conv1dSpec spec{conv_stride, conv_padding};
  std::size_t len = frames;
  for (std::size_t i = 0; i < conv_layers && len > 0; ++i) {
    len = ad::conv1d_out_len(len, conv_kernel, spec);
  }
  return len;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  visit([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  visit([&](const std::string& n, const Tensor&) { out.push_back(n); });
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  copy.visit([](const std::string&, Tensor& t) { t = t.clone(); });
  return copy;
}

void ModelParams::zero_grad() {
  visit([](const std::string&, Tensor& t) { t.zero_grad(); });
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "init_params"));
  const std::size_t d = config.d_model;
  ModelParams p;
  std::size_t in = config.frame_dim;
  for (std::size_t i = 0; i < config.conv_layers; ++i) {
    const std::size_t out = i + 1 == config.conv_layers ? d : config.conv_channels;
    const double k = static_cast<double>(config.conv_kernel);
    p.frontend.push_back(
        {xavier(rng, {out, in, config.conv_kernel}, static_cast<double>(in) * k,
                static_cast<double>(out) * k),
         Tensor::zeros({out}, true)});
    in = out;
  }
  {
    const double limit = std::sqrt(3.0 / static_cast<double>(d));
    std::vector<double> v(config.vocab_size * d);
    for (double& x : v) x = rng.uniform(-limit, limit);
    p.embedding = Tensor::from({config.vocab_size, d}, std::move(v), true);
  }
  for (std::size_t i = 0; i < config.n_enc_layers; ++i) {
    EncoderLayer l;
    l.attn_norm = make_norm(d);
    l.self_attn = make_attention(rng, d);
    l.ffn_norm = make_norm(d);
    l.ffn_in = make_linear(rng, d, config.d_ffn);
    l.ffn_out = make_linear(rng, config.d_ffn, d);
    p.encoder.push_back(std::move(l));
  }
  p.encoder_norm = make_norm(d);
  for (std::size_t i = 0; i < config.n_dec_layers; ++i) {
    DecoderLayer l;
    l.self_norm = make_norm(d);
    l.self_attn = make_attention(rng, d);
    l.cross_norm = make_norm(d);
    l.cross_attn = make_attention(rng, d);
    l.ffn_norm = make_norm(d);
    l.ffn_in = make_linear(rng, d, config.d_ffn);
    l.ffn_out = make_linear(rng, config.d_ffn, d);
    p.decoder.push_back(std::move(l));
  }
  p.decoder_norm = make_norm(d);
  p.output = make_linear(rng, d, config.vocab_size);
  return p;
}

std::vector<std::uint8_t> EncoderOutput::mask(std::size_t b) const {
  std::vector<std::uint8_t> m(time(), 0);
  std::fill_n(m.begin(), lengths.at(b), 1);
  return m;
}

// ---------------------------------------------------------------------------

Seq2Seq::Seq2Seq(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  sinusoid_.resize(config_.max_positions * d);
  for (std::size_t pos = 0; pos < config_.max_positions; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      sinusoid_[pos * d + 2 * i] = std::sin(static_cast<double>(pos) * freq);
      sinusoid_[pos * d + 2 * i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
}

Tensor Seq2Seq::positions(std::size_t batch, std::size_t time) const {
  if (time > config_.max_positions) {
    throw std::length_error("sequence of length " + std::to_string(time) +
                            " exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  const std::size_t d = config_.d_model;
  std::vector<double> v(batch * time * d);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(sinusoid_.begin(), time * d, v.begin() + b * time * d);
  }
  return Tensor::from({batch, time, d}, std::move(v));
}

Tensor Seq2Seq::drop(const Tensor& x, ForwardMode mode) const {
  if (!mode.training || mode.rng == nullptr || config_.dropout_p == 0.0) return x;
  return ad::dropout(x, config_.dropout_p, *mode.rng);
}

Tensor Seq2Seq::speech_frontend(std::span<const FrameMatrix* const> frames,
                                std::vector<std::size_t>& out_lengths,
                                ForwardMode mode) const {
  (void)mode;
  if (frames.empty()) throw std::invalid_argument("speech_frontend: empty batch");
  const std::size_t bs = frames.size(), fd = config_.frame_dim;
  std::size_t tmax = 0;
  for (const FrameMatrix* f : frames) {
    if (f->cols != fd) {
      throw ad::ShapeError("speech_frontend: frame_dim " + std::to_string(f->cols) +
                           " differs from model frame_dim " + std::to_string(fd));
    }
    if (config_.frontend_length(f->rows) == 0) {
      throw std::invalid_argument("speech_frontend: " + std::to_string(f->rows) +
                                  " frames produce no output frame");
    }
    tmax = std::max(tmax, f->rows);
  }
  std::vector<double> x(bs * tmax * fd, 0.0);
  std::vector<std::size_t> lengths(bs);
  for (std::size_t b = 0; b < bs; ++b) {
    std::copy(frames[b]->values.begin(), frames[b]->values.end(),
              x.begin() + b * tmax * fd);
    lengths[b] = frames[b]->rows;
  }
  Tensor h = Tensor::from({bs, tmax, fd}, std::move(x));
  const ad::Conv1dSpec spec{config_.conv_stride, config_.conv_padding};
  for (const ConvLayer& layer : params_.frontend) {
    h = ad::relu(ad::conv1d(h, layer.weight, layer.bias, spec));
    const std::size_t t = h.dim(1), c = h.dim(2);
    bool ragged = false;
    for (auto& len : lengths) {
      len = ad::conv1d_out_len(len, config_.conv_kernel, spec);
      ragged = ragged || len != t;
    }
    // Zero the batch padding so it reads like the conv's own zero padding.
    if (ragged) {
      std::vector<double> keep(bs * t * c, 0.0);
      for (std::size_t b = 0; b < bs; ++b) {
        std::fill_n(keep.begin() + b * t * c, lengths[b] * c, 1.0);
      }
      h = ad::multiply(h, Tensor::from({bs, t, c}, std::move(keep)));
    }
  }
  out_lengths = std::move(lengths);
  return h;
}

Tensor Seq2Seq::encoder_stack(Tensor x, const std::vector<std::size_t>& lengths,
                              ForwardMode mode) const {
  const std::size_t t = x.dim(1);
  const auto mask = key_padding_mask(lengths, config_.n_heads, t, t, false);
  x = drop(x, mode);
  for (const EncoderLayer& layer : params_.encoder) {
    Tensor h = norm(x, layer.attn_norm);
    h = attention(layer.self_attn, h, h, config_.n_heads, mask);
    x = ad::add(x, drop(h, mode));
    h = norm(x, layer.ffn_norm);
    h = linear(ad::relu(linear(h, layer.ffn_in)), layer.ffn_out);
    x = ad::add(x, drop(h, mode));
  }
  return norm(x, params_.encoder_norm);
}

EncoderOutput Seq2Seq::encode_text(std::span<const std::vector<int>> tokens,
                                   ForwardMode mode) const {
  if (tokens.empty()) throw std::invalid_argument("encode_text: empty batch");
  const std::size_t bs = tokens.size(), d = config_.d_model;
  std::size_t tmax = 0;
  for (const auto& seq : tokens) {
    if (seq.empty()) throw std::invalid_argument("encode_text: empty sentence");
    tmax = std::max(tmax, seq.size());
  }
  std::vector<int> ids(bs * tmax, Vocab::kPad);
  std::vector<std::size_t> lengths(bs);
  for (std::size_t b = 0; b < bs; ++b) {
    std::copy(tokens[b].begin(), tokens[b].end(), ids.begin() + b * tmax);
    lengths[b] = tokens[b].size();
  }
  Tensor emb = ad::embedding_lookup(params_.embedding, ids);
  emb = ad::scale(ad::reshape(emb, {bs, tmax, d}),
                  std::sqrt(static_cast<double>(d)));
  Tensor x = ad::add(emb, positions(bs, tmax));
  return {encoder_stack(std::move(x), lengths, mode), std::move(lengths)};
}

EncoderOutput Seq2Seq::encode_speech(std::span<const FrameMatrix* const> frames,
                                     ForwardMode mode) const {
  std::vector<std::size_t> lengths;
  Tensor h = speech_frontend(frames, lengths, mode);
  Tensor x = ad::add(h, positions(h.dim(0), h.dim(1)));
  return {encoder_stack(std::move(x), lengths, mode), std::move(lengths)};
}

Tensor Seq2Seq::decode(const EncoderOutput& enc,
                       std::span<const std::vector<int>> inputs,
                       ForwardMode mode) const {
  const std::size_t bs = inputs.size(), d = config_.d_model;
  if (bs != enc.batch()) {
    throw ad::ShapeError("decode: " + std::to_string(bs) +
                         " decoder inputs for encoder batch of " +
                         std::to_string(enc.batch()));
  }
  std::size_t tmax = 0;
  for (const auto& seq : inputs) tmax = std::max(tmax, seq.size());
  if (tmax == 0) throw std::invalid_argument("decode: empty decoder input");
  std::vector<int> ids(bs * tmax, Vocab::kPad);
  std::vector<std::size_t> lengths(bs);
  for (std::size_t b = 0; b < bs; ++b) {
    std::copy(inputs[b].begin(), inputs[b].end(), ids.begin() + b * tmax);
    lengths[b] = inputs[b].size();
  }
  Tensor emb = ad::embedding_lookup(params_.embedding, ids);
  emb = ad::scale(ad::reshape(emb, {bs, tmax, d}),
                  std::sqrt(static_cast<double>(d)));
  Tensor x = drop(ad::add(emb, positions(bs, tmax)), mode);
  const std::size_t heads = config_.n_heads;
  const auto self_mask = key_padding_mask(lengths, heads, tmax, tmax, true);
  const auto cross_mask =
      key_padding_mask(enc.lengths, heads, tmax, enc.time(), false);
  for (const DecoderLayer& layer : params_.decoder) {
    Tensor h = norm(x, layer.self_norm);
    h = attention(layer.self_attn, h, h, heads, self_mask);
    x = ad::add(x, drop(h, mode));
    h = norm(x, layer.cross_norm);
    h = attention(layer.cross_attn, h, enc.states, heads, cross_mask);
    x = ad::add(x, drop(h, mode));
    h = norm(x, layer.ffn_norm);
    h = linear(ad::relu(linear(h, layer.ffn_in)), layer.ffn_out);
    x = ad::add(x, drop(h, mode));
  }
  x = norm(x, params_.decoder_norm);
  return ad::log_softmax(linear(x, params_.output), 2);
}

DecoderOutput Seq2Seq::forward_teacher_forced(
    const EncoderOutput& enc, std::span<const std::vector<int>> targets,
    int lang_tag, ForwardMode mode) const {
  if (lang_tag != Vocab::kSrcTag && lang_tag != Vocab::kTgtTag) {
    throw std::invalid_argument("forward_teacher_forced: token " +
                                std::to_string(lang_tag) +
                                " is not a registered language tag");
  }
  std::vector<std::vector<int>> inputs;
  inputs.reserve(targets.size());
  std::size_t steps = 0;
  for (const auto& y : targets) {
    if (y.size() + 1 > config_.max_positions) {
      throw std::length_error("target of length " + std::to_string(y.size()) +
                              " exceeds max_positions");
    }
    std::vector<int> in;
    in.reserve(y.size() + 1);
    in.push_back(lang_tag);
    in.insert(in.end(), y.begin(), y.end());
    steps = std::max(steps, in.size());
    inputs.push_back(std::move(in));
  }
  Tensor logp = decode(enc, inputs, mode);
  DecoderOutput out;
  out.batch = targets.size();
  out.steps = steps;
  out.targets.assign(out.batch * steps, Vocab::kPad);
  out.valid.assign(out.batch * steps, 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const auto& y = targets[b];
    for (std::size_t t = 0; t <= y.size(); ++t) {
      out.targets[b * steps + t] = t < y.size() ? y[t] : Vocab::kEos;
      out.valid[b * steps + t] = 1;
    }
  }
  out.logp = ad::reshape(logp, {out.batch * steps, config_.vocab_size});
  return out;
}

std::vector<std::vector<double>> Seq2Seq::next_token_logp(
    const EncoderOutput& enc,
    const std::vector<std::vector<int>>& prefixes) const {
  if (enc.batch() != 1) {
    throw std::invalid_argument("next_token_logp: expects a single encoded source");
  }
  ad::NoGradGuard no_grad;
  const std::size_t n = prefixes.size();
  const auto src = enc.states.data();
  std::vector<double> rep(n * src.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(src.begin(), src.end(), rep.begin() + i * src.size());
  }
  EncoderOutput tiled{
      Tensor::from({n, enc.time(), config_.d_model}, std::move(rep)),
      std::vector<std::size_t>(n, enc.lengths[0])};
  Tensor logp = decode(tiled, prefixes, ForwardMode::eval());
  const std::size_t t = logp.dim(1), v = logp.dim(2);
  std::vector<std::vector<double>> out(n);
  const auto data = logp.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t last = prefixes[i].size() - 1;
    const auto row = data.subspan((i * t + last) * v, v);
    out[i].assign(row.begin(), row.end());
  }
  return out;
}

Tensor Seq2Seq::pooled_representation(const EncoderOutput& enc) const {
  const std::size_t bs = enc.batch(), t = enc.time(), d = enc.states.dim(2);
  std::vector<std::uint8_t> hidden(bs * t * d, 0);
  for (std::size_t b = 0; b < bs; ++b) {
    if (enc.lengths[b] == 0) {
      throw std::invalid_argument("pooled_representation: item " +
                                  std::to_string(b) + " has no valid position");
    }
    std::fill(hidden.begin() + (b * t + enc.lengths[b]) * d,
              hidden.begin() + (b + 1) * t * d, 1);
  }
  Tensor masked = ad::masked_fill(enc.states, hidden,
                                  std::numeric_limits<double>::lowest());
  return ad::max_over_axis(masked, 1);
}

}  // namespace simcr
