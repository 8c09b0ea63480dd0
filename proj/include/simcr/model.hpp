// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simcr/autodiff.hpp"
#include "simcr/frames.hpp"
#include "simcr/rng.hpp"

namespace simcr {

/// Transformer encoder-decoder with a strided conv speech frontend.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ffn = 128;
  double dropout_p = 0.1;
  std::size_t vocab_size = 133;
  std::size_t max_positions = 256;
  std::size_t frame_dim = 16;
  std::size_t conv_kernel = 5;
  std::size_t conv_stride = 2;
  std::size_t conv_padding = 2;
  std::size_t conv_layers = 2;
  std::size_t conv_channels = 64;

  void validate() const;
  /// Stable `key=value` lines; the basis of the checkpoint config hash.
  std::string canonical() const;
  std::uint64_t hash() const;
  /// Frame count after the conv stack.
  std::size_t frontend_length(std::size_t frames) const;
};

struct Linear {
  ad::Tensor weight;  // [in, out]
  ad::Tensor bias;    // [out]
};

struct Norm {
  ad::Tensor gain;
  ad::Tensor bias;
};

struct Attention {
  Linear query, key, value, out;
};

struct ConvLayer {
  ad::Tensor weight;  // [out, in, kernel]
  ad::Tensor bias;
};

struct EncoderLayer {
  Norm attn_norm;
  Attention self_attn;
  Norm ffn_norm;
  Linear ffn_in, ffn_out;
};

struct DecoderLayer {
  Norm self_norm;
  Attention self_attn;
  Norm cross_norm;
  Attention cross_attn;
  Norm ffn_norm;
  Linear ffn_in, ffn_out;
};

/// Every learnable tensor. Text and speech share everything except the conv
/// frontend (speech) and the token embedding (text); the embedding also feeds
/// the decoder input.
struct ModelParams {
  std::vector<ConvLayer> frontend;
  ad::Tensor embedding;  // [vocab, d_model]
  std::vector<EncoderLayer> encoder;
  Norm encoder_norm;
  std::vector<DecoderLayer> decoder;
  Norm decoder_norm;
  Linear output;  // d_model -> vocab

  /// Calls f(name, tensor) for every parameter in a fixed order.
  template <class F>
  void visit(F&& f);
  template <class F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& name, ad::Tensor& t) {
          f(name, static_cast<const ad::Tensor&>(t));
        });
  }

  std::vector<ad::Tensor> tensors() const;
  std::vector<std::string> names() const;
  std::size_t count() const;
  ModelParams clone() const;
  void zero_grad();
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Dropout is active only when `training` is set and a stream is supplied.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode train(Rng& rng) { return {true, &rng}; }
};

/// Padded batch of encoder states [B, T, d] plus per-item valid lengths.
struct EncoderOutput {
  ad::Tensor states;
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return lengths.size(); }
  std::size_t time() const { return states.dim(1); }
  /// 1 for valid positions of item b.
  std::vector<std::uint8_t> mask(std::size_t b) const;
};

/// Teacher-forced output rows, flattened to [B * steps, vocab].
struct DecoderOutput {
  ad::Tensor logp;
  std::vector<int> targets;          // pad id where invalid
  std::vector<std::uint8_t> valid;   // 1 for rows predicting a real token
  std::size_t batch = 0;
  std::size_t steps = 0;
};

class Seq2Seq {
 public:
  Seq2Seq(ModelConfig config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Conv stack for a batch of [T x frame_dim] inputs -> [B, T', d_model].
  ad::Tensor speech_frontend(std::span<const FrameMatrix* const> frames,
                             std::vector<std::size_t>& out_lengths,
                             ForwardMode mode) const;

  EncoderOutput encode_text(std::span<const std::vector<int>> tokens,
                            ForwardMode mode) const;
  EncoderOutput encode_speech(std::span<const FrameMatrix* const> frames,
                              ForwardMode mode) const;

  /// Decoder input is [lang_tag, y_1..y_n]; rows predict [y_1..y_n, eos].
  DecoderOutput forward_teacher_forced(const EncoderOutput& enc,
                                       std::span<const std::vector<int>> targets,
                                       int lang_tag, ForwardMode mode) const;

  /// Log-probabilities [B, T, vocab] for arbitrary decoder inputs.
  ad::Tensor decode(const EncoderOutput& enc,
                    std::span<const std::vector<int>> inputs,
                    ForwardMode mode) const;

  /// Next-token log-probabilities [prefixes, vocab] for prefixes sharing one
  /// encoded source (enc.batch() == 1). Evaluation mode, no graph.
  std::vector<std::vector<double>> next_token_logp(
      const EncoderOutput& enc,
      const std::vector<std::vector<int>>& prefixes) const;

  /// Element-wise max over valid time positions -> [B, d_model].
  ad::Tensor pooled_representation(const EncoderOutput& enc) const;

 private:
  ad::Tensor encoder_stack(ad::Tensor x, const std::vector<std::size_t>& lengths,
                           ForwardMode mode) const;
  ad::Tensor positions(std::size_t batch, std::size_t time) const;
  ad::Tensor drop(const ad::Tensor& x, ForwardMode mode) const;

  ModelConfig config_;
  ModelParams params_;
  std::vector<double> sinusoid_;  // [max_positions, d_model]
};

// ---------------------------------------------------------------------------

template <class F>
void ModelParams::visit(F&& f) {
  auto lin = [&](const std::string& name, Linear& l) {
    f(name + ".weight", l.weight);
    f(name + ".bias", l.bias);
  };
  auto norm = [&](const std::string& name, Norm& n) {
    f(name + ".gain", n.gain);
    f(name + ".bias", n.bias);
  };
  auto attn = [&](const std::string& name, Attention& a) {
    lin(name + ".query", a.query);
    lin(name + ".key", a.key);
    lin(name + ".value", a.value);
    lin(name + ".out", a.out);
  };
  for (std::size_t i = 0; i < frontend.size(); ++i) {
    const std::string p = "frontend." + std::to_string(i);
    f(p + ".weight", frontend[i].weight);
    f(p + ".bias", frontend[i].bias);
  }
  f("embedding", embedding);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    norm(p + ".attn_norm", encoder[i].attn_norm);
    attn(p + ".self_attn", encoder[i].self_attn);
    norm(p + ".ffn_norm", encoder[i].ffn_norm);
    lin(p + ".ffn_in", encoder[i].ffn_in);
    lin(p + ".ffn_out", encoder[i].ffn_out);
  }
  norm("encoder_norm", encoder_norm);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    norm(p + ".self_norm", decoder[i].self_norm);
    attn(p + ".self_attn", decoder[i].self_attn);
    norm(p + ".cross_norm", decoder[i].cross_norm);
    attn(p + ".cross_attn", decoder[i].cross_attn);
    norm(p + ".ffn_norm", decoder[i].ffn_norm);
    lin(p + ".ffn_in", decoder[i].ffn_in);
    lin(p + ".ffn_out", decoder[i].ffn_out);
  }
  norm("decoder_norm", decoder_norm);
  lin("output", output);
}

}  // namespace simcr
