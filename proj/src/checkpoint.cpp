// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "simcr/pipeline.hpp"

namespace simcr {

namespace {

constexpr char kMagic[8] = {'S', 'I', 'M', 'C', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    bytes(v.data(), v.size() * sizeof(double));
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint: truncated data");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, sizeof v);
    return v;
  }
  std::size_t count(std::size_t elem_size) {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / elem_size) {
      throw CheckpointError("checkpoint: length field exceeds the file size");
    }
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    std::string s(count(1), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(count(sizeof(double)));
    bytes(v.data(), v.size() * sizeof(double));
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const ModelConfig& c) {
  for (std::size_t v : {c.d_model, c.n_heads, c.n_enc_layers, c.n_dec_layers, c.d_ffn,
                        c.vocab_size, c.max_positions, c.frame_dim, c.conv_kernel,
                        c.conv_stride, c.conv_padding, c.conv_layers, c.conv_channels}) {
    w.u64(v);
  }
  w.f64(c.dropout_p);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  for (std::size_t* v : {&c.d_model, &c.n_heads, &c.n_enc_layers, &c.n_dec_layers,
                         &c.d_ffn, &c.vocab_size, &c.max_positions, &c.frame_dim,
                         &c.conv_kernel, &c.conv_stride, &c.conv_padding, &c.conv_layers,
                         &c.conv_channels}) {
    *v = static_cast<std::size_t>(r.u64());
  }
  c.dropout_p = r.f64();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u64(ckpt.config.hash());
  write_config(w, ckpt.config);
  w.str(ckpt.stage);
  w.u64(ckpt.step);
  w.u64(ckpt.history.size());
  for (const EvalPoint& p : ckpt.history) {
    w.u64(p.step);
    w.f64(p.val_loss);
  }
  const auto names = ckpt.params.names();
  const auto tensors = ckpt.params.tensors();
  w.u64(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    w.str(names[i]);
    w.u64(tensors[i].rank());
    for (std::size_t d : tensors[i].shape()) w.u64(d);
    w.doubles(std::vector<double>(tensors[i].data().begin(), tensors[i].data().end()));
  }
  w.u64(ckpt.optim.step_count);
  w.u64(ckpt.optim.first_moment.size());
  for (std::size_t i = 0; i < ckpt.optim.first_moment.size(); ++i) {
    w.doubles(ckpt.optim.first_moment[i]);
    w.doubles(ckpt.optim.second_moment[i]);
  }
  const std::uint64_t checksum = fnv1a(w.buffer());
  w.u64(checksum);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("save_checkpoint: cannot open " + tmp.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("load_checkpoint: cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  if (data.size() < sizeof kMagic + sizeof(std::uint64_t) ||
      std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("load_checkpoint: " + path.string() + " is not a checkpoint");
  }
  const std::string_view body(data.data(), data.size() - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body.size(), sizeof stored);
  if (fnv1a(body) != stored) {
    throw CheckpointError("load_checkpoint: checksum mismatch in " + path.string());
  }
  Reader r(body);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (const auto version = r.u32(); version != kVersion) {
    throw CheckpointError("load_checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t hash = r.u64();
  Checkpoint ckpt;
  ckpt.config = read_config(r);
  if (ckpt.config.hash() != hash) {
    throw CheckpointError("load_checkpoint: stored config hash does not match its config");
  }
  ckpt.config.validate();
  ckpt.stage = r.str();
  ckpt.step = r.u64();
  const std::size_t n_history = r.count(2 * sizeof(std::uint64_t));
  for (std::size_t i = 0; i < n_history; ++i) {
    EvalPoint p;
    p.step = r.u64();
    p.val_loss = r.f64();
    ckpt.history.push_back(p);
  }
  ckpt.params = init_params(ckpt.config, 0);
  std::vector<std::string> expected_names = ckpt.params.names();
  auto tensors = ckpt.params.tensors();
  if (r.u64() != tensors.size()) {
    throw CheckpointError("load_checkpoint: parameter count differs from the config");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (r.str() != expected_names[i]) {
      throw CheckpointError("load_checkpoint: unexpected parameter name at slot " +
                            std::to_string(i));
    }
    ad::Shape shape(r.count(sizeof(std::uint64_t)));
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    if (shape != tensors[i].shape()) {
      throw CheckpointError("load_checkpoint: shape mismatch for " + expected_names[i]);
    }
    std::vector<double> values = r.doubles();
    if (values.size() != tensors[i].numel()) {
      throw CheckpointError("load_checkpoint: size mismatch for " + expected_names[i]);
    }
    std::copy(values.begin(), values.end(), tensors[i].mutable_data().begin());
  }
  ckpt.optim.step_count = r.u64();
  const std::size_t slots = r.count(2 * sizeof(std::uint64_t));
  if (slots != 0 && slots != tensors.size()) {
    throw CheckpointError("load_checkpoint: optimizer slot count mismatch");
  }
  for (std::size_t i = 0; i < slots; ++i) {
    ckpt.optim.first_moment.push_back(r.doubles());
    ckpt.optim.second_moment.push_back(r.doubles());
    if (ckpt.optim.first_moment.back().size() != tensors[i].numel() ||
        ckpt.optim.second_moment.back().size() != tensors[i].numel()) {
      throw CheckpointError("load_checkpoint: optimizer slot size mismatch");
    }
  }
  if (!r.done()) throw CheckpointError("load_checkpoint: trailing bytes");
  return ckpt;
}

Checkpoint load_checkpoint_for(const std::filesystem::path& path,
                               const ModelConfig& expected, bool allow_mismatch) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.hash() != expected.hash() && !allow_mismatch) {
    throw CheckpointError("checkpoint " + path.string() +
                          " was trained with a different model configuration "
                          "(pass the override flag to load it anyway)");
  }
  return ckpt;
}

std::uint64_t params_hash(const ModelParams& params) {
  std::uint64_t h = fnv1a("params");
  params.visit([&](const std::string& name, const ad::Tensor& t) {
    h = fnv1a(name, h);
    const auto data = t.data();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(data.data()),
                               data.size() * sizeof(double)),
              h);
  });
  return h;
}

}  // namespace simcr
