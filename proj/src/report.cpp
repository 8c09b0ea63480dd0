// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/report.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace simcr {

using nlohmann::json;

Representations collect_representations(const Seq2Seq& model,
                                        const std::vector<Triple>& items,
                                        std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("collect_representations: chunk must be > 0");
  ad::NoGradGuard no_grad;
  Representations reps;
  const std::size_t d = model.config().d_model;
  auto rows = [&](const ad::Tensor& pooled, std::vector<std::vector<double>>& out) {
    const auto data = pooled.data();
    for (std::size_t b = 0; b < pooled.dim(0); ++b) {
      out.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(b * d),
                       data.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
    }
  };
  for (std::size_t start = 0; start < items.size(); start += chunk) {
    const std::size_t end = std::min(items.size(), start + chunk);
    std::vector<const FrameMatrix*> frames;
    std::vector<std::vector<int>> text;
    for (std::size_t i = start; i < end; ++i) {
      if (!items[i].has_speech()) {
        throw std::invalid_argument("collect_representations: item " + std::to_string(i) +
                                    " has no speech");
      }
      frames.push_back(&items[i].frames);
      text.push_back(items[i].src);
    }
    const ForwardMode mode = ForwardMode::eval();
    rows(model.pooled_representation(model.encode_speech(frames, mode)), reps.speech);
    rows(model.pooled_representation(model.encode_text(text, mode)), reps.text);
  }
  return reps;
}

Projection pca_2d(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw std::invalid_argument("pca_2d: needs at least 2 rows");
  const std::size_t d = rows.front().size();
  if (d < 2) throw std::invalid_argument("pca_2d: needs at least 2 dimensions");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rows[static_cast<std::size_t>(i)].size() != d) {
      throw std::invalid_argument("pca_2d: rows differ in dimension");
    }
    for (std::size_t j = 0; j < d; ++j) {
      x(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][j];
    }
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_2d: eigensolver failed");
  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
  Projection p;
  p.mean.assign(mean.data(), mean.data() + d);
  p.eigenvalues.assign(values.data(), values.data() + d);
  for (int c = 0; c < 2; ++c) {
    Eigen::Index arg;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0) vectors.col(c) *= -1.0;
    p.components[static_cast<std::size_t>(c)].assign(vectors.col(c).data(),
                                                     vectors.col(c).data() + d);
  }
  const Eigen::MatrixXd proj = x * vectors.leftCols(2);
  for (Eigen::Index i = 0; i < n; ++i) p.points.push_back({proj(i, 0), proj(i, 1)});
  return p;
}

void export_representations(const Representations& reps,
                            const std::filesystem::path& path) {
  if (reps.speech.size() != reps.text.size()) {
    throw std::invalid_argument("export_representations: unpaired representations");
  }
  std::vector<std::vector<double>> all = reps.speech;
  all.insert(all.end(), reps.text.begin(), reps.text.end());
  const Projection proj = pca_2d(all);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_representations: cannot open " + path.string());
  out << std::setprecision(17) << "index,modality,pc1,pc2";
  for (std::size_t j = 0; j < all.front().size(); ++j) out << ",v" << j;
  out << '\n';
  for (std::size_t r = 0; r < all.size(); ++r) {
    const bool speech = r < reps.speech.size();
    out << (speech ? r : r - reps.speech.size()) << ',' << (speech ? "speech" : "text")
        << ',' << proj.points[r][0] << ',' << proj.points[r][1];
    for (double v : all[r]) out << ',' << v;
    out << '\n';
  }
  if (!out) throw std::runtime_error("export_representations: write failed for " + path.string());
}

// ---------------------------------------------------------------------------

std::string EvalReport::to_json() const {
  json j;
  j["checkpoint"] = checkpoint;
  j["task"] = task;
  j["tag"] = tag;
  j["beam_size"] = beam_size;
  j["length_penalty"] = length_penalty;
  j["greedy"] = greedy;
  j["sentences"] = sentences;
  j["bleu"] = bleu;
  j["bleu_detail"] = {{"matches", bleu_stats.matches},
                      {"totals", bleu_stats.totals},
                      {"hyp_len", bleu_stats.hyp_len},
                      {"ref_len", bleu_stats.ref_len},
                      {"brevity_penalty", bleu_stats.brevity_penalty}};
  j["output_tokens"] = output_tokens;
  j["src_vocab_rate"] = src_vocab_rate;
  j["tgt_vocab_rate"] = tgt_vocab_rate;
  if (simsearch) {
    j["simsearch"] = {{"speech_to_text", simsearch->speech_to_text},
                      {"text_to_speech", simsearch->text_to_speech},
                      {"mean", simsearch->mean}};
  } else {
    j["simsearch"] = nullptr;
  }
  j["representation_source"] = representation_source;
  j["samples"] = json::array();
  for (const auto& s : samples) {
    j["samples"].push_back({{"reference", s.reference}, {"hypothesis", s.hypothesis}});
  }
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.tag = j.at("tag").get<std::string>();
  r.beam_size = j.at("beam_size").get<std::size_t>();
  r.length_penalty = j.at("length_penalty").get<double>();
  r.greedy = j.at("greedy").get<bool>();
  r.sentences = j.at("sentences").get<std::size_t>();
  r.bleu = j.at("bleu").get<double>();
  const json& b = j.at("bleu_detail");
  r.bleu_stats.matches = b.at("matches").get<std::array<std::size_t, 4>>();
  r.bleu_stats.totals = b.at("totals").get<std::array<std::size_t, 4>>();
  r.bleu_stats.hyp_len = b.at("hyp_len").get<std::size_t>();
  r.bleu_stats.ref_len = b.at("ref_len").get<std::size_t>();
  r.bleu_stats.brevity_penalty = b.at("brevity_penalty").get<double>();
  r.bleu_stats.bleu = r.bleu;
  r.output_tokens = j.at("output_tokens").get<std::size_t>();
  r.src_vocab_rate = j.at("src_vocab_rate").get<double>();
  r.tgt_vocab_rate = j.at("tgt_vocab_rate").get<double>();
  if (!j.at("simsearch").is_null()) {
    const json& s = j.at("simsearch");
    r.simsearch = SimSearch{s.at("speech_to_text").get<double>(),
                            s.at("text_to_speech").get<double>(), s.at("mean").get<double>()};
  }
  r.representation_source = j.at("representation_source").get<std::string>();
  for (const auto& s : j.at("samples")) {
    r.samples.push_back({s.at("reference").get<std::string>(),
                         s.at("hypothesis").get<std::string>()});
  }
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "checkpoint      " << checkpoint << '\n';
  os << "task            " << task << " (tag " << tag << ")\n";
  os << "decoding        "
     << (greedy ? std::string("greedy") : "beam " + std::to_string(beam_size))
     << ", length penalty " << length_penalty << '\n';
  os << "sentences       " << sentences << '\n';
  os << "BLEU            " << bleu << "  (BP " << std::setprecision(4)
     << bleu_stats.brevity_penalty << ", hyp/ref " << bleu_stats.hyp_len << '/'
     << bleu_stats.ref_len << ")\n";
  os << "output tokens   " << output_tokens << "  source-vocab " << src_vocab_rate
     << "  target-vocab " << tgt_vocab_rate << '\n';
  if (simsearch) {
    os << "simsearch       " << simsearch->mean << "  (speech->text "
       << simsearch->speech_to_text << ", text->speech " << simsearch->text_to_speech
       << ")\n";
    os << "representations " << representation_source << '\n';
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    os << "sample " << i << "\n  ref: " << samples[i].reference
       << "\n  hyp: " << samples[i].hypothesis << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int>> decode_items(const Seq2Seq& model,
                                           const std::vector<Triple>& items, Task task,
                                           const DecodeConfig& config, bool greedy) {
  config.validate();
  std::vector<std::vector<int>> outputs;
  outputs.reserve(items.size());
  for (const Triple& item : items) {
    EncoderOutput enc;
    {
      ad::NoGradGuard no_grad;
      if (task == Task::MT) {
        const std::vector<std::vector<int>> text{item.src};
        enc = model.encode_text(text, ForwardMode::eval());
      } else {
        if (!item.has_speech()) {
          throw std::invalid_argument("decode_items: speech task on an item without frames");
        }
        const FrameMatrix* frames[] = {&item.frames};
        enc = model.encode_speech(frames, ForwardMode::eval());
      }
    }
    outputs.push_back(strip_eos(decode(model, enc, config, greedy).tokens));
  }
  return outputs;
}

EvalReport evaluate(const Seq2Seq& model, const std::vector<Triple>& items, Task task,
                    const EvalOptions& options) {
  if (items.empty()) throw std::invalid_argument("evaluate: no items");
  const auto outputs = decode_items(model, items, task, options.decode, options.greedy);
  std::vector<std::vector<int>> refs;
  for (const Triple& t : items) refs.push_back(task == Task::ASR ? t.src : t.tgt);
  const Vocab vocab(
      (model.config().vocab_size - Vocab::kFirstWord) / 2,
      (model.config().vocab_size - Vocab::kFirstWord) / 2);

  EvalReport r;
  r.checkpoint = options.checkpoint_label;
  r.task = std::string(task_name(task));
  r.tag = options.decode.lang_tag == Vocab::kSrcTag ? "<src>" : "<tgt>";
  r.beam_size = options.greedy ? 1 : options.decode.beam_size;
  r.length_penalty = options.decode.length_penalty;
  r.greedy = options.greedy;
  r.sentences = items.size();
  r.bleu_stats = corpus_bleu_stats(outputs, refs);
  r.bleu = r.bleu_stats.bleu;
  for (const auto& o : outputs) r.output_tokens += o.size();
  r.src_vocab_rate = vocab_rate(outputs, vocab, Lang::Source);
  r.tgt_vocab_rate = vocab_rate(outputs, vocab, Lang::Target);
  if (options.diagnostics) {
    const Representations reps = collect_representations(model, items);
    r.simsearch = simsearch(reps.speech, reps.text);
    r.representation_source = "max-pooled encoder outputs of " +
                              (options.checkpoint_label.empty()
                                   ? std::string("the evaluated checkpoint")
                                   : options.checkpoint_label);
  }
  for (std::size_t i = 0; i < std::min(options.samples, items.size()); ++i) {
    r.samples.push_back({vocab.render(refs[i]), vocab.render(outputs[i])});
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title,
                        const std::string& x_label, const std::string& y_label,
                        double x_min, double x_max, double y_min, double y_max) {
  if (!(x_max > x_min) || !(y_max > y_min)) {
    throw std::invalid_argument("scatter_svg: empty axis range");
  }
  constexpr double kWidth = 640, kHeight = 480, kLeft = 70, kRight = 20, kTop = 40,
                   kBottom = 60;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  auto sx = [&](double x) {
    return kLeft + plot_w * (std::clamp(x, x_min, x_max) - x_min) / (x_max - x_min);
  };
  auto sy = [&](double y) {
    return kTop + plot_h * (1.0 - (std::clamp(y, y_min, y_max) - y_min) / (y_max - y_min));
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << xml_escape(title) << "</text>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
     << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << kTop + plot_h << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x_min + (x_max - x_min) * i / 5.0;
    const double yv = y_min + (y_max - y_min) * i / 5.0;
    os << "<text x=\"" << num(sx(xv)) << "\" y=\"" << kTop + plot_h + 18
       << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(sy(yv) + 4)
       << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 15
     << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << kTop + plot_h / 2 << "\" text-anchor=\"middle\" "
     << "transform=\"rotate(-90 18 " << kTop + plot_h / 2 << ")\">" << xml_escape(y_label)
     << "</text>\n";
  for (const ScatterPoint& p : points) {
    os << "<circle class=\"point\" cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.y))
       << "\" r=\"5\" fill=\"#e08020\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(sx(p.x) + 7) << "\" y=\"" << num(sy(p.y) - 7) << "\">"
       << xml_escape(p.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace simcr
