// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "simcr/vocab.hpp"

namespace simcr {

using ad::Tensor;

std::string_view task_name(Task task) {
  switch (task) {
    case Task::MT: return "mt";
    case Task::ASR: return "asr";
    case Task::ST: return "st";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view name) {
  if (name == "mt" || name == "MT") return Task::MT;
  if (name == "asr" || name == "ASR") return Task::ASR;
  if (name == "st" || name == "ST") return Task::ST;
  return std::nullopt;
}

std::string_view cross_kind_name(CrossKind kind) {
  switch (kind) {
    case CrossKind::Auto: return "auto";
    case CrossKind::MtSt: return "mt-st";
    case CrossKind::Asr: return "asr";
    case CrossKind::Text: return "text";
  }
  return "?";
}

std::optional<CrossKind> parse_cross_kind(std::string_view name) {
  if (name == "auto") return CrossKind::Auto;
  if (name == "mt-st") return CrossKind::MtSt;
  if (name == "asr") return CrossKind::Asr;
  if (name == "text") return CrossKind::Text;
  return std::nullopt;
}

void ConsistencyConfig::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("label_smoothing must lie in [0, 1)");
  }
}

namespace {

std::size_t count_valid(std::span<const std::uint8_t> valid) {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void check_rows(const char* op, const Tensor& logp,
                std::span<const std::uint8_t> valid) {
  if (logp.rank() != 2 || logp.dim(0) != valid.size()) {
    throw ad::ShapeError(std::string(op) + ": expected [rows x vocab] with " +
                         std::to_string(valid.size()) + " rows, got " +
                         ad::shape_str(logp.shape()));
  }
  for (double v : logp.data()) {
    if (std::isnan(v)) throw ad::NumericalError(std::string(op) + ": NaN input row");
  }
}

Tensor row_mask(std::span<const std::uint8_t> valid, std::size_t vocab) {
  std::vector<double> m(valid.size() * vocab, 0.0);
  for (std::size_t r = 0; r < valid.size(); ++r) {
    if (valid[r]) std::fill_n(m.begin() + r * vocab, vocab, 1.0);
  }
  return Tensor::from({valid.size(), vocab}, std::move(m));
}

// Σ_v exp(a)(a - b) summed over valid rows (not yet averaged).
Tensor kl_sum(const Tensor& a, const Tensor& b, const Tensor& mask) {
  Tensor terms = ad::multiply(ad::exp(a), ad::sub(a, b));
  return ad::reduce_sum(ad::multiply(terms, mask));
}

}  // namespace

CeResult ce_label_smooth(const Tensor& logp, std::span<const int> targets,
                         std::span<const std::uint8_t> valid, double eps) {
  check_rows("ce_label_smooth", logp, valid);
  if (targets.size() != valid.size()) {
    throw ad::ShapeError("ce_label_smooth: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(valid.size()) + " rows");
  }
  if (!(eps >= 0.0 && eps < 1.0)) {
    throw std::invalid_argument("ce_label_smooth: eps must lie in [0, 1)");
  }
  const std::size_t rows = logp.dim(0), vocab = logp.dim(1);
  const std::size_t count = count_valid(valid);
  if (count == 0) throw std::invalid_argument("ce_label_smooth: no non-pad tokens");
  std::vector<double> q(rows * vocab, 0.0);
  const double floor = eps / static_cast<double>(vocab);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!valid[r]) continue;
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("ce_label_smooth: target " + std::to_string(t) +
                              " outside vocabulary");
    }
    std::fill_n(q.begin() + r * vocab, vocab, floor);
    q[r * vocab + static_cast<std::size_t>(t)] += 1.0 - eps;
  }
  Tensor weighted = ad::multiply(logp, Tensor::from({rows, vocab}, std::move(q)));
  return {ad::scale(ad::reduce_sum(weighted), -1.0 / static_cast<double>(count)),
          count};
}

Tensor crosskl(const Tensor& logp_ref, const Tensor& logp_other,
               std::span<const std::uint8_t> valid) {
  if (logp_ref.shape() != logp_other.shape()) {
    throw ad::ShapeError(
        "crosskl: row counts differ (mismatched teacher forcing): " +
        ad::shape_str(logp_ref.shape()) + " vs " +
        ad::shape_str(logp_other.shape()));
  }
  check_rows("crosskl", logp_ref, valid);
  check_rows("crosskl", logp_other, valid);
  const std::size_t count = count_valid(valid);
  if (count == 0) throw std::invalid_argument("crosskl: no non-pad tokens");
  const Tensor mask = row_mask(valid, logp_ref.dim(1));
  return ad::scale(kl_sum(logp_ref, logp_other, mask),
                   1.0 / static_cast<double>(count));
}

Tensor bikl(const Tensor& logp_a, const Tensor& logp_b,
            std::span<const std::uint8_t> valid) {
  if (logp_a.shape() != logp_b.shape()) {
    throw ad::ShapeError("bikl: shapes differ: " + ad::shape_str(logp_a.shape()) +
                         " vs " + ad::shape_str(logp_b.shape()));
  }
  check_rows("bikl", logp_a, valid);
  check_rows("bikl", logp_b, valid);
  const std::size_t count = count_valid(valid);
  if (count == 0) throw std::invalid_argument("bikl: no non-pad tokens");
  const Tensor mask = row_mask(valid, logp_a.dim(1));
  Tensor both = ad::add(kl_sum(logp_a, logp_b, mask), kl_sum(logp_b, logp_a, mask));
  return ad::scale(both, 0.5 / static_cast<double>(count));
}

// ---------------------------------------------------------------------------

namespace {

struct PassInput {
  bool speech;          // encoder input modality
  bool source_text;     // text encoder input is x (else y)
  bool target_is_src;   // decoder predicts x (else y)
  int tag;
};

PassInput pass_for(Task task) {
  switch (task) {
    case Task::MT: return {false, true, false, Vocab::kTgtTag};
    case Task::ASR: return {true, true, true, Vocab::kSrcTag};
    case Task::ST: return {true, true, false, Vocab::kTgtTag};
  }
  throw std::logic_error("unknown task");
}

DecoderOutput run_pass(const Seq2Seq& model, const std::vector<const Triple*>& items,
                       const PassInput& in, Rng& stream) {
  const ForwardMode mode = ForwardMode::train(stream);
  EncoderOutput enc;
  if (in.speech) {
    std::vector<const FrameMatrix*> frames;
    frames.reserve(items.size());
    for (const Triple* t : items) {
      if (t->frames.rows == 0) {
        throw std::invalid_argument(
            "speech task on a text-only corpus item (no frames)");
      }
      frames.push_back(&t->frames);
    }
    enc = model.encode_speech(frames, mode);
  } else {
    std::vector<std::vector<int>> text;
    text.reserve(items.size());
    for (const Triple* t : items) text.push_back(in.source_text ? t->src : t->tgt);
    enc = model.encode_text(text, mode);
  }
  std::vector<std::vector<int>> targets;
  targets.reserve(items.size());
  for (const Triple* t : items) targets.push_back(in.target_is_src ? t->src : t->tgt);
  return model.forward_teacher_forced(enc, targets, in.tag, mode);
}

std::optional<CrossKind> cross_for(Task task, CrossKind configured) {
  switch (configured) {
    case CrossKind::Auto:
      if (task == Task::ST) return CrossKind::MtSt;
      if (task == Task::ASR) return CrossKind::Asr;
      return std::nullopt;
    case CrossKind::MtSt:
      return task == Task::ST ? std::optional(CrossKind::MtSt) : std::nullopt;
    case CrossKind::Asr:
      return task == Task::ASR ? std::optional(CrossKind::Asr) : std::nullopt;
    case CrossKind::Text:
      return task == Task::MT ? std::optional(CrossKind::Text) : std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

Objective composite_objective(const Seq2Seq& model,
                              std::span<const TaskBatch> batches,
                              const ConsistencyConfig& config, Rng& rng) {
  config.validate();
  if (batches.empty()) throw std::invalid_argument("composite_objective: no batches");
  if (config.beta > 0.0) {
    bool any = false;
    for (const auto& b : batches) any = any || cross_for(b.task, config.cross).has_value();
    if (!any) {
      throw std::invalid_argument(
          "composite_objective: beta > 0 but no task in the stage carries the "
          "paired modality for the '" +
          std::string(cross_kind_name(config.cross)) + "' cross term");
    }
  }
  Objective out;
  Tensor total;
  auto accumulate = [&](const Tensor& term) {
    total = total.defined() ? ad::add(total, term) : term;
  };
  for (const TaskBatch& batch : batches) {
    if (batch.items.empty()) continue;
    const PassInput in = pass_for(batch.task);
    Rng first_stream = rng.fork();
    Rng second_stream = rng.fork();
    Rng cross_stream = rng.fork();
    const DecoderOutput first = run_pass(model, batch.items, in, first_stream);
    CeResult ce = ce_label_smooth(first.logp, first.targets, first.valid,
                                  config.label_smoothing);
    Tensor task_ce = ce.loss;
    if (config.alpha > 0.0) {
      const DecoderOutput second = run_pass(model, batch.items, in, second_stream);
      const CeResult ce2 = ce_label_smooth(second.logp, second.targets,
                                           second.valid, config.label_smoothing);
      task_ce = ad::scale(ad::add(ce.loss, ce2.loss), 0.5);
      const Tensor intra = bikl(first.logp, second.logp, first.valid);
      out.parts.intra += intra.item();
      accumulate(ad::scale(intra, config.alpha));
    }
    out.parts.ce += task_ce.item();
    out.parts.token_count += ce.token_count;
    accumulate(task_ce);

    const auto kind = cross_for(batch.task, config.cross);
    if (config.beta > 0.0 && kind) {
      Tensor ref, other;
      bool text_is_ref = false;
      switch (*kind) {
        case CrossKind::MtSt: {
          const DecoderOutput text_pass = run_pass(
              model, batch.items, {false, true, false, Vocab::kTgtTag}, cross_stream);
          ref = text_pass.logp;
          other = first.logp;
          text_is_ref = true;
          break;
        }
        case CrossKind::Asr: {
          const DecoderOutput copy_pass = run_pass(
              model, batch.items, {false, true, true, Vocab::kSrcTag}, cross_stream);
          ref = first.logp;
          other = copy_pass.logp;
          break;
        }
        case CrossKind::Text: {
          const DecoderOutput copy_pass = run_pass(
              model, batch.items, {false, false, false, Vocab::kTgtTag}, cross_stream);
          ref = first.logp;
          other = copy_pass.logp;
          break;
        }
        case CrossKind::Auto:
          throw std::logic_error("unresolved cross kind");
      }
      if (config.frozen_teacher) {
        Tensor& teacher = text_is_ref ? ref : other;
        teacher = ad::detach(teacher);
      }
      const Tensor cross = crosskl(ref, other, first.valid);
      out.parts.cross += cross.item();
      accumulate(ad::scale(cross, config.beta));
    }
  }
  if (!total.defined()) throw std::invalid_argument("composite_objective: empty batches");
  out.total = total;
  out.parts.total = total.item();
  return out;
}

}  // namespace simcr
