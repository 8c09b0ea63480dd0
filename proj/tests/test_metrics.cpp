// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "doctest.h"
#include "simcr/metrics.hpp"
#include "simcr/report.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace simcr;
using namespace simcr::testing;

namespace {


// Jacobi rotations; returns eigenvalues in descending order.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

}  // namespace

TEST_CASE("BLEU examples") {
  const Corpus2 refs{{1, 2, 3, 4, 5}, {6, 7, 8, 9}};
  CHECK(corpus_bleu(refs, refs) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(corpus_bleu({{1, 2, 3, 4}}, {{1, 2, 3, 4, 5}}) ==
        doctest::Approx(100.0 * std::exp(-0.25)).epsilon(1e-12));
  CHECK(std::abs(corpus_bleu({{1, 2, 3, 4}}, {{1, 2, 3, 4, 5}}) - 77.88) < 5e-3);
  CHECK(corpus_bleu({{10, 11, 12, 13}}, {{1, 2, 3, 4}}) == 0.0);
  CHECK_THROWS(corpus_bleu({}, {}));
  CHECK_THROWS(corpus_bleu({{1}}, {{1}, {2}}));
  // Longer hypotheses carry no brevity penalty.
  const BleuStats s = corpus_bleu_stats({{1, 2, 3, 4, 5, 6}}, {{1, 2, 3, 4, 5}});
  CHECK(s.brevity_penalty == 1.0);
}

TEST_CASE("BLEU matches the brute-force n-gram oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Corpus2 refs = random_corpus(50, rng, 6);
    Corpus2 hyps = refs;
    // Perturb about a third of the tokens.
    for (auto& s : hyps) {
      for (int& t : s) {
        if (rng.uniform() < 0.3) t = static_cast<int>(rng.uniform_int(0, 5));
      }
      if (rng.uniform() < 0.3) s.pop_back();
    }
    BleuOracle oracle;
    const double expected = oracle.score(hyps, refs);
    const BleuStats got = corpus_bleu_stats(hyps, refs);
    REQUIRE(got.matches == oracle.matches);
    REQUIRE(got.totals == oracle.totals);
    REQUIRE(got.hyp_len == oracle.hyp_len);
    REQUIRE(got.ref_len == oracle.ref_len);
    REQUIRE(got.bleu == doctest::Approx(expected).epsilon(1e-12));
    REQUIRE(got.bleu >= 0.0);
    REQUIRE(got.bleu <= 100.0);
  }
}

TEST_CASE("similarity search") {
  const std::vector<std::vector<double>> a{{1, 0}, {0, 1}};
  const std::vector<std::vector<double>> b{{0, 1}, {1, 0}};
  CHECK(simsearch_accuracy(a, a) == 1.0);
  CHECK(simsearch_accuracy(a, b) == 0.0);

  Rng rng(2);
  std::vector<std::vector<double>> speech(30, std::vector<double>(5));
  std::vector<std::vector<double>> text = speech;
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t d = 0; d < 5; ++d) {
      speech[i][d] = rng.normal();
      text[i][d] = speech[i][d] + rng.normal(0.0, 0.8);
    }
  }
  const SimSearch base = simsearch(speech, text);
  CHECK(base.mean == doctest::Approx((base.speech_to_text + base.text_to_speech) / 2));
  CHECK(base.mean > 0.0);
  CHECK(base.mean < 1.0);

  SUBCASE("positive scaling does not matter") {
    auto scaled = speech;
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      for (double& v : scaled[i]) v *= 0.1 + static_cast<double>(i);
    }
    CHECK(simsearch_accuracy(scaled, text) == base.mean);
  }
  SUBCASE("a shared permutation does not matter") {
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<std::vector<double>> ps, pt;
    for (std::size_t i : perm) {
      ps.push_back(speech[i]);
      pt.push_back(text[i]);
    }
    CHECK(simsearch_accuracy(ps, pt) == base.mean);
  }
  SUBCASE("ties resolve to the lowest index") {
    const std::vector<std::vector<double>> s{{1, 0}, {1, 0}};
    const std::vector<std::vector<double>> t{{1, 0}, {1, 0}};
    const SimSearch r = simsearch(s, t);
    CHECK(r.speech_to_text == 0.5);
    CHECK(r.text_to_speech == 0.5);
  }
  SUBCASE("argument checks") {
    CHECK_THROWS(simsearch_accuracy({{1, 0}}, {{1, 0}}));
    CHECK_THROWS(simsearch_accuracy({{1, 0}, {0, 0}}, {{1, 0}, {0, 1}}));
    CHECK_THROWS(simsearch_accuracy({{1, 0}, {0, 1}}, {{1, 0}, {0, 1}, {1, 1}}));
  }
}

TEST_CASE("vocabulary membership rate") {
  const Vocab v(3, 3);
  const Corpus2 outs{{v.src_token(0), v.tgt_token(1), Vocab::kEos}, {v.src_token(2)}};
  CHECK(vocab_rate(outs, v, Lang::Source) == doctest::Approx(2.0 / 3.0));
  CHECK(vocab_rate(outs, v, Lang::Target) == doctest::Approx(1.0 / 3.0));
  CHECK(vocab_rate({}, v, Lang::Source) == 0.0);
}

TEST_CASE("PCA of two-dimensional data is a rigid motion") {
  Rng rng(3);
  std::vector<std::vector<double>> rows(20, std::vector<double>(2));
  for (auto& r : rows) {
    r[0] = rng.normal(0.0, 3.0);
    r[1] = 0.5 * r[0] + rng.normal();
  }
  const Projection p = pca_2d(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double d0 = std::hypot(rows[i][0] - rows[j][0], rows[i][1] - rows[j][1]);
      const double d1 = std::hypot(p.points[i][0] - p.points[j][0], p.points[i][1] - p.points[j][1]);
      CHECK(std::abs(d0 - d1) < 1e-9);
    }
  }
  CHECK(p.eigenvalues[0] >= p.eigenvalues[1]);
}

TEST_CASE("PCA against an eigendecomposition oracle") {
  Rng rng(4);
  const std::size_t n = 40, d = 5;
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows) {
    const double z1 = rng.normal(0.0, 3.0), z2 = rng.normal(0.0, 2.0);
    for (std::size_t k = 0; k < d; ++k) r[k] = z1 * (k + 1) * 0.3 - z2 * (k % 2) + rng.normal(0.0, 0.5);
  }
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += r[k] / n;
  }
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& r : rows) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n;
    }
  }
  const auto oracle = jacobi_eigenvalues(cov);
  const Projection p = pca_2d(rows);
  REQUIRE(p.eigenvalues.size() == d);
  for (std::size_t k = 0; k < d; ++k) CHECK(p.eigenvalues[k] == doctest::Approx(oracle[k]).epsilon(1e-9));

  double total_var = 0.0, recon = 0.0;
  for (std::size_t k = 0; k < d; ++k) total_var += cov[k][k];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double back = mean[k] + p.points[i][0] * p.components[0][k] + p.points[i][1] * p.components[1][k];
      recon += (rows[i][k] - back) * (rows[i][k] - back) / n;
    }
  }
  CHECK(recon <= total_var - oracle[0] - oracle[1] + 1e-9);
  CHECK(recon == doctest::Approx(total_var - oracle[0] - oracle[1]).epsilon(1e-9));
}

TEST_CASE("representation export") {
  const auto dir = simcr::testing::scratch_dir("reps");
  Representations reps;
  Rng rng(5);
  for (int i = 0; i < 6; ++i) {
    reps.speech.push_back({rng.normal(), rng.normal(), rng.normal()});
    reps.text.push_back({rng.normal(), rng.normal(), rng.normal()});
  }
  export_representations(reps, dir / "reps.csv");
  std::ifstream in(dir / "reps.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "index,modality,pc1,pc2,v0,v1,v2");
  std::size_t rows = 0, speech = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.find(",speech,") != std::string::npos) ++speech;
  }
  CHECK(rows == 12);
  CHECK(speech == 6);
}

TEST_CASE("scatter plot has one point per run") {
  const std::vector<ScatterPoint> pts{{"a", 0.2, 30.0}, {"b", 0.7, 45.5}, {"c<&>", 0.9, 60.0}};
  const std::string svg = scatter_svg(pts, "t", "x", "y");
  std::size_t count = 0;
  for (std::size_t pos = 0; (pos = svg.find("class=\"point\"", pos)) != std::string::npos; ++pos) ++count;
  CHECK(count == 3);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("c<&>") == std::string::npos);
}
