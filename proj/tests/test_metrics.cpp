// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "skullnet/error.hpp"
#include "skullnet/metrics.hpp"
#include "skullnet/tensor.hpp"

using namespace skullnet;

namespace {

LabelMatrix from_rows(const std::vector<std::vector<std::uint8_t>>& rows) {
  LabelMatrix m;
  for (const auto& r : rows) m.append_row(r);
  return m;
}

oracle::Matrix to_rows(const LabelMatrix& m) {
  oracle::Matrix out;
  for (std::size_t i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).begin(), m.row(i).end());
  return out;
}

LabelMatrix random_labels(Rng& rng, std::size_t n, std::size_t L, double p = 0.4) {
  LabelMatrix m(n, L);
  for (auto& v : m.data()) v = rng.uniform() < p;
  return m;
}

/// Scores quantized to a few levels so ties occur.
std::vector<double> random_scores(Rng& rng, std::size_t n, int levels = 8) {
  std::vector<double> s(n);
  for (auto& v : s) v = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) / levels;
  return s;
}

std::vector<std::string> names(std::size_t L) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < L; ++l) out.push_back("l" + std::to_string(l));
  return out;
}

}  // namespace

// --- confusion / per-label ---------------------------------------------------

TEST(Confusion, PerfectAndTotalMiss) {
  const std::vector<std::uint8_t> a{1, 0, 1};
  EXPECT_EQ(confusion(a, a), (ConfusionCounts{2, 0, 1, 0}));
  const std::vector<std::uint8_t> t{1, 1}, p{0, 0};
  EXPECT_EQ(confusion(t, p), (ConfusionCounts{0, 0, 0, 2}));
}

TEST(Confusion, MatchesCountingLoop) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_labels(rng, 30, 1), p = random_labels(rng, 30, 1);
    const auto c = confusion(t.data(), p.data());
    const auto o = oracle::counts(to_rows(t), to_rows(p), 0);
    EXPECT_EQ(c.tp, o.tp);
    EXPECT_EQ(c.fp, o.fp);
    EXPECT_EQ(c.tn, o.tn);
    EXPECT_EQ(c.fn, o.fn);
    EXPECT_EQ(c.total(), 30u);
  }
}

TEST(Confusion, Errors) {
  const std::vector<std::uint8_t> a{1, 0}, b{1}, bad{1, 2};
  EXPECT_THROW(confusion(a, b), ShapeError);
  EXPECT_THROW(confusion(a, bad), ValidationError);
}

TEST(Prf, Arithmetic) {
  const auto r = prf_specificity(ConfusionCounts{3, 1, 5, 1});
  EXPECT_DOUBLE_EQ(r.precision, 0.75);
  EXPECT_DOUBLE_EQ(r.recall, 0.75);
  EXPECT_DOUBLE_EQ(r.f1, 0.75);
  EXPECT_DOUBLE_EQ(r.specificity, 5.0 / 6.0);
}

TEST(Prf, ZeroDenominators) {
  const auto r = prf_specificity(ConfusionCounts{0, 0, 0, 0});
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.specificity, 0.0);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(Prf, HarmonicMeanFixedPoint) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double p = rng.uniform(0.01, 1.0);
    EXPECT_NEAR(f1_score(p, p), p, 1e-15);
  }
}

// --- averages ----------------------------------------------------------------

TEST(Averaged, MicroPoolsCounts) {
  // Label 0: tp=1, fp=1. Label 1: tp=2, fp=0.
  const auto t = from_rows({{1, 1}, {0, 1}});
  const auto p = from_rows({{1, 1}, {1, 1}});
  EXPECT_DOUBLE_EQ(averaged(t, p, Average::kMicro).precision, 0.75);
}

TEST(Averaged, PerfectPrediction) {
  Rng rng(3);
  auto y = random_labels(rng, 12, 7);
  for (std::size_t i = 0; i < 12; ++i) y(i, 0) = 1;
  for (auto mode : {Average::kMicro, Average::kMacro, Average::kWeighted, Average::kSamples}) {
    const auto r = averaged(y, y, mode);
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 1.0);
    EXPECT_EQ(r.f1, 1.0);
  }
}

TEST(Averaged, MatchesDefinitionalOracles) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = random_labels(rng, 20, 7), p = random_labels(rng, 20, 7);
    const auto ot = to_rows(t), op = to_rows(p);
    const std::pair<Average, oracle::PRF> cases[] = {
        {Average::kMicro, oracle::micro(ot, op)},
        {Average::kMacro, oracle::macro_or_weighted(ot, op, false)},
        {Average::kWeighted, oracle::macro_or_weighted(ot, op, true)},
        {Average::kSamples, oracle::samples(ot, op)}};
    for (const auto& [mode, ref] : cases) {
      const auto r = averaged(t, p, mode);
      EXPECT_NEAR(r.precision, ref.p, 1e-12);
      EXPECT_NEAR(r.recall, ref.r, 1e-12);
      EXPECT_NEAR(r.f1, ref.f, 1e-12);
    }
  }
}

TEST(Averaged, SamplesBothEmptyScoresOne) {
  const auto z = from_rows({{0, 0, 0}});
  const auto r = averaged(z, z, Average::kSamples);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(Averaged, MicroAndMacroIdentities) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_labels(rng, 15, 7), p = random_labels(rng, 15, 7);
    ConfusionCounts pooled;
    double f1_sum = 0;
    for (std::size_t l = 0; l < 7; ++l) {
      const auto c = confusion(column(t, l), column(p, l));
      pooled += c;
      f1_sum += prf_specificity(c).f1;
    }
    EXPECT_EQ(averaged(t, p, Average::kMicro).f1, prf_specificity(pooled).f1);
    EXPECT_NEAR(averaged(t, p, Average::kMacro).f1, f1_sum / 7.0, 1e-15);
  }
}

TEST(Averaged, ShapeMismatch) {
  EXPECT_THROW(averaged(LabelMatrix(2, 7), LabelMatrix(3, 7), Average::kMicro), ShapeError);
}

// --- sample metrics ----------------------------------------------------------

TEST(SubsetAccuracy, Examples) {
  const auto t = from_rows({{1, 0}, {0, 1}, {1, 1}, {0, 0}});
  const auto p = from_rows({{1, 0}, {0, 1}, {1, 0}, {0, 0}});
  EXPECT_DOUBLE_EQ(subset_accuracy(t, p), 0.75);
  EXPECT_EQ(subset_accuracy(t, t), 1.0);
  Rng rng(6);
  const auto y = random_labels(rng, 10, 7);
  auto flipped = y;
  flipped(4, 2) ^= 1;
  EXPECT_DOUBLE_EQ(subset_accuracy(y, flipped), 0.9);
  EXPECT_THROW(subset_accuracy(LabelMatrix(0, 7), LabelMatrix(0, 7)), InvalidArgument);
}

TEST(HammingLoss, Examples) {
  Rng rng(7);
  const auto y = random_labels(rng, 2, 7);
  EXPECT_EQ(hamming_loss(y, y), 0.0);
  auto one = y;
  one(1, 3) ^= 1;
  EXPECT_NEAR(hamming_loss(y, one), 1.0 / 14.0, 1e-15);
  auto comp = y;
  for (auto& v : comp.data()) v ^= 1;
  EXPECT_EQ(hamming_loss(y, comp), 1.0);
  EXPECT_THROW(hamming_loss(LabelMatrix(0, 7), LabelMatrix(0, 7)), InvalidArgument);
}

TEST(HammingScore, Examples) {
  const auto t = from_rows({{1, 1, 0}});
  const auto p = from_rows({{0, 1, 1}});
  EXPECT_NEAR(hamming_score(t, p), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(hamming_score(t, t), 1.0);
  const auto z = from_rows({{0, 0, 0}, {0, 0, 0}});
  EXPECT_EQ(hamming_score(z, z), 1.0);
  EXPECT_THROW(hamming_score(LabelMatrix(0, 7), LabelMatrix(0, 7)), InvalidArgument);
}

TEST(SampleMetrics, OraclesAndChainInequality) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(25);
    const double density = rng.uniform(0.05, 0.6);
    const auto t = random_labels(rng, n, 7, density), p = random_labels(rng, n, 7, density);
    const auto ot = to_rows(t), op = to_rows(p);
    const double sa = subset_accuracy(t, p), hs = hamming_score(t, p), hl = hamming_loss(t, p);
    EXPECT_NEAR(sa, oracle::subset_accuracy(ot, op), 1e-12);
    EXPECT_NEAR(hs, oracle::hamming_score(ot, op), 1e-12);
    EXPECT_NEAR(hl, oracle::hamming_loss(ot, op), 1e-12);
    EXPECT_LE(sa, hs + 1e-15);
    EXPECT_LE(hs, 1.0 - hl + 1e-15);
  }
}

// --- curves ------------------------------------------------------------------

TEST(RocAuc, SeparationAndInversion) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  const std::vector<std::uint8_t> y{1, 1, 0, 0};
  EXPECT_EQ(roc_auc(s, y).auc, 1.0);
  const std::vector<double> inv{0.1, 0.2, 0.8, 0.9};
  EXPECT_EQ(roc_auc(inv, y).auc, 0.0);
}

TEST(RocAuc, CurveAnchorsAndMonotone) {
  Rng rng(9);
  const auto s = random_scores(rng, 40);
  std::vector<std::uint8_t> y(40);
  for (auto& v : y) v = rng.below(2);
  y[0] = 1;
  y[1] = 0;
  const auto r = roc_auc(s, y);
  EXPECT_EQ(r.points.front().x, 0.0);
  EXPECT_EQ(r.points.front().y, 0.0);
  EXPECT_TRUE(std::isinf(r.points.front().threshold));
  EXPECT_EQ(r.points.back().x, 1.0);
  EXPECT_EQ(r.points.back().y, 1.0);
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    EXPECT_GE(r.points[i].x, r.points[i - 1].x);
    EXPECT_GE(r.points[i].y, r.points[i - 1].y);
    EXPECT_LT(r.points[i].threshold, r.points[i - 1].threshold);
  }
}

TEST(RocAuc, MatchesMannWhitney) {
  Rng rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    const auto s = random_scores(rng, n, 2 + static_cast<int>(rng.below(20)));
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = rng.below(2);
    y[0] = 1;
    y[1] = 0;
    const double auc = roc_auc(s, y).auc;
    EXPECT_NEAR(auc, oracle::auc_pairs(s, y), 1e-12);
    std::vector<double> neg(s);
    for (auto& v : neg) v = -v;
    EXPECT_NEAR(roc_auc(neg, y).auc, 1.0 - auc, 1e-12);
  }
}

TEST(RocAuc, SingleClassIsUndefined) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<std::uint8_t> ones{1, 1}, zeros{0, 0};
  EXPECT_THROW(roc_auc(s, ones), UndefinedMetric);
  EXPECT_THROW(roc_auc(s, zeros), UndefinedMetric);
}

TEST(AveragePrecision, HandCases) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  const std::vector<std::uint8_t> perfect{1, 1, 0, 0}, last{0, 0, 0, 1};
  EXPECT_EQ(pr_average_precision(s, perfect).average_precision, 1.0);
  EXPECT_DOUBLE_EQ(pr_average_precision(s, last).average_precision, 0.25);
  const std::vector<std::uint8_t> none{0, 0, 0, 0};
  EXPECT_THROW(pr_average_precision(s, none), UndefinedMetric);
}

TEST(AveragePrecision, MatchesThresholdSweep) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(100);
    const auto s = random_scores(rng, n, 2 + static_cast<int>(rng.below(30)));
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = rng.below(2);
    y[0] = 1;
    const auto pr = pr_average_precision(s, y);
    EXPECT_NEAR(pr.average_precision, oracle::average_precision(s, y), 1e-12);
    for (std::size_t i = 1; i < pr.points.size(); ++i) EXPECT_GE(pr.points[i].x, pr.points[i - 1].x);
    EXPECT_EQ(pr.points.back().x, 1.0);
  }
}

TEST(Metrics, RowPermutationInvariance) {
  Rng rng(12);
  const auto t = random_labels(rng, 30, 7), p = random_labels(rng, 30, 7);
  ScoreMatrix conf(30, 7);
  for (auto& v : conf.data()) v = static_cast<double>(rng.below(10)) / 10.0;
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);
  const auto n = names(7);
  const auto a = full_report(t, p, conf, n);
  const auto b = full_report(t.select_rows(perm), p.select_rows(perm), conf.select_rows(perm), n);
  const auto ka = parse_report(format_report(a)), kb = parse_report(format_report(b));
  ASSERT_EQ(ka.size(), kb.size());
  for (const auto& [key, value] : ka) {
    const auto& other = kb.at(key);
    if (key.rfind("skipped.", 0) == 0 || value == "undefined" || other == "undefined") {
      EXPECT_EQ(value, other) << key;
    } else {
      EXPECT_NEAR(std::stod(value), std::stod(other), 1e-12) << key;
    }
  }
}

// --- report ------------------------------------------------------------------

TEST(Report, PerfectPredictions) {
  Rng rng(13);
  auto y = random_labels(rng, 20, 7);
  for (std::size_t l = 0; l < 7; ++l) {
    y(0, l) = 1;
    y(1, l) = 0;
  }
  ScoreMatrix conf(20, 7);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t l = 0; l < 7; ++l) conf(i, l) = y(i, l) ? 0.9 : 0.1;
  const auto r = full_report(y, y, conf, names(7));
  EXPECT_EQ(r.subset_accuracy, 1.0);
  EXPECT_EQ(r.hamming_score, 1.0);
  EXPECT_EQ(r.hamming_loss, 0.0);
  for (const auto* avg : {&r.micro, &r.macro, &r.weighted}) {
    EXPECT_EQ(avg->f1, 1.0);
    EXPECT_EQ(*avg->roc_auc, 1.0);
    EXPECT_EQ(*avg->average_precision, 1.0);
    EXPECT_EQ(*avg->specificity, 1.0);
  }
  for (const auto& l : r.labels) {
    EXPECT_EQ(l.scores.precision, 1.0);
    EXPECT_EQ(*l.roc_auc, 1.0);
  }
  EXPECT_TRUE(r.skipped_auc.empty());
}

TEST(Report, FieldsEqualIndividualOps) {
  Rng rng(14);
  const auto t = random_labels(rng, 40, 7), p = random_labels(rng, 40, 7);
  ScoreMatrix conf(40, 7);
  for (auto& v : conf.data()) v = rng.uniform();
  const auto r = full_report(t, p, conf, names(7));
  EXPECT_EQ(r.n_samples, 40u);
  EXPECT_EQ(r.subset_accuracy, subset_accuracy(t, p));
  EXPECT_EQ(r.hamming_loss, hamming_loss(t, p));
  EXPECT_EQ(r.hamming_score, hamming_score(t, p));
  EXPECT_EQ(r.macro.f1, averaged(t, p, Average::kMacro).f1);
  EXPECT_EQ(r.samples.recall, averaged(t, p, Average::kSamples).recall);
  double auc_sum = 0;
  int defined = 0;
  for (std::size_t l = 0; l < 7; ++l) {
    const auto yt = column(t, l);
    const auto sc = column(conf, l);
    const auto& lm = r.labels[l];
    EXPECT_EQ(lm.counts, confusion(yt, column(p, l)));
    EXPECT_EQ(lm.support, lm.counts.tp + lm.counts.fn);
    EXPECT_EQ(*lm.roc_auc, roc_auc(sc, yt).auc);
    EXPECT_EQ(*lm.average_precision, pr_average_precision(sc, yt).average_precision);
    auc_sum += *lm.roc_auc;
    ++defined;
  }
  EXPECT_NEAR(*r.macro.roc_auc, auc_sum / defined, 1e-12);
  EXPECT_EQ(*r.micro.roc_auc, roc_auc(conf.data(), t.data()).auc);
}

TEST(Report, SingleClassLabelIsSkipped) {
  Rng rng(15);
  auto t = random_labels(rng, 25, 7);
  for (std::size_t i = 0; i < 25; ++i) {
    t(i, 3) = 0;
    t(i, 5) = 1;
  }
  const auto p = random_labels(rng, 25, 7);
  ScoreMatrix conf(25, 7);
  for (auto& v : conf.data()) v = rng.uniform();
  const auto r = full_report(t, p, conf, names(7));
  EXPECT_FALSE(r.labels[3].roc_auc.has_value());
  EXPECT_FALSE(r.labels[3].average_precision.has_value());
  EXPECT_FALSE(r.labels[5].roc_auc.has_value());
  EXPECT_TRUE(r.labels[5].average_precision.has_value());
  EXPECT_EQ(r.skipped_auc, (std::vector<std::string>{"l3", "l5"}));
  EXPECT_EQ(r.skipped_ap, (std::vector<std::string>{"l3"}));
  double sum = 0;
  for (std::size_t l : {0u, 1u, 2u, 4u, 6u}) sum += *r.labels[l].roc_auc;
  EXPECT_NEAR(*r.macro.roc_auc, sum / 5.0, 1e-12);
  const auto kv = parse_report(format_report(r));
  EXPECT_EQ(kv.at("label.l3.roc_auc"), "undefined");
  EXPECT_EQ(kv.at("skipped.roc_auc"), "l3,l5");
}

TEST(Report, KeySchema) {
  const std::vector<std::string> n{"a", "b"};
  const auto keys = report_keys(n);
  std::vector<std::string> expected{"n_samples", "subset_accuracy", "hamming_score", "hamming_loss"};
  for (const char* avg : {"micro", "macro", "weighted"})
    for (const char* m : {"precision", "recall", "f1", "specificity", "roc_auc", "average_precision"})
      expected.push_back(std::string(avg) + "." + m);
  for (const char* m : {"precision", "recall", "f1"}) expected.push_back(std::string("samples.") + m);
  expected.push_back("skipped.roc_auc");
  expected.push_back("skipped.average_precision");
  for (const auto& name : n)
    for (const char* m : {"precision", "recall", "f1", "specificity", "roc_auc", "average_precision",
                          "support", "tp", "fp", "tn", "fn"})
      expected.push_back("label." + name + "." + m);
  EXPECT_EQ(keys, expected);

  Rng rng(16);
  const auto t = random_labels(rng, 10, 2), p = random_labels(rng, 10, 2);
  ScoreMatrix conf(10, 2, 0.5);
  const auto text = format_report(full_report(t, p, conf, n));
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> emitted;
  while (std::getline(in, line)) emitted.push_back(line.substr(0, line.find('=')));
  EXPECT_EQ(emitted, expected);
}

TEST(Report, WritesFiles) {
  Rng rng(17);
  auto t = random_labels(rng, 15, 3);
  t(0, 0) = t(0, 1) = t(0, 2) = 1;
  t(1, 0) = t(1, 1) = t(1, 2) = 0;
  const auto p = random_labels(rng, 15, 3);
  ScoreMatrix conf(15, 3);
  for (auto& v : conf.data()) v = rng.uniform();
  const auto dir = std::filesystem::temp_directory_path() / "skullnet_metrics_test";
  std::filesystem::remove_all(dir);
  write_report_files(full_report(t, p, conf, names(3)), dir);
  for (const char* f : {"report.txt", "roc.csv", "pr.csv", "confusion.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream roc(dir / "roc.csv");
  std::string header;
  std::getline(roc, header);
  EXPECT_EQ(header, "label,threshold,x,y");
  std::ifstream conf_csv(dir / "confusion.csv");
  std::getline(conf_csv, header);
  EXPECT_EQ(header, "label,tp,fp,tn,fn");
  std::size_t rows = 0;
  while (std::getline(conf_csv, header)) ++rows;
  EXPECT_EQ(rows, 3u);
  std::filesystem::remove_all(dir);
}
