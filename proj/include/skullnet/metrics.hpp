// SPDX-License-Identifier: Apache-2.0
//
// Multi-label evaluation: per-label confusion counts and scores, the four
// averaging modes, set-based sample metrics, and ROC / precision-recall
// sweeps. Empty denominators yield 0; a sample whose true and predicted
// label sets are both empty scores 1 in the set-based metrics.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skullnet/matrix.hpp"

namespace skullnet {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
};

ConfusionCounts confusion(std::span<const std::uint8_t> y_true, std::span<const std::uint8_t> y_pred);
Prf prf_specificity(const ConfusionCounts& c);

/// Harmonic mean, 0 when both are 0.
double f1_score(double precision, double recall);

enum class Average { kMicro, kMacro, kWeighted, kSamples };

struct PrfAverage {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PrfAverage averaged(const LabelMatrix& y_true, const LabelMatrix& y_pred, Average mode);

double subset_accuracy(const LabelMatrix& y_true, const LabelMatrix& y_pred);
double hamming_loss(const LabelMatrix& y_true, const LabelMatrix& y_pred);
/// Mean per-sample Jaccard similarity of the label sets.
double hamming_score(const LabelMatrix& y_true, const LabelMatrix& y_pred);

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;
  double y = 0.0;
};

/// (FPR, TPR) points at each distinct score in descending order, preceded
/// by (0, 0) at threshold +inf; area by the trapezoidal rule. Throws
/// UndefinedMetric unless both classes are present.
struct RocCurve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};
RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> y);

/// (recall, precision) at each distinct score in descending order.
/// AP = sum_n (R_n - R_{n-1}) * P_n with R_0 = 0. Throws UndefinedMetric
/// without positives.
struct PrCurve {
  std::vector<CurvePoint> points;
  double average_precision = 0.0;
};
PrCurve pr_average_precision(std::span<const double> scores, std::span<const std::uint8_t> y);

template <typename T>
std::vector<T> column(const Matrix<T>& m, std::size_t c) {
  std::vector<T> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = m(r, c);
  return out;
}

// --- report ------------------------------------------------------------------

struct LabelMetrics {
  std::string name;
  ConfusionCounts counts;
  std::size_t support = 0;
  Prf scores;
  std::optional<double> roc_auc;
  std::optional<double> average_precision;
  std::vector<CurvePoint> roc;
  std::vector<CurvePoint> pr;
};

struct AverageMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> specificity;
  std::optional<double> roc_auc;
  std::optional<double> average_precision;
};

struct MetricsReport {
  std::size_t n_samples = 0;
  std::vector<LabelMetrics> labels;
  AverageMetrics micro;
  AverageMetrics macro;
  AverageMetrics weighted;
  AverageMetrics samples;
  /// Labels left out of the macro/weighted AUC and AP averages.
  std::vector<std::string> skipped_auc;
  std::vector<std::string> skipped_ap;
  double subset_accuracy = 0.0;
  double hamming_score = 0.0;
  double hamming_loss = 0.0;
};

/// Every per-label and averaged quantity. Labels whose AUC or AP is
/// undefined are reported as such and excluded from the macro and weighted
/// averages of that quantity (weights renormalized over the rest).
MetricsReport full_report(const LabelMatrix& y_true, const LabelMatrix& y_pred,
                          const ScoreMatrix& confidences, std::span<const std::string> label_names);

/// Keys of the key=value report, in emission order.
std::vector<std::string> report_keys(std::span<const std::string> label_names);

/// key=value lines; undefined values are written as "undefined".
std::string format_report(const MetricsReport& report);
std::map<std::string, std::string> parse_report(const std::string& text);

/// report.txt, roc.csv, pr.csv (label,threshold,x,y) and confusion.csv
/// (label,tp,fp,tn,fn) in `dir`, which is created if needed.
void write_report_files(const MetricsReport& report, const std::filesystem::path& dir);

}  // namespace skullnet
