// SPDX-License-Identifier: Apache-2.0
#include "skullnet/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "skullnet/error.hpp"
#include "skullnet/text.hpp"

namespace skullnet {

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

void check_shapes(const LabelMatrix& a, const LabelMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": label matrices are " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

void check_nonempty(const LabelMatrix& a, const char* op) {
  if (a.rows() == 0) throw InvalidArgument(std::string(op) + ": no samples");
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(std::span<const std::uint8_t> y_true,
                          std::span<const std::uint8_t> y_pred) {
  if (y_true.size() != y_pred.size()) throw ShapeError("confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto t = y_true[i], p = y_pred[i];
    if (t > 1 || p > 1) {
      throw ValidationError("confusion: non-binary entry at position " + std::to_string(i));
    }
    if (t && p) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (t) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double f1_score(double precision, double recall) {
  return ratio(2.0 * precision * recall, precision + recall);
}

Prf prf_specificity(const ConfusionCounts& c) {
  Prf r;
  r.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  r.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  r.f1 = f1_score(r.precision, r.recall);
  r.specificity = ratio(static_cast<double>(c.tn), static_cast<double>(c.tn + c.fp));
  return r;
}

namespace {

std::vector<ConfusionCounts> per_label_counts(const LabelMatrix& t, const LabelMatrix& p) {
  std::vector<ConfusionCounts> out;
  for (std::size_t l = 0; l < t.cols(); ++l) out.push_back(confusion(column(t, l), column(p, l)));
  return out;
}

}  // namespace

PrfAverage averaged(const LabelMatrix& y_true, const LabelMatrix& y_pred, Average mode) {
  check_shapes(y_true, y_pred, "averaged");
  const auto counts = per_label_counts(y_true, y_pred);
  PrfAverage out;
  switch (mode) {
    case Average::kMicro: {
      ConfusionCounts pooled;
      for (const auto& c : counts) pooled += c;
      const auto s = prf_specificity(pooled);
      out = {s.precision, s.recall, s.f1};
      break;
    }
    case Average::kMacro:
    case Average::kWeighted: {
      double wsum = 0.0;
      for (const auto& c : counts) {
        const double w = mode == Average::kMacro ? 1.0 : static_cast<double>(c.tp + c.fn);
        const auto s = prf_specificity(c);
        out.precision += w * s.precision;
        out.recall += w * s.recall;
        out.f1 += w * s.f1;
        wsum += w;
      }
      out.precision = ratio(out.precision, wsum);
      out.recall = ratio(out.recall, wsum);
      out.f1 = ratio(out.f1, wsum);
      break;
    }
    case Average::kSamples: {
      for (std::size_t i = 0; i < y_true.rows(); ++i) {
        std::size_t inter = 0, nt = 0, np = 0;
        for (std::size_t l = 0; l < y_true.cols(); ++l) {
          inter += y_true(i, l) & y_pred(i, l);
          nt += y_true(i, l);
          np += y_pred(i, l);
        }
        if (nt == 0 && np == 0) {
          out.precision += 1.0;
          out.recall += 1.0;
          out.f1 += 1.0;
          continue;
        }
        const double p = ratio(static_cast<double>(inter), static_cast<double>(np));
        const double r = ratio(static_cast<double>(inter), static_cast<double>(nt));
        out.precision += p;
        out.recall += r;
        out.f1 += f1_score(p, r);
      }
      const double n = static_cast<double>(y_true.rows());
      out.precision = ratio(out.precision, n);
      out.recall = ratio(out.recall, n);
      out.f1 = ratio(out.f1, n);
      break;
    }
  }
  return out;
}

double subset_accuracy(const LabelMatrix& y_true, const LabelMatrix& y_pred) {
  check_shapes(y_true, y_pred, "subset_accuracy");
  check_nonempty(y_true, "subset_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_true.rows(); ++i) {
    const auto a = y_true.row(i), b = y_pred.row(i);
    hits += std::equal(a.begin(), a.end(), b.begin()) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(y_true.rows());
}

double hamming_loss(const LabelMatrix& y_true, const LabelMatrix& y_pred) {
  check_shapes(y_true, y_pred, "hamming_loss");
  check_nonempty(y_true, "hamming_loss");
  std::size_t wrong = 0;
  const auto a = y_true.data(), b = y_pred.data();
  for (std::size_t i = 0; i < a.size(); ++i) wrong += a[i] != b[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(a.size());
}

double hamming_score(const LabelMatrix& y_true, const LabelMatrix& y_pred) {
  check_shapes(y_true, y_pred, "hamming_score");
  check_nonempty(y_true, "hamming_score");
  double sum = 0.0;
  for (std::size_t i = 0; i < y_true.rows(); ++i) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t l = 0; l < y_true.cols(); ++l) {
      inter += y_true(i, l) & y_pred(i, l);
      uni += y_true(i, l) | y_pred(i, l);
    }
    sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return sum / static_cast<double>(y_true.rows());
}

namespace {

/// Cumulative (tp, fp) after each group of equal scores, highest first.
struct SweepStep {
  double threshold;
  std::size_t tp;
  std::size_t fp;
};

std::vector<SweepStep> sweep(std::span<const double> scores, std::span<const std::uint8_t> y,
                             std::size_t& pos, std::size_t& neg) {
  if (scores.size() != y.size()) throw ShapeError("curve: scores and labels differ in length");
  pos = neg = 0;
  for (auto v : y) {
    if (v > 1) throw ValidationError("curve: non-binary label");
    (v ? pos : neg) += 1;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<SweepStep> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (y[order[i]] ? tp : fp) += 1;
    steps.push_back({s, tp, fp});
  }
  return steps;
}

}  // namespace

RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> y) {
  std::size_t pos = 0, neg = 0;
  const auto steps = sweep(scores, y, pos, neg);
  if (pos == 0 || neg == 0) throw UndefinedMetric("ROC AUC needs both classes present");
  RocCurve out;
  out.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (const auto& s : steps) {
    const CurvePoint pt{s.threshold, static_cast<double>(s.fp) / static_cast<double>(neg),
                        static_cast<double>(s.tp) / static_cast<double>(pos)};
    const auto& prev = out.points.back();
    out.auc += (pt.x - prev.x) * (pt.y + prev.y) / 2.0;
    out.points.push_back(pt);
  }
  return out;
}

PrCurve pr_average_precision(std::span<const double> scores, std::span<const std::uint8_t> y) {
  std::size_t pos = 0, neg = 0;
  const auto steps = sweep(scores, y, pos, neg);
  if (pos == 0) throw UndefinedMetric("average precision needs at least one positive");
  PrCurve out;
  double prev_recall = 0.0;
  for (const auto& s : steps) {
    const double recall = static_cast<double>(s.tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    out.average_precision += (recall - prev_recall) * precision;
    prev_recall = recall;
    out.points.push_back({s.threshold, recall, precision});
  }
  return out;
}

// --- report ------------------------------------------------------------------

namespace {

/// Weighted mean over labels whose value is defined; nullopt if none are.
std::optional<double> defined_mean(const std::vector<std::optional<double>>& values,
                                   const std::vector<double>& weights) {
  double sum = 0.0, wsum = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) continue;
    any = true;
    sum += weights[i] * *values[i];
    wsum += weights[i];
  }
  if (!any) return std::nullopt;
  return ratio(sum, wsum);
}

}  // namespace

MetricsReport full_report(const LabelMatrix& y_true, const LabelMatrix& y_pred,
                          const ScoreMatrix& confidences, std::span<const std::string> label_names) {
  check_shapes(y_true, y_pred, "full_report");
  check_nonempty(y_true, "full_report");
  if (confidences.rows() != y_true.rows() || confidences.cols() != y_true.cols()) {
    throw ShapeError("full_report: confidence matrix shape differs from labels");
  }
  if (label_names.size() != y_true.cols()) {
    throw ShapeError("full_report: one name per label column required");
  }

  MetricsReport r;
  r.n_samples = y_true.rows();
  const std::size_t L = y_true.cols();
  std::vector<std::optional<double>> aucs, aps;
  std::vector<double> ones(L, 1.0), support(L);
  ConfusionCounts pooled;
  for (std::size_t l = 0; l < L; ++l) {
    LabelMetrics m;
    m.name = label_names[l];
    const auto yt = column(y_true, l);
    const auto sc = column(confidences, l);
    m.counts = confusion(yt, column(y_pred, l));
    m.support = m.counts.tp + m.counts.fn;
    m.scores = prf_specificity(m.counts);
    try {
      auto roc = roc_auc(sc, yt);
      m.roc_auc = roc.auc;
      m.roc = std::move(roc.points);
    } catch (const UndefinedMetric&) {
      r.skipped_auc.push_back(m.name);
    }
    try {
      auto pr = pr_average_precision(sc, yt);
      m.average_precision = pr.average_precision;
      m.pr = std::move(pr.points);
    } catch (const UndefinedMetric&) {
      r.skipped_ap.push_back(m.name);
    }
    aucs.push_back(m.roc_auc);
    aps.push_back(m.average_precision);
    support[l] = static_cast<double>(m.support);
    pooled += m.counts;
    r.labels.push_back(std::move(m));
  }

  auto fill_prf = [](AverageMetrics& a, const PrfAverage& p) {
    a.precision = p.precision;
    a.recall = p.recall;
    a.f1 = p.f1;
  };
  fill_prf(r.micro, averaged(y_true, y_pred, Average::kMicro));
  fill_prf(r.macro, averaged(y_true, y_pred, Average::kMacro));
  fill_prf(r.weighted, averaged(y_true, y_pred, Average::kWeighted));
  fill_prf(r.samples, averaged(y_true, y_pred, Average::kSamples));

  r.micro.specificity = prf_specificity(pooled).specificity;
  std::vector<std::optional<double>> specs;
  for (const auto& m : r.labels) specs.push_back(m.scores.specificity);
  r.macro.specificity = defined_mean(specs, ones);
  r.weighted.specificity = defined_mean(specs, support);

  try {
    r.micro.roc_auc = roc_auc(confidences.data(), y_true.data()).auc;
  } catch (const UndefinedMetric&) {
  }
  try {
    r.micro.average_precision =
        pr_average_precision(confidences.data(), y_true.data()).average_precision;
  } catch (const UndefinedMetric&) {
  }
  r.macro.roc_auc = defined_mean(aucs, ones);
  r.weighted.roc_auc = defined_mean(aucs, support);
  r.macro.average_precision = defined_mean(aps, ones);
  r.weighted.average_precision = defined_mean(aps, support);

  r.subset_accuracy = subset_accuracy(y_true, y_pred);
  r.hamming_score = hamming_score(y_true, y_pred);
  r.hamming_loss = hamming_loss(y_true, y_pred);
  return r;
}

namespace {

const char* const kAverageNames[] = {"micro", "macro", "weighted", "samples"};

using Emit = std::function<void(const std::string&, const std::string&)>;

std::string value(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("undefined");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

/// Single source of truth for the report layout; format_report and
/// report_keys both walk it.
void walk_report(const MetricsReport& r, const Emit& emit) {
  emit("n_samples", std::to_string(r.n_samples));
  emit("subset_accuracy", format_double(r.subset_accuracy));
  emit("hamming_score", format_double(r.hamming_score));
  emit("hamming_loss", format_double(r.hamming_loss));
  const AverageMetrics* avgs[] = {&r.micro, &r.macro, &r.weighted, &r.samples};
  for (std::size_t a = 0; a < 4; ++a) {
    const std::string p = std::string(kAverageNames[a]) + ".";
    emit(p + "precision", format_double(avgs[a]->precision));
    emit(p + "recall", format_double(avgs[a]->recall));
    emit(p + "f1", format_double(avgs[a]->f1));
    if (a == 3) continue;
    emit(p + "specificity", value(avgs[a]->specificity));
    emit(p + "roc_auc", value(avgs[a]->roc_auc));
    emit(p + "average_precision", value(avgs[a]->average_precision));
  }
  emit("skipped.roc_auc", join(r.skipped_auc));
  emit("skipped.average_precision", join(r.skipped_ap));
  for (const auto& m : r.labels) {
    const std::string p = "label." + m.name + ".";
    emit(p + "precision", format_double(m.scores.precision));
    emit(p + "recall", format_double(m.scores.recall));
    emit(p + "f1", format_double(m.scores.f1));
    emit(p + "specificity", format_double(m.scores.specificity));
    emit(p + "roc_auc", value(m.roc_auc));
    emit(p + "average_precision", value(m.average_precision));
    emit(p + "support", std::to_string(m.support));
    emit(p + "tp", std::to_string(m.counts.tp));
    emit(p + "fp", std::to_string(m.counts.fp));
    emit(p + "tn", std::to_string(m.counts.tn));
    emit(p + "fn", std::to_string(m.counts.fn));
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.flush();
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

std::vector<std::string> report_keys(std::span<const std::string> label_names) {
  MetricsReport dummy;
  for (const auto& n : label_names) dummy.labels.push_back(LabelMetrics{n, {}, 0, {}, {}, {}, {}, {}});
  std::vector<std::string> keys;
  walk_report(dummy, [&](const std::string& k, const std::string&) { keys.push_back(k); });
  return keys;
}

std::string format_report(const MetricsReport& report) {
  std::string out;
  walk_report(report, [&](const std::string& k, const std::string& v) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  });
  return out;
}

std::map<std::string, std::string> parse_report(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("report line without '=': " + line);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void write_report_files(const MetricsReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());

  write_file(dir / "report.txt", format_report(report));

  auto curves = [&](auto member) {
    std::string s = "label,threshold,x,y\n";
    for (const auto& m : report.labels) {
      for (const auto& p : m.*member) {
        s += m.name + "," + format_double(p.threshold) + "," + format_double(p.x) + "," +
             format_double(p.y) + "\n";
      }
    }
    return s;
  };
  write_file(dir / "roc.csv", curves(&LabelMetrics::roc));
  write_file(dir / "pr.csv", curves(&LabelMetrics::pr));

  std::string conf = "label,tp,fp,tn,fn\n";
  for (const auto& m : report.labels) {
    conf += m.name + "," + std::to_string(m.counts.tp) + "," + std::to_string(m.counts.fp) + "," +
            std::to_string(m.counts.tn) + "," + std::to_string(m.counts.fn) + "\n";
  }
  write_file(dir / "confusion.csv", conf);
}

}  // namespace skullnet
