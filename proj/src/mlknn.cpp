// SPDX-License-Identifier: Apache-2.0
#include "skullnet/mlknn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "skullnet/error.hpp"
#include "skullnet/parallel.hpp"

namespace skullnet {

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("euclidean_distance: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

namespace {

using Candidate = std::pair<double, std::size_t>;

std::vector<std::size_t> take_nearest(std::vector<Candidate>& cand, std::size_t k) {
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].second;
  return out;
}

std::vector<float> normalized(std::span<const float> v) {
  std::vector<float> out(v.begin(), v.end());
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : out) x = static_cast<float>(x / norm);
  }
  return out;
}

}  // namespace

void l2_normalize_rows(FeatureMatrix& features) {
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row(r);
    const auto n = normalized(row);
    std::copy(n.begin(), n.end(), row.begin());
  }
}

std::vector<std::size_t> knn_neighbors(const FeatureMatrix& points, std::span<const float> query,
                                       std::size_t k, std::optional<std::size_t> exclude) {
  const std::size_t available = points.rows() - (exclude && *exclude < points.rows() ? 1 : 0);
  if (k == 0) throw InvalidArgument("knn_neighbors: k must be at least 1");
  if (available < k) {
    throw InvalidArgument("knn_neighbors: k=" + std::to_string(k) + " exceeds the " +
                          std::to_string(available) + " available points");
  }
  std::vector<Candidate> cand;
  cand.reserve(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    if (exclude && *exclude == i) continue;
    cand.emplace_back(euclidean_distance(points.row(i), query), i);
  }
  return take_nearest(cand, k);
}

std::vector<std::size_t> knn_neighbors(const MlknnModel& model, std::span<const float> query) {
  if (!model.fitted()) throw StateError("ML-KNN model is not fitted");
  if (query.size() != model.dim()) {
    throw ShapeError("query has " + std::to_string(query.size()) + " features, model expects " +
                     std::to_string(model.dim()));
  }
  if (model.l2_normalize) {
    const auto q = normalized(query);
    return knn_neighbors(model.features, q, model.k);
  }
  return knn_neighbors(model.features, query, model.k);
}

MlknnModel fit_mlknn(FeatureMatrix features, LabelMatrix labels, std::size_t k, double s,
                     bool l2_normalize) {
  const std::size_t m = features.rows();
  if (labels.rows() != m) {
    throw ShapeError("fit_mlknn: " + std::to_string(m) + " feature rows but " +
                     std::to_string(labels.rows()) + " label rows");
  }
  if (k == 0) throw InvalidArgument("fit_mlknn: k must be at least 1");
  if (m <= k) {
    throw InvalidArgument("fit_mlknn: need more than k=" + std::to_string(k) +
                          " training points, got " + std::to_string(m));
  }
  if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("fit_mlknn: s must be positive");
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < labels.cols(); ++l) {
      if (labels(i, l) > 1) {
        throw ValidationError("fit_mlknn: label (" + std::to_string(i) + ", " +
                              std::to_string(l) + ") is not binary");
      }
    }
  }
  if (l2_normalize) l2_normalize_rows(features);

  // Pairwise distances once; row i holds d(i, j) for all j.
  std::vector<double> dist(m * m, 0.0);
  parallel_for(m, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      dist[i * m + j] = euclidean_distance(features.row(i), features.row(j));
    }
  });
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < i; ++j) dist[i * m + j] = dist[j * m + i];
  }

  const std::size_t L = labels.cols();
  MlknnModel model;
  model.k = k;
  model.s = s;
  model.l2_normalize = l2_normalize;
  model.prior1.resize(L);
  model.prior0.resize(L);
  model.counts1 = Matrix<std::uint32_t>(L, k + 1);
  model.counts0 = Matrix<std::uint32_t>(L, k + 1);
  model.post1 = ScoreMatrix(L, k + 1);
  model.post0 = ScoreMatrix(L, k + 1);

  for (std::size_t l = 0; l < L; ++l) {
    double positives = 0.0;
    for (std::size_t i = 0; i < m; ++i) positives += labels(i, l);
    model.prior1[l] = (s + positives) / (2.0 * s + static_cast<double>(m));
    model.prior0[l] = 1.0 - model.prior1[l];
  }

  std::vector<Candidate> cand;
  for (std::size_t i = 0; i < m; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) cand.emplace_back(dist[i * m + j], j);
    }
    const auto nn = take_nearest(cand, k);
    for (std::size_t l = 0; l < L; ++l) {
      std::size_t delta = 0;
      for (auto j : nn) delta += labels(j, l);
      if (labels(i, l)) {
        ++model.counts1(l, delta);
      } else {
        ++model.counts0(l, delta);
      }
    }
  }

  const double kp1 = static_cast<double>(k + 1);
  for (std::size_t l = 0; l < L; ++l) {
    double sum1 = 0.0, sum0 = 0.0;
    for (std::size_t j = 0; j <= k; ++j) {
      sum1 += model.counts1(l, j);
      sum0 += model.counts0(l, j);
    }
    for (std::size_t j = 0; j <= k; ++j) {
      model.post1(l, j) = (s + model.counts1(l, j)) / (s * kp1 + sum1);
      model.post0(l, j) = (s + model.counts0(l, j)) / (s * kp1 + sum0);
    }
  }

  model.features = std::move(features);
  model.labels = std::move(labels);
  return model;
}

Prediction predict_mlknn(const MlknnModel& model, std::span<const float> query) {
  const auto nn = knn_neighbors(model, query);
  const std::size_t L = model.num_labels();
  Prediction out{std::vector<std::uint8_t>(L), std::vector<double>(L)};
  for (std::size_t l = 0; l < L; ++l) {
    std::size_t c = 0;
    for (auto j : nn) c += model.labels(j, l);
    const double p1 = model.prior1[l] * model.post1(l, c);
    const double p0 = model.prior0[l] * model.post0(l, c);
    out.labels[l] = p1 >= p0 ? 1 : 0;
    out.confidences[l] = p1 / (p1 + p0);
  }
  return out;
}

std::pair<LabelMatrix, ScoreMatrix> predict_mlknn(const MlknnModel& model,
                                                  const FeatureMatrix& queries) {
  if (!model.fitted()) throw StateError("ML-KNN model is not fitted");
  const std::size_t L = model.num_labels();
  LabelMatrix labels(queries.rows(), L);
  ScoreMatrix conf(queries.rows(), L);
  parallel_for(queries.rows(), [&](std::size_t i) {
    const auto p = predict_mlknn(model, queries.row(i));
    std::copy(p.labels.begin(), p.labels.end(), labels.row(i).begin());
    std::copy(p.confidences.begin(), p.confidences.end(), conf.row(i).begin());
  });
  return {std::move(labels), std::move(conf)};
}

std::vector<std::uint8_t> apply_threshold(std::span<const double> confidences,
                                          std::span<const double> tau) {
  if (confidences.size() != tau.size()) throw ShapeError("apply_threshold: length mismatch");
  std::vector<std::uint8_t> out(confidences.size());
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = confidences[l] > tau[l] ? 1 : 0;
  return out;
}

void validate_model(const MlknnModel& m) {
  auto fail = [](const std::string& what) { throw ValidationError("ML-KNN model: " + what); };
  const std::size_t L = m.labels.cols();
  if (m.k == 0) fail("k must be at least 1");
  if (!(m.s > 0.0) || !std::isfinite(m.s)) fail("smoothing must be positive");
  if (m.features.rows() != m.labels.rows()) fail("feature and label row counts differ");
  if (m.features.rows() <= m.k) fail("fewer training points than k + 1");
  for (auto v : m.labels.data()) {
    if (v > 1) fail("labels are not binary");
  }
  if (m.prior1.size() != L || m.prior0.size() != L) fail("prior length mismatch");
  for (const auto* t : {&m.counts1, &m.counts0}) {
    if (t->rows() != L || t->cols() != m.k + 1) fail("count table shape mismatch");
  }
  for (const auto* t : {&m.post1, &m.post0}) {
    if (t->rows() != L || t->cols() != m.k + 1) fail("posterior table shape mismatch");
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (std::abs(m.prior1[l] + m.prior0[l] - 1.0) > 1e-9) fail("priors do not sum to 1");
    for (const auto* t : {&m.post1, &m.post0}) {
      double sum = 0.0;
      for (double v : t->row(l)) {
        if (!(v > 0.0)) fail("posterior entry not positive");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9) fail("posterior table does not sum to 1");
    }
  }
}

}  // namespace skullnet
