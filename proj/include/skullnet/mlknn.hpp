// SPDX-License-Identifier: Apache-2.0
//
// Multi-label k-nearest-neighbour classifier (ML-KNN). Fitting stores the
// training features and tabulates, per label, how many of each training
// point's k leave-one-out neighbours carry that label. Prediction compares
// smoothed prior x neighbour-count likelihood for both hypotheses.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "skullnet/matrix.hpp"

namespace skullnet {

inline constexpr std::size_t kDefaultK = 3;
inline constexpr double kDefaultSmoothing = 1.0;

struct MlknnModel {
  FeatureMatrix features;  // m x d, L2-normalized rows when l2_normalize is set
  LabelMatrix labels;      // m x L
  std::size_t k = kDefaultK;
  double s = kDefaultSmoothing;
  bool l2_normalize = false;

  std::vector<double> prior1;  // L
  std::vector<double> prior0;  // L
  /// Neighbour-count tallies kappa[l][j], j = 0..k, over positive (1) and
  /// negative (0) training instances of label l.
  Matrix<std::uint32_t> counts1;  // L x (k + 1)
  Matrix<std::uint32_t> counts0;
  /// P(E_j | H1) and P(E_j | H0), derived from the counts.
  ScoreMatrix post1;  // L x (k + 1)
  ScoreMatrix post0;

  bool fitted() const { return !prior1.empty(); }
  std::size_t num_labels() const { return labels.cols(); }
  std::size_t dim() const { return features.cols(); }

  bool operator==(const MlknnModel&) const = default;
};

struct Prediction {
  std::vector<std::uint8_t> labels;
  std::vector<double> confidences;
};

/// sqrt of the sequentially accumulated (double) squared differences.
double euclidean_distance(std::span<const float> a, std::span<const float> b);

/// The k rows of `points` nearest to `query`, sorted by (distance, index).
/// `exclude` removes one row from consideration (leave-one-out).
std::vector<std::size_t> knn_neighbors(const FeatureMatrix& points, std::span<const float> query,
                                       std::size_t k,
                                       std::optional<std::size_t> exclude = std::nullopt);

/// Neighbours of a query against a fitted model's training features. The
/// query is normalized first when the model was fitted with l2_normalize.
std::vector<std::size_t> knn_neighbors(const MlknnModel& model, std::span<const float> query);

MlknnModel fit_mlknn(FeatureMatrix features, LabelMatrix labels, std::size_t k = kDefaultK,
                     double s = kDefaultSmoothing, bool l2_normalize = false);

/// MAP decision per label (ties resolve to positive) and the normalized
/// posterior prior1*P(E|H1) / (prior1*P(E|H1) + prior0*P(E|H0)).
Prediction predict_mlknn(const MlknnModel& model, std::span<const float> query);

/// Row-wise predict_mlknn, evaluated in parallel.
std::pair<LabelMatrix, ScoreMatrix> predict_mlknn(const MlknnModel& model,
                                                  const FeatureMatrix& queries);

/// output[l] = confidences[l] > tau[l].
std::vector<std::uint8_t> apply_threshold(std::span<const double> confidences,
                                          std::span<const double> tau);

/// Checks the fitted-model invariants (shapes, binary labels, priors summing
/// to 1, positive posterior tables summing to 1). Throws ValidationError.
void validate_model(const MlknnModel& model);

/// In-place unit-length scaling; zero vectors are left unchanged.
void l2_normalize_rows(FeatureMatrix& features);

}  // namespace skullnet
