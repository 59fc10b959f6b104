// SPDX-License-Identifier: Apache-2.0
#include "skullnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "skullnet/error.hpp"
#include "skullnet/parallel.hpp"

namespace skullnet {

// --- configuration -----------------------------------------------------------

void SplitSpec::validate() const {
  for (double r : {train, val, test}) {
    if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument("split ratios must lie in [0, 1]");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw InvalidArgument("split ratios must sum to 1");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be positive");
  }
  if (batch_size == 0) throw InvalidArgument("batch_size must be at least 1");
  if (!(leaky_slope >= 0.0f && leaky_slope < 1.0f)) {
    throw InvalidArgument("leaky_slope must lie in [0, 1)");
  }
  split.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (is.fail() || !is.eof()) {
    throw ValidationError("config: invalid value '" + value + "' for " + key);
  }
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw ValidationError("config: " + key + " must be a non-negative integer, got '" + value + "'");
  }
  return parse_number<std::size_t>(key, value);
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "learning_rate") {
      cfg.learning_rate = parse_number<double>(key, value);
    } else if (key == "epochs") {
      cfg.epochs = parse_count(key, value);
    } else if (key == "batch_size") {
      cfg.batch_size = parse_count(key, value);
    } else if (key == "optimizer") {
      if (value == "sgd") {
        cfg.optimizer = OptimizerKind::kSgd;
      } else if (value == "adam") {
        cfg.optimizer = OptimizerKind::kAdam;
      } else {
        throw ValidationError("config: optimizer must be sgd or adam, got '" + value + "'");
      }
    } else if (key == "seed") {
      cfg.seed = parse_count(key, value);
    } else if (key == "early_stop_patience") {
      if (value == "none") {
        cfg.early_stop_patience.reset();
      } else {
        cfg.early_stop_patience = parse_count(key, value);
      }
    } else if (key == "leaky_slope") {
      cfg.leaky_slope = parse_number<float>(key, value);
    } else if (key == "split") {
      std::vector<double> r;
      std::istringstream parts(value);
      std::string part;
      while (std::getline(parts, part, ',')) r.push_back(parse_number<double>(key, trim(part)));
      if (r.size() != 3) throw ValidationError("config: split needs three ratios train,val,test");
      cfg.split.train = r[0];
      cfg.split.val = r[1];
      cfg.split.test = r[2];
    } else {
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
    }
  }
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

// --- loss --------------------------------------------------------------------

namespace {

void check_same_shape(const ScoreMatrix& p, const LabelMatrix& y, const char* op) {
  if (p.rows() != y.rows() || p.cols() != y.cols()) {
    throw ShapeError(std::string(op) + ": probabilities are " + std::to_string(p.rows()) + "x" +
                     std::to_string(p.cols()) + " but labels are " + std::to_string(y.rows()) +
                     "x" + std::to_string(y.cols()));
  }
}

double bce_term(double p, std::uint8_t y) {
  p = std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip);
  return y ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace

double bce_loss(const ScoreMatrix& probabilities, const LabelMatrix& labels) {
  check_same_shape(probabilities, labels, "bce_loss");
  const auto p = probabilities.data();
  const auto y = labels.data();
  if (p.empty()) throw InvalidArgument("bce_loss: no entries");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += bce_term(p[i], y[i]);
  return sum / static_cast<double>(p.size());
}

ScoreMatrix bce_sigmoid_grad(const ScoreMatrix& probabilities, const LabelMatrix& labels) {
  check_same_shape(probabilities, labels, "bce_sigmoid_grad");
  ScoreMatrix g(probabilities.rows(), probabilities.cols());
  const auto p = probabilities.data();
  const auto y = labels.data();
  auto out = g.data();
  const double scale = 1.0 / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] - static_cast<double>(y[i])) * scale;
  return g;
}

// --- optimizer ---------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
}

void Optimizer::step(std::span<const std::span<float>> params,
                     std::span<const std::span<const float>> grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient block count");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) {
      throw ShapeError("optimizer: block " + std::to_string(b) + " size mismatch");
    }
    for (float g : grads[b]) {
      if (!std::isfinite(g)) {
        throw NumericError("optimizer: non-finite gradient in parameter block " +
                           std::to_string(b));
      }
    }
  }

  ++t_;
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        params[b][i] = static_cast<float>(params[b][i] - lr_ * grads[b][i]);
      }
    }
    return;
  }

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0f);
      v_.emplace_back(p.size(), 0.0f);
    }
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = m_[b];
    auto& v = v_[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * g;
      const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      params[b][i] = static_cast<float>(params[b][i] - lr_ * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

// --- training ----------------------------------------------------------------

namespace {

void check_set(const ModelParams& model, const TrainingSet& set, const char* what) {
  if (set.labels.rows() != set.images.size()) {
    throw InvalidArgument(std::string(what) + ": image count and label rows differ");
  }
  if (set.size() > 0 && set.labels.cols() != model.head.out_dim()) {
    throw ShapeError(std::string(what) + ": label columns do not match model head");
  }
}

}  // namespace

double evaluate_loss(const ModelParams& model, const TrainingSet& data) {
  check_set(model, data, "evaluate_loss");
  if (data.size() == 0) throw InvalidArgument("evaluate_loss: empty data set");
  ScoreMatrix probs(data.size(), model.head.out_dim());
  parallel_for(data.size(), [&](std::size_t i) {
    const auto features = extract_features(model, data.images[i]);
    const auto p = dense_sigmoid_head<float>(features, model.head);
    std::copy(p.begin(), p.end(), probs.row(i).begin());
  });
  return bce_loss(probs, data.labels);
}

TrainHistory train(ModelParams& model, const TrainingSet& train_set, const TrainingSet* val_set,
                   const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_set(model, train_set, "train");
  if (train_set.size() == 0) throw InvalidArgument("train: empty training set");
  const bool has_val = val_set != nullptr && val_set->size() > 0;
  if (has_val) check_set(model, *val_set, "validation");

  TrainHistory history;
  const std::size_t n = train_set.size();
  const std::size_t labels = model.head.out_dim();
  Optimizer optimizer(config.optimizer, config.learning_rate);
  const Rng shuffle_root(config.seed);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double best_val = std::numeric_limits<double>::infinity();
  ModelParams best_model;
  std::size_t since_best = 0;
  ModelParams accum = zeros_like(model);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng epoch_rng = shuffle_root.derive(epoch);
    shuffle(order, epoch_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0, batch_no = 0; start < n; start += config.batch_size, ++batch_no) {
      const std::size_t bsize = std::min(config.batch_size, n - start);
      const double scale = 1.0 / static_cast<double>(bsize * labels);
      std::vector<ModelParams> sample_grads(bsize);
      std::vector<double> sample_loss(bsize, 0.0);

      parallel_for(bsize, [&](std::size_t i) {
        const std::size_t idx = order[start + i];
        const auto cache = forward_train(model, train_set.images[idx]);
        const auto y = train_set.labels.row(idx);
        std::vector<float> dlogits(labels);
        double loss = 0.0;
        for (std::size_t l = 0; l < labels; ++l) {
          const double p = cache.probabilities[l];
          loss += bce_term(p, y[l]);
          dlogits[l] = static_cast<float>((p - static_cast<double>(y[l])) * scale);
        }
        sample_loss[i] = loss;
        sample_grads[i] = backward(model, cache, dlogits);
      });

      double batch_loss = 0.0;
      for (double l : sample_loss) batch_loss += l;
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_no));
      }
      epoch_loss += batch_loss;

      auto acc_blocks = accum.parameter_blocks();
      for (auto block : acc_blocks) std::fill(block.begin(), block.end(), 0.0f);
      for (const auto& g : sample_grads) {
        const auto blocks = g.parameter_blocks();
        for (std::size_t b = 0; b < blocks.size(); ++b) {
          for (std::size_t k = 0; k < blocks[b].size(); ++k) acc_blocks[b][k] += blocks[b][k];
        }
      }
      const auto param_blocks = model.parameter_blocks();
      const auto grad_blocks = std::as_const(accum).parameter_blocks();
      try {
        optimizer.step(param_blocks, grad_blocks);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_no) + ")");
      }
    }

    const double train_loss = epoch_loss / static_cast<double>(n * labels);
    const double val_loss =
        has_val ? evaluate_loss(model, *val_set) : std::numeric_limits<double>::quiet_NaN();
    if (has_val && !std::isfinite(val_loss)) {
      throw NumericError("training diverged: non-finite validation loss at epoch " +
                         std::to_string(epoch));
    }
    history.train_loss.push_back(train_loss);
    history.val_loss.push_back(val_loss);
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);

    if (!has_val) {
      history.best_epoch = epoch;
      continue;
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      best_model = model;
      history.best_epoch = epoch;
      since_best = 0;
    } else if (config.early_stop_patience && ++since_best >= *config.early_stop_patience) {
      history.stopped_early = true;
      break;
    }
  }

  if (has_val && history.best_epoch > 0) model = std::move(best_model);
  return history;
}

// --- splitting ---------------------------------------------------------------

Split split_dataset(std::size_t n, const SplitSpec& spec, std::span<const std::string> group_keys) {
  spec.validate();
  if (n == 0) throw InvalidArgument("split_dataset: no samples");
  if (!group_keys.empty() && group_keys.size() != n) {
    throw InvalidArgument("split_dataset: one group key per sample required");
  }

  // Groups in first-appearance order, so the shuffle input is deterministic.
  std::vector<std::vector<std::size_t>> groups;
  if (group_keys.empty()) {
    groups.resize(n);
    for (std::size_t i = 0; i < n; ++i) groups[i] = {i};
  } else {
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] = slot.try_emplace(group_keys[i], groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(i);
    }
  }

  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  shuffle(order, rng);

  const auto target_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test));
  const auto target_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.val));

  Split out;
  std::size_t g = 0;
  for (; g < order.size() && out.test.size() < target_test; ++g) {
    const auto& members = groups[order[g]];
    out.test.insert(out.test.end(), members.begin(), members.end());
  }
  for (; g < order.size() && out.val.size() < target_val; ++g) {
    const auto& members = groups[order[g]];
    out.val.insert(out.val.end(), members.begin(), members.end());
  }
  for (; g < order.size(); ++g) {
    const auto& members = groups[order[g]];
    out.train.insert(out.train.end(), members.begin(), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// --- gradient checking -------------------------------------------------------

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max(std::abs(a), std::abs(n));
    if (denom == 0.0) continue;
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kDense: return "dense";
    case LayerKind::kSigmoidBce: return "sigmoid_bce";
  }
  return "unknown";
}

namespace {

TensorD random_tensor(Rng& rng, Shape shape) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Central differences of `loss` with respect to every element of `values`.
template <typename Loss>
std::vector<double> numeric_gradient(std::span<double> values, double eps, Loss&& loss) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = loss();
    values[i] = saved - eps;
    const double down = loss();
    values[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double check_conv(Rng& rng, double eps) {
  BasicConvLayer<double> layer{random_tensor(rng, {3, 3, 2, 2}), random_vector(rng, 2)};
  TensorD x = random_tensor(rng, {6, 6, 2});
  const auto r = random_tensor(rng, {6, 6, 2});
  auto loss = [&] { return dot(conv2d_forward(x, layer).data(), r.data()); };
  const auto g = conv2d_backward(x, layer, r);
  double err = max_relative_error(g.dx.data(), numeric_gradient(x.data(), eps, loss));
  err = std::max(err, max_relative_error(g.dkernels.data(),
                                         numeric_gradient(layer.kernels.data(), eps, loss)));
  err = std::max(err, max_relative_error(g.dbias, numeric_gradient(std::span(layer.bias), eps, loss)));
  return err;
}

double check_leaky(Rng& rng, double eps) {
  const double slope = kDefaultLeakySlope;
  TensorD x({4, 4, 3});
  // Keep every element at least 2*eps from the kink.
  for (auto& v : x.data()) {
    do v = rng.normal(); while (std::abs(v) < 2.0 * eps);
  }
  const auto r = random_tensor(rng, {4, 4, 3});
  auto loss = [&] { return dot(leaky_relu(x, slope).data(), r.data()); };
  const auto dx = leaky_relu_backward(x, r, slope);
  return max_relative_error(dx.data(), numeric_gradient(x.data(), eps, loss));
}

double check_pool(Rng& rng, double eps) {
  TensorD x({5, 5, 2});
  // Resample until every window's maximum beats the runner-up by 4*eps,
  // so perturbations never change the argmax.
  for (;;) {
    for (auto& v : x.data()) v = rng.normal();
    bool separated = true;
    for (std::size_t oy = 0; oy < 2 && separated; ++oy) {
      for (std::size_t ox = 0; ox < 2 && separated; ++ox) {
        for (std::size_t c = 0; c < 2; ++c) {
          std::vector<double> w{x.at(2 * oy, 2 * ox, c), x.at(2 * oy, 2 * ox + 1, c),
                                x.at(2 * oy + 1, 2 * ox, c), x.at(2 * oy + 1, 2 * ox + 1, c)};
          std::sort(w.begin(), w.end());
          if (w[3] - w[2] < 4.0 * eps) separated = false;
        }
      }
    }
    if (separated) break;
  }
  const auto r = random_tensor(rng, {2, 2, 2});
  auto loss = [&] { return dot(maxpool2_forward(x).output.data(), r.data()); };
  const auto fwd = maxpool2_forward(x);
  const auto dx = maxpool2_backward(r, fwd.argmax, x.shape());
  return max_relative_error(dx.data(), numeric_gradient(x.data(), eps, loss));
}

double check_dense(Rng& rng, double eps) {
  BasicDenseLayer<double> layer{random_tensor(rng, {10, kNumLabels}),
                                random_vector(rng, kNumLabels)};
  auto f = random_vector(rng, 10);
  const auto r = random_vector(rng, kNumLabels);
  auto loss = [&] { return dot(dense_forward<double>(f, layer), r); };
  const auto g = dense_backward<double>(f, layer, r);
  double err = max_relative_error(g.dx, numeric_gradient(std::span(f), eps, loss));
  err = std::max(err, max_relative_error(g.dweights.data(),
                                         numeric_gradient(layer.weights.data(), eps, loss)));
  err = std::max(err, max_relative_error(g.dbias, numeric_gradient(std::span(layer.bias), eps, loss)));
  return err;
}

double check_sigmoid_bce(Rng& rng, double eps) {
  const std::size_t n = 3;
  ScoreMatrix logits(n, kNumLabels);
  LabelMatrix y(n, kNumLabels);
  for (auto& v : logits.data()) v = rng.uniform(-4.0, 4.0);
  for (auto& v : y.data()) v = static_cast<std::uint8_t>(rng.below(2));
  auto probs = [&] {
    ScoreMatrix p(n, kNumLabels);
    for (std::size_t i = 0; i < p.data().size(); ++i) p.data()[i] = sigmoid(logits.data()[i]);
    return p;
  };
  auto loss = [&] { return bce_loss(probs(), y); };
  const auto analytic = bce_sigmoid_grad(probs(), y);
  return max_relative_error(analytic.data(), numeric_gradient(logits.data(), eps, loss));
}

}  // namespace

double grad_check(LayerKind kind, Rng& rng, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw InvalidArgument("grad_check: epsilon in (0, 1e-2]");
  switch (kind) {
    case LayerKind::kConv: return check_conv(rng, epsilon);
    case LayerKind::kLeakyRelu: return check_leaky(rng, epsilon);
    case LayerKind::kMaxPool: return check_pool(rng, epsilon);
    case LayerKind::kDense: return check_dense(rng, epsilon);
    case LayerKind::kSigmoidBce: return check_sigmoid_bce(rng, epsilon);
  }
  throw InvalidArgument("grad_check: unknown layer kind");
}

}  // namespace skullnet
