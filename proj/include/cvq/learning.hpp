#pragma once

// Linear soft-margin SVM for the queue / no-queue decision, with z-score feature scaling.
//
// Training solves the standard dual
//
//   min_a  1/2 a'Qa - sum(a)    s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j <x_i, x_j>
//
// with SMO (maximal-gain second-order working-set selection). Since the kernel is linear the
// primal weight vector is kept explicitly and the gradient is refreshed in O(n) per step.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "cvq/errors.hpp"

namespace cvq {

enum class QueueLabel : std::uint8_t { no_queue = 0, queue = 1 };

inline QueueLabel to_label(bool queued) { return queued ? QueueLabel::queue : QueueLabel::no_queue; }
inline int to_sign(QueueLabel l) { return l == QueueLabel::queue ? 1 : -1; }
inline int to_int(QueueLabel l) { return l == QueueLabel::queue ? 1 : 0; }

struct FeatureVector {
  double avg_speed = 0.0;       // m/s
  double avg_separation = 0.0;  // m

  std::array<double, 2> as_array() const { return {avg_speed, avg_separation}; }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct LabeledSample {
  FeatureVector features;
  QueueLabel label = QueueLabel::no_queue;
  double t = 0.0;  // interval end time, s

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

inline constexpr double kStdFloor = 1e-9;

struct Normalizer {
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> stddev{1.0, 1.0};

  std::array<double, 2> apply(const FeatureVector& f) const {
    const auto x = f.as_array();
    return {(x[0] - mean[0]) / stddev[0], (x[1] - mean[1]) / stddev[1]};
  }

  FeatureVector apply_features(const FeatureVector& f) const {
    const auto z = apply(f);
    return {z[0], z[1]};
  }
};

// Population moments over the training window; std floored at kStdFloor.
inline Normalizer normalize_fit(std::span<const LabeledSample> samples) {
  if (samples.empty()) throw EmptyTrainingSet();
  Normalizer n;
  const auto count = static_cast<double>(samples.size());
  for (int k = 0; k < 2; ++k) {
    double sum = 0.0;
    for (const auto& s : samples) sum += s.features.as_array()[k];
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& s : samples) {
      const double d = s.features.as_array()[k] - mean;
      ss += d * d;
    }
    n.mean[k] = mean;
    n.stddev[k] = std::max(std::sqrt(ss / count), kStdFloor);
  }
  return n;
}

inline std::vector<LabeledSample> normalize_samples(std::span<const LabeledSample> samples, const Normalizer& n) {
  std::vector<LabeledSample> out(samples.begin(), samples.end());
  for (auto& s : out) s.features = n.apply_features(s.features);
  return out;
}

struct SvmModel {
  std::array<double, 2> weights{0.0, 0.0};
  double bias = 0.0;
  double C = 1.0;

  double decision(const std::array<double, 2>& x) const { return weights[0] * x[0] + weights[1] * x[1] + bias; }
  friend bool operator==(const SvmModel&, const SvmModel&) = default;
};

struct SvmOptions {
  double C = 1.0;
  double tol = 1e-4;
  int max_iter = 10000;
};

struct TrainResult {
  SvmModel model;
  int iterations = 0;
  bool converged = true;
  std::vector<double> objective;  // dual objective after each step, when requested
};

// Decision value exactly zero is no_queue.
inline QueueLabel predict(const SvmModel& model, const Normalizer& normalizer, const FeatureVector& features) {
  return model.decision(normalizer.apply(features)) > 0.0 ? QueueLabel::queue : QueueLabel::no_queue;
}

// Primal soft-margin objective 1/2 |w|^2 + C * sum hinge, on already-normalized samples.
inline double primal_objective(const SvmModel& m, std::span<const LabeledSample> samples) {
  double hinge = 0.0;
  for (const auto& s : samples)
    hinge += std::max(0.0, 1.0 - to_sign(s.label) * m.decision(s.features.as_array()));
  return 0.5 * (m.weights[0] * m.weights[0] + m.weights[1] * m.weights[1]) + m.C * hinge;
}

namespace detail {

class Smo {
 public:
  Smo(std::span<const LabeledSample> samples, const SvmOptions& opt)
      : n_(samples.size()), C_(opt.C), x_(n_), y_(n_), alpha_(n_, 0.0), grad_(n_, -1.0) {
    for (std::size_t i = 0; i < n_; ++i) {
      x_[i] = samples[i].features.as_array();
      y_[i] = to_sign(samples[i].label);
    }
  }

  TrainResult run(const SvmOptions& opt, bool record) {
    TrainResult res;
    res.converged = false;
    for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
      std::size_t i = 0, j = 0;
      if (!select(opt.tol, i, j)) {
        res.converged = true;
        break;
      }
      update(i, j);
      if (record) res.objective.push_back(objective());
    }
    res.model.weights = w_;
    res.model.bias = bias();
    res.model.C = C_;
    return res;
  }

  double objective() const {
    double sum_alpha = 0.0;
    for (double a : alpha_) sum_alpha += a;
    return 0.5 * (w_[0] * w_[0] + w_[1] * w_[1]) - sum_alpha;
  }

 private:
  static constexpr double kTau = 1e-12;

  double kernel(std::size_t a, std::size_t b) const { return x_[a][0] * x_[b][0] + x_[a][1] * x_[b][1]; }

  bool in_up(std::size_t t) const { return (y_[t] > 0 && alpha_[t] < C_) || (y_[t] < 0 && alpha_[t] > 0); }
  bool in_low(std::size_t t) const { return (y_[t] > 0 && alpha_[t] > 0) || (y_[t] < 0 && alpha_[t] < C_); }

  // Second-order working set selection (Fan, Chen and Lin 2005). False once the maximal KKT
  // violation drops below tol.
  bool select(double tol, std::size_t& out_i, std::size_t& out_j) const {
    double g_max = -std::numeric_limits<double>::infinity();
    double g_min = std::numeric_limits<double>::infinity();
    std::size_t i = n_;
    for (std::size_t t = 0; t < n_; ++t) {
      if (in_up(t) && -y_[t] * grad_[t] >= g_max) {
        g_max = -y_[t] * grad_[t];
        i = t;
      }
    }
    if (i == n_) return false;
    std::size_t j = n_;
    double best_gain = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n_; ++t) {
      if (!in_low(t)) continue;
      const double v = -y_[t] * grad_[t];
      g_min = std::min(g_min, v);
      const double b = g_max - v;
      if (b > 0) {
        double a = kernel(i, i) + kernel(t, t) - 2.0 * kernel(i, t);
        if (a <= 0) a = kTau;
        const double gain = -(b * b) / a;
        if (gain <= best_gain) {
          best_gain = gain;
          j = t;
        }
      }
    }
    if (g_max - g_min < tol || j == n_) return false;
    out_i = i;
    out_j = j;
    return true;
  }

  void update(std::size_t i, std::size_t j) {
    const double old_ai = alpha_[i];
    const double old_aj = alpha_[j];
    double a = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
    if (a <= 0) a = kTau;

    if (y_[i] != y_[j]) {
      const double delta = (-grad_[i] - grad_[j]) / a;
      const double diff = alpha_[i] - alpha_[j];
      alpha_[i] += delta;
      alpha_[j] += delta;
      if (diff > 0) {
        if (alpha_[j] < 0) { alpha_[j] = 0; alpha_[i] = diff; }
      } else {
        if (alpha_[i] < 0) { alpha_[i] = 0; alpha_[j] = -diff; }
      }
      if (diff > 0) {
        if (alpha_[i] > C_) { alpha_[i] = C_; alpha_[j] = C_ - diff; }
      } else {
        if (alpha_[j] > C_) { alpha_[j] = C_; alpha_[i] = C_ + diff; }
      }
    } else {
      const double delta = (grad_[i] - grad_[j]) / a;
      const double sum = alpha_[i] + alpha_[j];
      alpha_[i] -= delta;
      alpha_[j] += delta;
      if (sum > C_) {
        if (alpha_[i] > C_) { alpha_[i] = C_; alpha_[j] = sum - C_; }
      } else {
        if (alpha_[j] < 0) { alpha_[j] = 0; alpha_[i] = sum; }
      }
      if (sum > C_) {
        if (alpha_[j] > C_) { alpha_[j] = C_; alpha_[i] = sum - C_; }
      } else {
        if (alpha_[i] < 0) { alpha_[i] = 0; alpha_[j] = sum; }
      }
    }

    const double di = (alpha_[i] - old_ai) * y_[i];
    const double dj = (alpha_[j] - old_aj) * y_[j];
    for (int k = 0; k < 2; ++k) w_[k] += di * x_[i][k] + dj * x_[j][k];
    for (std::size_t t = 0; t < n_; ++t) grad_[t] = y_[t] * (w_[0] * x_[t][0] + w_[1] * x_[t][1]) - 1.0;
  }

  // Offset from the free support vectors, or the midpoint of the feasible range if none.
  double bias() const {
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    int n_free = 0;
    for (std::size_t t = 0; t < n_; ++t) {
      const double yg = y_[t] * grad_[t];
      if (alpha_[t] >= C_) {
        if (y_[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
      } else if (alpha_[t] <= 0) {
        if (y_[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
      } else {
        ++n_free;
        sum += yg;
      }
    }
    const double rho = n_free > 0 ? sum / n_free : (ub + lb) / 2.0;
    return -rho;
  }

  std::size_t n_;
  double C_;
  std::vector<std::array<double, 2>> x_;
  std::vector<int> y_;
  std::vector<double> alpha_;
  std::vector<double> grad_;
  std::array<double, 2> w_{0.0, 0.0};
};

}  // namespace detail

// Trains on already-normalized samples. A single-class set yields the constant classifier
// for that class.
inline TrainResult train_detailed(std::span<const LabeledSample> samples, const SvmOptions& opt = {},
                                  bool record_objective = false) {
  if (samples.empty()) throw EmptyTrainingSet();
  if (!(opt.C > 0)) throw std::invalid_argument("C must be positive");
  const bool has_queue = std::any_of(samples.begin(), samples.end(),
                                     [](const LabeledSample& s) { return s.label == QueueLabel::queue; });
  const bool has_free = std::any_of(samples.begin(), samples.end(),
                                    [](const LabeledSample& s) { return s.label == QueueLabel::no_queue; });
  if (!(has_queue && has_free)) {
    TrainResult res;
    res.model.C = opt.C;
    res.model.bias = has_queue ? 1.0 : -1.0;
    return res;
  }
  detail::Smo smo(samples, opt);
  return smo.run(opt, record_objective);
}

inline SvmModel train(std::span<const LabeledSample> samples, const SvmOptions& opt = {}) {
  return train_detailed(samples, opt).model;
}

struct TrainedClassifier {
  SvmModel model;
  Normalizer normalizer;
};

// Normalize the raw window, then train on it.
inline TrainedClassifier fit(std::span<const LabeledSample> raw, const SvmOptions& opt = {}) {
  TrainedClassifier tc;
  tc.normalizer = normalize_fit(raw);
  const auto z = normalize_samples(raw, tc.normalizer);
  tc.model = train(z, opt);
  return tc;
}

// Checkpoint: JSON text with the model, the moments it was trained under, window size and time.
inline nlohmann::json checkpoint_json(const TrainedClassifier& tc, std::size_t window_size, double timestamp) {
  return nlohmann::json{{"weights", tc.model.weights},
                        {"bias", tc.model.bias},
                        {"C", tc.model.C},
                        {"normalizer", {{"mean", tc.normalizer.mean}, {"std", tc.normalizer.stddev}}},
                        {"window_size", window_size},
                        {"timestamp", timestamp}};
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainedClassifier& tc, std::size_t window_size,
                            double timestamp) {
  std::ofstream os(path);
  if (!os) throw StorageFailure(path.string());
  os << checkpoint_json(tc, window_size, timestamp).dump(2) << '\n';
  if (!os) throw StorageFailure(path.string());
}

struct Checkpoint {
  TrainedClassifier classifier;
  std::size_t window_size = 0;
  double timestamp = 0.0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read checkpoint " + path.string());
  const auto j = nlohmann::json::parse(is);
  Checkpoint c;
  c.classifier.model.weights = j.at("weights").get<std::array<double, 2>>();
  c.classifier.model.bias = j.at("bias").get<double>();
  c.classifier.model.C = j.at("C").get<double>();
  c.classifier.normalizer.mean = j.at("normalizer").at("mean").get<std::array<double, 2>>();
  c.classifier.normalizer.stddev = j.at("normalizer").at("std").get<std::array<double, 2>>();
  c.window_size = j.at("window_size").get<std::size_t>();
  c.timestamp = j.at("timestamp").get<double>();
  return c;
}

}  // namespace cvq
