#pragma once

// Training-set maintenance: a fixed-capacity FIFO window and an adaptive (ADWIN) window.

#include <cmath>
#include <cstddef>
#include <deque>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "cvq/learning.hpp"

namespace cvq {

using TrainingSet = std::deque<LabeledSample>;

class FixedWindow {
 public:
  explicit FixedWindow(std::size_t capacity = 300) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("window capacity must be positive");
  }

  // Append, then evict exactly as many of the oldest rows as overflow the capacity.
  void update(std::span<const LabeledSample> new_samples) {
    samples_.insert(samples_.end(), new_samples.begin(), new_samples.end());
    while (samples_.size() > capacity_) samples_.pop_front();
  }

  void update(const LabeledSample& s) { update(std::span<const LabeledSample>(&s, 1)); }

  const TrainingSet& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  TrainingSet samples_;
  std::size_t capacity_;
};

// Cut threshold for a split into sub-windows of n0 and n1 items out of a window of n = n0 + n1.
inline double adwin_epsilon_cut(std::size_t n0, std::size_t n1, double delta) {
  const double m = 1.0 / (1.0 / static_cast<double>(n0) + 1.0 / static_cast<double>(n1));
  const double delta_prime = delta / static_cast<double>(n0 + n1);
  return std::sqrt(1.0 / (2.0 * m) * std::log(4.0 / delta_prime));
}

// Exhaustive-split ADWIN. After each insertion every split W = W0 . W1 is tested; when
// |mean(W0) - mean(W1)| >= eps_cut for some split, the shortest such W0 is dropped and the
// test repeats on what remains.
class Adwin {
 public:
  explicit Adwin(double delta = 0.01) : delta_(delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0, 1)");
  }

  // Returns true if any prefix was dropped.
  bool insert(double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("ADWIN value must be finite");
    values_.push_back(value);
    bool cut = false;
    while (true) {
      const std::size_t drop = find_cut();
      if (drop == 0) break;
      values_.erase(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(drop));
      cut = true;
    }
    return cut;
  }

  std::size_t size() const { return values_.size(); }
  double delta() const { return delta_; }
  const std::deque<double>& values() const { return values_; }

  double mean() const {
    if (values_.empty()) return 0.0;
    double s = 0.0;
    for (double v : values_) s += v;
    return s / static_cast<double>(values_.size());
  }

 private:
  // Length of the shortest W0 that satisfies the cut condition, or 0.
  std::size_t find_cut() const {
    const std::size_t n = values_.size();
    if (n < 2) return 0;
    double total = 0.0;
    for (double v : values_) total += v;
    double head = 0.0;
    for (std::size_t n0 = 1; n0 < n; ++n0) {
      head += values_[n0 - 1];
      const std::size_t n1 = n - n0;
      const double diff = std::abs(head / static_cast<double>(n0) - (total - head) / static_cast<double>(n1));
      if (diff >= adwin_epsilon_cut(n0, n1, delta_)) return n0;
    }
    return 0;
  }

  std::deque<double> values_;
  double delta_;
};

// Trim the oldest rows so the training set is no longer than the ADWIN window.
inline void adwin_sync(TrainingSet& training_set, std::size_t window_length) {
  while (training_set.size() > window_length) training_set.pop_front();
}

enum class WindowPolicy { fixed, dynamic };

inline std::string_view to_string(WindowPolicy p) { return p == WindowPolicy::fixed ? "fixed" : "dynamic"; }

inline void write_window_log_header(std::ostream& os) { os << "t,policy,window_len,cut_occurred\n"; }

inline void write_window_log_row(std::ostream& os, double t, WindowPolicy policy, std::size_t len, bool cut) {
  os << t << ',' << to_string(policy) << ',' << len << ',' << (cut ? 1 : 0) << '\n';
}

}  // namespace cvq
