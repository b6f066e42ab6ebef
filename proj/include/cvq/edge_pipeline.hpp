#pragma once

// Three-tier queue prediction pipeline.
//
//   Mobile Edge  - connected vehicles broadcasting BSMs (comms.hpp)
//   Fixed Edge   - aggregates delivered BSMs per interval, predicts with the installed model,
//                  verifies against ground truth and keeps the verified-sample store
//   System Edge  - owns the training window and re-estimates the SVM parameters
//
// The tiers are stages in one process. The only things crossing a stage boundary are
// VerifiedSample messages (Fixed -> System) and ModelUpdate messages (System -> Fixed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cvq/comms.hpp"
#include "cvq/errors.hpp"
#include "cvq/learning.hpp"
#include "cvq/random.hpp"
#include "cvq/traffic_sim.hpp"
#include "cvq/windowing.hpp"

namespace cvq {

// ---------------------------------------------------------------------------------------------
// Configuration shared by bootstrap and evaluation runs.

struct SimulationConfig {
  double corridor_length = 1000.0;
  SignalState signal{};
  CarFollowingParams car{};
  // Arrival rate at time t: demand_rate + demand_amplitude * sin(2 pi t / demand_period), floored at 0.
  double demand_rate = 0.3;  // veh/s
  double demand_amplitude = 0.15;
  double demand_period = 1000.0;  // s
  ChannelParams channel{};   // loss_rate here is overridden per scenario
  double aggregation_interval = 10.0;
  double warmup = 300.0;  // s simulated before the first scored interval
  double bootstrap_epoch = 1000.0;
  SvmOptions svm{};
  std::size_t fixed_capacity = 300;
  double adwin_delta = 0.01;
  double queue_threshold = kQueueSpeedThreshold;

  double demand_at(double t) const {
    constexpr double kTwoPi = 6.283185307179586;
    return std::max(0.0, demand_rate + demand_amplitude * std::sin(kTwoPi * t / demand_period));
  }

  std::int64_t steps_per_interval() const { return std::llround(aggregation_interval / car.dt); }
  std::int64_t steps_for(double seconds) const { return std::llround(seconds / car.dt); }
};

// ---------------------------------------------------------------------------------------------
// Fixed Edge aggregation.

enum class AggregateStatus { data, no_data };

inline std::string_view to_string(AggregateStatus s) { return s == AggregateStatus::data ? "data" : "no_data"; }

struct IntervalAggregate {
  double t_start = 0.0;
  double t_end = 0.0;
  double avg_speed = 0.0;
  double avg_separation = 0.0;
  std::size_t n_cvs_heard = 0;
  AggregateStatus status = AggregateStatus::no_data;

  FeatureVector features() const { return {avg_speed, avg_separation}; }
};

// Uses the latest delivered BSM of each distinct CV. Separation is the mean gap between
// position-adjacent CVs; with a single CV it falls back to `separation_fallback`.
inline IntervalAggregate aggregate(std::span<const Bsm> delivered, double t_start, double t_end,
                                   double separation_fallback) {
  IntervalAggregate agg;
  agg.t_start = t_start;
  agg.t_end = t_end;

  std::map<std::int64_t, Bsm> latest;
  for (const auto& b : delivered) {
    auto [it, inserted] = latest.try_emplace(b.vehicle_id, b);
    if (!inserted && b.timestamp >= it->second.timestamp) it->second = b;
  }
  agg.n_cvs_heard = latest.size();
  if (latest.empty()) return agg;

  agg.status = AggregateStatus::data;
  std::vector<double> positions;
  positions.reserve(latest.size());
  double speed_sum = 0.0;
  for (const auto& [id, b] : latest) {
    speed_sum += b.speed;
    positions.push_back(b.position);
  }
  agg.avg_speed = speed_sum / static_cast<double>(latest.size());

  if (positions.size() == 1) {
    agg.avg_separation = separation_fallback;
  } else {
    // Consecutive gaps telescope to (max - min).
    std::sort(positions.begin(), positions.end());
    agg.avg_separation = (positions.back() - positions.front()) / static_cast<double>(positions.size() - 1);
  }
  return agg;
}

// ---------------------------------------------------------------------------------------------
// Interval feed: the simulated world seen through the channel, one observation per interval.

struct IntervalObservation {
  IntervalAggregate aggregate;
  QueueLabel truth = QueueLabel::no_queue;
  double true_mean_speed = 0.0;
};

struct TraceSinks {
  std::ostream* trajectory = nullptr;
  std::ostream* bsm_log = nullptr;
};

// Runs `warmup` seconds unobserved, then `duration` seconds split into aggregation intervals.
// BSMs are stamped with the clock before each step; an interval covers the BSM slots in
// [t_start, t_end) and its ground truth is sampled at the last of those slots.
inline std::vector<IntervalObservation> simulate_intervals(const SimulationConfig& cfg, double cv_penetration,
                                                           const ChannelParams& channel, double duration,
                                                           double warmup, Rng& traffic_rng, Rng& channel_rng,
                                                           const TraceSinks& trace = {}) {
  World world(cfg.corridor_length, cfg.signal, cfg.car);
  const std::int64_t per_interval = cfg.steps_per_interval();
  const std::int64_t n_intervals = std::llround(duration / cfg.aggregation_interval);
  const std::int64_t warm_steps = cfg.steps_for(warmup);

  for (std::int64_t s = 0; s < warm_steps; ++s) {
    spawn(world, cfg.demand_at(world.clock()), cv_penetration, traffic_rng);
    step(world);
  }

  if (trace.trajectory) write_trajectory_header(*trace.trajectory);
  if (trace.bsm_log) write_bsm_log_header(*trace.bsm_log);

  std::vector<IntervalObservation> out;
  out.reserve(static_cast<std::size_t>(n_intervals));
  std::vector<Bsm> delivered_now;
  for (std::int64_t k = 0; k < n_intervals; ++k) {
    delivered_now.clear();
    IntervalObservation obs;
    const double t_start = world.clock();
    for (std::int64_t j = 0; j < per_interval; ++j) {
      if (trace.trajectory) write_trajectory_rows(*trace.trajectory, world);
      for (const auto& b : emit(world)) {
        const bool ok = delivered(b, channel, channel_rng);
        if (ok) delivered_now.push_back(b);
        if (trace.bsm_log) write_bsm_log_row(*trace.bsm_log, b, ok);
      }
      if (j == per_interval - 1) {
        obs.truth = to_label(ground_truth(world, cfg.queue_threshold));
        obs.true_mean_speed = mean_speed(world);
      }
      spawn(world, cfg.demand_at(world.clock()), cv_penetration, traffic_rng);
      step(world);
    }
    obs.aggregate = aggregate(delivered_now, t_start, world.clock(), channel.range);
    out.push_back(obs);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Bootstrap: a lossless, fully connected epoch labelled with ground truth.

struct BootstrapResult {
  std::shared_ptr<const TrainedClassifier> classifier;
  TrainingSet training_set;
  double epoch = 0.0;
};

inline BootstrapResult bootstrap(const SimulationConfig& cfg, Rng& rng, int max_attempts = 3) {
  ChannelParams lossless = cfg.channel;
  lossless.loss_rate = 0.0;
  double epoch = cfg.bootstrap_epoch;
  for (int attempt = 0; attempt < max_attempts; ++attempt, epoch *= 2.0) {
    Rng attempt_rng = rng;
    Rng channel_rng = rng;  // lossless: drop draws never succeed
    const auto obs = simulate_intervals(cfg, 1.0, lossless, epoch, cfg.warmup, attempt_rng, channel_rng);
    TrainingSet set;
    for (const auto& o : obs)
      if (o.aggregate.status == AggregateStatus::data)
        set.push_back(LabeledSample{o.aggregate.features(), o.truth, o.aggregate.t_end});
    const auto queued = std::count_if(set.begin(), set.end(),
                                      [](const LabeledSample& s) { return s.label == QueueLabel::queue; });
    if (queued == 0 || queued == static_cast<std::ptrdiff_t>(set.size())) continue;

    const std::vector<LabeledSample> rows(set.begin(), set.end());
    BootstrapResult res;
    res.classifier = std::make_shared<const TrainedClassifier>(fit(rows, cfg.svm));
    res.training_set = std::move(set);
    res.epoch = epoch;
    rng = attempt_rng;
    return res;
  }
  throw DegenerateBootstrap("bootstrap epoch produced a single class after " + std::to_string(max_attempts) +
                            " attempts");
}

// ---------------------------------------------------------------------------------------------
// Verified-sample store kept at the Fixed Edge. Append-only; optionally mirrored to CSV.

struct VerifiedRecord {
  double t_end = 0.0;
  FeatureVector features;
  QueueLabel truth = QueueLabel::no_queue;
  QueueLabel prediction = QueueLabel::no_queue;
  bool correct = false;

  LabeledSample sample() const { return {features, truth, t_end}; }
};

class VerifiedStore {
 public:
  VerifiedStore() = default;

  // Mirrors every append to `path` (truncated on open, header written once).
  explicit VerifiedStore(const std::filesystem::path& path) : path_(path) {
    sink_ = std::make_unique<std::ofstream>(path);
    if (!*sink_) throw StorageFailure(path.string());
    *sink_ << "t_end,avg_speed_mps,avg_separation_m,truth,prediction,correct\n";
    sink_->flush();
    if (!*sink_) throw StorageFailure(path.string());
  }

  void append(const VerifiedRecord& r) {
    if (sink_) {
      write_row(*sink_, r);
      if (!*sink_) throw StorageFailure(path_.string());
    }
    records_.push_back(r);
  }

  const std::vector<VerifiedRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  void flush() {
    if (sink_) {
      sink_->flush();
      if (!*sink_) throw StorageFailure(path_.string());
    }
  }

  static void write_row(std::ostream& os, const VerifiedRecord& r) {
    std::ostringstream line;
    line.precision(17);
    line << r.t_end << ',' << r.features.avg_speed << ',' << r.features.avg_separation << ',' << to_int(r.truth)
         << ',' << to_int(r.prediction) << ',' << (r.correct ? 1 : 0) << '\n';
    os << line.str();
  }

  static std::vector<VerifiedRecord> load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read store " + path.string());
    std::string line;
    std::getline(is, line);
    std::vector<VerifiedRecord> out;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      VerifiedRecord r;
      char c = 0;
      int truth = 0, pred = 0, correct = 0;
      ls >> r.t_end >> c >> r.features.avg_speed >> c >> r.features.avg_separation >> c >> truth >> c >> pred >> c >>
          correct;
      if (!ls) throw Error("malformed store row: " + line);
      r.truth = to_label(truth != 0);
      r.prediction = to_label(pred != 0);
      r.correct = correct != 0;
      out.push_back(r);
    }
    return out;
  }

 private:
  std::filesystem::path path_;
  std::unique_ptr<std::ofstream> sink_;
  std::vector<VerifiedRecord> records_;
};

inline void store_verified(VerifiedStore& store, const LabeledSample& sample, QueueLabel prediction, bool correct) {
  store.append(VerifiedRecord{sample.t, sample.features, sample.label, prediction, correct});
}

// ---------------------------------------------------------------------------------------------
// Stage messages and the two edge stages.

struct VerifiedSample {
  LabeledSample sample;  // carries the ground-truth label
  bool correct = false;
};

struct ModelUpdate {
  std::shared_ptr<const TrainedClassifier> classifier;
};

class FixedEdge {
 public:
  void install(ModelUpdate update) { classifier_ = std::move(update.classifier); }
  bool ready() const { return classifier_ != nullptr; }
  const std::shared_ptr<const TrainedClassifier>& classifier() const { return classifier_; }

  // No data repeats the previous prediction (no_queue before the first one).
  QueueLabel predict(const IntervalAggregate& agg) {
    if (!classifier_) throw NotBootstrapped();
    if (agg.status == AggregateStatus::data)
      last_ = cvq::predict(classifier_->model, classifier_->normalizer, agg.features());
    return last_;
  }

 private:
  std::shared_ptr<const TrainedClassifier> classifier_;
  QueueLabel last_ = QueueLabel::no_queue;
};

class SystemEdge {
 public:
  SystemEdge(WindowPolicy policy, TrainingSet initial, std::size_t fixed_capacity, double adwin_delta,
             SvmOptions svm)
      : policy_(policy), fixed_(fixed_capacity), adwin_(adwin_delta), svm_(svm) {
    if (policy_ == WindowPolicy::fixed) {
      const std::vector<LabeledSample> rows(initial.begin(), initial.end());
      fixed_.update(rows);
    } else {
      dynamic_ = std::move(initial);
    }
  }

  // Returns true when the ADWIN window was cut.
  bool receive(const VerifiedSample& msg) {
    if (policy_ == WindowPolicy::fixed) {
      fixed_.update(msg.sample);
      return false;
    }
    dynamic_.push_back(msg.sample);
    const bool cut = adwin_.insert(msg.correct ? 1.0 : 0.0);
    if (cut) adwin_sync(dynamic_, adwin_.size());
    return cut;
  }

  const TrainingSet& training_set() const { return policy_ == WindowPolicy::fixed ? fixed_.samples() : dynamic_; }
  const Adwin& adwin() const { return adwin_; }
  WindowPolicy policy() const { return policy_; }

  ModelUpdate retrain() const {
    const auto& set = training_set();
    const std::vector<LabeledSample> rows(set.begin(), set.end());
    return ModelUpdate{std::make_shared<const TrainedClassifier>(fit(rows, svm_))};
  }

 private:
  WindowPolicy policy_;
  FixedWindow fixed_;
  TrainingSet dynamic_;
  Adwin adwin_;
  SvmOptions svm_;
};

// ---------------------------------------------------------------------------------------------
// Pipeline.

struct PipelineMode {
  bool feedback = false;
  WindowPolicy window_policy = WindowPolicy::fixed;  // ignored without feedback
  int retrain_every = 1;

  friend bool operator==(const PipelineMode&, const PipelineMode&) = default;
};

inline std::string mode_name(const PipelineMode& m) {
  if (!m.feedback) return "no_feedback";
  return m.window_policy == WindowPolicy::fixed ? "feedback_fixed" : "feedback_dynamic";
}

struct TimelineRecord {
  std::size_t interval = 0;
  QueueLabel prediction = QueueLabel::no_queue;
  QueueLabel truth = QueueLabel::no_queue;
  IntervalAggregate aggregate;
};

using Timeline = std::vector<TimelineRecord>;

inline void write_timeline_csv(std::ostream& os, const Timeline& tl) {
  os << "interval_idx,prediction,truth,status,n_cvs_heard\n";
  for (const auto& r : tl)
    os << r.interval << ',' << to_int(r.prediction) << ',' << to_int(r.truth) << ',' << to_string(r.aggregate.status)
       << ',' << r.aggregate.n_cvs_heard << '\n';
}

struct WindowEvent {
  double t = 0.0;
  std::size_t window_len = 0;
  bool cut = false;
};

class EdgePipeline {
 public:
  explicit EdgePipeline(PipelineMode mode, const SimulationConfig& cfg = {})
      : mode_(mode), cfg_(cfg) {
    if (mode_.retrain_every < 1) throw std::invalid_argument("retrain_every must be >= 1");
  }

  void install_bootstrap(const BootstrapResult& boot) {
    fixed_edge_.install(ModelUpdate{boot.classifier});
    if (mode_.feedback)
      system_edge_.emplace(mode_.window_policy, boot.training_set, cfg_.fixed_capacity, cfg_.adwin_delta, cfg_.svm);
  }

  void attach_store(VerifiedStore* store) { store_ = store; }

  // One interval: predict at the Fixed Edge, verify, and in feedback mode hand the verified
  // sample to the System Edge and install the re-estimated model.
  QueueLabel run_interval(const IntervalAggregate& agg, QueueLabel truth) {
    if (!fixed_edge_.ready()) throw NotBootstrapped();
    const QueueLabel prediction = fixed_edge_.predict(agg);
    const bool correct = prediction == truth;
    timeline_.push_back(TimelineRecord{timeline_.size(), prediction, truth, agg});

    if (agg.status == AggregateStatus::data) {
      const LabeledSample sample{agg.features(), truth, agg.t_end};
      if (store_) store_verified(*store_, sample, prediction, correct);
      if (system_edge_) {
        const bool cut = system_edge_->receive(VerifiedSample{sample, correct});
        window_events_.push_back(WindowEvent{agg.t_end, system_edge_->training_set().size(), cut});
      }
    }
    if (system_edge_ && ++since_retrain_ >= mode_.retrain_every) {
      since_retrain_ = 0;
      fixed_edge_.install(system_edge_->retrain());
    }
    return prediction;
  }

  const Timeline& timeline() const { return timeline_; }
  const std::vector<WindowEvent>& window_events() const { return window_events_; }
  const PipelineMode& mode() const { return mode_; }
  const FixedEdge& fixed_edge() const { return fixed_edge_; }
  const SystemEdge* system_edge() const { return system_edge_ ? &*system_edge_ : nullptr; }

 private:
  PipelineMode mode_;
  SimulationConfig cfg_;
  FixedEdge fixed_edge_;
  std::optional<SystemEdge> system_edge_;
  VerifiedStore* store_ = nullptr;
  Timeline timeline_;
  std::vector<WindowEvent> window_events_;
  int since_retrain_ = 0;
};

// Rebuild the sequence of training windows of a feedback run from its bootstrap set and the
// verified records, without touching the pipeline. Entry k is the window after record k.
inline std::vector<TrainingSet> replay_windows(const TrainingSet& bootstrap_set,
                                               std::span<const VerifiedRecord> records, WindowPolicy policy,
                                               std::size_t capacity, double delta) {
  std::vector<TrainingSet> out;
  TrainingSet set = bootstrap_set;
  while (policy == WindowPolicy::fixed && set.size() > capacity) set.pop_front();
  Adwin adwin(delta);
  for (const auto& r : records) {
    set.push_back(r.sample());
    if (policy == WindowPolicy::fixed) {
      while (set.size() > capacity) set.pop_front();
    } else if (adwin.insert(r.correct ? 1.0 : 0.0)) {
      while (set.size() > adwin.size()) set.pop_front();
    }
    out.push_back(set);
  }
  return out;
}

}  // namespace cvq
