#pragma once

// Single-lane signalized corridor microsimulation.
//
// Vehicles move along a 1-D corridor [0, corridor_length] and are stored leader first,
// so vehicles.front() is the most downstream one and new arrivals are appended at the back.
// Positions refer to the front bumper; a follower keeps at least
// vehicle_length + min_gap behind its leader at all times.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "cvq/random.hpp"

namespace cvq {

inline constexpr double kMphToMps = 0.44704;
inline constexpr double kQueueSpeedThreshold = 5.0 * kMphToMps;  // 2.2352 m/s
// Below this a speed held down by a leader or the stop line is taken as standing still; the
// Krauss bound alone only approaches zero geometrically.
inline constexpr double kStandstillSpeed = 0.01;  // m/s

struct VehicleState {
  std::int64_t id = 0;
  double position = 0.0;  // m
  double speed = 0.0;     // m/s
  bool is_cv = false;

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

struct CarFollowingParams {
  double v_max = 13.9;
  double accel = 1.5;
  double decel = 3.0;
  double min_gap = 2.0;
  double vehicle_length = 5.0;
  double dt = 0.1;
  double reaction_time = 1.5;  // Krauss tau, s

  void validate() const {
    if (!(v_max > 0 && accel > 0 && decel > 0 && min_gap > 0 && vehicle_length > 0 && dt > 0 &&
          reaction_time > 0) ||
        dt > 1.0) {
      throw std::invalid_argument("car-following parameters must be positive with dt <= 1");
    }
  }
};

enum class Phase { green, red };

struct SignalState {
  double location = 800.0;
  double green_s = 40.0;
  double red_s = 60.0;

  double cycle() const { return green_s + red_s; }

  // Each cycle starts with green at clock = k * cycle().
  Phase phase_at(double clock) const {
    const double in_cycle = std::fmod(clock, cycle());
    return in_cycle < green_s ? Phase::green : Phase::red;
  }

  void validate() const {
    if (!(green_s > 0 && red_s > 0)) throw std::invalid_argument("signal durations must be positive");
  }
};

class World {
 public:
  World() = default;
  World(double corridor_length, SignalState signal, CarFollowingParams params)
      : corridor_length_(corridor_length), signal_(signal), params_(params) {
    params_.validate();
    signal_.validate();
    if (!(corridor_length_ > 0)) throw std::invalid_argument("corridor length must be positive");
    if (signal_.location < 0 || signal_.location > corridor_length_)
      throw std::invalid_argument("signal must lie on the corridor");
  }

  std::span<const VehicleState> vehicles() const { return vehicles_; }
  double clock() const { return static_cast<double>(steps_) * params_.dt; }
  std::int64_t steps() const { return steps_; }
  double corridor_length() const { return corridor_length_; }
  const SignalState& signal() const { return signal_; }
  const CarFollowingParams& params() const { return params_; }
  Phase phase() const { return signal_.phase_at(clock()); }

  // Vehicles that arrived but could not enter yet because the entry was occupied.
  std::size_t backlog() const { return backlog_.size(); }
  std::int64_t spawned() const { return next_id_; }

  // Test hook: place a vehicle directly. Keeps leader-first ordering.
  void place(VehicleState v) {
    if (v.speed < 0 || v.position < 0 || v.position > corridor_length_)
      throw std::invalid_argument("vehicle state out of range");
    auto it = std::find_if(vehicles_.begin(), vehicles_.end(),
                           [&](const VehicleState& o) { return o.position < v.position; });
    vehicles_.insert(it, v);
    next_id_ = std::max(next_id_, v.id + 1);
  }

  friend void spawn(World& world, double demand_rate, double cv_penetration, Rng& rng);
  friend void step(World& world);

 private:
  // Krauss safe speed toward a leader at free gap `gap` moving at `leader_speed`.
  double safe_speed(double speed, double leader_speed, double gap) const {
    const double tau = params_.reaction_time;
    return leader_speed + (gap - leader_speed * tau) / ((speed + leader_speed) / (2.0 * params_.decel) + tau);
  }

  double entry_gap() const {
    if (vehicles_.empty()) return corridor_length_;
    return vehicles_.back().position - params_.vehicle_length - params_.min_gap;
  }

  std::vector<VehicleState> vehicles_;
  std::deque<bool> backlog_;
  std::int64_t steps_ = 0;
  std::int64_t next_id_ = 0;
  double corridor_length_ = 1000.0;
  SignalState signal_{};
  CarFollowingParams params_{};
};

// Arrival process at the corridor entry: one Bernoulli(demand_rate * dt) arrival draw per call,
// and when an arrival happens a Bernoulli(cv_penetration) connected flag. Both draws are always
// consumed the same way, so the traffic realised for a seed does not depend on the penetration.
// The head of the backlog enters at position 0 once the entry region is free.
inline void spawn(World& world, double demand_rate, double cv_penetration, Rng& rng) {
  if (cv_penetration < 0.0 || cv_penetration > 1.0)
    throw std::invalid_argument("cv_penetration must be in [0, 1]");
  if (demand_rate < 0.0) throw std::invalid_argument("demand_rate must be non-negative");
  const auto& p = world.params_;
  const bool arrival = bernoulli(rng, demand_rate * p.dt);
  const double u_cv = uniform01(rng);
  if (arrival) world.backlog_.push_back(u_cv < cv_penetration);

  if (world.backlog_.empty() || world.entry_gap() < 0.0) return;
  double speed = p.v_max;
  if (!world.vehicles_.empty()) {
    const auto& leader = world.vehicles_.back();
    const double gap = world.entry_gap();
    speed = std::min({speed, world.safe_speed(speed, leader.speed, gap), gap / p.dt});
    speed = std::max(speed, 0.0);
  }
  world.vehicles_.push_back(VehicleState{world.next_id_++, 0.0, speed, world.backlog_.front()});
  world.backlog_.pop_front();
}

// Advance one time step. Vehicles update front to back so each follower sees its leader's new
// state; the gap/dt bound makes overlap impossible regardless of the Krauss term.
inline void step(World& world) {
  const auto& p = world.params_;
  const auto& sig = world.signal_;
  const bool red = world.phase() == Phase::red;

  const VehicleState* leader = nullptr;
  for (auto& v : world.vehicles_) {
    const double free_speed = std::min(v.speed + p.accel * p.dt, p.v_max);
    double target = free_speed;
    if (leader != nullptr) {
      const double gap = leader->position - v.position - p.vehicle_length - p.min_gap;
      target = std::min({target, world.safe_speed(v.speed, leader->speed, gap), gap / p.dt});
    }
    if (red && v.position < sig.location) {
      // Stop min_gap short of the line; a vehicle that can no longer stop in time proceeds.
      const double gap = sig.location - p.min_gap - v.position;
      const double braking = v.speed * v.speed / (2.0 * p.decel);
      if (gap >= braking - v.speed * p.dt) {
        target = std::min({target, world.safe_speed(v.speed, 0.0, gap), std::max(gap, 0.0) / p.dt});
      }
    }
    if (target < free_speed && target < kStandstillSpeed) target = 0.0;
    v.speed = std::clamp(target, 0.0, p.v_max);
    v.position += v.speed * p.dt;
    leader = &v;
  }

  const auto exited = std::find_if(world.vehicles_.begin(), world.vehicles_.end(),
                                   [&](const VehicleState& v) { return v.position <= world.corridor_length_; });
  world.vehicles_.erase(world.vehicles_.begin(), exited);
  ++world.steps_;
}

// Network-wide queue state: mean speed over every vehicle (connected or not) strictly below
// the threshold. An empty corridor is not queued.
inline bool ground_truth(const World& world, double threshold = kQueueSpeedThreshold) {
  if (!(threshold > 0)) throw std::invalid_argument("threshold must be positive");
  const auto vs = world.vehicles();
  if (vs.empty()) return false;
  double sum = 0.0;
  for (const auto& v : vs) sum += v.speed;
  return sum / static_cast<double>(vs.size()) < threshold;
}

inline double mean_speed(const World& world) {
  const auto vs = world.vehicles();
  if (vs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& v : vs) sum += v.speed;
  return sum / static_cast<double>(vs.size());
}

inline void write_trajectory_header(std::ostream& os) { os << "t,vehicle_id,position_m,speed_mps,is_cv\n"; }

inline void write_trajectory_rows(std::ostream& os, const World& world) {
  const double t = world.clock();
  for (const auto& v : world.vehicles())
    os << t << ',' << v.id << ',' << v.position << ',' << v.speed << ',' << (v.is_cv ? 1 : 0) << '\n';
}

}  // namespace cvq
