#pragma once

// Mobile-edge BSM broadcast and the DSRC link to the roadside unit.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "cvq/random.hpp"
#include "cvq/traffic_sim.hpp"

namespace cvq {

struct Bsm {
  std::int64_t vehicle_id = 0;
  double timestamp = 0.0;  // s, on the 0.1 s grid
  double position = 0.0;   // m along the corridor
  double speed = 0.0;      // m/s

  friend bool operator==(const Bsm&, const Bsm&) = default;
};

struct ChannelParams {
  double loss_rate = 0.0;
  double rsu_position = 800.0;  // roadside unit sits at the signal
  double range = 1000.0;

  void validate() const {
    if (!(loss_rate >= 0.0 && loss_rate <= 1.0)) throw std::invalid_argument("loss_rate must be in [0, 1]");
    if (!(range > 0.0)) throw std::invalid_argument("range must be positive");
  }
};

// One BSM per connected vehicle, copied from its current state.
inline std::vector<Bsm> emit(const World& world, double t) {
  std::vector<Bsm> out;
  for (const auto& v : world.vehicles())
    if (v.is_cv) out.push_back(Bsm{v.id, t, v.position, v.speed});
  return out;
}

inline std::vector<Bsm> emit(const World& world) { return emit(world, world.clock()); }

// Delivery decision for one BSM. A drop draw is consumed for every BSM, in range or not, so the
// channel stream stays aligned across range settings.
inline bool delivered(const Bsm& bsm, const ChannelParams& channel, Rng& rng) {
  const bool dropped = bernoulli(rng, channel.loss_rate);
  return !dropped && std::abs(bsm.position - channel.rsu_position) <= channel.range;
}

// Delivered subset in input order.
inline std::vector<Bsm> transmit(std::span<const Bsm> bsms, const ChannelParams& channel, Rng& rng) {
  channel.validate();
  std::vector<Bsm> out;
  out.reserve(bsms.size());
  for (const auto& b : bsms)
    if (delivered(b, channel, rng)) out.push_back(b);
  return out;
}

inline void write_bsm_log_header(std::ostream& os) { os << "t,vehicle_id,position_m,speed_mps,delivered\n"; }

inline void write_bsm_log_row(std::ostream& os, const Bsm& b, bool was_delivered) {
  os << b.timestamp << ',' << b.vehicle_id << ',' << b.position << ',' << b.speed << ','
     << (was_delivered ? 1 : 0) << '\n';
}

}  // namespace cvq
