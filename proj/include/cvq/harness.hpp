#pragma once

// Experiment driver: scenario matrix sweep, accuracy grid, paired significance tests, CSV reports.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cvq/edge_pipeline.hpp"
#include "cvq/errors.hpp"

namespace cvq {

// ---------------------------------------------------------------------------------------------
// Configuration.

struct ScenarioConfig {
  std::vector<double> loss_rates{0.02, 0.04, 0.08, 0.16};
  std::vector<double> penetrations{0.10, 0.20, 0.30, 0.40, 0.50, 0.75, 1.00};
  std::vector<PipelineMode> modes{
      {false, WindowPolicy::fixed, 1}, {true, WindowPolicy::fixed, 1}, {true, WindowPolicy::dynamic, 1}};
  std::uint64_t seed = 1;
  int n_seeds = 5;
  double duration = 3600.0;
  SimulationConfig sim{};
  bool trace = false;
  int jobs = 0;  // 0: hardware concurrency

  void validate() const {
    sim.car.validate();
    sim.signal.validate();
    if (loss_rates.empty() || penetrations.empty() || modes.empty())
      throw ConfigError("loss rates, penetrations and modes must be non-empty");
    for (double l : loss_rates)
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("loss rate outside [0, 1]");
    for (double p : penetrations)
      if (!(p > 0.0 && p <= 1.0)) throw ConfigError("penetration outside (0, 1]");
    if (n_seeds < 1) throw ConfigError("seeds must be >= 1");
    if (duration < 10.0 * sim.signal.cycle() - 1e-9)
      throw ConfigError("duration must cover at least 10 signal cycles");
    if (!(sim.aggregation_interval > 0.0)) throw ConfigError("aggregation interval must be positive");
    for (const auto& m : modes)
      if (m.retrain_every < 1) throw ConfigError("retrain_every must be >= 1");
  }
};

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + item + "'");
    }
  }
  return out;
}

inline PipelineMode parse_mode(const std::string& name, int retrain_every = 1) {
  if (name == "no_feedback") return {false, WindowPolicy::fixed, retrain_every};
  if (name == "feedback_fixed") return {true, WindowPolicy::fixed, retrain_every};
  if (name == "feedback_dynamic") return {true, WindowPolicy::dynamic, retrain_every};
  throw ConfigError("unknown mode '" + name + "'");
}

// INI-style file: [scenario] [traffic] [channel] [learning] [windowing] sections of key = value.
// Missing keys keep their defaults; unknown keys are rejected.
inline ScenarioConfig load_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  ScenarioConfig c;
  auto& sim = c.sim;
  int retrain_every = 1;
  const std::map<std::string, std::map<std::string, std::function<void(const std::string&)>>> setters{
      {"scenario",
       {{"loss_rates", [&](const std::string& v) { c.loss_rates = parse_list(v); }},
        {"penetrations", [&](const std::string& v) { c.penetrations = parse_list(v); }},
        {"modes",
         [&](const std::string& v) {
           c.modes.clear();
           std::stringstream ss(v);
           std::string item;
           while (std::getline(ss, item, ',')) {
             item.erase(0, item.find_first_not_of(" \t"));
             item.erase(item.find_last_not_of(" \t") + 1);
             if (!item.empty()) c.modes.push_back(parse_mode(item));
           }
         }},
        {"seed", [&](const std::string& v) { c.seed = std::stoull(v); }},
        {"seeds", [&](const std::string& v) { c.n_seeds = std::stoi(v); }},
        {"duration", [&](const std::string& v) { c.duration = std::stod(v); }},
        {"retrain_every", [&](const std::string& v) { retrain_every = std::stoi(v); }},
        {"jobs", [&](const std::string& v) { c.jobs = std::stoi(v); }}}},
      {"traffic",
       {{"corridor_length", [&](const std::string& v) { sim.corridor_length = std::stod(v); }},
        {"demand_rate", [&](const std::string& v) { sim.demand_rate = std::stod(v); }},
        {"demand_amplitude", [&](const std::string& v) { sim.demand_amplitude = std::stod(v); }},
        {"demand_period", [&](const std::string& v) { sim.demand_period = std::stod(v); }},
        {"v_max", [&](const std::string& v) { sim.car.v_max = std::stod(v); }},
        {"accel", [&](const std::string& v) { sim.car.accel = std::stod(v); }},
        {"decel", [&](const std::string& v) { sim.car.decel = std::stod(v); }},
        {"min_gap", [&](const std::string& v) { sim.car.min_gap = std::stod(v); }},
        {"vehicle_length", [&](const std::string& v) { sim.car.vehicle_length = std::stod(v); }},
        {"dt", [&](const std::string& v) { sim.car.dt = std::stod(v); }},
        {"reaction_time", [&](const std::string& v) { sim.car.reaction_time = std::stod(v); }},
        {"signal_location", [&](const std::string& v) { sim.signal.location = std::stod(v); }},
        {"green_s", [&](const std::string& v) { sim.signal.green_s = std::stod(v); }},
        {"red_s", [&](const std::string& v) { sim.signal.red_s = std::stod(v); }},
        {"warmup", [&](const std::string& v) { sim.warmup = std::stod(v); }},
        {"queue_threshold", [&](const std::string& v) { sim.queue_threshold = std::stod(v); }}}},
      {"channel",
       {{"rsu_position", [&](const std::string& v) { sim.channel.rsu_position = std::stod(v); }},
        {"range", [&](const std::string& v) { sim.channel.range = std::stod(v); }}}},
      {"learning",
       {{"C", [&](const std::string& v) { sim.svm.C = std::stod(v); }},
        {"tol", [&](const std::string& v) { sim.svm.tol = std::stod(v); }},
        {"max_iter", [&](const std::string& v) { sim.svm.max_iter = std::stoi(v); }},
        {"aggregation_interval", [&](const std::string& v) { sim.aggregation_interval = std::stod(v); }},
        {"bootstrap_epoch", [&](const std::string& v) { sim.bootstrap_epoch = std::stod(v); }}}},
      {"windowing",
       {{"fixed_capacity", [&](const std::string& v) { sim.fixed_capacity = std::stoul(v); }},
        {"adwin_delta", [&](const std::string& v) { sim.adwin_delta = std::stod(v); }}}},
  };
  for (const auto& [section, body] : tree) {
    const auto sec = setters.find(section);
    if (sec == setters.end()) throw ConfigError("unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError("unknown key " + section + "." + key);
      try {
        setter->second(node.data());
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception&) {
        throw ConfigError("bad value for " + section + "." + key + ": '" + node.data() + "'");
      }
    }
  }
  for (auto& m : c.modes) m.retrain_every = retrain_every;
  return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  return load_config(is);
}

// ---------------------------------------------------------------------------------------------
// Metrics.

inline double accuracy(const Timeline& tl) {
  if (tl.empty()) throw EmptyTimeline();
  std::size_t hits = 0;
  for (const auto& r : tl) hits += r.prediction == r.truth ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(tl.size());
}

struct Discordance {
  std::size_t a_only = 0;  // a correct, b wrong
  std::size_t b_only = 0;  // b correct, a wrong
};

inline Discordance discordance(const Timeline& a, const Timeline& b) {
  if (a.size() != b.size()) throw IncomparableTimelines("timelines differ in length");
  Discordance d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].truth != b[i].truth) throw IncomparableTimelines("truth sequences differ at interval " + std::to_string(i));
    const bool ca = a[i].prediction == a[i].truth;
    const bool cb = b[i].prediction == b[i].truth;
    if (ca && !cb) ++d.a_only;
    if (cb && !ca) ++d.b_only;
  }
  return d;
}

// Exact two-sided McNemar p-value: 2 * P(X <= min(b, c)), X ~ Binomial(b + c, 1/2), capped at 1.
inline double mcnemar_exact(std::size_t b, std::size_t c) {
  const std::size_t n = b + c;
  if (n == 0) return 1.0;
  const std::size_t k_max = std::min(b, c);
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  const double ln_n1 = std::lgamma(static_cast<double>(n) + 1.0);
  double tail = 0.0;
  for (std::size_t k = 0; k <= k_max; ++k) {
    const double log_term = ln_n1 - std::lgamma(static_cast<double>(k) + 1.0) -
                            std::lgamma(static_cast<double>(n - k) + 1.0) + log_half_n;
    tail += std::exp(log_term);
  }
  return std::min(1.0, 2.0 * tail);
}

inline double compare_significance(const Timeline& a, const Timeline& b) {
  const auto d = discordance(a, b);
  return mcnemar_exact(d.a_only, d.b_only);
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  double mean_diff = 0.0;
};

// Two-sided paired t-test on a - b.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("paired t-test needs >= 2 paired values");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  TTestResult r;
  r.df = n - 1.0;
  r.mean_diff = mean;
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(r.df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

// ---------------------------------------------------------------------------------------------
// Runs.

struct ScenarioKey {
  double loss_rate = 0.0;
  double penetration = 0.0;
  std::uint64_t seed = 0;
};

struct ScenarioRun {
  ScenarioKey key;
  std::map<std::string, Timeline> timelines;  // by mode name
};

// Shortest text that parses back to the same double.
inline std::string fmt_num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::filesystem::path trace_dir(const std::filesystem::path& out, const ScenarioKey& k) {
  return out / "trace" / ("seed" + std::to_string(k.seed) + "_loss" + fmt_num(k.loss_rate) + "_pen" + fmt_num(k.penetration));
}

// One (loss, penetration, seed) cell for every mode. The traffic and channel streams depend only
// on the seed, so every mode sees the same intervals and the same ground truth.
inline ScenarioRun run_scenario(const ScenarioConfig& cfg, const ScenarioKey& key, const BootstrapResult& boot,
                                const std::filesystem::path* trace_out = nullptr) {
  ChannelParams channel = cfg.sim.channel;
  channel.loss_rate = key.loss_rate;
  Rng traffic = make_rng(key.seed, Stream::traffic);
  Rng chan = make_rng(key.seed, Stream::channel);

  std::ofstream traj, bsm;
  TraceSinks sinks;
  std::filesystem::path dir;
  if (trace_out) {
    dir = trace_dir(*trace_out, key);
    std::filesystem::create_directories(dir);
    traj.open(dir / "trajectory.csv");
    bsm.open(dir / "bsm_log.csv");
    if (!traj || !bsm) throw StorageFailure(dir.string());
    sinks = {&traj, &bsm};
  }
  const auto obs = simulate_intervals(cfg.sim, key.penetration, channel, cfg.duration, cfg.sim.warmup, traffic, chan, sinks);

  ScenarioRun run;
  run.key = key;
  for (const auto& mode : cfg.modes) {
    EdgePipeline pipe(mode, cfg.sim);
    pipe.install_bootstrap(boot);
    std::optional<VerifiedStore> store;
    if (trace_out) {
      store.emplace(dir / ("store_" + mode_name(mode) + ".csv"));
      pipe.attach_store(&*store);
    }
    for (const auto& o : obs) pipe.run_interval(o.aggregate, o.truth);
    if (trace_out) {
      store->flush();
      std::ofstream tl(dir / ("timeline_" + mode_name(mode) + ".csv"));
      write_timeline_csv(tl, pipe.timeline());
      std::ofstream wl(dir / ("window_" + mode_name(mode) + ".csv"));
      write_window_log_header(wl);
      for (const auto& e : pipe.window_events()) write_window_log_row(wl, e.t, mode.window_policy, e.window_len, e.cut);
      if (!tl || !wl) throw StorageFailure(dir.string());
      if (const auto& clf = pipe.fixed_edge().classifier()) {
        const std::size_t window = pipe.system_edge() ? pipe.system_edge()->training_set().size()
                                                      : boot.training_set.size();
        const double t_end = obs.empty() ? 0.0 : obs.back().aggregate.t_end;
        save_checkpoint(dir / ("model_" + mode_name(mode) + ".json"), *clf, window, t_end);
      }
    }
    run.timelines[mode_name(mode)] = pipe.timeline();
  }
  return run;
}

// ---------------------------------------------------------------------------------------------
// Report.

struct CellKey {
  std::string mode;
  double loss_rate = 0.0;
  double penetration = 0.0;

  auto tie() const { return std::tie(mode, loss_rate, penetration); }
  friend bool operator<(const CellKey& a, const CellKey& b) { return a.tie() < b.tie(); }
  friend bool operator==(const CellKey& a, const CellKey& b) { return a.tie() == b.tie(); }
};

struct CellStats {
  double mean_accuracy = 0.0;
  double std = 0.0;  // population std over seeds
  int n_seeds = 0;
  std::vector<double> per_seed;

  friend bool operator==(const CellStats& a, const CellStats& b) {
    return a.mean_accuracy == b.mean_accuracy && a.std == b.std && a.n_seeds == b.n_seeds;
  }
};

struct Comparison {
  std::string pair;  // "<mode_a>_vs_<mode_b>"
  double penetration = 0.0;
  double loss_rate = 0.0;
  double p_value = 1.0;
  bool significant = false;
  std::size_t a_only = 0;  // discordant intervals favouring a
  std::size_t b_only = 0;

  friend bool operator==(const Comparison& a, const Comparison& b) {
    return a.pair == b.pair && a.penetration == b.penetration && a.loss_rate == b.loss_rate &&
           a.p_value == b.p_value && a.significant == b.significant;
  }
};

struct TTestRow {
  std::string pair;
  std::string scope;  // "penetration=<p>" or "all"
  TTestResult result;
};

struct AccuracyReport {
  std::map<CellKey, CellStats> grid;
  std::vector<Comparison> comparisons;
  std::vector<TTestRow> ttests;
};

inline constexpr double kSignificance = 0.05;

inline CellStats cell_stats(std::vector<double> per_seed) {
  CellStats s;
  s.n_seeds = static_cast<int>(per_seed.size());
  double sum = 0.0;
  for (double a : per_seed) sum += a;
  s.mean_accuracy = sum / static_cast<double>(per_seed.size());
  double ss = 0.0;
  for (double a : per_seed) ss += (a - s.mean_accuracy) * (a - s.mean_accuracy);
  s.std = std::sqrt(ss / static_cast<double>(per_seed.size()));
  s.per_seed = std::move(per_seed);
  return s;
}

// Reduces finished runs into the report. Runs may arrive in any order; the result depends only
// on their contents.
inline AccuracyReport assemble_report(const ScenarioConfig& cfg, std::vector<ScenarioRun> runs) {
  std::sort(runs.begin(), runs.end(), [](const ScenarioRun& a, const ScenarioRun& b) {
    return std::tie(a.key.loss_rate, a.key.penetration, a.key.seed) <
           std::tie(b.key.loss_rate, b.key.penetration, b.key.seed);
  });

  AccuracyReport rep;
  std::map<CellKey, std::vector<double>> acc;
  for (const auto& run : runs)
    for (const auto& [mode, tl] : run.timelines)
      acc[CellKey{mode, run.key.loss_rate, run.key.penetration}].push_back(accuracy(tl));
  for (auto& [k, v] : acc) rep.grid[k] = cell_stats(std::move(v));

  // Each feedback mode against the baseline, and dynamic against fixed.
  std::vector<std::pair<std::string, std::string>> pairs;
  const PipelineMode none{false, WindowPolicy::fixed, 1};
  const PipelineMode fixed{true, WindowPolicy::fixed, 1};
  const PipelineMode dynamic{true, WindowPolicy::dynamic, 1};
  const auto present = [&](PipelineMode m) {
    for (const auto& c : cfg.modes)
      if (mode_name(c) == mode_name(m)) return true;
    return false;
  };
  if (present(none) && present(fixed)) pairs.emplace_back(mode_name(fixed), mode_name(none));
  if (present(none) && present(dynamic)) pairs.emplace_back(mode_name(dynamic), mode_name(none));
  if (present(fixed) && present(dynamic)) pairs.emplace_back(mode_name(dynamic), mode_name(fixed));

  // McNemar per cell, pooling the paired intervals of all seeds.
  for (const auto& [a, b] : pairs) {
    for (double pen : cfg.penetrations) {
      for (double loss : cfg.loss_rates) {
        Comparison c{a + "_vs_" + b, pen, loss};
        for (const auto& run : runs) {
          if (run.key.penetration != pen || run.key.loss_rate != loss) continue;
          const auto d = discordance(run.timelines.at(a), run.timelines.at(b));
          c.a_only += d.a_only;
          c.b_only += d.b_only;
        }
        c.p_value = mcnemar_exact(c.a_only, c.b_only);
        c.significant = c.p_value < kSignificance;
        rep.comparisons.push_back(c);
      }
    }
    // Paired t-tests on cell means: per penetration across loss rates, and over all cells.
    std::vector<double> all_a, all_b;
    for (double pen : cfg.penetrations) {
      std::vector<double> va, vb;
      for (double loss : cfg.loss_rates) {
        va.push_back(rep.grid.at(CellKey{a, loss, pen}).mean_accuracy);
        vb.push_back(rep.grid.at(CellKey{b, loss, pen}).mean_accuracy);
      }
      all_a.insert(all_a.end(), va.begin(), va.end());
      all_b.insert(all_b.end(), vb.begin(), vb.end());
      if (va.size() >= 2) rep.ttests.push_back({a + "_vs_" + b, "penetration=" + fmt_num(pen), paired_t_test(va, vb)});
    }
    if (all_a.size() >= 2) rep.ttests.push_back({a + "_vs_" + b, "all", paired_t_test(all_a, all_b)});
  }
  return rep;
}

class MatrixFailure : public Error {
 public:
  MatrixFailure(const std::string& what, AccuracyReport partial) : Error(what), partial_(std::move(partial)) {}
  const AccuracyReport& partial() const { return partial_; }

 private:
  AccuracyReport partial_;
};

// Full sweep: modes x loss rates x penetrations x seeds. Scenario runs are independent and are
// spread over `jobs` worker threads; the report is assembled afterwards.
inline AccuracyReport run_matrix(const ScenarioConfig& cfg, const std::filesystem::path* trace_out = nullptr) {
  cfg.validate();
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));

  std::map<std::uint64_t, BootstrapResult> boots;
  for (auto s : seeds) {
    Rng rng = make_rng(s, Stream::bootstrap_traffic);
    boots.emplace(s, bootstrap(cfg.sim, rng));
  }

  std::vector<ScenarioKey> keys;
  for (auto s : seeds)
    for (double loss : cfg.loss_rates)
      for (double pen : cfg.penetrations) keys.push_back({loss, pen, s});

  std::vector<std::optional<ScenarioRun>> results(keys.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      {
        std::lock_guard lk(err_mu);
        if (!first_error.empty()) return;
      }
      try {
        results[i] = run_scenario(cfg, keys[i], boots.at(keys[i].seed), cfg.trace ? trace_out : nullptr);
      } catch (const std::exception& e) {
        std::lock_guard lk(err_mu);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };
  unsigned jobs = cfg.jobs > 0 ? static_cast<unsigned>(cfg.jobs) : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(keys.size()));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<ScenarioRun> done;
  for (auto& r : results)
    if (r) done.push_back(std::move(*r));
  if (!first_error.empty()) {
    // Partial grid only: comparisons need complete cells.
    AccuracyReport partial;
    std::map<CellKey, std::vector<double>> acc;
    for (const auto& run : done)
      for (const auto& [mode, tl] : run.timelines)
        acc[CellKey{mode, run.key.loss_rate, run.key.penetration}].push_back(accuracy(tl));
    for (auto& [k, v] : acc) partial.grid[k] = cell_stats(std::move(v));
    throw MatrixFailure(first_error, std::move(partial));
  }
  return assemble_report(cfg, std::move(done));
}

// ---------------------------------------------------------------------------------------------
// CSV output.

inline void write_grid_csv(std::ostream& os, const AccuracyReport& rep) {
  os << "mode,loss_rate,penetration,mean_accuracy,std,n_seeds\n";
  for (const auto& [k, s] : rep.grid)
    os << k.mode << ',' << fmt_num(k.loss_rate) << ',' << fmt_num(k.penetration) << ',' << fmt_num(s.mean_accuracy)
       << ',' << fmt_num(s.std) << ',' << s.n_seeds << '\n';
}

inline void write_comparisons_csv(std::ostream& os, const AccuracyReport& rep) {
  os << "pair,penetration,loss_rate,p_value,significant\n";
  for (const auto& c : rep.comparisons)
    os << c.pair << ',' << fmt_num(c.penetration) << ',' << fmt_num(c.loss_rate) << ',' << fmt_num(c.p_value) << ','
       << (c.significant ? 1 : 0) << '\n';
}

inline void write_ttests_csv(std::ostream& os, const AccuracyReport& rep) {
  os << "pair,scope,mean_diff,t_stat,df,p_value,significant\n";
  for (const auto& r : rep.ttests)
    os << r.pair << ',' << r.scope << ',' << fmt_num(r.result.mean_diff) << ',' << fmt_num(r.result.t) << ','
       << fmt_num(r.result.df) << ',' << fmt_num(r.result.p_value) << ',' << (r.result.p_value < kSignificance ? 1 : 0)
       << '\n';
}

struct ReportPaths {
  std::filesystem::path grid;
  std::filesystem::path comparisons;
  std::filesystem::path ttests;
};

inline ReportPaths emit_report(const AccuracyReport& rep, const std::filesystem::path& dir,
                               const std::string& prefix = "") {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw StorageFailure(dir.string());
  ReportPaths paths{dir / (prefix + "report.csv"), dir / (prefix + "comparisons.csv"), dir / (prefix + "ttests.csv")};
  auto write = [](const std::filesystem::path& p, auto&& fn) {
    std::ofstream os(p);
    if (!os) throw StorageFailure(p.string());
    fn(os);
    os.flush();
    if (!os) throw StorageFailure(p.string());
  };
  write(paths.grid, [&](std::ostream& os) { write_grid_csv(os, rep); });
  write(paths.comparisons, [&](std::ostream& os) { write_comparisons_csv(os, rep); });
  write(paths.ttests, [&](std::ostream& os) { write_ttests_csv(os, rep); });
  return paths;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

// Parses a grid CSV written by write_grid_csv.
inline std::map<CellKey, CellStats> parse_grid_csv(std::istream& is) {
  std::map<CellKey, CellStats> grid;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw Error("malformed report row: " + line);
    CellStats s;
    s.mean_accuracy = std::stod(f[3]);
    s.std = std::stod(f[4]);
    s.n_seeds = std::stoi(f[5]);
    grid[CellKey{f[0], std::stod(f[1]), std::stod(f[2])}] = s;
  }
  return grid;
}

inline std::vector<Comparison> parse_comparisons_csv(std::istream& is) {
  std::vector<Comparison> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw Error("malformed comparison row: " + line);
    Comparison c;
    c.pair = f[0];
    c.penetration = std::stod(f[1]);
    c.loss_rate = std::stod(f[2]);
    c.p_value = std::stod(f[3]);
    c.significant = f[4] == "1";
    out.push_back(c);
  }
  return out;
}

}  // namespace cvq
