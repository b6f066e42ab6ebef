// Scenario-matrix driver: runs every mode x loss rate x penetration x seed and writes CSV reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cvq/harness.hpp"

namespace {

std::vector<double> to_doubles(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& s : items) {
    const auto part = cvq::parse_list(s);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<std::string> split_names(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& s : items) {
    std::stringstream ss(s);
    std::string name;
    while (std::getline(ss, name, ','))
      if (!name.empty()) out.push_back(name);
  }
  return out;
}

void print_grid(const cvq::AccuracyReport& rep) {
  std::string mode;
  double loss = -1.0;
  for (const auto& [k, s] : rep.grid) {
    if (k.mode != mode || k.loss_rate != loss) {
      mode = k.mode;
      loss = k.loss_rate;
      std::printf("\n%-17s loss %4.0f%% |", mode.c_str(), 100.0 * loss);
    }
    std::printf(" %3.0f%%:%5.1f", 100.0 * k.penetration, 100.0 * s.mean_accuracy);
  }
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive queue prediction: scenario matrix harness"};
  std::string config_path;
  std::vector<std::string> loss, penetration, modes, windows;
  std::uint64_t seed = 0;
  int seeds = 0;
  int jobs = -1;
  double duration = 0.0;
  std::string out = "results";
  bool trace = false;

  app.add_option("--config", config_path, "INI config file ([scenario] [traffic] [channel] [learning] [windowing])")
      ->check(CLI::ExistingFile);
  app.add_option("--loss", loss, "Loss rates as fractions, e.g. 0.02,0.16");
  app.add_option("--penetration", penetration, "CV penetrations as fractions, e.g. 0.1,0.5,1");
  app.add_option("--mode", modes, "no_feedback and/or feedback");
  app.add_option("--window", windows, "Window policies for feedback runs: fixed and/or dynamic");
  app.add_option("--seed", seed, "First seed");
  app.add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  app.add_option("--duration", duration, "Scored simulated seconds per run")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Output directory");
  app.add_option("--jobs", jobs, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--trace", trace, "Write per-step trajectory, BSM, timeline, store and window CSVs");
  CLI11_PARSE(app, argc, argv);

  cvq::ScenarioConfig cfg;
  try {
    if (!config_path.empty()) cfg = cvq::load_config(std::filesystem::path(config_path));
    if (!loss.empty()) cfg.loss_rates = to_doubles(loss);
    if (!penetration.empty()) cfg.penetrations = to_doubles(penetration);
    if (app.count("--seed")) cfg.seed = seed;
    if (seeds > 0) cfg.n_seeds = seeds;
    if (duration > 0) cfg.duration = duration;
    if (jobs >= 0) cfg.jobs = jobs;
    cfg.trace = trace;

    if (!modes.empty() || !windows.empty()) {
      const int retrain = cfg.modes.empty() ? 1 : cfg.modes.front().retrain_every;
      auto mode_names = split_names(modes);
      auto window_names = split_names(windows);
      if (mode_names.empty()) mode_names = {"no_feedback", "feedback"};
      if (window_names.empty()) window_names = {"fixed", "dynamic"};
      cfg.modes.clear();
      for (const auto& m : mode_names) {
        if (m == "no_feedback") {
          cfg.modes.push_back(cvq::parse_mode("no_feedback", retrain));
        } else if (m == "feedback") {
          for (const auto& w : window_names) {
            if (w != "fixed" && w != "dynamic") throw cvq::ConfigError("unknown window '" + w + "'");
            cfg.modes.push_back(cvq::parse_mode("feedback_" + w, retrain));
          }
        } else {
          cfg.modes.push_back(cvq::parse_mode(m, retrain));
        }
      }
    }
    cfg.validate();
  } catch (const cvq::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  const std::filesystem::path out_dir(out);
  try {
    const auto report = cvq::run_matrix(cfg, &out_dir);
    const auto paths = cvq::emit_report(report, out_dir);
    print_grid(report);
    std::cout << "\nwrote " << paths.grid.string() << ", " << paths.comparisons.string() << ", "
              << paths.ttests.string() << '\n';
  } catch (const cvq::MatrixFailure& e) {
    std::cerr << "matrix aborted: " << e.what() << '\n';
    try {
      const auto paths = cvq::emit_report(e.partial(), out_dir, "partial_");
      std::cerr << "partial results: " << paths.grid.string() << '\n';
    } catch (const cvq::Error& dump) {
      std::cerr << "could not write partial results: " << dump.what() << '\n';
    }
    return 2;
  } catch (const cvq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
