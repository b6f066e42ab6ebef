#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <vector>

#include "cvq/edge_pipeline.hpp"

namespace {

using cvq::AggregateStatus;
using cvq::IntervalAggregate;
using cvq::QueueLabel;

cvq::SimulationConfig short_cfg() {
  cvq::SimulationConfig cfg;
  cfg.bootstrap_epoch = 600.0;
  return cfg;
}

IntervalAggregate data_interval(double t_end, double speed, double sep) {
  IntervalAggregate a;
  a.t_start = t_end - 10.0;
  a.t_end = t_end;
  a.avg_speed = speed;
  a.avg_separation = sep;
  a.n_cvs_heard = 3;
  a.status = AggregateStatus::data;
  return a;
}

IntervalAggregate empty_interval(double t_end) {
  IntervalAggregate a;
  a.t_start = t_end - 10.0;
  a.t_end = t_end;
  return a;
}

// Hand-built bootstrap: slow and tight means queue.
cvq::BootstrapResult toy_bootstrap() {
  cvq::BootstrapResult b;
  for (int i = 0; i < 20; ++i) {
    const bool q = i % 2 == 0;
    b.training_set.push_back({{q ? 1.0 + 0.05 * i : 10.0 - 0.05 * i, q ? 8.0 : 60.0}, cvq::to_label(q), 10.0 * i});
  }
  const std::vector<cvq::LabeledSample> rows(b.training_set.begin(), b.training_set.end());
  b.classifier = std::make_shared<const cvq::TrainedClassifier>(cvq::fit(rows));
  b.epoch = 200.0;
  return b;
}

struct Feed {
  std::vector<cvq::IntervalObservation> obs;
};

Feed simulate(const cvq::SimulationConfig& cfg, double pen, double loss, std::uint64_t seed, double duration) {
  cvq::ChannelParams ch = cfg.channel;
  ch.loss_rate = loss;
  cvq::Rng tr = cvq::make_rng(seed, cvq::Stream::traffic);
  cvq::Rng cr = cvq::make_rng(seed, cvq::Stream::channel);
  return {cvq::simulate_intervals(cfg, pen, ch, duration, cfg.warmup, tr, cr)};
}

}  // namespace

TEST(Aggregate, NoMessagesIsNoData) {
  const auto a = cvq::aggregate({}, 0.0, 10.0, 1000.0);
  EXPECT_EQ(a.status, AggregateStatus::no_data);
  EXPECT_EQ(a.n_cvs_heard, 0u);
}

TEST(Aggregate, MeanSpeedAndSeparation) {
  const std::vector<cvq::Bsm> b{{1, 1.0, 0.0, 10.0}, {2, 1.0, 50.0, 12.0}, {3, 1.0, 120.0, 14.0}};
  const auto a = cvq::aggregate(b, 0.0, 10.0, 1000.0);
  EXPECT_EQ(a.status, AggregateStatus::data);
  EXPECT_DOUBLE_EQ(a.avg_speed, 12.0);
  EXPECT_DOUBLE_EQ(a.avg_separation, 60.0);
  EXPECT_EQ(a.n_cvs_heard, 3u);
}

TEST(Aggregate, UsesLatestMessagePerVehicle) {
  const std::vector<cvq::Bsm> b{{1, 2.0, 40.0, 9.0}, {1, 1.0, 0.0, 1.0}, {2, 1.5, 100.0, 3.0}};
  const auto a = cvq::aggregate(b, 0.0, 10.0, 1000.0);
  EXPECT_DOUBLE_EQ(a.avg_speed, 6.0);
  EXPECT_DOUBLE_EQ(a.avg_separation, 60.0);
  EXPECT_EQ(a.n_cvs_heard, 2u);
}

TEST(Aggregate, SingleVehicleUsesFallback) {
  const std::vector<cvq::Bsm> b{{5, 3.0, 300.0, 7.0}};
  const auto a = cvq::aggregate(b, 0.0, 10.0, 1000.0);
  EXPECT_EQ(a.status, AggregateStatus::data);
  EXPECT_DOUBLE_EQ(a.avg_speed, 7.0);
  EXPECT_DOUBLE_EQ(a.avg_separation, 1000.0);
}

TEST(Pipeline, RequiresBootstrap) {
  cvq::EdgePipeline p({false, cvq::WindowPolicy::fixed, 1});
  EXPECT_THROW(p.run_interval(data_interval(10, 5, 30), QueueLabel::queue), cvq::NotBootstrapped);
}

TEST(Pipeline, NoDataRepeatsLastPrediction) {
  for (bool feedback : {false, true}) {
    cvq::EdgePipeline p({feedback, cvq::WindowPolicy::dynamic, 1});
    p.install_bootstrap(toy_bootstrap());
    EXPECT_EQ(p.run_interval(empty_interval(10), QueueLabel::queue), QueueLabel::no_queue);
    EXPECT_EQ(p.run_interval(data_interval(20, 1.0, 8.0), QueueLabel::queue), QueueLabel::queue);
    EXPECT_EQ(p.run_interval(empty_interval(30), QueueLabel::no_queue), QueueLabel::queue);
    EXPECT_EQ(p.run_interval(data_interval(40, 10.0, 60.0), QueueLabel::no_queue), QueueLabel::no_queue);
    EXPECT_EQ(p.run_interval(empty_interval(50), QueueLabel::queue), QueueLabel::no_queue);
    EXPECT_EQ(p.timeline().size(), 5u);
  }
}

TEST(Pipeline, NoFeedbackModelFrozen) {
  const auto boot = toy_bootstrap();
  cvq::EdgePipeline p({false, cvq::WindowPolicy::fixed, 1});
  p.install_bootstrap(boot);
  const auto before = p.fixed_edge().classifier();
  for (int i = 1; i <= 50; ++i) p.run_interval(data_interval(10.0 * i, 0.2 * i, 3.0 * i), cvq::to_label(i % 3 == 0));
  EXPECT_EQ(p.fixed_edge().classifier().get(), before.get());
  EXPECT_EQ(p.system_edge(), nullptr);
}

TEST(Pipeline, FixedWindowMatchesReplay) {
  cvq::SimulationConfig cfg;
  cfg.fixed_capacity = 25;
  const auto boot = toy_bootstrap();
  cvq::EdgePipeline p({true, cvq::WindowPolicy::fixed, 1}, cfg);
  p.install_bootstrap(boot);
  cvq::VerifiedStore store;
  p.attach_store(&store);

  cvq::FixedWindow oracle(cfg.fixed_capacity);
  oracle.update(std::vector<cvq::LabeledSample>(boot.training_set.begin(), boot.training_set.end()));
  std::mt19937_64 g(3);
  for (int k = 1; k <= 60; ++k) {
    const bool q = g() % 2;
    const auto agg = data_interval(1000.0 + 10.0 * k, q ? 1.5 : 9.0, q ? 9.0 : 55.0);
    p.run_interval(agg, cvq::to_label(q));
    oracle.update(cvq::LabeledSample{agg.features(), cvq::to_label(q), agg.t_end});
    const auto& got = p.system_edge()->training_set();
    ASSERT_EQ(got.size(), oracle.size());
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i].t, oracle.samples()[i].t);
  }
}

TEST(Pipeline, TrainingLabelsAreTruth) {
  cvq::EdgePipeline p({true, cvq::WindowPolicy::dynamic, 1});
  p.install_bootstrap(toy_bootstrap());
  // The model calls these queue; truth says otherwise.
  for (int k = 1; k <= 5; ++k) p.run_interval(data_interval(500.0 + 10 * k, 1.0, 8.0), QueueLabel::no_queue);
  const auto& set = p.system_edge()->training_set();
  for (std::size_t i = set.size() - 5; i < set.size(); ++i) EXPECT_EQ(set[i].label, QueueLabel::no_queue);
}

TEST(Pipeline, RetrainCadence) {
  cvq::EdgePipeline p({true, cvq::WindowPolicy::fixed, 3});
  p.install_bootstrap(toy_bootstrap());
  auto last = p.fixed_edge().classifier().get();
  for (int k = 1; k <= 9; ++k) {
    p.run_interval(data_interval(10.0 * k, 2.0, 10.0), QueueLabel::queue);
    const auto now = p.fixed_edge().classifier().get();
    EXPECT_EQ(now != last, k % 3 == 0) << "interval " << k;
    last = now;
  }
}

TEST(Bootstrap, BothLabelsAndOneSamplePerInterval) {
  const auto cfg = short_cfg();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    cvq::Rng rng = cvq::make_rng(seed, cvq::Stream::bootstrap_traffic);
    const auto b = cvq::bootstrap(cfg, rng);
    ASSERT_GE(b.epoch, 3 * cfg.signal.cycle());
    EXPECT_EQ(static_cast<double>(b.training_set.size()), b.epoch / cfg.aggregation_interval);
    std::size_t q = 0;
    for (const auto& s : b.training_set) q += s.label == QueueLabel::queue;
    EXPECT_GT(q, 0u);
    EXPECT_LT(q, b.training_set.size());
  }
}

TEST(Bootstrap, LosslessFullPenetrationSeesTrueSpeed) {
  // On a corridor nobody can leave within the run, every vehicle's latest BSM is its state at
  // the sampling instant, so the aggregate speed is the true mean speed.
  cvq::SimulationConfig cfg = short_cfg();
  cfg.corridor_length = 5000.0;
  cfg.signal.location = 4999.0;
  cfg.channel.range = 5000.0;
  cfg.warmup = 0.0;
  const auto f = simulate(cfg, 1.0, 0.0, 3, 300.0);
  std::size_t checked = 0;
  for (const auto& o : f.obs) {
    if (o.aggregate.status != AggregateStatus::data) continue;
    EXPECT_NEAR(o.aggregate.avg_speed, o.true_mean_speed, 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 20u);
}

TEST(Bootstrap, DegenerateAfterRetries) {
  cvq::SimulationConfig cfg = short_cfg();
  cfg.demand_rate = 0.0;
  cfg.demand_amplitude = 0.0;
  cvq::Rng rng = cvq::make_rng(1, cvq::Stream::bootstrap_traffic);
  EXPECT_THROW(cvq::bootstrap(cfg, rng), cvq::DegenerateBootstrap);
}

TEST(Feed, OneObservationPerInterval) {
  const auto cfg = short_cfg();
  const auto f = simulate(cfg, 0.3, 0.08, 4, 1000.0);
  EXPECT_EQ(f.obs.size(), 100u);
  for (const auto& o : f.obs) {
    EXPECT_NEAR(o.aggregate.t_end - o.aggregate.t_start, cfg.aggregation_interval, 1e-9);
    EXPECT_EQ(o.aggregate.status == AggregateStatus::no_data, o.aggregate.n_cvs_heard == 0);
  }
}

TEST(Feed, TruthIndependentOfPenetrationAndLoss) {
  const auto cfg = short_cfg();
  const auto a = simulate(cfg, 0.1, 0.02, 8, 800.0);
  const auto b = simulate(cfg, 1.0, 0.16, 8, 800.0);
  ASSERT_EQ(a.obs.size(), b.obs.size());
  for (std::size_t i = 0; i < a.obs.size(); ++i) EXPECT_EQ(a.obs[i].truth, b.obs[i].truth);
}

TEST(Store, AppendPreservesOrder) {
  cvq::VerifiedStore store;
  for (int i = 0; i < 3; ++i)
    cvq::store_verified(store, {{1.0 * i, 2.0 * i}, QueueLabel::queue, 10.0 * i}, QueueLabel::no_queue, false);
  ASSERT_EQ(store.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(store.records()[static_cast<std::size_t>(i)].t_end, 10.0 * i);
}

TEST(Store, UnwritablePathFails) {
  EXPECT_THROW(cvq::VerifiedStore("/nonexistent_dir/store.csv"), cvq::StorageFailure);
}

TEST(Store, ReplayReconstructsWindows) {
  const auto cfg = short_cfg();
  cvq::Rng brng = cvq::make_rng(5, cvq::Stream::bootstrap_traffic);
  const auto boot = cvq::bootstrap(cfg, brng);
  auto f = simulate(cfg, 0.2, 0.08, 5, 3000.0);
  // Invert the labels halfway so the learned rule turns wrong and the adaptive window must cut.
  for (std::size_t i = f.obs.size() / 2; i < f.obs.size(); ++i)
    f.obs[i].truth = f.obs[i].truth == QueueLabel::queue ? QueueLabel::no_queue : QueueLabel::queue;
  const auto dir = std::filesystem::temp_directory_path();

  for (auto policy : {cvq::WindowPolicy::fixed, cvq::WindowPolicy::dynamic}) {
    auto c = cfg;
    c.fixed_capacity = 120;
    const auto path = dir / ("cvq_store_" + std::string(cvq::to_string(policy)) + ".csv");
    std::vector<cvq::TrainingSet> live;
    {
      cvq::VerifiedStore store(path);
      cvq::EdgePipeline p({true, policy, 1}, c);
      p.install_bootstrap(boot);
      p.attach_store(&store);
      for (const auto& o : f.obs) {
        p.run_interval(o.aggregate, o.truth);
        if (o.aggregate.status == AggregateStatus::data) live.push_back(p.system_edge()->training_set());
      }
      store.flush();
      std::size_t cuts = 0;
      for (const auto& e : p.window_events()) cuts += e.cut;
      if (policy == cvq::WindowPolicy::dynamic) {
        EXPECT_GT(cuts, 0u);
      }
    }
    const auto records = cvq::VerifiedStore::load(path);
    const auto replay = cvq::replay_windows(boot.training_set, records, policy, c.fixed_capacity, c.adwin_delta);
    ASSERT_EQ(replay.size(), live.size());
    for (std::size_t k = 0; k < live.size(); ++k) {
      ASSERT_EQ(replay[k].size(), live[k].size()) << "record " << k;
      for (std::size_t i = 0; i < live[k].size(); ++i) {
        ASSERT_EQ(replay[k][i].t, live[k][i].t);
        ASSERT_EQ(replay[k][i].label, live[k][i].label);
        ASSERT_EQ(replay[k][i].features.avg_speed, live[k][i].features.avg_speed);
        ASSERT_EQ(replay[k][i].features.avg_separation, live[k][i].features.avg_separation);
      }
    }
    std::filesystem::remove(path);
  }
}

TEST(Store, TruthColumnSharedAcrossModes) {
  const auto cfg = short_cfg();
  cvq::Rng brng = cvq::make_rng(6, cvq::Stream::bootstrap_traffic);
  const auto boot = cvq::bootstrap(cfg, brng);
  const auto f = simulate(cfg, 0.5, 0.04, 6, 1500.0);
  std::vector<std::vector<QueueLabel>> truths;
  for (cvq::PipelineMode m : {cvq::PipelineMode{false, cvq::WindowPolicy::fixed, 1},
                              cvq::PipelineMode{true, cvq::WindowPolicy::fixed, 1},
                              cvq::PipelineMode{true, cvq::WindowPolicy::dynamic, 1}}) {
    cvq::VerifiedStore store;
    cvq::EdgePipeline p(m, cfg);
    p.install_bootstrap(boot);
    p.attach_store(&store);
    for (const auto& o : f.obs) p.run_interval(o.aggregate, o.truth);
    std::vector<QueueLabel> t;
    for (const auto& r : store.records()) t.push_back(r.truth);
    truths.push_back(t);
  }
  EXPECT_EQ(truths[0], truths[1]);
  EXPECT_EQ(truths[0], truths[2]);
}

TEST(Timeline, CsvSchema) {
  cvq::Timeline tl{{0, QueueLabel::queue, QueueLabel::no_queue, data_interval(10, 1, 1)}};
  std::ostringstream os;
  cvq::write_timeline_csv(os, tl);
  EXPECT_EQ(os.str(), "interval_idx,prediction,truth,status,n_cvs_heard\n0,1,0,data,3\n");
}
