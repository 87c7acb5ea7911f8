#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "airpath/errors.hpp"
#include "airpath/setup.hpp"

using namespace airpath;

namespace {

struct Fixture {
  Setup setup;
  std::map<ModelVariant, LpvModel> models;
  static const Fixture& get() {
    static const Fixture f = [] {
      Setup s = make_setup(Config{}, 1);
      std::map<ModelVariant, LpvModel> m;
      for (auto v : {ModelVariant::A, ModelVariant::B, ModelVariant::C})
        m.emplace(v, build_lpv_variant(s.bench.plant, v, s.lattice, s.identification).model);
      return Fixture{std::move(s), std::move(m)};
    }();
    return f;
  }
};

SimLog synthetic_log(const std::string& label, const std::vector<double>& p_err) {
  SimLog log;
  log.label = label;
  for (std::size_t k = 0; k < p_err.size(); ++k) {
    SimRecord r;
    r.t = 0.02 * k;
    r.target = StateVector(1.5, 0.2);
    r.x = r.target + StateVector(p_err[k], 0.0);
    log.records.push_back(r);
  }
  return log;
}

// Single pass mean/std of |x - r| per channel, Welford style.
ChannelStats streaming_stats(const SimLog& log) {
  ChannelStats s;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero(), m2 = Eigen::Vector2d::Zero();
  double n = 0.0;
  for (const auto& r : log.records) {
    n += 1.0;
    const Eigen::Vector2d a = (r.x - r.target).cwiseAbs();
    const Eigen::Vector2d d = a - mean;
    mean += d / n;
    m2 += d.cwiseProduct(a - mean);
  }
  s.mean_abs = mean;
  s.std_abs = (m2 / n).cwiseSqrt();
  return s;
}

}  // namespace

TEST(Tables, FeedforwardMeetsTargetsAtNodes) {
  const auto& s = Fixture::get().setup;
  const auto& bench = s.bench;
  for (std::size_t k = 0; k < s.lattice.size(); ++k) {
    const auto rho = s.lattice.node(k);
    const auto u = bench.feedforward.u[k];
    EXPECT_GE(u.egr_pos, 0.0);
    EXPECT_LE(u.vgt_pos, 100.0);
    const auto eq = bench.plant.find_equilibrium(rho, u, ThermalMode::Transient);
    const auto y = bench.plant.output(eq, u, rho);
    const auto r = bench.setpoints.node(k);
    EXPECT_LE(std::abs(y.p_im - r[0]), 0.02 * std::abs(r[0]));
    EXPECT_LE(std::abs(y.egr_rate - r[1]), 0.02 * std::abs(r[1]));
  }
  EXPECT_NO_THROW(bench.setpoints.check_bounds(s.mpc.x_min, s.mpc.x_max));
}

TEST(Tables, NodeExactAndMidpointMean) {
  const auto& s = Fixture::get().setup;
  const auto& ff = s.bench.feedforward;
  const auto& lat = s.lattice;
  for (std::size_t k = 0; k < lat.size(); ++k) EXPECT_EQ(ff.at(lat.node(k)), ff.u[k]);
  const OperatingPoint mid{0.5 * (lat.speed_axis[1] + lat.speed_axis[2]),
                           0.5 * (lat.fuel_axis[0] + lat.fuel_axis[1])};
  const auto c = [&](std::size_t i, std::size_t j) { return ff.u[lat.index(i, j)]; };
  const double egr = 0.25 * (c(1, 0).egr_pos + c(2, 0).egr_pos + c(1, 1).egr_pos + c(2, 1).egr_pos);
  const double vgt = 0.25 * (c(1, 0).vgt_pos + c(2, 0).vgt_pos + c(1, 1).vgt_pos + c(2, 1).vgt_pos);
  EXPECT_NEAR(ff.at(mid).egr_pos, egr, 1e-12);
  EXPECT_NEAR(ff.at(mid).vgt_pos, vgt, 1e-12);
  const auto r_mid = s.bench.setpoints.at(mid);
  const auto r = [&](std::size_t i, std::size_t j) { return s.bench.setpoints.node(lat.index(i, j)); };
  EXPECT_LT((r_mid - 0.25 * (r(1, 0) + r(2, 0) + r(1, 1) + r(2, 1))).norm(), 1e-12);
}

TEST(Tables, CheckBoundsRejectsOutOfRangeTargets) {
  auto sp = Fixture::get().setup.bench.setpoints;
  sp.p_im[0] = 10.0;
  EXPECT_THROW(sp.check_bounds({0.9, 0.0}, {3.0, 0.6}), InputError);
}

TEST(Cycles, StaircasePlateausAndDeterminism) {
  const auto c = make_cycle(CycleKind::StepStaircase, 120.0, 3);
  const std::size_t plateau = c.points.size() / 4;
  std::set<std::pair<double, double>> levels;
  for (int p = 0; p < 4; ++p) {
    const auto& end = c.points[(p + 1) * plateau - 1];
    EXPECT_EQ(end, c.points[(p + 1) * plateau - 2]);
    levels.insert({end.engine_speed, end.fuel_rate});
  }
  EXPECT_EQ(levels.size(), 4u);
  const auto again = make_cycle(CycleKind::StepStaircase, 120.0, 3);
  EXPECT_EQ(c.points, again.points);
}

TEST(Cycles, SmoothInEnvelopeAndSeeded) {
  const Plant plant;
  const CycleOptions o;
  for (auto kind : {CycleKind::StepStaircase, CycleKind::SyntheticUrban, CycleKind::SyntheticHighway}) {
    const auto c = make_cycle(kind, 300.0, 11, o);
    EXPECT_NEAR(c.duration(), 300.0, 1e-9);
    for (std::size_t k = 0; k < c.points.size(); ++k) {
      ASSERT_TRUE(plant.in_envelope(c.points[k]));
      if (k) {
        ASSERT_LE(std::abs(c.points[k].engine_speed - c.points[k - 1].engine_speed),
                  o.max_speed_step + 1e-9);
        ASSERT_LE(std::abs(c.points[k].fuel_rate - c.points[k - 1].fuel_rate),
                  o.max_fuel_step + 1e-9);
      }
    }
    EXPECT_NE(c.points, make_cycle(kind, 300.0, 12, o).points);
  }
  EXPECT_THROW(make_cycle(CycleKind::SyntheticUrban, 30.0, 1), InputError);
  EXPECT_EQ(parse_cycle("urban"), CycleKind::SyntheticUrban);
  EXPECT_THROW(parse_cycle("ftp"), InputError);
}

TEST(Cycles, UrbanSlowerThanHighway) {
  const auto u = make_cycle(CycleKind::SyntheticUrban, 600.0, 5);
  const auto h = make_cycle(CycleKind::SyntheticHighway, 600.0, 5);
  double su = 0, sh = 0;
  for (const auto& p : u.points) su += p.engine_speed;
  for (const auto& p : h.points) sh += p.engine_speed;
  EXPECT_LT(su / u.points.size(), sh / h.points.size());
}

TEST(StepTest, NullStepIsFlat) {
  const auto& f = Fixture::get();
  MpcController ctl(f.models.at(ModelVariant::B), f.setup.mpc);
  const OperatingPoint rho{2000.0, 30.0};
  const auto log = run_step_test(f.setup.bench, &ctl, rho, rho, 6.0);
  ASSERT_EQ(log.records.size(), 300u);
  for (std::size_t k = 1; k < log.records.size(); ++k) {
    EXPECT_LT(std::abs(log.records[k].u.egr_pos - log.records[k - 1].u.egr_pos), 1e-6);
    EXPECT_LT(std::abs(log.records[k].u.vgt_pos - log.records[k - 1].u.vgt_pos), 1e-6);
  }
}

TEST(StepTest, TipInReachesNewTargets) {
  const auto& f = Fixture::get();
  MpcController ctl(f.models.at(ModelVariant::B), f.setup.mpc);
  const auto log = run_step_test(f.setup.bench, &ctl, {2000.0, 25.0}, {2000.0, 35.0}, 15.0);
  const auto& last = log.records.back();
  EXPECT_LT(std::abs(last.x[0] - last.target[0]) / last.target[0], 1e-3);
  EXPECT_LT(std::abs(last.x[1] - last.target[1]) / last.target[1], 1e-3);
  EXPECT_EQ(log.records[49].rho.fuel_rate, 25.0);
  EXPECT_EQ(log.records[50].rho.fuel_rate, 35.0);
}

TEST(Cycle, ConstantCycleTracksAndIsDeterministic) {
  const auto& f = Fixture::get();
  const auto cyc = constant_cycle({1750.0, 37.0}, 20.0);
  MpcController a(f.models.at(ModelVariant::A), f.setup.mpc);
  MpcController b(f.models.at(ModelVariant::A), f.setup.mpc);
  const auto l1 = run_cycle(f.setup.bench, &a, cyc, "A");
  const auto l2 = run_cycle(f.setup.bench, &b, cyc, "A");
  ASSERT_EQ(l1.records.size(), l2.records.size());
  for (std::size_t k = 0; k < l1.records.size(); ++k) {
    ASSERT_EQ(l1.records[k].x, l2.records[k].x);
    ASSERT_EQ(l1.records[k].u, l2.records[k].u);
  }
  const auto& last = l1.records.back();
  EXPECT_LT(std::abs(last.x[0] - last.target[0]), 1e-3 * last.target[0]);
  EXPECT_LT(std::abs(last.x[1] - last.target[1]), 1e-3 * last.target[1]);
}

// Every MPC variant ends each staircase plateau on its targets, inputs stay
// inside their hard bounds, and slack shows up whenever a state bound is left.
TEST(Cycle, StaircaseOffsetFreeForEveryVariant) {
  const auto& f = Fixture::get();
  const auto cyc = make_cycle(CycleKind::StepStaircase, 80.0, 21);
  const std::size_t plateau = cyc.points.size() / 4;
  for (const auto& [v, model] : f.models) {
    MpcController ctl(model, f.setup.mpc);
    const auto log = run_cycle(f.setup.bench, &ctl, cyc, to_string(v));
    ASSERT_EQ(log.records.size(), cyc.points.size());
    for (int p = 1; p <= 4; ++p) {
      const auto& r = log.records[p * plateau - 1];
      EXPECT_LT(std::abs(r.x[0] - r.target[0]) / r.target[0], 1e-3) << to_string(v) << " plateau " << p;
      EXPECT_LT(std::abs(r.x[1] - r.target[1]) / r.target[1], 1e-3) << to_string(v) << " plateau " << p;
    }
    for (std::size_t k = 0; k < log.records.size(); ++k) {
      const auto& r = log.records[k];
      ASSERT_NEAR(r.t, 0.02 * k, 1e-9);
      ASSERT_GE(r.u.egr_pos, 0.0);
      ASSERT_LE(r.u.egr_pos, 100.0);
      ASSERT_GE(r.u.vgt_pos, 0.0);
      ASSERT_LE(r.u.vgt_pos, 100.0);
    }
  }
}

TEST(Cycle, FeedforwardOnlyLogsStatus) {
  const auto& f = Fixture::get();
  const auto log = run_cycle(f.setup.bench, nullptr, make_cycle(CycleKind::SyntheticUrban, 60.0, 2), "ff");
  for (const auto& r : log.records) {
    ASSERT_EQ(r.status, -1);
    ASSERT_EQ(r.u, r.u_ff.clamped());
  }
}

TEST(Report, ZeroErrorAndSelfReference) {
  const auto log = synthetic_log("x", std::vector<double>(10, 0.0));
  const auto rep = tracking_report({log}, "x");
  EXPECT_EQ(rep.stats.at("x").mean_abs, Eigen::Vector2d::Zero());
  EXPECT_EQ(rep.stats.at("x").std_abs, Eigen::Vector2d::Zero());
  EXPECT_EQ(rep.delta_percent.at("x"), Eigen::Vector4d::Zero());
}

TEST(Report, TwoPointDistribution) {
  std::vector<double> e;
  for (int k = 0; k < 100; ++k) e.push_back(k % 2 ? 0.2 : 0.0);
  const auto rep = tracking_report({synthetic_log("a", e)}, "a");
  EXPECT_NEAR(rep.stats.at("a").mean_abs[0], 0.1, 1e-12);
  EXPECT_NEAR(rep.stats.at("a").std_abs[0], 0.1, 1e-12);
}

TEST(Report, DeltasAndWindowChecks) {
  const auto a = synthetic_log("a", std::vector<double>(20, 0.1));
  const auto b = synthetic_log("b", std::vector<double>(20, -0.05));
  const auto rep = tracking_report({a, b}, "a");
  EXPECT_NEAR(rep.delta_percent.at("b")[0], -50.0, 1e-9);
  EXPECT_THROW(tracking_report({a, b}, "c"), InputError);
  auto shorter = b;
  shorter.records.pop_back();
  EXPECT_THROW(tracking_report({a, shorter}, "a"), InputError);
  auto shifted = b;
  shifted.records[3].t += 0.01;
  EXPECT_THROW(tracking_report({a, shifted}, "a"), InputError);
  EXPECT_FALSE(rep.to_text().empty());
  EXPECT_NE(rep.to_json().find("\"b\""), std::string::npos);
  const auto windowed = tracking_report({a, b}, "a", 0.1, 0.2);
  EXPECT_NEAR(windowed.stats.at("a").mean_abs[0], 0.1, 1e-12);
}

TEST(Report, StreamingRecomputationAgrees) {
  const auto& f = Fixture::get();
  const auto cyc = make_cycle(CycleKind::SyntheticUrban, 60.0, 8);
  MpcController ctl(f.models.at(ModelVariant::C), f.setup.mpc);
  std::vector<SimLog> logs{run_cycle(f.setup.bench, nullptr, cyc, "ff"),
                           run_cycle(f.setup.bench, &ctl, cyc, "C")};
  const auto rep = tracking_report(logs, "ff");
  for (const auto& log : logs) {
    const auto s = streaming_stats(log);
    EXPECT_LT((rep.stats.at(log.label).mean_abs - s.mean_abs).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((rep.stats.at(log.label).std_abs - s.std_abs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SimLog, CsvRoundTrip) {
  const auto& f = Fixture::get();
  const auto log = run_cycle(f.setup.bench, nullptr, constant_cycle({2200.0, 40.0}, 1.0), "ff");
  const auto path = std::filesystem::temp_directory_path() / "airpath_simlog.csv";
  log.write_csv(path);
  const auto back = SimLog::read_csv(path);
  ASSERT_EQ(back.records.size(), log.records.size());
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    EXPECT_EQ(back.records[k].x, log.records[k].x);
    EXPECT_EQ(back.records[k].u, log.records[k].u);
    EXPECT_EQ(back.records[k].status, log.records[k].status);
  }
  std::filesystem::remove(path);
}

TEST(Validation, RecordFollowsFeedforwardWithNoise) {
  const auto& f = Fixture::get();
  const auto cyc = make_cycle(CycleKind::SyntheticUrban, 60.0, 4);
  const auto ex = make_validation_record(f.setup.bench, cyc, 9, 0.05);
  ASSERT_EQ(ex.size(), cyc.points.size());
  for (std::size_t k = 0; k < ex.size(); ++k) {
    const auto ff = f.setup.bench.feedforward.at(cyc.points[k]);
    ASSERT_LE(std::abs(ex.actuators[k].egr_pos - ff.egr_pos), 0.05 * ff.egr_pos + 1e-9);
    ASSERT_LE(std::abs(ex.actuators[k].vgt_pos - ff.vgt_pos), 0.05 * ff.vgt_pos + 1e-9);
  }
  const auto again = make_validation_record(f.setup.bench, cyc, 9, 0.05);
  EXPECT_EQ(again.outputs, ex.outputs);
}
