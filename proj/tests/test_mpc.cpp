#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <limits>
#include <random>

#include "airpath/dare.hpp"
#include "airpath/errors.hpp"
#include "airpath/mpc.hpp"

using namespace airpath;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MpcConfig unbounded(int horizon) {
  MpcConfig cfg;
  cfg.horizon = horizon;
  cfg.x_min = Eigen::Vector2d::Constant(-kInf);
  cfg.x_max = Eigen::Vector2d::Constant(kInf);
  cfg.u_min = Eigen::Vector2d::Constant(-kInf);
  cfg.u_max = Eigen::Vector2d::Constant(kInf);
  return cfg;
}

struct Pair {
  StateMatrix A;
  Eigen::Matrix2d B;
};

Pair random_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (;;) {
    Pair p;
    p.A = StateMatrix::NullaryExpr([&] { return d(rng); });
    p.B = Eigen::Matrix2d::NullaryExpr([&] { return 0.05 * d(rng); });
    if (spectral_radius(p.A) < 0.95 && std::abs(p.B.determinant()) > 1e-4) return p;
  }
}

MpcInitial random_initial(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  MpcInitial init;
  init.x = StateVector(1.5 + 0.2 * d(rng), 0.15 + 0.05 * d(rng));
  init.x_prev = init.x - StateVector(0.01 * d(rng), 0.005 * d(rng));
  init.target = StateVector(1.5 + 0.2 * d(rng), 0.15 + 0.05 * d(rng));
  init.u_bar = Eigen::Vector2d(50.0 + 10 * d(rng), 50.0 + 10 * d(rng));
  return init;
}

LpvModel single_node(const StateMatrix& A, const Eigen::Matrix2d& B, const StateVector& x_ss,
                     const Eigen::Vector2d& u_ss) {
  LinearSubmodel sm;
  sm.rho = {2000.0, 30.0};
  sm.A = A;
  sm.B = B;
  sm.x_ss = x_ss;
  sm.u_ss = u_ss;
  return LpvModel(Lattice{{2000.0}, {30.0}}, {sm}, ModelVariant::A, 0.02);
}

}  // namespace

TEST(Extended, BlockStructure) {
  const auto m = build_extended(StateMatrix::Identity(), Eigen::Matrix2d::Identity());
  Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
  const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
  A.block<2, 2>(0, 0) = I;
  A.block<2, 2>(2, 0) = I;
  A.block<2, 2>(2, 2) = I;
  A.block<2, 2>(4, 0) = I;
  A.block<2, 2>(4, 4) = I;
  A.block<2, 2>(6, 6) = I;
  Eigen::Matrix<double, 8, 2> B = Eigen::Matrix<double, 8, 2>::Zero();
  B.block<2, 2>(0, 0) = I;
  B.block<2, 2>(2, 0) = I;
  B.block<2, 2>(6, 0) = I;
  EXPECT_EQ(m.A, A);
  EXPECT_EQ(m.B, B);
}

TEST(Extended, ZeroIncrementPropagation) {
  std::mt19937_64 rng(1);
  const auto p = random_pair(rng);
  const auto m = build_extended(p.A, p.B);
  Eigen::Matrix<double, 8, 1> z;
  z << 0.1, -0.02, 0.3, 0.04, 1.6, 0.2, 45.0, 55.0;
  const auto next = m.A * z;
  const StateVector dx = z.segment<2>(0);
  EXPECT_LT((next.segment<2>(2) - (p.A * dx + z.segment<2>(2))).norm(), 1e-15);
  EXPECT_LT((next.segment<2>(4) - (z.segment<2>(4) + dx)).norm(), 1e-15);
  EXPECT_EQ(next.segment<2>(6), z.segment<2>(6));
}

// Condensed predictions against a step-by-step extended-state rollout.
TEST(Extended, CondensedPredictionsMatchRecursiveRollout) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_pair(rng);
    const auto init = random_initial(rng);
    MpcConfig cfg;
    cfg.horizon = 20;
    const auto cqp = build_qp(cfg, cfg.weights, p.A, p.B, init,
                              terminal_penalty(p.A, p.B, cfg.weights));
    const Eigen::VectorXd dU = Eigen::VectorXd::NullaryExpr(2 * cfg.horizon, [&] { return n01(rng); });
    const Eigen::VectorXd xs = cqp.state_free + cqp.state_gain * dU;
    const auto ext = build_extended(p.A, p.B);
    Eigen::Matrix<double, 8, 1> z;
    z << init.x - init.x_prev, init.x - init.target, init.x_prev, init.u_bar;
    for (int j = 0; j < cfg.horizon; ++j) {
      z = ext.A * z + ext.B * dU.segment<2>(2 * j);
      // after j+1 steps: x_prev block holds x_j, so x_{j+1} = x_prev + dx
      const StateVector x_next = z.segment<2>(4) + z.segment<2>(0);
      EXPECT_LT((x_next - xs.segment<2>(2 * j)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((z.segment<2>(2) - (x_next - init.target)).cwiseAbs().maxCoeff(), 1e-12);
      Eigen::Vector2d u = init.u_bar;
      for (int i = 0; i <= j; ++i) u += dU.segment<2>(2 * i);
      EXPECT_LT((z.segment<2>(6) - u).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(BuildQp, HessianSymmetricPsd) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_pair(rng);
    MpcConfig cfg;
    const auto cqp = build_qp(cfg, cfg.weights, p.A, p.B, random_initial(rng),
                              terminal_penalty(p.A, p.B, cfg.weights));
    const auto& H = cqp.qp.H;
    ASSERT_EQ(H.rows(), 2 * cfg.horizon + 2);
    EXPECT_LT((H - H.transpose()).cwiseAbs().maxCoeff(), 1e-12 * (1 + H.cwiseAbs().maxCoeff()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
  }
}

TEST(BuildQp, RejectsIndefiniteWeights) {
  std::mt19937_64 rng(4);
  const auto p = random_pair(rng);
  MpcConfig cfg;
  MpcWeights w;
  w.Q_e(0, 0) = -1.0;
  EXPECT_THROW(build_qp(cfg, w, p.A, p.B, random_initial(rng), Eigen::Matrix4d::Identity()),
               AssemblyError);
  EXPECT_THROW(build_qp(cfg, cfg.weights, p.A, p.B, random_initial(rng),
                        -Eigen::Matrix4d::Identity()),
               AssemblyError);
}

TEST(Mpc, StationaryPointGivesZeroMove) {
  std::mt19937_64 rng(5);
  const auto p = random_pair(rng);
  MpcConfig cfg;
  MpcInitial init;
  init.x = StateVector(1.6, 0.18);
  init.x_prev = init.x;
  init.target = init.x;
  init.u_bar = Eigen::Vector2d(40.0, 60.0);
  const auto sol = solve_mpc(build_qp(cfg, cfg.weights, p.A, p.B, init,
                                      terminal_penalty(p.A, p.B, cfg.weights)),
                             init.u_bar);
  EXPECT_EQ(sol.status, QpStatus::Optimal);
  EXPECT_LT(sol.du.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(sol.slack.maxCoeff(), 1e-12);
}

// N = 1: minimize du'R du + z'Pz with z = w0 + [B; B] du.
TEST(Mpc, SingleStepClosedForm) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_pair(rng);
    const auto init = random_initial(rng);
    const MpcConfig cfg = unbounded(1);
    const MpcWeights& w = cfg.weights;
    const Eigen::Matrix4d P = terminal_penalty(p.A, p.B, w);
    const auto sol = solve_mpc(build_qp(cfg, w, p.A, p.B, init, P), init.u_bar);
    const StateVector dx0 = init.x - init.x_prev, e0 = init.x - init.target;
    Eigen::Matrix<double, 4, 2> T;
    T << p.B, p.B;
    Eigen::Vector4d w0;
    w0 << p.A * dx0, e0 + p.A * dx0;
    const Eigen::Vector2d ref = -(w.R + T.transpose() * P * T).ldlt().solve(T.transpose() * P * w0);
    EXPECT_LT((sol.du0 - ref).cwiseAbs().maxCoeff(), 1e-9 * (1 + ref.cwiseAbs().maxCoeff()));
  }
}

TEST(Mpc, FirstMoveMatchesLqrGainAtLongHorizon) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_pair(rng);
    const auto init = random_initial(rng);
    const MpcConfig cfg = unbounded(50);
    const auto pair = build_terminal_pair(p.A, p.B);
    const Eigen::MatrixXd Pd = solve_dare(pair.A, pair.B, terminal_state_weight(cfg.weights.Q_e),
                                          cfg.weights.R);
    const Eigen::MatrixXd K = lqr_gain(pair.A, pair.B, cfg.weights.R, Pd);
    Eigen::Vector4d z0;
    z0 << init.x - init.x_prev, init.x - init.target;
    const Eigen::Vector2d lqr = -K * z0;
    const auto sol = solve_mpc(build_qp(cfg, cfg.weights, p.A, p.B, init, Pd), init.u_bar);
    EXPECT_LT((sol.du0 - lqr).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Mpc, ValueFunctionDecreasesInClosedLoop) {
  std::mt19937_64 rng(8);
  const auto p = random_pair(rng);
  const MpcConfig cfg = unbounded(30);
  const Eigen::Matrix4d P = terminal_penalty(p.A, p.B, cfg.weights);
  auto init = random_initial(rng);
  auto value = [&](const MpcInitial& s) {
    Eigen::Vector4d z;
    z << s.x - s.x_prev, s.x - s.target;
    return double(z.transpose() * P * z);
  };
  double v = value(init);
  for (int k = 0; k < 100; ++k) {
    const auto sol = solve_mpc(build_qp(cfg, cfg.weights, p.A, p.B, init, P), init.u_bar);
    const StateVector dx_next = p.A * (init.x - init.x_prev) + p.B * sol.du0;
    init.x_prev = init.x;
    init.x += dx_next;
    init.u_bar += sol.du0;
    const double v_next = value(init);
    EXPECT_LE(v_next, v + 1e-9) << "step " << k;
    v = v_next;
  }
}

TEST(Mpc, HardInputBoundsHoldOnPrediction) {
  std::mt19937_64 rng(9);
  const auto p = random_pair(rng);
  MpcConfig cfg;
  cfg.weights.Q_e = Eigen::Vector2d(4000.0, 4e5).asDiagonal();
  auto init = random_initial(rng);
  init.target += StateVector(0.8, 0.2);  // far away: inputs saturate
  const auto sol = solve_mpc(build_qp(cfg, cfg.weights, p.A, p.B, init,
                                      terminal_penalty(p.A, p.B, cfg.weights)),
                             init.u_bar);
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  for (int j = 0; j < cfg.horizon; ++j)
    for (int c = 0; c < 2; ++c) {
      EXPECT_GE(sol.predicted_u(j, c), cfg.u_min[c] - 1e-8);
      EXPECT_LE(sol.predicted_u(j, c), cfg.u_max[c] + 1e-8);
    }
}

TEST(Mpc, LargerSlackWeightNeverGrowsSlack) {
  std::mt19937_64 rng(10);
  const auto p = random_pair(rng);
  MpcConfig cfg;
  auto init = random_initial(rng);
  // upper bound below the current state cannot be met at once
  cfg.x_max = init.x - StateVector(0.3, 0.05);
  cfg.x_min = Eigen::Vector2d(-10.0, -10.0);
  init.target = cfg.x_max;
  const Eigen::Matrix4d P = terminal_penalty(p.A, p.B, cfg.weights);
  double prev = kInf;
  for (double mu : {1e1, 1e2, 1e3, 1e4, 1e5, 1e6}) {
    cfg.mu = mu;
    const auto sol = solve_mpc(build_qp(cfg, cfg.weights, p.A, p.B, init, P), init.u_bar);
    ASSERT_EQ(sol.status, QpStatus::Optimal);
    EXPECT_GE(sol.slack.minCoeff(), 0.0);
    EXPECT_LE(sol.slack.norm(), prev + 1e-12);
    prev = sol.slack.norm();
  }
  EXPECT_GT(prev, 0.0);
}

TEST(Controller, NoErrorNoMove) {
  std::mt19937_64 rng(11);
  const auto p = random_pair(rng);
  const auto model = single_node(p.A, p.B, {1.5, 0.2}, {50.0, 50.0});
  MpcController ctl(model, MpcConfig{});
  const ActuatorInput ff{42.0, 58.0};
  ActuatorInput u = ctl.step({1.5, 0.2}, {1.5, 0.2}, {2000, 30}, ff);
  EXPECT_EQ(u, ff);
  u = ctl.step({1.5, 0.2}, {1.5, 0.2}, {2000, 30}, ff);
  EXPECT_NEAR(u.egr_pos, ff.egr_pos, 1e-12);
  EXPECT_NEAR(u.vgt_pos, ff.vgt_pos, 1e-12);
}

TEST(Controller, FeedforwardStepPassesThroughWithZeroTrackingWeight) {
  std::mt19937_64 rng(12);
  const auto p = random_pair(rng);
  const auto model = single_node(p.A, p.B, {1.5, 0.2}, {50.0, 50.0});
  MpcConfig cfg;
  cfg.weights.Q_e.setZero();
  cfg.mu = 1.0;
  MpcController ctl(model, cfg);
  const ActuatorInput u0 = ctl.step({1.5, 0.2}, {1.4, 0.1}, {2000, 30}, {40.0, 60.0});
  const ActuatorInput u1 = ctl.step({1.5, 0.2}, {1.4, 0.1}, {2000, 30}, {47.0, 55.0});
  EXPECT_NEAR(u1.egr_pos - u0.egr_pos, 7.0, 1e-12);
  EXPECT_NEAR(u1.vgt_pos - u0.vgt_pos, -5.0, 1e-12);
}

// Linear plant that differs from the model by 10 % in A and B plus an
// input offset; the rate form still removes the steady error.
TEST(Controller, OffsetFreeUnderModelMismatch) {
  StateMatrix A;
  A << 0.9, 0.02, -0.05, 0.8;
  Eigen::Matrix2d B;
  B << 0.002, 0.006, 0.001, -0.002;
  const StateVector x_ss(1.5, 0.2);
  const Eigen::Vector2d u_ss(50.0, 50.0);
  const auto model = single_node(A, B, x_ss, u_ss);
  MpcController ctl(model, MpcConfig{});
  const StateMatrix A_true = 1.1 * A;
  const Eigen::Matrix2d B_true = 0.9 * B;
  const Eigen::Vector2d bias(0.004, -0.001);
  const StateVector r(1.55, 0.18);
  StateVector x = x_ss;
  for (int k = 0; k < 2000; ++k) {
    const auto u = ctl.step(x, r, {2000, 30}, {50.0, 50.0});
    const Eigen::Vector2d uv(u.egr_pos, u.vgt_pos);
    x = x_ss + A_true * (x - x_ss) + B_true * (uv - u_ss) + bias;
  }
  EXPECT_LT(std::abs(x[0] - r[0]) / r[0], 1e-3);
  EXPECT_LT(std::abs(x[1] - r[1]) / r[1], 1e-3);
}

TEST(MpcConfig, ValidateRejectsBadConfig) {
  MpcConfig c;
  c.horizon = 0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.weights.R = Eigen::Matrix2d::Zero();
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.x_min = c.x_max;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.mu = 0.0;
  EXPECT_THROW(c.validate(), InputError);
  EXPECT_NO_THROW(MpcConfig{}.validate());
}
