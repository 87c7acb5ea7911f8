#include "airpath/mpc.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "airpath/dare.hpp"
#include "airpath/errors.hpp"

namespace airpath {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_psd(const Eigen::Matrix2d& M, double tol = 1e-12) {
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > tol * (1.0 + M.cwiseAbs().maxCoeff())) {
    return false;
  }
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(M, Eigen::EigenvaluesOnly)
             .eigenvalues()
             .minCoeff() >= -tol * (1.0 + M.cwiseAbs().maxCoeff());
}

Eigen::Vector2d to_vec(const ActuatorInput& u) { return {u.egr_pos, u.vgt_pos}; }

Eigen::Vector2d pair_or(const Config& cfg, const std::string& key,
                        const Eigen::Vector2d& fallback) {
  const auto v = cfg.get_doubles(key, {fallback[0], fallback[1]});
  if (v.size() != 2) throw InputError("config key " + key + " needs two values");
  return {v[0], v[1]};
}

}  // namespace

void MpcConfig::validate() const {
  if (horizon < 1) throw InputError("mpc horizon must be >= 1");
  if (!(dt > 0.0)) throw InputError("mpc dt must be positive");
  if (!is_psd(weights.Q_e)) throw InputError("Q_e must be symmetric PSD");
  if (Eigen::LLT<Eigen::Matrix2d>(weights.R).info() != Eigen::Success ||
      !is_psd(weights.R)) {
    throw InputError("R must be symmetric positive definite");
  }
  if (mu && !(*mu > 0.0)) throw InputError("slack weight must be positive");
  for (int c = 0; c < 2; ++c) {
    if (!(x_min[c] < x_max[c])) throw InputError("x_min must be below x_max");
    if (!(u_min[c] < u_max[c])) throw InputError("u_min must be below u_max");
  }
}

double MpcConfig::slack_weight(const MpcWeights& w) const {
  if (mu) return *mu;
  const double lmax =
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(w.Q_e, Eigen::EigenvaluesOnly)
          .eigenvalues()
          .maxCoeff();
  return 1e4 * std::max(lmax, 1e-6);
}

MpcConfig MpcConfig::from_config(const Config& cfg) {
  MpcConfig c;
  c.horizon = cfg.get_int("mpc.horizon", c.horizon);
  c.dt = cfg.get_double("mpc.dt", c.dt);
  const Eigen::Vector2d q = pair_or(cfg, "mpc.q_e", c.weights.Q_e.diagonal());
  const Eigen::Vector2d r = pair_or(cfg, "mpc.r", c.weights.R.diagonal());
  c.weights.Q_e = q.asDiagonal();
  c.weights.R = r.asDiagonal();
  if (cfg.contains("mpc.mu")) c.mu = cfg.get_double("mpc.mu", 1.0);
  c.x_min = pair_or(cfg, "mpc.x_min", c.x_min);
  c.x_max = pair_or(cfg, "mpc.x_max", c.x_max);
  c.u_min = pair_or(cfg, "mpc.u_min", c.u_min);
  c.u_max = pair_or(cfg, "mpc.u_max", c.u_max);
  c.qp.max_iterations = cfg.get_int("mpc.qp_max_iterations", c.qp.max_iterations);
  c.validate();
  return c;
}

TerminalPair build_terminal_pair(const StateMatrix& A, const Eigen::Matrix2d& B) {
  TerminalPair t;
  t.A.setZero();
  t.A.topLeftCorner<2, 2>() = A;
  t.A.bottomLeftCorner<2, 2>() = A;
  t.A.bottomRightCorner<2, 2>().setIdentity();
  t.B.topRows<2>() = B;
  t.B.bottomRows<2>() = B;
  return t;
}

Eigen::Matrix4d terminal_state_weight(const Eigen::Matrix2d& Q_e) {
  Eigen::Matrix4d Q = Eigen::Matrix4d::Zero();
  Q.bottomRightCorner<2, 2>() = Q_e;
  return Q;
}

Eigen::Matrix4d terminal_penalty(const StateMatrix& A, const Eigen::Matrix2d& B,
                                 const MpcWeights& w) {
  const auto pair = build_terminal_pair(A, B);
  return solve_dare(pair.A, pair.B, terminal_state_weight(w.Q_e), w.R);
}

ExtendedModel build_extended(const StateMatrix& A, const Eigen::Matrix2d& B) {
  ExtendedModel m;
  m.A.setZero();
  m.B.setZero();
  const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
  m.A.block<2, 2>(0, 0) = A;
  m.A.block<2, 2>(2, 0) = A;
  m.A.block<2, 2>(2, 2) = I;
  m.A.block<2, 2>(4, 0) = I;
  m.A.block<2, 2>(4, 4) = I;
  m.A.block<2, 2>(6, 6) = I;
  m.B.block<2, 2>(0, 0) = B;
  m.B.block<2, 2>(2, 0) = B;
  m.B.block<2, 2>(6, 0) = I;
  return m;
}

CondensedQp build_qp(const MpcConfig& cfg, const MpcWeights& w,
                     const StateMatrix& A, const Eigen::Matrix2d& B,
                     const MpcInitial& init, const Eigen::Matrix4d& terminal) {
  const int N = cfg.horizon;
  if (N < 1) throw InputError("build_qp: horizon must be >= 1");
  if (!is_psd(w.Q_e) || !is_psd(w.R) ||
      Eigen::LLT<Eigen::Matrix2d>(w.R).info() != Eigen::Success) {
    throw AssemblyError("build_qp: weights are not semidefinite");
  }
  {
    const Eigen::Matrix4d Ps = 0.5 * (terminal + terminal.transpose());
    const double scale = 1.0 + Ps.cwiseAbs().maxCoeff();
    if ((terminal - Ps).cwiseAbs().maxCoeff() > 1e-9 * scale ||
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d>(Ps, Eigen::EigenvaluesOnly)
                .eigenvalues()
                .minCoeff() < -1e-9 * scale) {
      throw AssemblyError("build_qp: terminal penalty is not PSD");
    }
  }
  const double mu = cfg.slack_weight(w);
  if (!(mu > 0.0)) throw AssemblyError("build_qp: slack weight must be positive");

  const int nu = 2 * N;
  const int n = nu + 2;
  const StateVector dx0 = init.x - init.x_prev;
  const StateVector e0 = init.x - init.target;

  // Markov blocks M_t = A^t B, their running sums C_t, and F_j = sum A^l.
  std::vector<Eigen::Matrix2d> cum(N);
  std::vector<Eigen::Matrix2d> markov(N);
  std::vector<StateVector> free_sum(N + 1);  // F_j dx0
  Eigen::Matrix2d Apow = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d running = Eigen::Matrix2d::Zero();
  free_sum[0].setZero();
  for (int t = 0; t < N; ++t) {
    markov[t] = Apow * B;
    running += markov[t];
    cum[t] = running;
    Apow = Apow * A;  // A^{t+1}
    free_sum[t + 1] = free_sum[t] + Apow * dx0;
  }
  const StateVector dxN_free = Apow * dx0;  // A^N dx0

  // S_j = F_j dx0 + G_j dU, block (j-1, i) of G = C_{j-1-i}.
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nu, nu);
  for (int j = 1; j <= N; ++j) {
    for (int i = 0; i < j; ++i) G.block<2, 2>(2 * (j - 1), 2 * i) = cum[j - 1 - i];
  }

  CondensedQp out;
  out.horizon = N;
  out.terminal = terminal;
  out.state_gain = G;
  out.state_free.resize(nu);
  for (int j = 1; j <= N; ++j) out.state_free.segment<2>(2 * (j - 1)) = init.x + free_sum[j];

  QpProblem& qp = out.qp;
  qp.H = Eigen::MatrixXd::Zero(n, n);
  qp.g = Eigen::VectorXd::Zero(n);
  auto Huu = qp.H.topLeftCorner(nu, nu);
  auto gu = qp.g.head(nu);

  // Stage tracking cost on e_1 .. e_{N-1}.
  if (N > 1) {
    const int rows = 2 * (N - 1);
    Eigen::MatrixXd QG(rows, nu);
    Eigen::VectorXd Qe(rows);
    for (int j = 1; j < N; ++j) {
      const int r = 2 * (j - 1);
      QG.middleRows<2>(r).noalias() = w.Q_e * G.middleRows<2>(r);
      Qe.segment<2>(r) = w.Q_e * (e0 + free_sum[j]);
    }
    Huu.noalias() += G.topRows(rows).transpose() * QG;
    gu.noalias() += G.topRows(rows).transpose() * Qe;
  }
  for (int i = 0; i < N; ++i) Huu.block<2, 2>(2 * i, 2 * i) += w.R;

  // Terminal cost on [dx_N; e_N].
  Eigen::MatrixXd T(4, nu);
  for (int i = 0; i < N; ++i) T.block<2, 2>(0, 2 * i) = markov[N - 1 - i];
  T.bottomRows<2>() = G.bottomRows<2>();
  Eigen::Vector4d w0;
  w0 << dxN_free, e0 + free_sum[N];
  const Eigen::MatrixXd PT = terminal * T;
  Huu.noalias() += T.transpose() * PT;
  gu.noalias() += PT.transpose() * w0;

  Huu *= 2.0;
  gu *= 2.0;
  Huu = 0.5 * (Huu + Huu.transpose()).eval();
  qp.H(nu, nu) = 2.0 * mu;
  qp.H(nu + 1, nu + 1) = 2.0 * mu;

  // Rows: soft state bounds (lower/upper per channel and stage), input
  // bounds on cumulative increments, slack sign.
  const int m = 4 * N + 2 * N + 2;
  qp.C = Eigen::MatrixXd::Zero(m, n);
  qp.lb = Eigen::VectorXd::Constant(m, -kInf);
  qp.ub = Eigen::VectorXd::Constant(m, kInf);
  int row = 0;
  for (int j = 1; j <= N; ++j) {
    for (int c = 0; c < 2; ++c) {
      const int gr = 2 * (j - 1) + c;
      const double base = out.state_free[gr];
      qp.C.row(row).head(nu) = G.row(gr);
      qp.C(row, nu + c) = 1.0;
      qp.lb[row] = cfg.x_min[c] - base;
      ++row;
      qp.C.row(row).head(nu) = G.row(gr);
      qp.C(row, nu + c) = -1.0;
      qp.ub[row] = cfg.x_max[c] - base;
      ++row;
    }
  }
  for (int j = 0; j < N; ++j) {
    for (int c = 0; c < 2; ++c) {
      for (int i = 0; i <= j; ++i) qp.C(row, 2 * i + c) = 1.0;
      qp.lb[row] = cfg.u_min[c] - init.u_bar[c];
      qp.ub[row] = cfg.u_max[c] - init.u_bar[c];
      ++row;
    }
  }
  for (int c = 0; c < 2; ++c) {
    qp.C(row, nu + c) = 1.0;
    qp.lb[row] = 0.0;
    ++row;
  }
  return out;
}

CondensedQp build_qp(const MpcConfig& cfg, const MpcWeights& w,
                     const ScheduledModel& sm, const MpcInitial& init) {
  const ScheduledModel reduced = sm.without_fuel_input();
  if (reduced.inputs() != 2) throw InputError("build_qp: model must have 2 or 3 inputs");
  const Eigen::Matrix2d B = reduced.B;
  return build_qp(cfg, w, reduced.A, B, init, terminal_penalty(reduced.A, B, w));
}

MpcSolution solve_mpc(const CondensedQp& cqp, const Eigen::Vector2d& u_bar,
                      std::span<const int> warm_active, const QpOptions& options) {
  const int N = cqp.horizon;
  const QpSolution qs = solve_qp(cqp.qp, warm_active, options);
  MpcSolution s;
  s.status = qs.status;
  s.iterations = qs.iterations;
  s.kkt_residual = qs.kkt_residual;
  s.active = qs.active;
  s.active_constraints = static_cast<int>(qs.active.size());
  s.du = qs.z.head(2 * N);
  s.du0 = s.du.head<2>();
  s.slack = qs.z.tail<2>().cwiseMax(0.0);
  const Eigen::VectorXd xs = cqp.state_free + cqp.state_gain * s.du;
  s.predicted_x.resize(N, 2);
  s.predicted_u.resize(N, 2);
  Eigen::Vector2d u = u_bar;
  for (int j = 0; j < N; ++j) {
    s.predicted_x.row(j) = xs.segment<2>(2 * j).transpose();
    u += s.du.segment<2>(2 * j);
    s.predicted_u.row(j) = u.transpose();
  }
  return s;
}

MpcController::MpcController(const LpvModel& model, MpcConfig cfg,
                             WeightSchedule weights)
    : model_(&model), cfg_(std::move(cfg)), schedule_(std::move(weights)) {
  cfg_.validate();
}

void MpcController::reset() {
  primed_ = false;
  warm_.clear();
  diag_ = {};
}

void MpcController::prime(const StateVector& x_prev, const ActuatorInput& u_prev,
                          const ActuatorInput& u_ff_prev) {
  x_prev_ = x_prev;
  u_prev_ = to_vec(u_prev);
  u_ff_prev_ = to_vec(u_ff_prev);
  primed_ = true;
  warm_.clear();
}

MpcWeights MpcController::weights_at(const OperatingPoint& rho) const {
  return schedule_ ? schedule_(rho) : cfg_.weights;
}

ActuatorInput MpcController::step(const StateVector& x, const StateVector& target,
                                  const OperatingPoint& rho,
                                  const ActuatorInput& u_ff) {
  const Eigen::Vector2d uff = to_vec(u_ff);
  if (!primed_) prime(x, u_ff, u_ff);
  const Eigen::Vector2d u_bar = u_prev_ + uff - u_ff_prev_;

  const auto t0 = std::chrono::steady_clock::now();
  const ScheduledModel sm = model_->schedule(rho).without_fuel_input();
  const MpcWeights w = weights_at(rho);
  diag_ = {};
  Eigen::Vector2d du = Eigen::Vector2d::Zero();
  try {
    const Eigen::Matrix2d B = sm.B;
    const auto cqp = build_qp(cfg_, w, sm.A, B, {x, x_prev_, u_bar, target},
                              terminal_penalty(sm.A, B, w));
    const auto sol = solve_mpc(cqp, u_bar, warm_, cfg_.qp);
    diag_.status = sol.status;
    diag_.kkt_residual = sol.kkt_residual;
    diag_.iterations = sol.iterations;
    diag_.active_constraints = sol.active_constraints;
    diag_.slack = sol.slack;
    if (sol.status == QpStatus::Optimal && sol.du0.allFinite()) {
      du = sol.du0;
      warm_ = sol.active;
    } else {
      diag_.fallback = true;
      warm_.clear();
    }
  } catch (const StabilizabilityError&) {
    diag_.status = QpStatus::Infeasible;
    diag_.fallback = true;
    warm_.clear();
  }
  diag_.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const Eigen::Vector2d u = (u_bar + du).cwiseMax(cfg_.u_min).cwiseMin(cfg_.u_max);
  diag_.du = u - u_bar;
  x_prev_ = x;
  u_prev_ = u;
  u_ff_prev_ = uff;
  return {u[0], u[1]};
}

}  // namespace airpath
