#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <vector>

#include "airpath/config.hpp"
#include "airpath/lpv.hpp"
#include "airpath/qp.hpp"

namespace airpath {

/// Diagonal-or-full tracking and increment weights.
struct MpcWeights {
  Eigen::Matrix2d Q_e = Eigen::Vector2d(40.0, 4000.0).asDiagonal();
  Eigen::Matrix2d R = Eigen::Vector2d(1.0, 1.0).asDiagonal();

  friend bool operator==(const MpcWeights&, const MpcWeights&) = default;
};

struct MpcConfig {
  int horizon = 50;
  MpcWeights weights;
  /// Slack penalty; unset means 1e4 times the largest eigenvalue of Q_e.
  std::optional<double> mu;
  Eigen::Vector2d x_min{0.9, 0.0};
  Eigen::Vector2d x_max{3.0, 0.6};
  Eigen::Vector2d u_min{0.0, 0.0};
  Eigen::Vector2d u_max{100.0, 100.0};
  double dt = 0.02;
  QpOptions qp;

  /// Throws InputError when an invariant fails.
  void validate() const;
  double slack_weight(const MpcWeights& w) const;

  /// Reads `mpc.*` keys.
  static MpcConfig from_config(const Config& cfg);
};

/// Composite pair used for the terminal penalty: state [dx; e].
struct TerminalPair {
  Eigen::Matrix4d A;
  Eigen::Matrix<double, 4, 2> B;
};
TerminalPair build_terminal_pair(const StateMatrix& A, const Eigen::Matrix2d& B);

/// diag(0, Q_e) on [dx; e].
Eigen::Matrix4d terminal_state_weight(const Eigen::Matrix2d& Q_e);

/// Riccati solution for the composite pair and weights.
Eigen::Matrix4d terminal_penalty(const StateMatrix& A, const Eigen::Matrix2d& B,
                                 const MpcWeights& w);

/// Extended state [dx, e, x_prev, u_prev] dynamics driven by du.
struct ExtendedModel {
  Eigen::Matrix<double, 8, 8> A;
  Eigen::Matrix<double, 8, 2> B;
};
ExtendedModel build_extended(const StateMatrix& A, const Eigen::Matrix2d& B);

/// Measured quantities that seed one MPC problem.
struct MpcInitial {
  StateVector x;        ///< current state
  StateVector x_prev;   ///< state at the previous step
  Eigen::Vector2d u_bar;  ///< corrected previous input
  StateVector target;
};

/// Condensed QP over z = [du_0 .. du_{N-1}; eps] plus the maps needed to
/// reconstruct predictions.
struct CondensedQp {
  QpProblem qp;
  int horizon = 0;
  Eigen::Matrix4d terminal;
  /// Stacked x_{1..N} = state_free + state_gain * dU.
  Eigen::VectorXd state_free;
  Eigen::MatrixXd state_gain;
};

/// Throws AssemblyError if the weights or the terminal penalty are not
/// semidefinite.  B must already be 2 x 2.
CondensedQp build_qp(const MpcConfig& cfg, const MpcWeights& w,
                     const StateMatrix& A, const Eigen::Matrix2d& B,
                     const MpcInitial& init, const Eigen::Matrix4d& terminal);

/// Same, with the terminal penalty taken from the Riccati solution.
CondensedQp build_qp(const MpcConfig& cfg, const MpcWeights& w,
                     const ScheduledModel& sm, const MpcInitial& init);

struct MpcSolution {
  Eigen::Vector2d du0 = Eigen::Vector2d::Zero();
  Eigen::VectorXd du;              ///< full increment stack (2N)
  Eigen::MatrixXd predicted_x;     ///< N x 2, x_{1..N}
  Eigen::MatrixXd predicted_u;     ///< N x 2, u_{0..N-1}
  Eigen::Vector2d slack = Eigen::Vector2d::Zero();
  QpStatus status = QpStatus::Infeasible;
  int iterations = 0;
  int active_constraints = 0;
  double kkt_residual = 0.0;
  std::vector<int> active;
};

MpcSolution solve_mpc(const CondensedQp& cqp, const Eigen::Vector2d& u_bar,
                      std::span<const int> warm_active = {},
                      const QpOptions& options = {});

/// Per-step record exposed by the controller.
struct MpcDiagnostics {
  QpStatus status = QpStatus::Optimal;
  double kkt_residual = 0.0;
  int iterations = 0;
  int active_constraints = 0;
  Eigen::Vector2d du = Eigen::Vector2d::Zero();
  Eigen::Vector2d slack = Eigen::Vector2d::Zero();
  double solve_seconds = 0.0;
  bool fallback = false;  ///< QP failed; zero increment applied
};

/// Weight lookup by operating point (region scheduling).
using WeightSchedule = std::function<MpcWeights(const OperatingPoint&)>;

/// Stateful rate-based MPC with feedforward correction.
class MpcController {
 public:
  MpcController(const LpvModel& model, MpcConfig cfg,
                WeightSchedule weights = {});

  /// One control period.  The first call after construction or reset()
  /// takes x_prev = x and u_prev = u_ff.
  ActuatorInput step(const StateVector& x, const StateVector& target,
                     const OperatingPoint& rho, const ActuatorInput& u_ff);

  void reset();
  /// Seeds the memory explicitly (e.g. from a settled plant).
  void prime(const StateVector& x_prev, const ActuatorInput& u_prev,
             const ActuatorInput& u_ff_prev);

  const MpcDiagnostics& diagnostics() const { return diag_; }
  const MpcConfig& config() const { return cfg_; }
  MpcWeights weights_at(const OperatingPoint& rho) const;

 private:
  const LpvModel* model_;
  MpcConfig cfg_;
  WeightSchedule schedule_;
  bool primed_ = false;
  StateVector x_prev_ = StateVector::Zero();
  Eigen::Vector2d u_prev_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d u_ff_prev_ = Eigen::Vector2d::Zero();
  std::vector<int> warm_;
  MpcDiagnostics diag_;
};

}  // namespace airpath
