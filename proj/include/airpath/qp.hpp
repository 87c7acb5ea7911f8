#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

namespace airpath {

/// minimize 0.5 z'Hz + g'z  subject to  lb <= C z <= ub.
/// Infinite bounds disable their side; lb == ub makes the row an equality.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd C;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  int variables() const { return static_cast<int>(g.size()); }
  int rows() const { return static_cast<int>(C.rows()); }
  /// Throws InputError on inconsistent shapes, NaNs or lb > ub.
  void validate() const;
  double objective(const Eigen::VectorXd& z) const;
};

enum class QpStatus { Optimal, IterationLimit, Infeasible };

std::string to_string(QpStatus s);

/// Active one-sided constraints are encoded as 2 * row (lower side) and
/// 2 * row + 1 (upper side).
struct QpSolution {
  Eigen::VectorXd z;
  /// Per-row multiplier, positive when the lower side binds and negative
  /// for the upper side.
  Eigen::VectorXd multipliers;
  std::vector<int> active;
  QpStatus status = QpStatus::Infeasible;
  int iterations = 0;
  double objective = 0.0;
  /// max of stationarity, primal violation and complementarity residuals.
  double kkt_residual = 0.0;

  bool ok() const { return status == QpStatus::Optimal; }
};

struct QpOptions {
  int max_iterations = 0;  ///< 0 picks 3 * (n + rows) + 10
  double feasibility_tolerance = 1e-10;
};

/// Dual active-set solver for strictly convex QPs.  The most violated
/// constraint enters first with ties going to the lowest index; violated
/// members of `warm_active` (same encoding as QpSolution::active) are
/// preferred over the rest.  Throws InputError when H is not positive
/// definite.
QpSolution solve_qp(const QpProblem& qp, std::span<const int> warm_active = {},
                    const QpOptions& options = {});

/// Same residual measure reported in QpSolution::kkt_residual.
double kkt_residual(const QpProblem& qp, const Eigen::VectorXd& z,
                    const Eigen::VectorXd& multipliers);

}  // namespace airpath
