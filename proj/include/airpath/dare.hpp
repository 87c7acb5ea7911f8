#pragma once

#include <Eigen/Core>

namespace airpath {

struct DareOptions {
  int max_iterations = 60;
  /// Accepted Riccati residual, relative to max(1, |P|_inf).
  double tolerance = 1e-9;
};

/// Stabilizing solution of P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q.
/// Throws InputError on inconsistent shapes or R not positive definite and
/// StabilizabilityError when the doubling iteration fails to converge.
Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                           const DareOptions& options = {});

/// Infinity norm of the Riccati residual at P.
double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P);

/// K = (R + B'PB)^-1 B'PA, so that u = -K x.
Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                         const Eigen::MatrixXd& R, const Eigen::MatrixXd& P);

}  // namespace airpath
