#include "airpath/dare.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <cmath>
#include <string>

#include "airpath/errors.hpp"

namespace airpath {
namespace {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& M) { return 0.5 * (M + M.transpose()); }

double inf_norm(const Eigen::MatrixXd& M) {
  return M.size() == 0 ? 0.0 : M.cwiseAbs().rowwise().sum().maxCoeff();
}

// One Riccati recursion step; used to polish the doubling result.
Eigen::MatrixXd riccati_map(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                            const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd BtPA = B.transpose() * P * A;
  const Eigen::MatrixXd S = R + B.transpose() * P * B;
  return symmetrize(Q + A.transpose() * P * A -
                    BtPA.transpose() * S.ldlt().solve(BtPA));
}

// Newton step: P solves X = Acl'X Acl + Q + K'RK for the gain of the current P.
Eigen::MatrixXd newton_step(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                            const Eigen::MatrixXd& P) {
  const auto n = A.rows();
  const Eigen::MatrixXd S = R + B.transpose() * P * B;
  const Eigen::MatrixXd K = S.ldlt().solve(B.transpose() * P * A);
  const Eigen::MatrixXd Acl = A - B * K;
  const Eigen::MatrixXd rhs = Q + K.transpose() * R * K;
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) M.block(i * n, j * n, n, n) -= Acl(j, i) * Acl.transpose();
  // column-major vec: vec(Acl' X Acl) = (Acl' kron Acl') vec(X)
  const Eigen::VectorXd x = M.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), n * n));
  return symmetrize(Eigen::Map<const Eigen::MatrixXd>(x.data(), n, n));
}

}  // namespace

double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P) {
  return inf_norm(P - riccati_map(A, B, Q, R, P));
}

Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                         const Eigen::MatrixXd& R, const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd S = R + B.transpose() * P * B;
  return S.ldlt().solve(B.transpose() * P * A);
}

Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                           const DareOptions& options) {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols()) {
    throw InputError("solve_dare: inconsistent matrix dimensions");
  }
  if (!A.allFinite() || !B.allFinite() || !Q.allFinite() || !R.allFinite()) {
    throw InputError("solve_dare: non-finite entries");
  }
  Eigen::LLT<Eigen::MatrixXd> r_chol(symmetrize(R));
  if (r_chol.info() != Eigen::Success) {
    throw InputError("solve_dare: R is not positive definite");
  }

  // Structure-preserving doubling.
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd Ak = A;
  Eigen::MatrixXd Gk = symmetrize(B * r_chol.solve(B.transpose()));
  Eigen::MatrixXd Hk = symmetrize(Q);
  for (int it = 0; it < options.max_iterations; ++it) {
    Eigen::PartialPivLU<Eigen::MatrixXd> W(I + Gk * Hk);
    const Eigen::MatrixXd WA = W.solve(Ak);
    const Eigen::MatrixXd WG = W.solve(Gk);
    Eigen::MatrixXd H_next = symmetrize(Hk + Ak.transpose() * Hk * WA);
    Gk = symmetrize(Gk + Ak * WG * Ak.transpose());
    Ak = Ak * WA;
    if (!H_next.allFinite()) break;
    const double change = inf_norm(H_next - Hk);
    Hk = std::move(H_next);
    if (change <= 1e-13 * std::max(1.0, inf_norm(Hk))) break;
  }

  Eigen::MatrixXd P = Hk;
  double residual = dare_residual(A, B, Q, R, P);
  for (int polish = 0; polish < 8 && P.allFinite() && residual > 0.0; ++polish) {
    Eigen::MatrixXd next = n <= 12 ? newton_step(A, B, Q, R, P) : riccati_map(A, B, Q, R, P);
    const double r = dare_residual(A, B, Q, R, next);
    if (!(r < residual)) break;
    P = std::move(next);
    residual = r;
  }
  if (!P.allFinite() || !(residual < options.tolerance * std::max(1.0, inf_norm(P)))) {
    throw StabilizabilityError("solve_dare: no stabilizing solution (residual " +
                               std::to_string(residual) + ")");
  }
  const Eigen::MatrixXd closed = A - B * lqr_gain(A, B, R, P);
  const double radius = closed.eigenvalues().cwiseAbs().maxCoeff();
  if (!(radius < 1.0)) {
    throw StabilizabilityError("solve_dare: closed loop not stable (spectral radius " +
                               std::to_string(radius) + ")");
  }
  return P;
}

}  // namespace airpath
