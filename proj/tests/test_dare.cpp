#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <random>

#include "airpath/dare.hpp"
#include "airpath/errors.hpp"

using namespace airpath;

namespace {

// Bisection on the scalar Riccati map; its fixed point above q is the
// stabilizing root.
double scalar_riccati_root(double a, double b, double q, double r) {
  auto f = [&](double p) { return q + a * a * p - a * a * b * b * p * p / (r + b * b * p) - p; };
  double lo = q, hi = 1.0;
  while (f(hi) > 0) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// P = A'PA + Q through vec(P) = (I - A' kron A')^-1 vec(Q).
Eigen::MatrixXd lyapunov_by_kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q) {
  const int n = static_cast<int>(A.rows());
  Eigen::MatrixXd K(n * n, n * n);
  const Eigen::MatrixXd At = A.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) K.block(i * n, j * n, n, n) = At(i, j) * At;
  const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n * n, n * n) - K;
  const Eigen::VectorXd vq = Eigen::Map<const Eigen::VectorXd>(Q.data(), n * n);
  const Eigen::VectorXd vp = M.fullPivLu().solve(vq);
  return Eigen::Map<const Eigen::MatrixXd>(vp.data(), n, n);
}

}  // namespace

TEST(Dare, ScalarMatchesQuadraticRoot) {
  const Eigen::MatrixXd P = solve_dare(Eigen::MatrixXd::Constant(1, 1, 0.5),
                                       Eigen::MatrixXd::Constant(1, 1, 1.0),
                                       Eigen::MatrixXd::Constant(1, 1, 1.0),
                                       Eigen::MatrixXd::Constant(1, 1, 1.0));
  EXPECT_NEAR(P(0, 0), scalar_riccati_root(0.5, 1.0, 1.0, 1.0), 1e-9);
  // closed form of p^2 - p/4 - 1 = 0
  EXPECT_NEAR(P(0, 0), (0.25 + std::sqrt(0.0625 + 4.0)) / 2.0, 1e-9);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(0.1, 2.0);
  for (int t = 0; t < 50; ++t) {
    const double a = d(rng) * (t % 2 ? 1 : -1), b = d(rng), q = d(rng), r = d(rng);
    const auto Ps = solve_dare(Eigen::MatrixXd::Constant(1, 1, a), Eigen::MatrixXd::Constant(1, 1, b),
                               Eigen::MatrixXd::Constant(1, 1, q), Eigen::MatrixXd::Constant(1, 1, r));
    EXPECT_NEAR(Ps(0, 0), scalar_riccati_root(a, b, q, r), 1e-9 * std::max(1.0, Ps(0, 0)));
  }
}

TEST(Dare, ZeroDynamicsGivesQ) {
  const Eigen::MatrixXd Q = Eigen::Vector4d(1, 2, 3, 4).asDiagonal();
  const auto P = solve_dare(Eigen::MatrixXd::Zero(4, 4), Eigen::MatrixXd::Random(4, 2), Q,
                            Eigen::MatrixXd::Identity(2, 2));
  EXPECT_LT((P - Q).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Dare, NoInputReducesToLyapunov) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return d(rng); });
    const double rad = A.eigenvalues().cwiseAbs().maxCoeff();
    A *= 0.9 / rad;
    const Eigen::MatrixXd L = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return d(rng); });
    const Eigen::MatrixXd Q = L * L.transpose();
    const auto P = solve_dare(A, Eigen::MatrixXd::Zero(4, 2), Q, Eigen::MatrixXd::Identity(2, 2));
    const auto ref = lyapunov_by_kronecker(A, Q);
    EXPECT_LT((P - ref).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
  }
}

TEST(Dare, RandomStabilizableResidual) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  int solved = 0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return 0.6 * n01(rng); });
    const Eigen::MatrixXd B = Eigen::MatrixXd::NullaryExpr(4, 2, [&] { return n01(rng); });
    const Eigen::MatrixXd L = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return n01(rng); });
    const Eigen::MatrixXd Q = L * L.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2) * (0.5 + std::abs(n01(rng)));
    const auto P = solve_dare(A, B, Q, R);
    ++solved;
    EXPECT_LT(dare_residual(A, B, Q, R, P), 1e-9) << "instance " << t;
    EXPECT_LT((P - P.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
    const auto K = lqr_gain(A, B, R, P);
    const Eigen::MatrixXd Acl = A - B * K;
    EXPECT_LT(Acl.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  }
  EXPECT_EQ(solved, 100);
}

TEST(Dare, UnstabilizableThrows) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2) * 1.5;
  Eigen::MatrixXd B(2, 1);
  B << 1.0, 0.0;
  EXPECT_THROW(solve_dare(A, B, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(1, 1)),
               StabilizabilityError);
}

TEST(Dare, RejectsBadShapesAndIndefiniteR) {
  EXPECT_THROW(solve_dare(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(3, 1),
                          Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(1, 1)),
               InputError);
  EXPECT_THROW(solve_dare(Eigen::MatrixXd::Identity(2, 2) * 0.5, Eigen::MatrixXd::Ones(2, 1),
                          Eigen::MatrixXd::Identity(2, 2), -Eigen::MatrixXd::Identity(1, 1)),
               InputError);
}
