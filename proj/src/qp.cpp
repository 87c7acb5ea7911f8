#include "airpath/qp.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "airpath/errors.hpp"

namespace airpath {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Factorization state of the dual method: J = L^-T Q with the first `iq`
// columns spanning the active normals, R upper triangular.
struct Workspace {
  int n = 0;
  Eigen::MatrixXd J;
  Eigen::MatrixXd R;
  double r_norm = 1.0;
  int iq = 0;
  std::vector<int> act;
  std::vector<double> u;
};

bool add_constraint(Workspace& w, Eigen::VectorXd& d) {
  const int n = w.n;
  for (int j = n - 1; j >= w.iq + 1; --j) {
    double cc = d[j - 1];
    double ss = d[j];
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d[j] = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d[j - 1] = -h;
    } else {
      d[j - 1] = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
      const double t1 = w.J(k, j - 1);
      const double t2 = w.J(k, j);
      w.J(k, j - 1) = t1 * cc + t2 * ss;
      w.J(k, j) = xny * (t1 + w.J(k, j - 1)) - t2;
    }
  }
  const double diag = std::abs(d[w.iq]);
  if (diag <= kEps * w.r_norm) return false;
  w.R.col(w.iq).head(w.iq + 1) = d.head(w.iq + 1);
  ++w.iq;
  w.r_norm = std::max(w.r_norm, diag);
  return true;
}

void delete_constraint(Workspace& w, int pos) {
  const int n = w.n;
  for (int i = pos; i < w.iq - 1; ++i) w.R.col(i) = w.R.col(i + 1);
  w.act.erase(w.act.begin() + pos);
  w.u.erase(w.u.begin() + pos);
  w.R.col(w.iq - 1).setZero();
  --w.iq;
  for (int j = pos; j < w.iq; ++j) {
    double cc = w.R(j, j);
    double ss = w.R(j + 1, j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    w.R(j + 1, j) = 0.0;
    if (cc < 0.0) {
      w.R(j, j) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      w.R(j, j) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = j + 1; k < w.iq; ++k) {
      const double t1 = w.R(j, k);
      const double t2 = w.R(j + 1, k);
      w.R(j, k) = t1 * cc + t2 * ss;
      w.R(j + 1, k) = xny * (t1 + w.R(j, k)) - t2;
    }
    for (int k = 0; k < n; ++k) {
      const double t1 = w.J(k, j);
      const double t2 = w.J(k, j + 1);
      w.J(k, j) = t1 * cc + t2 * ss;
      w.J(k, j + 1) = xny * (w.J(k, j) + t1) - t2;
    }
  }
}

bool is_equality(const QpProblem& qp, int id) {
  const int row = id / 2;
  return qp.lb[row] == qp.ub[row];
}

double side_sign(int id) { return (id % 2) ? -1.0 : 1.0; }

double side_bound(const QpProblem& qp, int id) {
  const int row = id / 2;
  return (id % 2) ? -qp.ub[row] : qp.lb[row];
}

}  // namespace

std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::IterationLimit: return "iteration_limit";
    case QpStatus::Infeasible: return "infeasible";
  }
  return "?";
}

void QpProblem::validate() const {
  const auto n = g.size();
  if (n == 0) throw InputError("QP has no variables");
  if (H.rows() != n || H.cols() != n) throw InputError("QP Hessian shape mismatch");
  if (C.cols() != n && C.rows() > 0) throw InputError("QP constraint matrix shape mismatch");
  if (lb.size() != C.rows() || ub.size() != C.rows()) {
    throw InputError("QP bound vectors do not match constraint rows");
  }
  if (!H.allFinite() || !g.allFinite() || !C.allFinite()) {
    throw InputError("QP data contains non-finite entries");
  }
  for (Eigen::Index i = 0; i < lb.size(); ++i) {
    if (std::isnan(lb[i]) || std::isnan(ub[i]) || lb[i] > ub[i] ||
        lb[i] == kInf || ub[i] == -kInf) {
      throw InputError("QP row " + std::to_string(i) + " has invalid bounds");
    }
  }
}

double QpProblem::objective(const Eigen::VectorXd& z) const {
  return 0.5 * z.dot(H * z) + g.dot(z);
}

double kkt_residual(const QpProblem& qp, const Eigen::VectorXd& z,
                    const Eigen::VectorXd& multipliers) {
  const Eigen::VectorXd cz = qp.C * z;
  double res = (qp.H * z + qp.g - qp.C.transpose() * multipliers).cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < cz.size(); ++i) {
    if (std::isfinite(qp.lb[i])) res = std::max(res, qp.lb[i] - cz[i]);
    if (std::isfinite(qp.ub[i])) res = std::max(res, cz[i] - qp.ub[i]);
    const double lam = multipliers[i];
    if (lam > 0.0) res = std::max(res, lam * std::abs(cz[i] - qp.lb[i]));
    if (lam < 0.0) res = std::max(res, -lam * std::abs(qp.ub[i] - cz[i]));
  }
  return res;
}

QpSolution solve_qp(const QpProblem& qp, std::span<const int> warm_active,
                    const QpOptions& options) {
  qp.validate();
  const int n = qp.variables();
  const int m = qp.rows();

  Eigen::LLT<Eigen::MatrixXd> llt(qp.H);
  if (llt.info() != Eigen::Success) {
    throw InputError("solve_qp: Hessian is not positive definite");
  }

  Workspace w;
  w.n = n;
  w.J = llt.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
  w.R = Eigen::MatrixXd::Zero(n, n);
  w.act.reserve(n);
  w.u.reserve(n);

  QpSolution sol;
  Eigen::VectorXd x = -llt.solve(qp.g);
  Eigen::VectorXd d(n), z(n), r(n);
  const int max_iter = options.max_iterations > 0 ? options.max_iterations
                                                  : 3 * (n + m) + 10;

  auto compute_step = [&](const Eigen::VectorXd& np) {
    d.noalias() = w.J.transpose() * np;
    z.noalias() = w.J.rightCols(n - w.iq) * d.tail(n - w.iq);
    r.head(w.iq) =
        w.R.topLeftCorner(w.iq, w.iq).triangularView<Eigen::Upper>().solve(d.head(w.iq));
  };

  sol.status = QpStatus::Optimal;

  // Equalities go in first and are never dropped.
  for (int row = 0; row < m && sol.status == QpStatus::Optimal; ++row) {
    if (qp.lb[row] != qp.ub[row]) continue;
    const int id = 2 * row;
    const Eigen::VectorXd np = qp.C.row(row).transpose();
    compute_step(np);
    const double s = np.dot(x) - qp.lb[row];
    const double zn = z.dot(np);
    double t = 0.0;
    if (std::abs(zn) > kEps) {
      t = -s / zn;
    } else if (std::abs(s) > options.feasibility_tolerance * (1.0 + std::abs(qp.lb[row]))) {
      sol.status = QpStatus::Infeasible;
      break;
    }
    x += t * z;
    for (int j = 0; j < w.iq; ++j) w.u[j] -= t * r[j];
    if (!add_constraint(w, d)) {
      sol.status = QpStatus::Infeasible;
      break;
    }
    w.act.push_back(id);
    w.u.push_back(t);
  }

  std::vector<char> is_active(2 * static_cast<std::size_t>(m), 0);
  for (int id : w.act) is_active[id] = 1;
  std::vector<char> excluded(2 * static_cast<std::size_t>(m), 0);
  Eigen::VectorXd cx(m);

  // Violation of one-sided constraint `id` at the current x, or 0.
  auto violation = [&](int id) {
    if (is_active[id] || excluded[id]) return 0.0;
    const double b = side_bound(qp, id);
    if (!std::isfinite(b)) return 0.0;
    const double s = side_sign(id) * cx[id / 2] - b;
    return s < -options.feasibility_tolerance * (1.0 + std::abs(b)) ? -s : 0.0;
  };

  int iter = 0;
  while (sol.status == QpStatus::Optimal) {
    cx.noalias() = qp.C * x;
    int p = -1;
    double worst = 0.0;
    for (int id : warm_active) {
      if (id < 0 || id >= 2 * m) continue;
      const double v = violation(id);
      if (v > worst || (v > 0.0 && v == worst && id < p)) {
        worst = v;
        p = id;
      }
    }
    if (p < 0) {
      for (int id = 0; id < 2 * m; ++id) {
        const double v = violation(id);
        if (v > worst) {
          worst = v;
          p = id;
        }
      }
    }
    if (p < 0) break;

    const Eigen::VectorXd np = side_sign(p) * qp.C.row(p / 2).transpose();
    const double bp = side_bound(qp, p);
    double u_p = 0.0;
    bool added = false;
    while (!added) {
      if (++iter > max_iter) {
        sol.status = QpStatus::IterationLimit;
        break;
      }
      compute_step(np);
      double t1 = kInf;
      int l = -1;
      for (int j = 0; j < w.iq; ++j) {
        if (r[j] > 0.0 && !is_equality(qp, w.act[j])) {
          const double ratio = w.u[j] / r[j];
          if (ratio < t1) {
            t1 = ratio;
            l = j;
          }
        }
      }
      const double zn = z.dot(np);
      const double s_p = np.dot(x) - bp;
      const double t2 = std::abs(zn) > kEps ? -s_p / zn : kInf;
      const double t = std::min(t1, t2);
      if (t == kInf) {
        sol.status = QpStatus::Infeasible;
        break;
      }
      if (t2 == kInf) {
        for (int j = 0; j < w.iq; ++j) w.u[j] -= t * r[j];
        u_p += t;
        is_active[w.act[l]] = 0;
        delete_constraint(w, l);
        continue;
      }
      x += t * z;
      for (int j = 0; j < w.iq; ++j) w.u[j] -= t * r[j];
      u_p += t;
      if (t2 <= t1) {
        if (add_constraint(w, d)) {
          w.act.push_back(p);
          w.u.push_back(u_p);
          is_active[p] = 1;
          std::fill(excluded.begin(), excluded.end(), 0);
        } else {
          excluded[p] = 1;  // numerically dependent on the active set
        }
        added = true;
      } else {
        is_active[w.act[l]] = 0;
        delete_constraint(w, l);
      }
    }
  }

  sol.z = x;
  sol.iterations = iter;
  sol.active = w.act;
  sol.multipliers = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < w.iq; ++j) {
    sol.multipliers[w.act[j] / 2] += side_sign(w.act[j]) * w.u[j];
  }
  sol.objective = qp.objective(x);
  sol.kkt_residual = kkt_residual(qp, x, sol.multipliers);
  return sol;
}

}  // namespace airpath
