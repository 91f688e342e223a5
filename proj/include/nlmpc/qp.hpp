#pragma once

#include <limits>

#include "nlmpc/serialize.hpp"
#include "nlmpc/types.hpp"

namespace nlmpc {

/// Infinity sentinel for one-sided constraints.
constexpr double kQpInf = 1e20;

/// Convex QP  min 1/2 z'Hz + g'z  s.t.  lb <= A z <= ub.
struct QpProblem {
  Mat H;  // n x n, symmetric PSD (up to round-off)
  Vec g;
  Mat A;  // m x n
  Vec lb, ub;

  int n() const { return static_cast<int>(H.rows()); }
  int m() const { return static_cast<int>(A.rows()); }

  void validate() const {
    require(H.rows() == H.cols(), "QpProblem: H must be square");
    require(g.size() == H.rows(), "QpProblem: g length mismatch");
    require(A.cols() == H.rows() || A.rows() == 0, "QpProblem: A column mismatch");
    require(lb.size() == A.rows() && ub.size() == A.rows(), "QpProblem: bound length mismatch");
    require(max_abs_diff(H, H.transpose()) <= 1e-12 * std::max(1.0, H.cwiseAbs().maxCoeff()),
            "QpProblem: H not symmetric");
    for (int i = 0; i < m(); ++i)
      require(lb[i] <= ub[i], "QpProblem: lb > ub at row " + std::to_string(i));
  }
};

enum class QpStatus { solved, max_iter, infeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::solved: return "solved";
    case QpStatus::max_iter: return "max_iter";
    case QpStatus::infeasible: return "infeasible";
  }
  return "?";
}

struct QpSolution {
  Vec z;
  Vec y;  // row duals: positive at upper bounds, negative at lower
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
};

struct QpSettings {
  double tol = 1e-8;
  int max_iter = 4000;
  double sigma = 1e-6;
  double alpha = 1.6;  // over-relaxation
  double rho = 0.1;
  int check_every = 25;
  bool adaptive_rho = true;
};

/// Max of stationarity, bound violation and complementarity magnitudes.
inline double kkt_residual(const QpProblem& p, const Vec& z, const Vec& y) {
  require(z.size() == p.n() && y.size() == p.m(), "kkt_residual: shape mismatch");
  double r = (p.H * z + p.g + p.A.transpose() * y).cwiseAbs().maxCoeff();
  if (p.m() > 0) {
    const Vec az = p.A * z;
    for (int i = 0; i < p.m(); ++i) {
      const double up = std::max(y[i], 0.0), lo = std::max(-y[i], 0.0);
      r = std::max(r, std::max(0.0, az[i] - p.ub[i]));
      r = std::max(r, std::max(0.0, p.lb[i] - az[i]));
      r = std::max(r, p.ub[i] < 0.5 * kQpInf ? std::abs(up * (az[i] - p.ub[i])) : up);
      r = std::max(r, p.lb[i] > -0.5 * kQpInf ? std::abs(lo * (az[i] - p.lb[i])) : lo);
    }
  }
  return r;
}

namespace detail {

/// Equality-constrained solve on the rows judged active; refined against the
/// unregularized KKT system. Returns false when the refit does not meet tol.
inline bool qp_polish(const QpProblem& p, const Mat& H_use, const Vec& y_admm, double tol,
                      QpSolution& out) {
  const int n = p.n(), m = p.m();
  std::vector<int> low, up;
  for (int i = 0; i < m; ++i) {
    if (y_admm[i] < -1e-10) low.push_back(i);
    else if (y_admm[i] > 1e-10) up.push_back(i);
  }
  const int ma = static_cast<int>(low.size() + up.size());
  Mat K = Mat::Zero(n + ma, n + ma);
  K.topLeftCorner(n, n) = H_use;
  Vec rhs(n + ma);
  rhs.head(n) = -p.g;
  int at = 0;
  for (int i : low) {
    K.block(n + at, 0, 1, n) = p.A.row(i);
    K.block(0, n + at, n, 1) = p.A.row(i).transpose();
    rhs[n + at] = p.lb[i];
    ++at;
  }
  for (int i : up) {
    K.block(n + at, 0, 1, n) = p.A.row(i);
    K.block(0, n + at, n, 1) = p.A.row(i).transpose();
    rhs[n + at] = p.ub[i];
    ++at;
  }
  Mat K_reg = K;
  K_reg.topLeftCorner(n, n) += 1e-10 * Mat::Identity(n, n);
  K_reg.bottomRightCorner(ma, ma) -= 1e-10 * Mat::Identity(ma, ma);
  Eigen::PartialPivLU<Mat> lu(K_reg);
  Vec t = lu.solve(rhs);
  for (int refine = 0; refine < 3; ++refine) t += lu.solve(rhs - K * t);
  if (!t.allFinite()) return false;

  Vec z = t.head(n);
  Vec y = Vec::Zero(m);
  at = 0;
  for (int i : low) y[i] = t[n + at++];
  for (int i : up) y[i] = t[n + at++];
  const double res = kkt_residual(p, z, y);
  if (res <= tol) {
    out.z = std::move(z);
    out.y = std::move(y);
    out.kkt_residual = res;
    out.status = QpStatus::solved;
    return true;
  }
  return false;
}

}  // namespace detail

/// Operator-splitting solver with over-relaxation and periodic KKT polishing.
/// Deterministic; warm start via z0/y0. Status max_iter keeps the best iterate.
inline QpSolution qp_solve(const QpProblem& p, const QpSettings& settings = {},
                           const Vec* z0 = nullptr, const Vec* y0 = nullptr) {
  p.validate();
  const int n = p.n(), m = p.m();

  // Taylor Hessians of V can be indefinite at sign boundaries; nudge when the
  // smallest eigenvalue estimate is below threshold.
  Mat H_use = p.H;
  {
    Eigen::SelfAdjointEigenSolver<Mat> es(p.H, Eigen::EigenvaluesOnly);
    if (es.info() == Eigen::Success && es.eigenvalues().minCoeff() < 1e-10)
      H_use += 1e-9 * Mat::Identity(n, n);
  }

  QpSolution sol;
  sol.z = Vec::Zero(n);
  sol.y = Vec::Zero(m);

  if (m == 0) {
    Eigen::PartialPivLU<Mat> lu(H_use);
    sol.z = lu.solve(-p.g);
    sol.z += lu.solve(-p.g - p.H * sol.z);  // one refinement against original H
    sol.kkt_residual = kkt_residual(p, sol.z, sol.y);
    sol.status = sol.kkt_residual <= settings.tol ? QpStatus::solved : QpStatus::max_iter;
    return sol;
  }

  Vec z = z0 ? *z0 : Vec::Zero(n);
  Vec y = y0 ? *y0 : Vec::Zero(m);
  Vec s = (p.A * z).cwiseMin(p.ub).cwiseMax(p.lb);

  // per-row penalty: stiffer on equality-like rows
  double rho_base = settings.rho;
  auto rho_row = [&](int i) {
    return (p.ub[i] - p.lb[i] < 1e-14) ? rho_base * 1e3 : rho_base;
  };
  Vec rho(m), rho_inv(m);
  Mat K(n + m, n + m);
  Eigen::PartialPivLU<Mat> lu;
  auto factorize = [&]() {
    for (int i = 0; i < m; ++i) {
      rho[i] = rho_row(i);
      rho_inv[i] = 1.0 / rho[i];
    }
    K.setZero();
    K.topLeftCorner(n, n) = H_use + settings.sigma * Mat::Identity(n, n);
    K.topRightCorner(n, m) = p.A.transpose();
    K.bottomLeftCorner(m, n) = p.A;
    K.bottomRightCorner(m, m) = (-rho_inv).asDiagonal();
    lu.compute(K);
  };
  factorize();

  Vec rhs(n + m), zt(n), st(m), nu(m), y_prev(m), dy(m);
  double best_res = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= settings.max_iter; ++it) {
    rhs.head(n) = settings.sigma * z - p.g;
    rhs.tail(m) = s - rho_inv.cwiseProduct(y);
    const Vec t = lu.solve(rhs);
    zt = t.head(n);
    nu = t.tail(m);
    st = s + rho_inv.cwiseProduct(nu - y);

    y_prev = y;
    const Vec z_new = settings.alpha * zt + (1.0 - settings.alpha) * z;
    const Vec s_relax = settings.alpha * st + (1.0 - settings.alpha) * s;
    s = (s_relax + rho_inv.cwiseProduct(y)).cwiseMin(p.ub).cwiseMax(p.lb);
    y += rho.cwiseProduct(s_relax - s);
    z = z_new;
    dy = y - y_prev;

    if (it % settings.check_every == 0 || it == settings.max_iter) {
      const double rp = (p.A * z - s).cwiseAbs().maxCoeff();
      const double rd = (p.H * z + p.g + p.A.transpose() * y).cwiseAbs().maxCoeff();
      const double scale_p = std::max(1.0, (p.A * z).cwiseAbs().maxCoeff());
      const double scale_d = std::max(1.0, p.g.cwiseAbs().maxCoeff());

      if (rp < 1e-5 * scale_p && rd < 1e-5 * scale_d) {
        QpSolution polished = sol;
        if (detail::qp_polish(p, H_use, y, settings.tol, polished)) {
          polished.iterations = it;
          return polished;
        }
      }
      const double direct = kkt_residual(p, z, y);
      if (direct < best_res) {
        best_res = direct;
        sol.z = z;
        sol.y = y;
        sol.kkt_residual = direct;
      }
      if (direct <= settings.tol) {
        sol.iterations = it;
        sol.status = QpStatus::solved;
        return sol;
      }

      // primal infeasibility certificate on the dual increment
      const double dy_norm = dy.cwiseAbs().maxCoeff();
      if (dy_norm > 1e-12) {
        const double aty = (p.A.transpose() * dy).cwiseAbs().maxCoeff();
        double support = 0.0;
        bool bounded = true;
        for (int i = 0; i < m; ++i) {
          if (dy[i] > 0) {
            if (p.ub[i] >= 0.5 * kQpInf) bounded = false;
            support += p.ub[i] * dy[i];
          } else if (dy[i] < 0) {
            if (p.lb[i] <= -0.5 * kQpInf) bounded = false;
            support += p.lb[i] * dy[i];
          }
        }
        if (bounded && aty <= 1e-10 * dy_norm && support <= -1e-10 * dy_norm) {
          sol.iterations = it;
          sol.status = QpStatus::infeasible;
          return sol;
        }
      }

      if (settings.adaptive_rho && it % (settings.check_every * 8) == 0) {
        const double ratio = std::sqrt((rp / scale_p) / std::max(rd / scale_d, 1e-16));
        if (ratio > 5.0 || ratio < 0.2) {
          rho_base = std::clamp(rho_base * ratio, 1e-6, 1e6);
          factorize();
        }
      }
    }
  }
  // last polish attempt from the best iterate
  QpSolution polished = sol;
  if (detail::qp_polish(p, H_use, sol.y, settings.tol, polished)) {
    polished.iterations = settings.max_iter;
    polished.status = QpStatus::solved;
    return polished;
  }
  sol.iterations = settings.max_iter;
  sol.status = QpStatus::max_iter;
  return sol;
}

inline QpSolution qp_solve(const QpProblem& p, double tol, int max_iter) {
  QpSettings s;
  s.tol = tol;
  s.max_iter = max_iter;
  return qp_solve(p, s);
}

/// Debug dump for repro cases.
inline json qp_to_json(const QpProblem& p) {
  json doc;
  doc["n"] = p.n();
  doc["m"] = p.m();
  doc["H"] = mat_to_json(p.H);
  doc["g"] = vec_to_json(p.g);
  doc["A"] = mat_to_json(p.A);
  doc["lb"] = vec_to_json(p.lb);
  doc["ub"] = vec_to_json(p.ub);
  return doc;
}

inline QpProblem qp_from_json(const json& doc) {
  QpProblem p;
  const auto n = doc.at("n").get<Eigen::Index>();
  const auto m = doc.at("m").get<Eigen::Index>();
  p.H = mat_from_json(doc.at("H"), n, n);
  p.g = vec_from_json(doc.at("g"));
  p.A = mat_from_json(doc.at("A"), m, n);
  p.lb = vec_from_json(doc.at("lb"));
  p.ub = vec_from_json(doc.at("ub"));
  return p;
}

}  // namespace nlmpc
