#pragma once
// Dense convex QP with a diagonal Hessian:
//
//   minimize   sum_i (h_i/2) x_i^2 + g_i x_i
//   subject to A x <= b,  lo <= x <= hi
//
// Rows are stored sparse (the planner emits two non-zeros per row). The
// solver splits the problem into independent blocks of variables linked by
// rows, closes blocks whose clipped unconstrained minimizer is already
// feasible, and runs a Goldfarb-Idnani dual active-set method on the rest.
// Blocks that hit the active-set iteration cap are retried with ADMM.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace crossflow::qp {

struct Term {
  int var = 0;
  double coef = 0.0;
};

/// QP instance. Rows are appended with add_row and kept in CSR form.
struct QpProblem {
  std::size_t n = 0;
  std::vector<double> h, g, lo, hi;
  std::vector<std::size_t> row_start{0};
  std::vector<Term> terms;
  std::vector<double> b;

  QpProblem() = default;
  explicit QpProblem(std::size_t num_vars)
      : n(num_vars), h(num_vars, 1.0), g(num_vars, 0.0),
        lo(num_vars, -std::numeric_limits<double>::infinity()),
        hi(num_vars, std::numeric_limits<double>::infinity()) {}

  std::size_t rows() const { return b.size(); }

  void add_row(std::initializer_list<Term> row, double rhs) {
    for (const auto& t : row) terms.push_back(t);
    row_start.push_back(terms.size());
    b.push_back(rhs);
  }
  void add_row(const std::vector<Term>& row, double rhs) {
    terms.insert(terms.end(), row.begin(), row.end());
    row_start.push_back(terms.size());
    b.push_back(rhs);
  }

  /// Terms of row r as [begin, end).
  const Term* row_begin(std::size_t r) const { return terms.data() + row_start[r]; }
  const Term* row_end(std::size_t r) const { return terms.data() + row_start[r + 1]; }

  double row_dot(std::size_t r, const std::vector<double>& x) const {
    double s = 0.0;
    for (auto* t = row_begin(r); t != row_end(r); ++t)
      s += t->coef * x[static_cast<std::size_t>(t->var)];
    return s;
  }

  double objective(const std::vector<double>& x) const {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) f += 0.5 * h[i] * x[i] * x[i] + g[i] * x[i];
    return f;
  }
};

enum class Status { Optimal, Infeasible, IterLimit };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::IterLimit: return "iter_limit";
  }
  return "?";
}

struct KktResidual {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double dual = 0.0;  ///< negative multipliers

  double max() const { return std::max({stationarity, primal, complementarity, dual}); }
};

/// Farkas-type certificate: non-negative row weights w with
/// min_{lo<=x<=hi} (sum_r w_r A_r) x  >  sum_r w_r b_r.
struct InfeasibilityCertificate {
  std::vector<std::pair<std::size_t, double>> rows;
};

struct QpSolution {
  Status status = Status::Optimal;
  std::vector<double> x;
  std::vector<double> row_duals;    ///< >= 0, one per row
  std::vector<double> lower_duals;  ///< >= 0, multiplier of x >= lo
  std::vector<double> upper_duals;  ///< >= 0, multiplier of x <= hi
  KktResidual kkt{};
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
  bool used_admm = false;
  InfeasibilityCertificate certificate;
};

struct SolverOptions {
  double tol = 1e-6;
  /// 0 means 10 * (n + rows).
  std::size_t max_iter = 0;
  std::size_t admm_max_iter = 20000;
};

inline KktResidual kkt_residual(const QpProblem& p, const QpSolution& sol) {
  KktResidual r;
  const auto& x = sol.x;
  auto at = [](const std::vector<double>& v, std::size_t i) {
    return i < v.size() ? v[i] : 0.0;
  };
  std::vector<double> grad(p.n);
  for (std::size_t i = 0; i < p.n; ++i)
    grad[i] = p.h[i] * x[i] + p.g[i] - at(sol.lower_duals, i) + at(sol.upper_duals, i);
  for (std::size_t k = 0; k < p.rows(); ++k) {
    const double y = at(sol.row_duals, k);
    const double slack = p.row_dot(k, x) - p.b[k];
    r.primal = std::max(r.primal, slack);
    r.complementarity = std::max(r.complementarity, std::abs(y * slack));
    r.dual = std::max(r.dual, -y);
    if (y != 0.0)
      for (auto* t = p.row_begin(k); t != p.row_end(k); ++t)
        grad[static_cast<std::size_t>(t->var)] += y * t->coef;
  }
  for (std::size_t i = 0; i < p.n; ++i) {
    r.stationarity = std::max(r.stationarity, std::abs(grad[i]));
    r.primal = std::max({r.primal, p.lo[i] - x[i], x[i] - p.hi[i]});
    const double zl = at(sol.lower_duals, i), zu = at(sol.upper_duals, i);
    if (zl != 0.0 && std::isfinite(p.lo[i]))
      r.complementarity = std::max(r.complementarity, std::abs(zl * (x[i] - p.lo[i])));
    if (zu != 0.0 && std::isfinite(p.hi[i]))
      r.complementarity = std::max(r.complementarity, std::abs(zu * (p.hi[i] - x[i])));
    r.dual = std::max({r.dual, -zl, -zu});
  }
  r.primal = std::max(r.primal, 0.0);
  return r;
}

/// min over the box of sum_r w_r A_r x, minus sum_r w_r b_r (> 0 proves
/// infeasibility).
inline double certificate_gap(const QpProblem& p, const InfeasibilityCertificate& c) {
  std::vector<double> coef(p.n, 0.0);
  double rhs = 0.0;
  for (auto [r, w] : c.rows) {
    rhs += w * p.b[r];
    for (auto* t = p.row_begin(r); t != p.row_end(r); ++t)
      coef[static_cast<std::size_t>(t->var)] += w * t->coef;
  }
  double m = 0.0;
  for (std::size_t i = 0; i < p.n; ++i) {
    if (coef[i] == 0.0) continue;
    m += std::min(coef[i] * p.lo[i], coef[i] * p.hi[i]);
  }
  return m - rhs;
}

namespace detail {

// Constraint in Goldfarb-Idnani form  n^T x + beta >= 0.
struct GiConstraint {
  enum Kind : std::uint8_t { Row, Upper, Lower } kind;
  std::size_t source;          // row index or variable index (global)
  std::vector<Term> normal;    // local variable indices
  double beta;
  double scale;                // original row = scale * normalized row
};

struct GiResult {
  Status status = Status::Optimal;
  std::vector<double> x;
  std::vector<double> mult;  // per constraint
  std::size_t iterations = 0;
  InfeasibilityCertificate certificate;  // in GiConstraint weights form
  std::vector<std::pair<std::size_t, double>> farkas;  // constraint idx, weight
};

/// Goldfarb-Idnani dual active-set for diag(h) Hessians.
class DualActiveSet {
 public:
  DualActiveSet(const std::vector<double>& h, const std::vector<double>& g,
                const std::vector<GiConstraint>& cons)
      : n_(h.size()), h_(h), g_(g), cons_(cons) {}

  GiResult solve(std::size_t max_iter) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const double eps = std::numeric_limits<double>::epsilon();
    const std::size_t n = n_, m = cons_.size();
    GiResult res;
    res.mult.assign(m, 0.0);

    J_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    R_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) J_(idx(i), idx(i)) = 1.0 / std::sqrt(h_[i]);
    x_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) x_[i] = -g_[i] / h_[i];
    r_norm_ = 1.0;
    iq_ = 0;
    active_.assign(n + 1, 0);
    u_.assign(n + 1, 0.0);
    std::vector<double> s(m), x_old, u_old;
    std::vector<std::size_t> a_old;
    std::vector<char> is_active(m, 0), excluded(m, 0);
    d_.resize(static_cast<Eigen::Index>(n));
    z_.assign(n, 0.0);
    r_.assign(n + 1, 0.0);

    const double feas_tol = 1e-11;
    std::size_t iter = 0;
    for (;;) {  // step 1
      if (++iter > max_iter) {
        res.status = Status::IterLimit;
        break;
      }
      for (std::size_t k = 0; k < m; ++k) {
        s[k] = slack(k);
        excluded[k] = 0;
      }
      x_old = x_;
      u_old.assign(u_.begin(), u_.begin() + static_cast<std::ptrdiff_t>(iq_));
      a_old.assign(active_.begin(), active_.begin() + static_cast<std::ptrdiff_t>(iq_));

    select:  // step 2
      std::size_t p = m;
      double worst = -feas_tol;
      for (std::size_t k = 0; k < m; ++k) {
        if (!is_active[k] && !excluded[k] && s[k] < worst) {
          worst = s[k];
          p = k;
        }
      }
      if (p == m) {
        res.status = Status::Optimal;
        break;
      }
      u_[iq_] = 0.0;
      active_[iq_] = p;

      bool restart = false;
      for (;;) {  // step 2a
        if (++iter > max_iter) {
          res.status = Status::IterLimit;
          restart = true;
          break;
        }
        compute_d(p);
        const double zz = update_z();
        update_r();
        double t1 = inf;
        std::size_t l = m;
        for (std::size_t k = 0; k < iq_; ++k) {
          if (r_[k] > 0.0 && u_[k] / r_[k] < t1) {
            t1 = u_[k] / r_[k];
            l = active_[k];
          }
        }
        const double znp = dot_normal(p, z_);
        const double t2 = (zz > eps && znp > 0.0) ? -s[p] / znp : inf;
        const double t = std::min(t1, t2);
        if (t >= inf) {
          // n_p = sum_k r_k n_k with r_k <= 0: infeasible.
          res.status = Status::Infeasible;
          res.farkas.push_back({p, 1.0});
          for (std::size_t k = 0; k < iq_; ++k)
            if (r_[k] < 0.0) res.farkas.push_back({active_[k], -r_[k]});
          break;
        }
        if (t2 >= inf) {  // dual step only
          for (std::size_t k = 0; k < iq_; ++k) u_[k] -= t * r_[k];
          u_[iq_] += t;
          is_active[l] = 0;
          delete_constraint(l);
          continue;
        }
        for (std::size_t i = 0; i < n; ++i) x_[i] += t * z_[i];
        for (std::size_t k = 0; k < iq_; ++k) u_[k] -= t * r_[k];
        u_[iq_] += t;
        if (std::abs(t - t2) <= eps * std::max(1.0, std::abs(t2))) {
          if (!add_constraint()) {
            // Linearly dependent: exclude p and roll back this iteration.
            excluded[p] = 1;
            delete_constraint(p);
            std::fill(is_active.begin(), is_active.end(), 0);
            iq_ = a_old.size();
            rebuild_factorization(a_old);
            for (std::size_t k = 0; k < iq_; ++k) {
              active_[k] = a_old[k];
              u_[k] = u_old[k];
              is_active[a_old[k]] = 1;
            }
            x_ = x_old;
            goto select;
          }
          is_active[p] = 1;
          break;  // back to step 1
        }
        is_active[l] = 0;
        delete_constraint(l);
        s[p] = slack(p);
      }
      if (restart || res.status == Status::Infeasible) break;
    }
    res.iterations = iter;
    res.x = x_;
    for (std::size_t k = 0; k < iq_; ++k) res.mult[active_[k]] = u_[k];
    return res;
  }

 private:
  static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

  double slack(std::size_t k) const {
    double v = cons_[k].beta;
    for (const auto& t : cons_[k].normal) v += t.coef * x_[static_cast<std::size_t>(t.var)];
    return v;
  }

  double dot_normal(std::size_t k, const std::vector<double>& v) const {
    double s = 0.0;
    for (const auto& t : cons_[k].normal) s += t.coef * v[static_cast<std::size_t>(t.var)];
    return s;
  }

  // d = J^T n_p
  void compute_d(std::size_t p) {
    d_.setZero();
    for (const auto& t : cons_[p].normal)
      d_ += t.coef * J_.row(static_cast<Eigen::Index>(t.var)).transpose();
  }

  // z = J2 d2; returns z^T z
  double update_z() {
    const auto n = idx(n_);
    const auto q = idx(iq_);
    Eigen::VectorXd z = J_.rightCols(n - q) * d_.tail(n - q);
    double zz = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      z_[i] = z(idx(i));
      zz += z_[i] * z_[i];
    }
    return zz;
  }

  // r = R^{-1} d1
  void update_r() {
    for (std::size_t i = iq_; i-- > 0;) {
      double sum = d_(idx(i));
      for (std::size_t j = i + 1; j < iq_; ++j) sum -= R_(idx(i), idx(j)) * r_[j];
      r_[i] = sum / R_(idx(i), idx(i));
    }
  }

  bool add_constraint() {
    const double eps = std::numeric_limits<double>::epsilon();
    for (std::size_t j = n_ - 1; j >= iq_ + 1; --j) {
      double cc = d_(idx(j - 1)), ss = d_(idx(j));
      const double hyp = std::hypot(cc, ss);
      if (hyp == 0.0) continue;
      d_(idx(j)) = 0.0;
      ss /= hyp;
      cc /= hyp;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d_(idx(j - 1)) = -hyp;
      } else {
        d_(idx(j - 1)) = hyp;
      }
      const double xny = ss / (1.0 + cc);
      auto cj1 = J_.col(idx(j - 1));
      auto cj = J_.col(idx(j));
      for (Eigen::Index k = 0; k < idx(n_); ++k) {
        const double t1 = cj1(k), t2 = cj(k);
        cj1(k) = t1 * cc + t2 * ss;
        cj(k) = xny * (t1 + cj1(k)) - t2;
      }
    }
    ++iq_;
    for (std::size_t i = 0; i < iq_; ++i) R_(idx(i), idx(iq_ - 1)) = d_(idx(i));
    if (std::abs(d_(idx(iq_ - 1))) <= eps * r_norm_) {
      return false;
    }
    r_norm_ = std::max(r_norm_, std::abs(d_(idx(iq_ - 1))));
    return true;
  }

  void delete_constraint(std::size_t l) {
    std::size_t qq = iq_;
    for (std::size_t i = 0; i < iq_; ++i)
      if (active_[i] == l) {
        qq = i;
        break;
      }
    if (qq == iq_) {
      // l is the constraint being added (position iq_) and was never
      // committed to R.
      return;
    }
    for (std::size_t i = qq; i + 1 < iq_; ++i) {
      active_[i] = active_[i + 1];
      u_[i] = u_[i + 1];
      R_.col(idx(i)) = R_.col(idx(i + 1));
    }
    active_[iq_ - 1] = active_[iq_];
    u_[iq_ - 1] = u_[iq_];
    active_[iq_] = 0;
    u_[iq_] = 0.0;
    for (std::size_t j = 0; j < iq_; ++j) R_(idx(j), idx(iq_ - 1)) = 0.0;
    --iq_;
    if (iq_ == 0) return;
    for (std::size_t j = qq; j < iq_; ++j) {
      double cc = R_(idx(j), idx(j)), ss = R_(idx(j + 1), idx(j));
      const double hyp = std::hypot(cc, ss);
      if (hyp == 0.0) continue;
      cc /= hyp;
      ss /= hyp;
      R_(idx(j + 1), idx(j)) = 0.0;
      if (cc < 0.0) {
        R_(idx(j), idx(j)) = -hyp;
        cc = -cc;
        ss = -ss;
      } else {
        R_(idx(j), idx(j)) = hyp;
      }
      const double xny = ss / (1.0 + cc);
      for (std::size_t k = j + 1; k < iq_; ++k) {
        const double t1 = R_(idx(j), idx(k)), t2 = R_(idx(j + 1), idx(k));
        R_(idx(j), idx(k)) = t1 * cc + t2 * ss;
        R_(idx(j + 1), idx(k)) = xny * (t1 + R_(idx(j), idx(k))) - t2;
      }
      auto cj = J_.col(idx(j));
      auto cj1 = J_.col(idx(j + 1));
      for (Eigen::Index k = 0; k < idx(n_); ++k) {
        const double t1 = cj(k), t2 = cj1(k);
        cj(k) = t1 * cc + t2 * ss;
        cj1(k) = xny * (cj(k) + t1) - t2;
      }
    }
  }

  // Re-derive J and R for a given active list from scratch.
  void rebuild_factorization(const std::vector<std::size_t>& act) {
    J_.setZero();
    R_.setZero();
    for (std::size_t i = 0; i < n_; ++i) J_(idx(i), idx(i)) = 1.0 / std::sqrt(h_[i]);
    r_norm_ = 1.0;
    iq_ = 0;
    for (std::size_t k : act) {
      compute_d(k);
      add_constraint();
    }
  }

  std::size_t n_;
  const std::vector<double>& h_;
  const std::vector<double>& g_;
  const std::vector<GiConstraint>& cons_;
  Eigen::MatrixXd J_, R_;
  Eigen::VectorXd d_;
  std::vector<double> x_, z_, r_, u_;
  std::vector<std::size_t> active_;
  std::size_t iq_ = 0;
  double r_norm_ = 1.0;
};

// OSQP-style ADMM on one block; used only when the active-set method stalls.
// Re-solves the equality system of the final active set directly. The
// product-form updates drift after many additions and deletions; the direct
// solve restores full accuracy when the active set is regular.
inline bool polish_active_set(const std::vector<double>& h, const std::vector<double>& g,
                              const std::vector<GiConstraint>& cons, GiResult& res) {
  const auto n = static_cast<Eigen::Index>(h.size());
  std::vector<std::size_t> act;
  for (std::size_t k = 0; k < cons.size(); ++k)
    if (res.mult[k] > 0.0) act.push_back(k);
  const auto m = static_cast<Eigen::Index>(act.size());
  if (m == 0) return false;
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(m, n);
  Eigen::VectorXd beta(m), hinv(n), gv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hinv(i) = 1.0 / h[static_cast<std::size_t>(i)];
    gv(i) = g[static_cast<std::size_t>(i)];
  }
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto& c = cons[act[static_cast<std::size_t>(r)]];
    for (const auto& t : c.normal) N(r, t.var) += t.coef;
    beta(r) = c.beta;
  }
  const Eigen::MatrixXd NH = N * hinv.asDiagonal();
  const Eigen::MatrixXd M = NH * N.transpose();
  const Eigen::VectorXd rhs = NH * gv - beta;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  if (ldlt.info() != Eigen::Success) return false;
  const Eigen::VectorXd u = ldlt.solve(rhs);
  if (!u.allFinite() || (M * u - rhs).norm() > 1e-9 * std::max(1.0, rhs.norm())) return false;
  for (Eigen::Index r = 0; r < m; ++r)
    if (u(r) < -1e-10) return false;
  const Eigen::VectorXd x = hinv.asDiagonal() * (N.transpose() * u - gv);
  for (const auto& c : cons) {
    double sl = c.beta;
    for (const auto& t : c.normal) sl += t.coef * x(t.var);
    if (sl < -1e-9) return false;
  }
  std::fill(res.mult.begin(), res.mult.end(), 0.0);
  for (Eigen::Index r = 0; r < m; ++r) res.mult[act[static_cast<std::size_t>(r)]] = std::max(0.0, u(r));
  for (Eigen::Index i = 0; i < n; ++i) res.x[static_cast<std::size_t>(i)] = x(i);
  return true;
}

struct AdmmResult {
  bool converged = false;
  std::vector<double> x, y_rows, z_lo, z_hi;
  std::size_t iterations = 0;
};

inline AdmmResult admm_block(const std::vector<double>& h, const std::vector<double>& g,
                             const std::vector<double>& lo, const std::vector<double>& hi,
                             const std::vector<std::vector<Term>>& rows,
                             const std::vector<double>& b, double tol,
                             std::size_t max_iter) {
  using Eigen::Index;
  const Index n = static_cast<Index>(h.size());
  const Index mr = static_cast<Index>(rows.size());
  const Index m = mr + n;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(m, n);
  for (Index r = 0; r < mr; ++r)
    for (const auto& t : rows[static_cast<std::size_t>(r)]) C(r, t.var) += t.coef;
  for (Index i = 0; i < n; ++i) C(mr + i, i) = 1.0;
  Eigen::VectorXd l(m), u(m), q(n);
  for (Index r = 0; r < mr; ++r) {
    l(r) = -std::numeric_limits<double>::infinity();
    u(r) = b[static_cast<std::size_t>(r)];
  }
  for (Index i = 0; i < n; ++i) {
    l(mr + i) = lo[static_cast<std::size_t>(i)];
    u(mr + i) = hi[static_cast<std::size_t>(i)];
    q(i) = g[static_cast<std::size_t>(i)];
  }
  const double sigma = 1e-6, alpha = 1.6;
  double rho = 0.1;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), z = Eigen::VectorXd::Zero(m),
                  y = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) P(i, i) = h[static_cast<std::size_t>(i)];
  auto factor = [&](double rh) {
    Eigen::MatrixXd K = P + sigma * Eigen::MatrixXd::Identity(n, n) +
                        rh * C.transpose() * C;
    return Eigen::LLT<Eigen::MatrixXd>(K);
  };
  auto llt = factor(rho);
  AdmmResult res;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd rhs = sigma * x - q + C.transpose() * (rho * z - y);
    Eigen::VectorXd xt = llt.solve(rhs);
    Eigen::VectorXd zt = C * xt;
    x = alpha * xt + (1.0 - alpha) * x;
    Eigen::VectorXd zrel = alpha * zt + (1.0 - alpha) * z;
    Eigen::VectorXd znew = (zrel + y / rho).cwiseMax(l).cwiseMin(u);
    y += rho * (zrel - znew);
    z = znew;
    if (it % 25 == 0) {
      const double rp = (C * x - z).lpNorm<Eigen::Infinity>();
      const double rd = (P * x + q + C.transpose() * y).lpNorm<Eigen::Infinity>();
      res.iterations = it;
      if (rp <= tol * 0.1 && rd <= tol * 0.1) {
        res.converged = true;
        break;
      }
      const double ratio = std::sqrt((rp + 1e-12) / (rd + 1e-12));
      if (ratio > 5.0 || ratio < 0.2) {
        rho = std::clamp(rho * ratio, 1e-6, 1e6);
        llt = factor(rho);
      }
    }
  }
  res.x.resize(static_cast<std::size_t>(n));
  res.y_rows.resize(static_cast<std::size_t>(mr));
  res.z_lo.assign(static_cast<std::size_t>(n), 0.0);
  res.z_hi.assign(static_cast<std::size_t>(n), 0.0);
  for (Index i = 0; i < n; ++i) {
    res.x[static_cast<std::size_t>(i)] =
        std::clamp(x(i), lo[static_cast<std::size_t>(i)], hi[static_cast<std::size_t>(i)]);
    const double yi = y(mr + i);
    if (yi > 0.0) res.z_hi[static_cast<std::size_t>(i)] = yi;
    else res.z_lo[static_cast<std::size_t>(i)] = -yi;
  }
  for (Index r = 0; r < mr; ++r) res.y_rows[static_cast<std::size_t>(r)] = std::max(0.0, y(r));
  return res;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

inline void validate(const QpProblem& p) {
  if (p.h.size() != p.n || p.g.size() != p.n || p.lo.size() != p.n || p.hi.size() != p.n)
    throw std::invalid_argument("qp: vector sizes do not match n");
  if (p.row_start.size() != p.b.size() + 1)
    throw std::invalid_argument("qp: malformed row storage");
  for (std::size_t i = 0; i < p.n; ++i) {
    if (!(p.h[i] > 0.0)) throw std::invalid_argument("qp: Hessian entries must be > 0");
    if (!(p.lo[i] <= p.hi[i])) throw std::invalid_argument("qp: lo > hi");
  }
  for (const auto& t : p.terms)
    if (t.var < 0 || static_cast<std::size_t>(t.var) >= p.n)
      throw std::invalid_argument("qp: row references unknown variable");
}

inline QpSolution solve(const QpProblem& p, const SolverOptions& opt = {}) {
  validate(p);
  const std::size_t n = p.n, mrows = p.rows();
  const double tol = opt.tol;
  const std::size_t max_iter = opt.max_iter ? opt.max_iter : 10 * (n + mrows) + 10;

  QpSolution sol;
  sol.x.assign(n, 0.0);
  sol.row_duals.assign(mrows, 0.0);
  sol.lower_duals.assign(n, 0.0);
  sol.upper_duals.assign(n, 0.0);

  // Fixed variables (lo == hi) never enter a block.
  std::vector<char> fixed(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    fixed[i] = (p.hi[i] - p.lo[i]) <= 1e-12 * std::max(1.0, std::abs(p.lo[i]));
    sol.x[i] = fixed[i] ? p.lo[i] : std::clamp(-p.g[i] / p.h[i], p.lo[i], p.hi[i]);
  }

  // Row presolve against the box: drop rows that can never be active,
  // detect rows that can never be satisfied.
  std::vector<char> live(mrows, 0);
  std::vector<double> row_norm(mrows, 0.0);
  for (std::size_t r = 0; r < mrows; ++r) {
    double mn = 0.0, mx = 0.0, nrm = 0.0;
    for (auto* t = p.row_begin(r); t != p.row_end(r); ++t) {
      const auto i = static_cast<std::size_t>(t->var);
      mn += std::min(t->coef * p.lo[i], t->coef * p.hi[i]);
      mx += std::max(t->coef * p.lo[i], t->coef * p.hi[i]);
      nrm += t->coef * t->coef;
    }
    row_norm[r] = std::sqrt(nrm);
    const double scale = std::max(1.0, std::abs(p.b[r]));
    if (mn > p.b[r] + 1e-9 * scale) {
      sol.status = Status::Infeasible;
      sol.certificate.rows = {{r, 1.0}};
      sol.kkt = kkt_residual(p, sol);
      sol.kkt_residual = sol.kkt.max();
      return sol;
    }
    live[r] = (mx > p.b[r]) && row_norm[r] > 0.0;
  }

  // Blocks of free variables linked through live rows.
  detail::UnionFind uf(n);
  for (std::size_t r = 0; r < mrows; ++r) {
    if (!live[r]) continue;
    int first = -1;
    for (auto* t = p.row_begin(r); t != p.row_end(r); ++t) {
      if (fixed[static_cast<std::size_t>(t->var)]) continue;
      if (first < 0) first = t->var;
      else uf.unite(static_cast<std::size_t>(first), static_cast<std::size_t>(t->var));
    }
  }
  std::vector<std::vector<std::size_t>> block_vars(n), block_rows(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!fixed[i]) block_vars[uf.find(i)].push_back(i);
  for (std::size_t r = 0; r < mrows; ++r) {
    if (!live[r]) continue;
    int anchor = -1;
    for (auto* t = p.row_begin(r); t != p.row_end(r); ++t)
      if (!fixed[static_cast<std::size_t>(t->var)]) {
        anchor = t->var;
        break;
      }
    if (anchor < 0) continue;  // all fixed; feasibility already settled
    block_rows[uf.find(static_cast<std::size_t>(anchor))].push_back(r);
  }

  std::vector<int> local(n, -1);
  bool iter_limited = false;
  for (std::size_t root = 0; root < n; ++root) {
    const auto& vars = block_vars[root];
    const auto& rws = block_rows[root];
    if (vars.empty() || rws.empty()) continue;
    bool clipped_ok = true;
    for (std::size_t r : rws) {
      const double scale = std::max(1.0, std::abs(p.b[r]));
      if (p.row_dot(r, sol.x) > p.b[r] + 1e-12 * scale) {
        clipped_ok = false;
        break;
      }
    }
    if (clipped_ok) continue;

    for (std::size_t k = 0; k < vars.size(); ++k) local[vars[k]] = static_cast<int>(k);
    std::vector<double> bh(vars.size()), bg(vars.size());
    for (std::size_t k = 0; k < vars.size(); ++k) {
      bh[k] = p.h[vars[k]];
      bg[k] = p.g[vars[k]];
    }
    std::vector<detail::GiConstraint> cons;
    cons.reserve(rws.size() + 2 * vars.size());
    for (std::size_t r : rws) {
      detail::GiConstraint c{detail::GiConstraint::Row, r, {}, 0.0, row_norm[r]};
      double rhs = p.b[r];
      for (auto* t = p.row_begin(r); t != p.row_end(r); ++t) {
        const auto i = static_cast<std::size_t>(t->var);
        if (fixed[i]) rhs -= t->coef * p.lo[i];
        else c.normal.push_back({local[i], -t->coef / row_norm[r]});
      }
      c.beta = rhs / row_norm[r];
      cons.push_back(std::move(c));
    }
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const std::size_t i = vars[k];
      if (std::isfinite(p.hi[i]))
        cons.push_back({detail::GiConstraint::Upper, i, {{static_cast<int>(k), -1.0}}, p.hi[i], 1.0});
      if (std::isfinite(p.lo[i]))
        cons.push_back({detail::GiConstraint::Lower, i, {{static_cast<int>(k), 1.0}}, -p.lo[i], 1.0});
    }

    detail::DualActiveSet gi(bh, bg, cons);
    auto res = gi.solve(max_iter);
    sol.iterations += res.iterations;
    if (res.status == Status::Optimal) detail::polish_active_set(bh, bg, cons, res);
    if (res.status == Status::Infeasible) {
      sol.status = Status::Infeasible;
      for (auto [k, w] : res.farkas) {
        const auto& c = cons[k];
        if (c.kind == detail::GiConstraint::Row)
          sol.certificate.rows.push_back({c.source, w / c.scale});
      }
      for (std::size_t k = 0; k < vars.size(); ++k) sol.x[vars[k]] = res.x[k];
      sol.kkt = kkt_residual(p, sol);
      sol.kkt_residual = sol.kkt.max();
      return sol;
    }
    if (res.status == Status::IterLimit) {
      std::vector<std::vector<Term>> brows;
      std::vector<double> bb, blo, bhi;
      for (std::size_t r : rws) {
        std::vector<Term> row;
        double rhs = p.b[r];
        for (auto* t = p.row_begin(r); t != p.row_end(r); ++t) {
          const auto i = static_cast<std::size_t>(t->var);
          if (fixed[i]) rhs -= t->coef * p.lo[i];
          else row.push_back({local[i], t->coef});
        }
        brows.push_back(std::move(row));
        bb.push_back(rhs);
      }
      for (std::size_t i : vars) {
        blo.push_back(p.lo[i]);
        bhi.push_back(p.hi[i]);
      }
      auto ad = detail::admm_block(bh, bg, blo, bhi, brows, bb, tol, opt.admm_max_iter);
      sol.used_admm = true;
      sol.iterations += ad.iterations;
      iter_limited = iter_limited || !ad.converged;
      for (std::size_t k = 0; k < vars.size(); ++k) {
        sol.x[vars[k]] = ad.x[k];
        sol.lower_duals[vars[k]] = ad.z_lo[k];
        sol.upper_duals[vars[k]] = ad.z_hi[k];
      }
      for (std::size_t k = 0; k < rws.size(); ++k) sol.row_duals[rws[k]] = ad.y_rows[k];
    } else {
      for (std::size_t k = 0; k < vars.size(); ++k) sol.x[vars[k]] = res.x[k];
      for (std::size_t k = 0; k < cons.size(); ++k) {
        const double u = res.mult[k];
        if (u == 0.0) continue;
        const auto& c = cons[k];
        switch (c.kind) {
          case detail::GiConstraint::Row: sol.row_duals[c.source] = u / c.scale; break;
          case detail::GiConstraint::Upper: sol.upper_duals[c.source] = u; break;
          case detail::GiConstraint::Lower: sol.lower_duals[c.source] = u; break;
        }
      }
    }
    for (std::size_t i : vars) local[i] = -1;
  }

  // Clamp roundoff onto the box and attribute the remaining gradient of
  // variables sitting on a bound (or fixed) to the bound multipliers.
  std::vector<double> grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    sol.x[i] = std::clamp(sol.x[i], p.lo[i], p.hi[i]);
    grad[i] = p.h[i] * sol.x[i] + p.g[i];
  }
  for (std::size_t r = 0; r < mrows; ++r) {
    if (sol.row_duals[r] == 0.0) continue;
    for (auto* t = p.row_begin(r); t != p.row_end(r); ++t)
      grad[static_cast<std::size_t>(t->var)] += sol.row_duals[r] * t->coef;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = grad[i] - sol.lower_duals[i] + sol.upper_duals[i];
    const double span = std::max(1.0, std::abs(p.hi[i] - p.lo[i]));
    const bool at_lo = sol.x[i] <= p.lo[i] + 1e-9 * span;
    const bool at_hi = sol.x[i] >= p.hi[i] - 1e-9 * span;
    if (at_lo && gi > 0.0) {
      sol.lower_duals[i] += gi;
    } else if (at_hi && gi < 0.0) {
      sol.upper_duals[i] -= gi;
    }
    if (sol.lower_duals[i] > 0.0 && sol.upper_duals[i] > 0.0) {
      const double common = std::min(sol.lower_duals[i], sol.upper_duals[i]);
      sol.lower_duals[i] -= common;
      sol.upper_duals[i] -= common;
    }
  }

  sol.kkt = kkt_residual(p, sol);
  sol.kkt_residual = sol.kkt.max();
  if (iter_limited) sol.status = Status::IterLimit;
  else sol.status = sol.kkt_residual <= tol ? Status::Optimal : Status::IterLimit;
  return sol;
}

/// Self-describing text dump: a header line, then named sections.
inline void write_problem(std::ostream& os, const QpProblem& p) {
  os.precision(17);
  os << "# crossflow-qp v1: minimize sum h_i/2 x_i^2 + g_i x_i s.t. A x <= b, lo <= x <= hi\n";
  os << "n " << p.n << "\nrows " << p.rows() << "\n";
  auto vec = [&](const char* name, const std::vector<double>& v) {
    os << name;
    for (double x : v) os << ' ' << x;
    os << '\n';
  };
  vec("h", p.h);
  vec("g", p.g);
  vec("lo", p.lo);
  vec("hi", p.hi);
  os << "A_triplets " << p.terms.size() << "\n";
  for (std::size_t r = 0; r < p.rows(); ++r)
    for (auto* t = p.row_begin(r); t != p.row_end(r); ++t)
      os << r << ' ' << t->var << ' ' << t->coef << '\n';
  vec("b", p.b);
}

}  // namespace crossflow::qp
