#pragma once

// Entropic optimal transport between two discrete distributions by
// Sinkhorn-Knopp scaling of the Gibbs kernel K = exp(-C / eps).
//
// The scaling iterations run on K directly while it is representable. If a
// row or column of K underflows to zero (small eps relative to the costs),
// the scalings overflow, or the iterations stall before reaching the
// tolerance, the solver switches to log-domain dual updates warm-started by
// epsilon scaling.

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace fairdet {

template <typename Scalar>
struct SinkhornOptions {
  Scalar epsilon = Scalar(5e-4);
  int max_iter = 500;
  Scalar tol = Scalar(1e-9);
  bool force_log_domain = false;
};

template <typename Scalar>
struct SinkhornResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> plan;
  Scalar cost = 0;            // sum_ij plan_ij * C_ij
  Scalar marginal_error = 0;  // max abs deviation of row and column sums of `plan`
  Scalar residual = 0;        // the same deviation for the last scaling iterate
  int iterations = 0;
  bool converged = false;
  bool log_domain = false;
};

namespace detail {

template <typename Scalar>
Scalar log_sum_exp(const Eigen::Array<Scalar, Eigen::Dynamic, 1>& x) {
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x - m).exp().sum());
}

template <typename Scalar, typename Mat, typename Vec>
Scalar marginal_error(const Mat& plan, const Vec& a, const Vec& b) {
  const Scalar rows = (plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const Scalar cols = (plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

// Log-domain dual iterations on the potentials f, g (warm-started from the
// values passed in). Returns after convergence or `max_iter` sweeps.
template <typename Scalar>
SinkhornResult<Scalar> sinkhorn_log(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& c,
                                    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
                                    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b, Scalar eps, int max_iter,
                                    Scalar tol, Eigen::Array<Scalar, Eigen::Dynamic, 1>& f,
                                    Eigen::Array<Scalar, Eigen::Dynamic, 1>& g) {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = c.rows(), m = c.cols();
  const Array log_a = a.array().log(), log_b = b.array().log();

  SinkhornResult<Scalar> r;
  r.log_domain = true;
  auto build_plan = [&] {
    r.plan.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) r.plan(i, j) = std::exp((f[i] + g[j] - c(i, j)) / eps);
  };
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Array t = (g - c.row(i).transpose().array()) / eps;
      f[i] = eps * (log_a[i] - log_sum_exp<Scalar>(t));
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const Array t = (f - c.col(j).array()) / eps;
      g[j] = eps * (log_b[j] - log_sum_exp<Scalar>(t));
    }
    build_plan();
    r.marginal_error = marginal_error<Scalar>(r.plan, a, b);
    if (r.marginal_error < tol) {
      r.converged = true;
      break;
    }
  }
  r.iterations = std::min(r.iterations, max_iter);
  r.cost = (r.plan.array() * c.array()).sum();
  return r;
}

// Log-domain solve with epsilon scaling: the potentials are carried through
// a geometric schedule from the cost scale down to the target epsilon, which
// avoids the slow contraction of plain iterations at small epsilon.
template <typename Scalar>
SinkhornResult<Scalar> sinkhorn_annealed(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& c,
                                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
                                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b,
                                         const SinkhornOptions<Scalar>& opt) {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Array f = Array::Zero(c.rows()), g = Array::Zero(c.cols());
  int spent = 0;
  Scalar eps = std::max(c.maxCoeff(), opt.epsilon);
  while (eps > opt.epsilon * Scalar(2)) {
    const auto stage = sinkhorn_log<Scalar>(c, a, b, eps, 20, opt.tol, f, g);
    spent += stage.iterations;
    eps /= Scalar(2);
  }
  auto r = sinkhorn_log<Scalar>(c, a, b, opt.epsilon, opt.max_iter, opt.tol, f, g);
  r.iterations += spent;
  return r;
}

// Projects a near-feasible plan onto the transport polytope: rows and
// columns above their targets are scaled down, then the remaining mass is
// added as a rank-one correction (Altschuler, Weed and Rigollet, 2017).
template <typename Scalar>
void round_to_marginals(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& plan,
                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Vector rows = plan.rowwise().sum();
  for (Eigen::Index i = 0; i < plan.rows(); ++i)
    if (rows[i] > a[i]) plan.row(i) *= a[i] / rows[i];
  const Vector cols = plan.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < plan.cols(); ++j)
    if (cols[j] > b[j]) plan.col(j) *= b[j] / cols[j];
  const Vector err_a = (a - plan.rowwise().sum()).cwiseMax(Scalar(0));
  const Vector err_b = (b - plan.colwise().sum().transpose()).cwiseMax(Scalar(0));
  const Scalar mass = err_a.sum();
  if (mass > Scalar(0)) plan += err_a * err_b.transpose() / mass;
}

}  // namespace detail

/// Solves min <P, C> - eps * H(P) subject to P 1 = a, P^T 1 = b.
/// `a` and `b` must be nonnegative and sum to one. The last iterate is
/// rounded onto the exact marginals; the result reports the plain transport
/// cost <P, C> of that plan. `converged` refers to the scaling residual.
template <typename DerivedC, typename DerivedA, typename DerivedB>
SinkhornResult<typename DerivedC::Scalar> sinkhorn(const Eigen::MatrixBase<DerivedC>& cost,
                                                   const Eigen::MatrixBase<DerivedA>& a,
                                                   const Eigen::MatrixBase<DerivedB>& b,
                                                   const SinkhornOptions<typename DerivedC::Scalar>& opt) {
  using Scalar = typename DerivedC::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Matrix c = cost;
  const Vector av = a, bv = b;

  auto finish = [&](SinkhornResult<Scalar> r) {
    r.residual = r.marginal_error;
    detail::round_to_marginals<Scalar>(r.plan, av, bv);
    r.marginal_error = detail::marginal_error<Scalar>(r.plan, av, bv);
    r.cost = (r.plan.array() * c.array()).sum();
    return r;
  };

  if (!opt.force_log_domain) {
    // Scalar std::exp: the vectorized exp clamps large negative arguments
    // instead of underflowing to zero, which would hide the underflow.
    const Matrix k = c.unaryExpr([&](Scalar x) { return std::exp(-x / opt.epsilon); });
    const bool underflow = (k.rowwise().maxCoeff().array() == Scalar(0)).any() ||
                           (k.colwise().maxCoeff().array() == Scalar(0)).any();
    if (!underflow) {
      SinkhornResult<Scalar> r;
      Vector u = Vector::Ones(c.rows()), v = Vector::Ones(c.cols());
      bool blew_up = false;
      for (r.iterations = 1; r.iterations <= opt.max_iter; ++r.iterations) {
        u = av.cwiseQuotient(k * v);
        v = bv.cwiseQuotient(k.transpose() * u);
        if (!u.allFinite() || !v.allFinite()) {
          blew_up = true;
          break;
        }
        r.plan = u.asDiagonal() * k * v.asDiagonal();
        r.marginal_error = detail::marginal_error<Scalar>(r.plan, av, bv);
        if (r.marginal_error < opt.tol) {
          r.converged = true;
          break;
        }
      }
      if (!blew_up) {
        r.iterations = std::min(r.iterations, opt.max_iter);
        if (r.converged) return finish(std::move(r));
        // Stalled: retry with epsilon scaling and keep the better iterate.
        auto alt = detail::sinkhorn_annealed<Scalar>(c, av, bv, opt);
        return finish(alt.marginal_error < r.marginal_error ? std::move(alt) : std::move(r));
      }
    }
  }
  return finish(detail::sinkhorn_annealed<Scalar>(c, av, bv, opt));
}

}  // namespace fairdet
