#pragma once

// Brute-force references for tests. Shares only the dense kernels with the
// solvers; nothing here goes through block_arnoldi or solvers.

#include <cmath>
#include <vector>

#include "dbgcrot/dense.hpp"
#include "dbgcrot/errors.hpp"

namespace dbgcrot::oracle {

inline constexpr Index kDenseLimit = 200;

/// X* = X0 + basis Z*, Z* = argmin ||B - A X0 - A basis Z||_F.
template <typename Scalar>
Matrix<Scalar> dense_global_min(const Matrix<Scalar>& a, const Matrix<Scalar>& b, const Matrix<Scalar>& x0,
                                const Matrix<Scalar>& basis) {
  if (a.rows() > kDenseLimit) throw UsageError("dense_global_min: dimension above the dense oracle limit");
  if (a.rows() != a.cols() || b.rows() != a.rows() || x0.rows() != a.rows() || x0.cols() != b.cols())
    throw UsageError("dense_global_min: dimension mismatch");
  if (basis.cols() == 0) return x0;
  if (basis.rows() != a.rows()) throw UsageError("dense_global_min: basis row count differs");
  const Matrix<Scalar> ab = a * basis;
  const Matrix<Scalar> r0 = b - a * x0;
  return x0 + basis * least_squares(ab, r0).solution;
}

template <typename Scalar>
struct GmresReference {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
  std::vector<RealOf<Scalar>> residuals;  // after every Arnoldi step, over all restarts
  std::vector<Index> steps_per_cycle;
  bool converged = false;
};

/// Textbook restarted GMRES(m): Arnoldi with two Gram-Schmidt passes, Givens
/// rotations on the Hessenberg matrix. A restart cycle ends after m steps or
/// when h_{j+1,j} <= 1e-12 ||A v_j||; the tolerance is tested between cycles
/// on the recomputed residual.
template <typename Scalar, typename Operator>
GmresReference<Scalar> gmres_reference(const Operator& a, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b, Index m,
                                       RealOf<Scalar> tol, Index max_restarts) {
  using Real = RealOf<Scalar>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using std::abs;
  using Eigen::numext::conj;
  using std::sqrt;
  const Index n = b.size();
  GmresReference<Scalar> out;
  out.x = Vector::Zero(n);
  const Real b_norm = b.norm();
  Vector r = b;
  for (Index restart = 0; restart < max_restarts; ++restart) {
    const Real beta = r.norm();
    if (beta == 0 || beta <= tol * b_norm) {
      out.converged = true;
      return out;
    }
    Matrix<Scalar> v = Matrix<Scalar>::Zero(n, m + 1);
    Matrix<Scalar> h = Matrix<Scalar>::Zero(m + 1, m);
    std::vector<Real> cs(static_cast<std::size_t>(m));
    std::vector<Scalar> sn(static_cast<std::size_t>(m));
    Vector g = Vector::Zero(m + 1);
    g(0) = beta;
    v.col(0) = r / beta;
    Index steps = 0;
    for (Index j = 0; j < m; ++j) {
      Vector w = a * v.col(j);
      const Real w_norm = w.norm();
      for (int pass = 0; pass < 2; ++pass) {
        for (Index i = 0; i <= j; ++i) {
          const Scalar hij = v.col(i).dot(w);
          h(i, j) += hij;
          w -= hij * v.col(i);
        }
      }
      h(j + 1, j) = w.norm();
      const bool breakdown = abs(h(j + 1, j)) <= Real(1e-12) * w_norm;
      if (!breakdown) v.col(j + 1) = w / h(j + 1, j);
      for (Index i = 0; i < j; ++i) {
        const Scalar t = cs[i] * h(i, j) + sn[i] * h(i + 1, j);
        h(i + 1, j) = -conj(sn[i]) * h(i, j) + cs[i] * h(i + 1, j);
        h(i, j) = t;
      }
      const Real a0 = abs(h(j, j));
      const Real a1 = abs(h(j + 1, j));
      const Real rho = sqrt(a0 * a0 + a1 * a1);
      if (rho == 0) {
        cs[j] = 1;
        sn[j] = 0;
      } else if (a0 == 0) {
        cs[j] = 0;
        sn[j] = conj(h(j + 1, j)) / a1;
      } else {
        cs[j] = a0 / rho;
        sn[j] = (h(j, j) / a0) * conj(h(j + 1, j)) / rho;
      }
      h(j, j) = cs[j] * h(j, j) + sn[j] * h(j + 1, j);
      h(j + 1, j) = 0;
      g(j + 1) = -conj(sn[j]) * g(j);
      g(j) = cs[j] * g(j);
      out.residuals.push_back(abs(g(j + 1)));
      ++steps;
      if (breakdown) break;
    }
    const Vector y = h.topLeftCorner(steps, steps).template triangularView<Eigen::Upper>().solve(g.head(steps));
    out.x += v.leftCols(steps) * y;
    r = b - a * out.x;
    out.steps_per_cycle.push_back(steps);
  }
  out.converged = r.norm() <= tol * b_norm;
  return out;
}

}  // namespace dbgcrot::oracle
