#pragma once

// Small dense kernels: thin QR, one-sided Jacobi SVD, least squares and
// rank revealing. All functions are pure and templated on the scalar type;
// the solvers instantiate them with double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "dbgcrot/errors.hpp"

namespace dbgcrot {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RealOf = typename Eigen::NumTraits<Scalar>::Real;

template <typename Scalar>
using RealVector = Eigen::Matrix<RealOf<Scalar>, Eigen::Dynamic, 1>;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// ||Q^H Q - I||_F.
template <typename Derived>
RealOf<typename Derived::Scalar> orthonormality_defect(const Eigen::MatrixBase<Derived>& q) {
  using Scalar = typename Derived::Scalar;
  if (q.cols() == 0) return 0;
  Matrix<Scalar> gram = q.adjoint() * q;
  gram.diagonal().array() -= Scalar(1);
  return gram.norm();
}

template <typename Scalar>
struct QrResult {
  Matrix<Scalar> q;  // n x s, orthonormal columns
  Matrix<Scalar> r;  // s x s, upper triangular, real non-negative diagonal
};

template <typename Scalar>
struct SvdResult {
  Matrix<Scalar> left_vectors;
  RealVector<Scalar> singular_values;  // non-increasing
  Matrix<Scalar> right_vectors;
  int sweeps = 0;
};

template <typename Scalar>
struct LeastSquaresResult {
  Matrix<Scalar> solution;
  Index rank = 0;
  bool rank_deficient = false;
};

template <typename Scalar>
struct RankReveal {
  Index rank = 0;
  Matrix<Scalar> range_basis;      // n x rank
  Matrix<Scalar> null_directions;  // n x (min(n, s) - rank)
  RealVector<Scalar> sigmas;
};

namespace detail {

template <typename Scalar>
Scalar unit_phase(const Scalar& x) {
  using std::abs;
  const auto mag = abs(x);
  return mag == 0 ? Scalar(1) : x / mag;
}

inline constexpr int kJacobiSweepBudget = 60;
inline constexpr double kSignThreshold = 1e-8;

// Fix the phase so that the first significant entry of every column of `u`
// is real and positive; the matching column of `v` gets the same factor.
template <typename Scalar>
void normalize_signs(Matrix<Scalar>& u, Matrix<Scalar>& v) {
  using std::abs;
  using Eigen::numext::conj;
  for (Index i = 0; i < u.cols(); ++i) {
    Index pivot = -1;
    for (Index t = 0; t < u.rows(); ++t) {
      if (abs(u(t, i)) > kSignThreshold) {
        pivot = t;
        break;
      }
    }
    if (pivot < 0) u.col(i).cwiseAbs().maxCoeff(&pivot);
    const Scalar phase = unit_phase(u(pivot, i));
    if (phase == Scalar(1)) continue;
    u.col(i) *= conj(phase);
    v.col(i) *= conj(phase);
  }
}

// Hestenes one-sided Jacobi on a matrix with rows >= cols. On exit the
// columns of `a` are mutually orthogonal and `a = m * v`.
template <typename Scalar>
int one_sided_jacobi(Matrix<Scalar>& a, Matrix<Scalar>& v) {
  using Real = RealOf<Scalar>;
  using std::abs;
  using Eigen::numext::conj;
  using std::sqrt;
  const Index s = a.cols();
  v = Matrix<Scalar>::Identity(s, s);
  const Real eps = std::numeric_limits<Real>::epsilon();
  const Real tol = eps * static_cast<Real>(std::max<Index>(a.rows(), 1));
  // Couplings below eps^2 ||A||_F^2 are left alone.
  const Real floor = eps * eps * a.squaredNorm();
  for (int sweep = 1; sweep <= kJacobiSweepBudget; ++sweep) {
    bool rotated = false;
    for (Index i = 0; i + 1 < s; ++i) {
      for (Index j = i + 1; j < s; ++j) {
        const Real alpha = a.col(i).squaredNorm();
        const Real beta = a.col(j).squaredNorm();
        const Scalar gamma = a.col(i).dot(a.col(j));
        const Real g = abs(gamma);
        if (g <= floor || g <= tol * sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar phase = gamma / g;
        const Real zeta = (beta - alpha) / (Real(2) * g);
        const Real t = (zeta >= 0 ? Real(1) : Real(-1)) / (abs(zeta) + sqrt(Real(1) + zeta * zeta));
        const Real c = Real(1) / sqrt(Real(1) + t * t);
        const Real sn = c * t;
        a.col(j) *= conj(phase);
        v.col(j) *= conj(phase);
        for (Index r = 0; r < a.rows(); ++r) {
          const Scalar ai = a(r, i);
          const Scalar aj = a(r, j);
          a(r, i) = c * ai - sn * aj;
          a(r, j) = sn * ai + c * aj;
        }
        for (Index r = 0; r < s; ++r) {
          const Scalar vi = v(r, i);
          const Scalar vj = v(r, j);
          v(r, i) = c * vi - sn * vj;
          v(r, j) = sn * vi + c * vj;
        }
      }
    }
    if (!rotated) return sweep;
  }
  std::ostringstream msg;
  msg << "svd: one-sided Jacobi did not converge within " << kJacobiSweepBudget << " sweeps ("
      << a.rows() << "x" << a.cols() << " input)";
  throw NumericError(msg.str());
}

// SVD for rows >= cols. Tall inputs are first reduced to their R factor.
template <typename Scalar>
SvdResult<Scalar> svd_tall(const Matrix<Scalar>& m) {
  using Real = RealOf<Scalar>;
  const Index n = m.rows();
  const Index s = m.cols();
  SvdResult<Scalar> out;
  if (s == 0) {
    out.left_vectors.resize(n, 0);
    out.right_vectors.resize(0, 0);
    out.singular_values.resize(0);
    return out;
  }

  Matrix<Scalar> q;
  Matrix<Scalar> a;
  if (n > s) {
    Eigen::HouseholderQR<Matrix<Scalar>> qr(m);
    q = qr.householderQ() * Matrix<Scalar>::Identity(n, s);
    a = qr.matrixQR().topRows(s).template triangularView<Eigen::Upper>();
  } else {
    a = m;
  }

  Matrix<Scalar> v;
  out.sweeps = one_sided_jacobi(a, v);

  RealVector<Scalar> sigma(s);
  for (Index i = 0; i < s; ++i) sigma(i) = a.col(i).norm();
  std::vector<Index> order(static_cast<std::size_t>(s));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return sigma(x) > sigma(y); });

  Matrix<Scalar> u(s, s);
  Matrix<Scalar> right(s, s);
  out.singular_values.resize(s);
  const Real sigma_max = sigma(order[0]);
  const Real eps = std::numeric_limits<Real>::epsilon();
  std::vector<Index> missing;
  std::vector<bool> filled(static_cast<std::size_t>(s), false);
  for (Index k = 0; k < s; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    out.singular_values(k) = sigma(src);
    right.col(k) = v.col(src);
    if (sigma(src) <= sigma_max * eps * eps || sigma(src) <= std::numeric_limits<Real>::min()) {
      missing.push_back(k);
      continue;
    }
    u.col(k) = a.col(src) / sigma(src);
    // Columns near the roundoff level may still overlap; clean them up and
    // fall back to completion if nothing independent is left.
    if (sigma(src) < sqrt(eps) * sigma_max) {
      for (int pass = 0; pass < 2; ++pass)
        for (Index c = 0; c < k; ++c)
          if (filled[static_cast<std::size_t>(c)]) u.col(k) -= u.col(c) * u.col(c).dot(u.col(k));
      const Real left = u.col(k).norm();
      if (left <= Real(0.5)) {
        missing.push_back(k);
        continue;
      }
      u.col(k) /= left;
    }
    filled[static_cast<std::size_t>(k)] = true;
  }

  // Complete left vectors of (numerically) zero singular values.
  for (Index k : missing) {
    for (Index t = 0; t < s; ++t) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Unit(s, t);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index c = 0; c < s; ++c) {
          if (!filled[static_cast<std::size_t>(c)]) continue;
          w -= u.col(c) * u.col(c).dot(w);
        }
      }
      if (w.norm() > Real(0.5)) {
        u.col(k) = w.normalized();
        filled[static_cast<std::size_t>(k)] = true;
        break;
      }
    }
  }

  out.left_vectors = (n > s) ? Matrix<Scalar>(q * u) : u;
  out.right_vectors = std::move(right);
  normalize_signs(out.left_vectors, out.right_vectors);
  return out;
}

}  // namespace detail

/// Thin Householder QR with a non-negative real R diagonal. Rank deficiency is
/// not an error; R may carry (near) zero diagonal entries.
template <typename Derived>
QrResult<typename Derived::Scalar> qr_thin(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  using Eigen::numext::conj;
  const Index n = m.rows();
  const Index s = m.cols();
  if (s < 1 || n < s) {
    std::ostringstream msg;
    msg << "qr_thin: need rows >= cols >= 1, got " << n << "x" << s;
    throw UsageError(msg.str());
  }
  if (!all_finite(m)) throw UsageError("qr_thin: input has non-finite entries");

  Eigen::HouseholderQR<Matrix<Scalar>> qr(m.derived());
  QrResult<Scalar> out;
  out.q = qr.householderQ() * Matrix<Scalar>::Identity(n, s);
  out.r = qr.matrixQR().topRows(s).template triangularView<Eigen::Upper>();
  for (Index i = 0; i < s; ++i) {
    const Scalar phase = detail::unit_phase(out.r(i, i));
    if (phase == Scalar(1)) continue;
    out.r.row(i) *= conj(phase);
    out.q.col(i) *= phase;
  }
  return out;
}

/// Singular value decomposition M = U diag(sigma) V^H with min(n, s)
/// singular triplets, sigma non-increasing, and the first significant entry
/// of every left vector real and positive.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (!all_finite(m)) throw UsageError("svd: input has non-finite entries");
  if (m.rows() >= m.cols()) return detail::svd_tall<Scalar>(m.derived());
  auto t = detail::svd_tall<Scalar>(Matrix<Scalar>(m.adjoint()));
  SvdResult<Scalar> out;
  out.left_vectors = std::move(t.right_vectors);
  out.right_vectors = std::move(t.left_vectors);
  out.singular_values = std::move(t.singular_values);
  out.sweeps = t.sweeps;
  detail::normalize_signs(out.left_vectors, out.right_vectors);
  return out;
}

/// rank = #{i : sigma_i > tol * sigma_1}.
template <typename Derived>
RankReveal<typename Derived::Scalar> rank_reveal(const Eigen::MatrixBase<Derived>& m,
                                                 RealOf<typename Derived::Scalar> tol) {
  using Scalar = typename Derived::Scalar;
  if (!(tol >= 0)) throw UsageError("rank_reveal: tolerance must be non-negative");
  auto dec = svd(m);
  RankReveal<Scalar> out;
  const Index k = dec.singular_values.size();
  if (k > 0 && dec.singular_values(0) > 0) {
    const auto cut = tol * dec.singular_values(0);
    while (out.rank < k && dec.singular_values(out.rank) > cut) ++out.rank;
  }
  out.range_basis = dec.left_vectors.leftCols(out.rank);
  out.null_directions = dec.left_vectors.rightCols(k - out.rank);
  out.sigmas = std::move(dec.singular_values);
  return out;
}

inline constexpr double kLeastSquaresRankTol = 1e-12;

/// argmin_Y ||G - H Y||_F via Householder QR of H, falling back to the
/// truncated (minimum-norm) SVD solve when H is numerically rank deficient.
template <typename DerivedH, typename DerivedG>
LeastSquaresResult<typename DerivedH::Scalar> least_squares(const Eigen::MatrixBase<DerivedH>& h,
                                                            const Eigen::MatrixBase<DerivedG>& g) {
  using Scalar = typename DerivedH::Scalar;
  using Real = RealOf<Scalar>;
  const Index q = h.rows();
  const Index r = h.cols();
  if (g.rows() != q || q < r) {
    std::ostringstream msg;
    msg << "least_squares: H is " << q << "x" << r << ", G is " << g.rows() << "x" << g.cols();
    throw UsageError(msg.str());
  }
  LeastSquaresResult<Scalar> out;
  if (r == 0) {
    out.solution = Matrix<Scalar>::Zero(0, g.cols());
    return out;
  }

  Eigen::HouseholderQR<Matrix<Scalar>> qr(h.derived());
  const auto diag = qr.matrixQR().diagonal().cwiseAbs();
  const Real dmax = diag.maxCoeff();
  const Real dmin = diag.minCoeff();
  if (dmax > 0 && dmin > Real(kLeastSquaresRankTol) * dmax) {
    Matrix<Scalar> qtg = qr.householderQ().adjoint() * g.derived();
    out.solution = qr.matrixQR()
                       .topLeftCorner(r, r)
                       .template triangularView<Eigen::Upper>()
                       .solve(qtg.topRows(r));
    out.rank = r;
    return out;
  }

  auto dec = svd(h);
  Index rank = 0;
  const Index k = dec.singular_values.size();
  if (k > 0 && dec.singular_values(0) > 0) {
    while (rank < k && dec.singular_values(rank) > Real(kLeastSquaresRankTol) * dec.singular_values(0)) ++rank;
  }
  Matrix<Scalar> coeffs = dec.left_vectors.leftCols(rank).adjoint() * g.derived();
  for (Index i = 0; i < rank; ++i) coeffs.row(i) /= dec.singular_values(i);
  out.solution = dec.right_vectors.leftCols(rank) * coeffs;
  out.rank = rank;
  out.rank_deficient = rank < r;
  return out;
}

}  // namespace dbgcrot
