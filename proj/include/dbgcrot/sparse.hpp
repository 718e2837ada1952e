#pragma once

// Operator side of the solvers: CSR storage, sparse x block products, norms,
// Matrix Market I/O and the convection-diffusion test family.

#include <Eigen/Sparse>

#include <iosfwd>
#include <sstream>
#include <vector>

#include "dbgcrot/dense.hpp"

namespace dbgcrot {

// Compressed sparse row; outerIndexPtr/innerIndexPtr/valuePtr are the
// row offsets, column indices and values.
template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

// n x width block of column vectors. Width 0 is the fully deflated state.
template <typename Scalar>
using BlockVector = Matrix<Scalar>;

template <typename Scalar>
SparseMatrix<Scalar> sparse_from_triplets(Index n, const std::vector<Eigen::Triplet<Scalar>>& entries) {
  if (n < 1) throw UsageError("sparse matrix dimension must be positive");
  for (const auto& t : entries) {
    if (t.row() < 0 || t.row() >= n || t.col() < 0 || t.col() >= n)
      throw UsageError("sparse entry index out of range");
    if (!Eigen::numext::isfinite(Eigen::numext::abs(t.value()))) throw UsageError("sparse entry is not finite");
  }
  SparseMatrix<Scalar> a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());  // duplicates are summed
  a.makeCompressed();
  return a;
}

/// W = A X.
template <typename Scalar, typename Derived>
BlockVector<Scalar> spmm(const SparseMatrix<Scalar>& a, const Eigen::MatrixBase<Derived>& x) {
  if (a.cols() != x.rows()) {
    std::ostringstream msg;
    msg << "spmm: operator is " << a.rows() << "x" << a.cols() << ", block has " << x.rows() << " rows";
    throw UsageError(msg.str());
  }
  BlockVector<Scalar> out(a.rows(), x.cols());
  out.noalias() = a * x.derived();
  return out;
}

template <typename Derived>
RealOf<typename Derived::Scalar> fro_norm(const Eigen::MatrixBase<Derived>& x) {
  return x.norm();
}

template <typename Derived>
RealVector<typename Derived::Scalar> col_norms(const Eigen::MatrixBase<Derived>& x) {
  return x.colwise().norm().transpose();
}

template <typename Scalar>
Matrix<Scalar> densify(const SparseMatrix<Scalar>& a) {
  return Matrix<Scalar>(a);
}

/// Reads a real "coordinate" Matrix Market file (general or symmetric).
/// Symmetric storage is expanded, duplicates are summed. Throws FormatError
/// naming the offending line.
SparseMatrix<double> read_matrix_market(std::istream& in);
SparseMatrix<double> read_matrix_market_file(const std::string& path);

/// Writes "coordinate real general" with round-trip precision.
void write_matrix_market(std::ostream& out, const SparseMatrix<double>& a);

/// 5-point centered-difference discretisation of -Laplace(u) + beta (u_x + u_y)
/// on the unit square with grid x grid interior points and Dirichlet
/// boundary, scaled by h^2 (diagonal 4, neighbours -1 -/+ beta h / 2).
SparseMatrix<double> convection_diffusion(Index grid, double beta);

}  // namespace dbgcrot
