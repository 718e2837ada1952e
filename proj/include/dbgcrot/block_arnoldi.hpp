#pragma once

// Inner-loop basis construction: block Gram-Schmidt of A V_j against the
// outer C basis and the previous inner blocks, with per-iteration deflation
// of (almost) linearly dependent directions. Deflated directions are kept
// in a FIFO pool and put back into the basis in a later iteration once
// they are no longer negligible.

#include <algorithm>
#include <deque>
#include <vector>

#include "dbgcrot/dense.hpp"
#include "dbgcrot/outer_space.hpp"
#include "dbgcrot/sparse.hpp"

namespace dbgcrot {

// Directions with sigma <= kBreakdownTol * ||A V_j||_F are treated as exact
// zeros whatever the deflation tolerance (happy breakdown).
inline constexpr double kBreakdownTol = 1e-12;
// A kept block whose smallest singular value is below ||W||_F / ratio is
// orthogonalized a second time against all bases.
inline constexpr double kStabilizeRatio = 1e4;
// A pooled direction whose projection onto the complement of the current
// bases has norm below this is already represented there and is retired.
inline constexpr double kRetireTol = 1e-8;

enum class DeflationAction { deflate, reintroduce, retire, breakdown, outer_rank_drop };

inline const char* to_string(DeflationAction action) {
  switch (action) {
    case DeflationAction::deflate: return "deflate";
    case DeflationAction::reintroduce: return "reintroduce";
    case DeflationAction::retire: return "retire";
    case DeflationAction::breakdown: return "breakdown";
    case DeflationAction::outer_rank_drop: return "outer_rank_drop";
  }
  return "unknown";
}

struct DeflationEvent {
  Index cycle = 0;
  Index iteration = 0;  // 0: start block of the cycle; j: j-th Arnoldi step
  DeflationAction action = DeflationAction::deflate;
  std::vector<double> sigmas;
  Index width_before = 0;
  Index width_after = 0;
};

enum class PoolOrigin { residual, arnoldi };

template <typename Scalar>
struct PoolEntry {
  BlockVector<Scalar> direction;  // n x 1, unit norm
  RealOf<Scalar> sigma = 0;       // magnitude of the discarded component
  Index iteration = 0;
  PoolOrigin origin = PoolOrigin::arnoldi;
};

template <typename Scalar>
struct DeflationState {
  RealOf<Scalar> tol = 1e-8;
  bool enabled = true;
  Index max_width = 0;  // block size p; reintroduction never widens past it
  // Frobenius norm of the current inner least-squares residual; the
  // reference scale for pooled directions that came from the residual.
  RealOf<Scalar> residual_scale = 0;
  Index cycle = 0;
  std::deque<PoolEntry<Scalar>> pool;
  std::vector<DeflationEvent> events;

  BlockVector<Scalar> pool_matrix(Index n) const {
    BlockVector<Scalar> out(n, static_cast<Index>(pool.size()));
    Index c = 0;
    for (const auto& e : pool) out.col(c++) = e.direction;
    return out;
  }

  void log(Index iteration, DeflationAction action, std::vector<double> sigmas, Index before, Index after) {
    events.push_back(DeflationEvent{cycle, iteration, action, std::move(sigmas), before, after});
  }

  // Pool entries refer to the basis of one inner loop only.
  void retire_pool(Index iteration) {
    if (pool.empty()) return;
    std::vector<double> sigmas;
    for (const auto& e : pool) sigmas.push_back(static_cast<double>(e.sigma));
    log(iteration, DeflationAction::retire, std::move(sigmas), static_cast<Index>(pool.size()), 0);
    pool.clear();
  }
};

template <typename Scalar>
struct InnerBasis {
  std::vector<BlockVector<Scalar>> blocks;

  Index rows() const { return blocks.empty() ? 0 : blocks.front().rows(); }

  Index total_width() const {
    Index w = 0;
    for (const auto& b : blocks) w += b.cols();
    return w;
  }

  /// [V_0 .. V_{count-1}].
  BlockVector<Scalar> concatenated(Index count) const {
    Index w = 0;
    for (Index i = 0; i < count; ++i) w += blocks[static_cast<std::size_t>(i)].cols();
    BlockVector<Scalar> out(rows(), w);
    Index at = 0;
    for (Index i = 0; i < count; ++i) {
      const auto& b = blocks[static_cast<std::size_t>(i)];
      out.middleCols(at, b.cols()) = b;
      at += b.cols();
    }
    return out;
  }
};

// Ragged block upper Hessenberg matrix. Row block i and column block i both
// have width widths[i].
template <typename Scalar>
struct BlockHessenberg {
  std::vector<Index> widths;                        // V_0 .. V_steps
  std::vector<std::vector<Matrix<Scalar>>> h_cols;  // h_cols[j][i] = H_{i,j}, i <= j + 1
  std::vector<Matrix<Scalar>> b_cols;               // b_cols[j] = C^H A V_j
  Index outer_width = 0;

  Index steps() const { return static_cast<Index>(h_cols.size()); }

  Index width_sum(Index count) const {
    Index w = 0;
    for (Index i = 0; i < count; ++i) w += widths[static_cast<std::size_t>(i)];
    return w;
  }

  /// The leading (steps + 1) x steps block matrix.
  Matrix<Scalar> assemble(Index steps) const {
    Matrix<Scalar> h = Matrix<Scalar>::Zero(width_sum(steps + 1), width_sum(steps));
    Index col = 0;
    for (Index j = 0; j < steps; ++j) {
      const auto& column = h_cols[static_cast<std::size_t>(j)];
      Index row = 0;
      for (std::size_t i = 0; i < column.size(); ++i) {
        h.block(row, col, column[i].rows(), column[i].cols()) = column[i];
        row += column[i].rows();
      }
      col += widths[static_cast<std::size_t>(j)];
    }
    return h;
  }

  /// C^H A [V_0 .. V_{steps-1}].
  Matrix<Scalar> coupling(Index steps) const {
    Matrix<Scalar> b(outer_width, width_sum(steps));
    Index col = 0;
    for (Index j = 0; j < steps; ++j) {
      const auto& bj = b_cols[static_cast<std::size_t>(j)];
      b.middleCols(col, bj.cols()) = bj;
      col += bj.cols();
    }
    return b;
  }
};

template <typename Scalar>
using BasisList = std::vector<const BlockVector<Scalar>*>;

template <typename Scalar>
struct Projection {
  BlockVector<Scalar> w;
  std::vector<Matrix<Scalar>> coeffs;  // coeffs[i] = accumulated bases[i]^H W
  bool reorthogonalized = false;
};

/// Block modified Gram-Schmidt of W against each orthonormal basis in turn,
/// with a second full pass when ||W'||_F < 0.5 ||W||_F (or when forced).
template <typename Scalar>
Projection<Scalar> project_out(BlockVector<Scalar> w, const BasisList<Scalar>& bases, bool force_second_pass = false) {
  Projection<Scalar> out;
  out.coeffs.reserve(bases.size());
  for (const auto* b : bases) {
    if (b->rows() != w.rows()) throw UsageError("project_out: basis and block row counts differ");
    out.coeffs.push_back(Matrix<Scalar>::Zero(b->cols(), w.cols()));
  }
  const auto before = w.norm();
  auto pass = [&] {
    for (std::size_t i = 0; i < bases.size(); ++i) {
      const auto& b = *bases[i];
      if (b.cols() == 0) continue;
      Matrix<Scalar> c = b.adjoint() * w;
      w.noalias() -= b * c;
      out.coeffs[i] += c;
    }
  };
  pass();
  if (force_second_pass || w.norm() < 0.5 * before) {
    pass();
    out.reorthogonalized = true;
  }
  out.w = std::move(w);
  return out;
}

template <typename Scalar>
struct ArnoldiStepResult {
  BlockVector<Scalar> next;             // V_{j+1}; width 0 on breakdown
  std::vector<Matrix<Scalar>> h_col;    // H_{0,j} .. H_{j+1,j}
  Matrix<Scalar> b_col;                 // C^H A V_j
  bool breakdown = false;
};

namespace detail {

template <typename Scalar>
struct KeptFactor {
  BlockVector<Scalar> q;
  Matrix<Scalar> r;  // W' ~ q r
  RealOf<Scalar> sigma_min = 0;
};

template <typename Scalar>
struct Split {
  Index kept = 0;
  RealOf<Scalar> sigma_top = 0;
  KeptFactor<Scalar> factor;
  BlockVector<Scalar> dropped;  // left singular vectors beyond `kept`
  std::vector<double> dropped_sigmas;
};

// Splits a projected block into its kept orthonormal factor and the deflated
// directions. Full-rank blocks use the plain thin QR.
template <typename Scalar>
Split<Scalar> split_block(const BlockVector<Scalar>& wp, RealOf<Scalar> floor, const DeflationState<Scalar>& defl) {
  using Real = RealOf<Scalar>;
  const Index n = wp.rows();
  const Index width = wp.cols();
  Split<Scalar> s;
  RankReveal<Scalar> rr;
  if (defl.enabled) {
    rr = rank_reveal(wp, defl.tol);
    s.sigma_top = rr.sigmas.size() > 0 ? rr.sigmas(0) : Real(0);
    while (s.kept < rr.rank && rr.sigmas(s.kept) > floor) ++s.kept;
  } else {
    s.sigma_top = wp.norm();
    s.kept = s.sigma_top > floor ? width : 0;
  }

  if (s.kept == width) {
    auto qr = qr_thin(wp);
    s.factor.sigma_min = svd(qr.r).singular_values(width - 1);
    s.factor.q = std::move(qr.q);
    s.factor.r = std::move(qr.r);
    return s;
  }

  BlockVector<Scalar> left(n, rr.range_basis.cols() + rr.null_directions.cols());
  left << rr.range_basis, rr.null_directions;
  s.factor.q = left.leftCols(s.kept);
  s.factor.r = s.factor.q.adjoint() * wp;
  s.factor.sigma_min = s.kept > 0 ? rr.sigmas(s.kept - 1) : Real(0);
  s.dropped = left.rightCols(left.cols() - s.kept);
  for (Index i = s.kept; i < rr.sigmas.size(); ++i) s.dropped_sigmas.push_back(static_cast<double>(rr.sigmas(i)));
  return s;
}

// Adds freshly deflated directions to the pool, orthogonalized against all
// current bases and the existing pool.
template <typename Scalar>
void pool_directions(const BlockVector<Scalar>& dropped, const std::vector<double>& sigmas, BasisList<Scalar> bases,
                     const BlockVector<Scalar>& kept, Index iteration, PoolOrigin origin,
                     DeflationState<Scalar>& defl) {
  const Index n = dropped.rows();
  BlockVector<Scalar> pooled = defl.pool_matrix(n);
  bases.push_back(&kept);
  bases.push_back(&pooled);
  for (Index t = 0; t < dropped.cols(); ++t) {
    auto pd = project_out(BlockVector<Scalar>(dropped.col(t)), bases, true);
    const auto nu = pd.w.norm();
    const auto sigma = static_cast<RealOf<Scalar>>(sigmas[static_cast<std::size_t>(t)]);
    if (nu <= kRetireTol) {
      defl.log(iteration, DeflationAction::retire, {static_cast<double>(sigma)}, 1, 0);
      continue;
    }
    BlockVector<Scalar> dir = pd.w / nu;
    pooled.conservativeResize(Eigen::NoChange, pooled.cols() + 1);
    pooled.col(pooled.cols() - 1) = dir;
    defl.pool.push_back(PoolEntry<Scalar>{std::move(dir), sigma, iteration, origin});
  }
}

}  // namespace detail

/// Orthonormal first block V_0 of an inner loop from the residual R_k,
/// projected against the outer C basis, with initial deflation. Returns an
/// n x 0 block when the projected residual vanishes.
template <typename Scalar>
BlockVector<Scalar> start_block(const OuterSpace<Scalar>& outer, const BlockVector<Scalar>& projected_residual,
                                RealOf<Scalar> residual_norm, DeflationState<Scalar>& defl) {
  const Index n = projected_residual.rows();
  const Index width = projected_residual.cols();
  defl.retire_pool(0);
  if (defl.max_width == 0) defl.max_width = width;
  defl.residual_scale = projected_residual.norm();
  const RealOf<Scalar> floor = kBreakdownTol * residual_norm;
  if (width == 0 || !(defl.residual_scale > floor)) return BlockVector<Scalar>(n, 0);

  auto s = detail::split_block(projected_residual, floor, defl);
  BasisList<Scalar> bases;
  for (const auto& c : outer.c_blocks) bases.push_back(&c);
  if (s.kept > 0 && s.factor.sigma_min * kStabilizeRatio < residual_norm) {
    auto fix = project_out(s.factor.q, bases, true);
    s.factor.q = qr_thin(fix.w).q;
  }
  if (s.kept < width) {
    defl.log(0, DeflationAction::deflate, s.dropped_sigmas, width, s.kept);
    detail::pool_directions(s.dropped, s.dropped_sigmas, bases, s.factor.q, 0, PoolOrigin::residual, defl);
  }
  return std::move(s.factor.q);
}

/// One inner iteration: W = A V_j, orthogonalized against C then V_0..V_j,
/// split into the kept block V_{j+1} and deflated directions, followed by
/// reintroduction of pooled directions while V_{j+1} is narrower than the
/// block size. H_{j+1,j} = V_{j+1}^H W'.
template <typename Scalar>
ArnoldiStepResult<Scalar> arnoldi_step(const SparseMatrix<Scalar>& a, const OuterSpace<Scalar>& outer,
                                       const InnerBasis<Scalar>& basis, DeflationState<Scalar>& defl) {
  using Real = RealOf<Scalar>;
  if (basis.blocks.empty()) throw UsageError("arnoldi_step: inner basis is empty");
  const auto& vj = basis.blocks.back();
  if (vj.cols() == 0) throw UsageError("arnoldi_step: last block is empty after breakdown");
  const Index iteration = static_cast<Index>(basis.blocks.size());
  const Index n = vj.rows();

  BlockVector<Scalar> w = spmm(a, vj);
  const Real scale = w.norm();
  BasisList<Scalar> bases;
  for (const auto& c : outer.c_blocks) bases.push_back(&c);
  for (const auto& v : basis.blocks) bases.push_back(&v);
  auto proj = project_out(std::move(w), bases);
  const auto& wp = proj.w;
  const Index width = wp.cols();
  const Real floor = kBreakdownTol * scale;

  auto s = detail::split_block(wp, floor, defl);
  auto& f = s.factor;
  if (s.kept > 0 && f.sigma_min * kStabilizeRatio < scale) {
    auto fix = project_out(f.q, bases, true);
    auto qr = qr_thin(fix.w);
    for (std::size_t i = 0; i < bases.size(); ++i) proj.coeffs[i] += fix.coeffs[i] * f.r;
    f.r = qr.r * f.r;
    f.q = std::move(qr.q);
  }
  if (s.kept == 0 && f.q.cols() == 0) {
    f.q.resize(n, 0);
    f.r.resize(0, width);
  }
  // kept == 0 means W' vanished to roundoff: a breakdown, not a deflation.
  const bool deflated = defl.enabled && s.kept > 0 && s.kept < width;
  if (deflated) defl.log(iteration, DeflationAction::deflate, s.dropped_sigmas, width, s.kept);

  if (defl.enabled && !defl.pool.empty() && f.q.cols() < defl.max_width) {
    const Real arnoldi_cut = std::max(defl.tol * s.sigma_top, floor);
    const Real residual_cut = defl.tol * defl.residual_scale;
    BasisList<Scalar> all = bases;
    all.push_back(&f.q);
    for (auto it = defl.pool.begin(); it != defl.pool.end() && f.q.cols() < defl.max_width;) {
      auto pd = project_out(BlockVector<Scalar>(it->direction), all, true);
      const Real nu = pd.w.norm();
      if (nu <= kRetireTol) {
        defl.log(iteration, DeflationAction::retire, {static_cast<double>(it->sigma)}, 1, 0);
        it = defl.pool.erase(it);
        continue;
      }
      const Real cut = it->origin == PoolOrigin::residual ? residual_cut : arnoldi_cut;
      if (!(it->sigma * nu > cut)) {
        ++it;
        continue;
      }
      const Index before = f.q.cols();
      f.q.conservativeResize(Eigen::NoChange, before + 1);
      f.q.col(before) = pd.w / nu;
      f.r.conservativeResize(before + 1, Eigen::NoChange);
      f.r.row(before) = f.q.col(before).adjoint() * wp;
      defl.log(iteration, DeflationAction::reintroduce, {static_cast<double>(it->sigma)}, before, before + 1);
      it = defl.pool.erase(it);
    }
  }

  if (deflated)
    detail::pool_directions(s.dropped, s.dropped_sigmas, bases, f.q, iteration, PoolOrigin::arnoldi, defl);

  ArnoldiStepResult<Scalar> out;
  out.breakdown = f.q.cols() == 0;
  if (out.breakdown) defl.log(iteration, DeflationAction::breakdown, {static_cast<double>(s.sigma_top)}, width, 0);

  const std::size_t outer_blocks = outer.c_blocks.size();
  out.b_col.resize(outer.width(), width);
  Index row = 0;
  for (std::size_t i = 0; i < outer_blocks; ++i) {
    out.b_col.middleRows(row, proj.coeffs[i].rows()) = proj.coeffs[i];
    row += proj.coeffs[i].rows();
  }
  for (std::size_t i = outer_blocks; i < bases.size(); ++i) out.h_col.push_back(std::move(proj.coeffs[i]));
  out.h_col.push_back(std::move(f.r));
  out.next = std::move(f.q);
  return out;
}

template <typename Scalar>
void append_step(InnerBasis<Scalar>& basis, BlockHessenberg<Scalar>& hess, ArnoldiStepResult<Scalar> step) {
  hess.widths.push_back(step.next.cols());
  hess.h_cols.push_back(std::move(step.h_col));
  hess.b_cols.push_back(std::move(step.b_col));
  basis.blocks.push_back(std::move(step.next));
}

/// ||(I - C C^H) A V_m - V_{m+1} H_m||_F / ||A V_m||_F.
template <typename Scalar>
RealOf<Scalar> assembled_relation_residual(const SparseMatrix<Scalar>& a, const OuterSpace<Scalar>& outer,
                                           const InnerBasis<Scalar>& basis, const BlockHessenberg<Scalar>& hess) {
  const Index steps = hess.steps();
  if (steps == 0) return 0;
  const BlockVector<Scalar> vm = basis.concatenated(steps);
  const BlockVector<Scalar> vm1 = basis.concatenated(steps + 1);
  const BlockVector<Scalar> avm = spmm(a, vm);
  BlockVector<Scalar> lhs = avm;
  if (outer.width() > 0) {
    const BlockVector<Scalar> c = outer.c_matrix(a.rows());
    lhs.noalias() -= c * (c.adjoint() * avm);
  }
  const auto denom = avm.norm();
  const auto defect = (lhs - vm1 * hess.assemble(steps)).norm();
  return denom > 0 ? defect / denom : defect;
}

}  // namespace dbgcrot
