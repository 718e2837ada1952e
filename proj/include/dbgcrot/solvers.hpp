#pragma once

// Outer machinery: the inner deflated block GMRES solve, the BGCRO outer
// update, FIFO truncation of the outer space and the DBGCROT(m,k) driver,
// plus restarted block GMRES and column-by-column GMRES baselines.

#include <chrono>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "dbgcrot/block_arnoldi.hpp"
#include "dbgcrot/dense.hpp"
#include "dbgcrot/outer_space.hpp"
#include "dbgcrot/sparse.hpp"

namespace dbgcrot {

// Outer updates with ||C_{k+1}||_F <= kStagnationTol ||R_k||_F make no progress.
inline constexpr double kStagnationTol = 1e-14;

enum class StopRule { max_column, frobenius };

inline const char* to_string(StopRule rule) { return rule == StopRule::max_column ? "max-column" : "frobenius"; }

struct SolverConfig {
  Index m = 20;            // inner subspace size (block Arnoldi steps per cycle)
  Index k = 10;            // outer subspace size (retained (U, C) blocks)
  double tol = 1e-8;
  double eps_defl = 1e-8;  // relative deflation tolerance
  Index max_cycles = 500;
  StopRule stop_rule = StopRule::max_column;
  bool deflation = true;   // false: plain QR at every step, no pool
  bool record_sigmas = true;

  void validate() const {
    if (m < 1) throw UsageError("solver config: m must be >= 1");
    if (k < 0) throw UsageError("solver config: k must be >= 0");
    if (!(tol > 0)) throw UsageError("solver config: tol must be > 0");
    if (!(eps_defl >= 0)) throw UsageError("solver config: eps_defl must be >= 0");
    if (max_cycles < 1) throw UsageError("solver config: max_cycles must be >= 1");
  }
};

struct CycleRecord {
  Index cycle = 0;
  double fro_residual = 0;               // ||B - A X||_F, recomputed
  std::vector<double> column_residuals;  // ||(B - A X)(:, j)||_2
  std::vector<double> sigmas;            // singular values of B - A X
  double stop_metric = 0;
  Index inner_steps = 0;
  std::vector<double> inner_residuals;   // least-squares residual after each inner step
  std::vector<DeflationEvent> events;
  double elapsed_ms = 0;

  Index deflation_count() const {
    Index count = 0;
    for (const auto& e : events)
      if (e.action == DeflationAction::deflate || e.action == DeflationAction::outer_rank_drop) ++count;
    return count;
  }
};

struct ConvergenceHistory {
  std::vector<CycleRecord> records;  // records[0] is the initial residual

  Index total_deflations() const {
    Index count = 0;
    for (const auto& r : records) count += r.deflation_count();
    return count;
  }

  Index count(DeflationAction action) const {
    Index n = 0;
    for (const auto& r : records)
      for (const auto& e : r.events)
        if (e.action == action) ++n;
    return n;
  }
};

template <typename Scalar>
struct Solution {
  BlockVector<Scalar> x;
  bool converged = false;
  bool stagnated = false;
  Index cycles_used = 0;
  ConvergenceHistory history;
};

template <typename Derived>
double stop_metric(const Eigen::MatrixBase<Derived>& residual, const Eigen::MatrixBase<Derived>& rhs, StopRule rule) {
  auto ratio = [](double num, double den) {
    if (num == 0) return 0.0;
    return den > 0 ? num / den : std::numeric_limits<double>::infinity();
  };
  if (rule == StopRule::frobenius) return ratio(static_cast<double>(residual.norm()), static_cast<double>(rhs.norm()));
  double worst = 0;
  for (Index j = 0; j < residual.cols(); ++j)
    worst = std::max(worst, ratio(static_cast<double>(residual.col(j).norm()), static_cast<double>(rhs.col(j).norm())));
  return worst;
}

template <typename Scalar>
struct InnerResult {
  InnerBasis<Scalar> basis;      // V_0 .. V_steps
  BlockHessenberg<Scalar> hess;
  Matrix<Scalar> g;              // [V_0 .. V_steps]^H (I - C C^H) R_k
  Matrix<Scalar> y;              // argmin ||g - H_m y||_F
  RealOf<Scalar> inner_res = 0;  // ||g - H_m y||_F
  std::vector<RealOf<Scalar>> step_residuals;
  bool breakdown = false;

  Index steps() const { return hess.steps(); }
};

/// Up to m deflated block Arnoldi steps on (I - C C^H) A started from R_k,
/// followed by the block least-squares solve. A zero residual returns an
/// empty basis.
template <typename Scalar>
InnerResult<Scalar> bgmres_inner(const SparseMatrix<Scalar>& a, const OuterSpace<Scalar>& outer,
                                 const BlockVector<Scalar>& r, Index m, DeflationState<Scalar>& defl) {
  if (m < 1) throw UsageError("bgmres_inner: m must be >= 1");
  if (r.rows() != a.rows()) throw UsageError("bgmres_inner: residual and operator dimensions differ");
  InnerResult<Scalar> out;
  out.hess.outer_width = outer.width();
  const auto r_norm = r.norm();
  if (r_norm == 0) return out;

  BasisList<Scalar> c_bases;
  for (const auto& c : outer.c_blocks) c_bases.push_back(&c);
  const BlockVector<Scalar> pr = project_out(r, c_bases, true).w;

  BlockVector<Scalar> v0 = start_block(outer, pr, r_norm, defl);
  if (v0.cols() == 0) {
    out.inner_res = pr.norm();
    return out;
  }
  out.g = v0.adjoint() * pr;
  out.hess.widths.push_back(v0.cols());
  out.basis.blocks.push_back(std::move(v0));
  defl.residual_scale = out.g.norm();

  for (Index j = 0; j < m; ++j) {
    auto step = arnoldi_step(a, outer, out.basis, defl);
    const bool breakdown = step.breakdown;
    const Index rows = out.g.rows();
    out.g.conservativeResize(rows + step.next.cols(), Eigen::NoChange);
    out.g.bottomRows(step.next.cols()) = step.next.adjoint() * pr;
    append_step(out.basis, out.hess, std::move(step));

    const Matrix<Scalar> h = out.hess.assemble(out.hess.steps());
    auto ls = least_squares(h, out.g);
    out.inner_res = (out.g - h * ls.solution).norm();
    out.y = std::move(ls.solution);
    out.step_residuals.push_back(out.inner_res);
    defl.residual_scale = out.inner_res;
    if (breakdown) {
      out.breakdown = true;
      break;
    }
  }
  return out;
}

template <typename Scalar>
struct CycleUpdate {
  OuterSpace<Scalar> outer;  // with the new block appended, not yet truncated
  BlockVector<Scalar> x;
  BlockVector<Scalar> r;
  bool stagnated = false;
};

/// New outer pair from the inner solution, then the projected residual and
/// solution updates. A rank-deficient C_{k+1} keeps only its range.
template <typename Scalar>
CycleUpdate<Scalar> bgcro_cycle(const SparseMatrix<Scalar>& a, const OuterSpace<Scalar>& outer,
                                const BlockVector<Scalar>& x, const BlockVector<Scalar>& r,
                                const InnerResult<Scalar>& inner, DeflationState<Scalar>& defl) {
  using Real = RealOf<Scalar>;
  CycleUpdate<Scalar> out{outer, x, r, false};
  const Index steps = inner.steps();
  if (steps == 0) {
    out.stagnated = true;
    return out;
  }
  const Index n = a.rows();
  const BlockVector<Scalar> vm = inner.basis.concatenated(steps);

  BlockVector<Scalar> u = vm * inner.y;
  if (outer.width() > 0) u.noalias() -= outer.u_matrix(n) * (inner.hess.coupling(steps) * inner.y);
  // C_{k+1} = A U_{k+1}, equal to V_{m+1} H_m Y_m in exact arithmetic.
  BlockVector<Scalar> c = spmm(a, u);
  if (!(c.norm() > Real(kStagnationTol) * r.norm())) {
    out.stagnated = true;
    return out;
  }

  const Real cut = defl.enabled ? std::max<Real>(defl.tol, Real(kBreakdownTol)) : Real(kBreakdownTol);
  auto dec = svd(c);
  Index rank = 0;
  while (rank < dec.singular_values.size() && dec.singular_values(rank) > cut * dec.singular_values(0)) ++rank;
  if (rank < c.cols()) {
    std::vector<double> dropped;
    for (Index i = rank; i < dec.singular_values.size(); ++i) dropped.push_back(static_cast<double>(dec.singular_values(i)));
    defl.log(steps, DeflationAction::outer_rank_drop, std::move(dropped), c.cols(), rank);
    u = u * dec.right_vectors.leftCols(rank) * dec.singular_values.head(rank).cwiseInverse().asDiagonal();
    c = dec.left_vectors.leftCols(rank);
  }

  // Orthonormalize C against the retained blocks and itself; U follows so
  // that A U = C.
  BasisList<Scalar> c_bases;
  for (const auto& cb : outer.c_blocks) c_bases.push_back(&cb);
  auto orthonormalize = [&] {
    auto fix = project_out(std::move(c), c_bases, true);
    for (std::size_t i = 0; i < outer.u_blocks.size(); ++i) u.noalias() -= outer.u_blocks[i] * fix.coeffs[i];
    auto qr = qr_thin(fix.w);
    u = qr.r.template triangularView<Eigen::Upper>().template solve<Eigen::OnTheRight>(u);
    c = std::move(qr.q);
  };
  orthonormalize();
  // Ill-conditioned C_{k+1}: a second pass starting from A U.
  if (rank == c.cols() && dec.singular_values(rank - 1) * kStabilizeRatio < dec.singular_values(0)) {
    c = spmm(a, u);
    orthonormalize();
  }

  const Matrix<Scalar> coef = c.adjoint() * r;
  out.r.noalias() -= c * coef;
  out.x.noalias() += u * coef;
  out.outer.u_blocks.push_back(std::move(u));
  out.outer.c_blocks.push_back(std::move(c));
  return out;
}

template <typename Scalar>
struct CycleView {
  Index cycle;
  const SparseMatrix<Scalar>& a;
  const BlockVector<Scalar>& b;
  const OuterSpace<Scalar>& outer_before;
  const InnerResult<Scalar>& inner;
  const BlockVector<Scalar>& x_before;
  const BlockVector<Scalar>& r_before;
  const CycleUpdate<Scalar>& update;
};

template <typename Scalar>
using CycleObserver = std::function<void(const CycleView<Scalar>&)>;

namespace detail {

template <typename Scalar>
CycleRecord make_record(Index cycle, const BlockVector<Scalar>& residual, const BlockVector<Scalar>& rhs,
                        const SolverConfig& cfg, std::chrono::steady_clock::time_point start) {
  CycleRecord rec;
  rec.cycle = cycle;
  rec.fro_residual = static_cast<double>(residual.norm());
  const auto cols = col_norms(residual);
  rec.column_residuals.assign(cols.data(), cols.data() + cols.size());
  if (cfg.record_sigmas) {
    const auto sv = svd(residual).singular_values;
    rec.sigmas.assign(sv.data(), sv.data() + sv.size());
  }
  rec.stop_metric = stop_metric(residual, rhs, cfg.stop_rule);
  rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

template <typename Scalar>
void check_problem(const SparseMatrix<Scalar>& a, const BlockVector<Scalar>& b, const BlockVector<Scalar>& x0) {
  if (a.rows() != a.cols()) throw UsageError("operator must be square");
  if (b.rows() != a.rows()) throw UsageError("right-hand side row count differs from operator dimension");
  if (b.cols() < 1) throw UsageError("right-hand side needs at least one column");
  if (x0.rows() != b.rows() || x0.cols() != b.cols()) throw UsageError("initial guess shape differs from right-hand side");
  if (!all_finite(b) || !all_finite(x0)) throw UsageError("right-hand side or initial guess is not finite");
}

}  // namespace detail

/// Deflated block GCROT(m,k): repeats inner solve, outer update and FIFO
/// truncation until the stop rule holds on the recomputed residual.
template <typename Scalar>
Solution<Scalar> dbgcrot_solve(const SparseMatrix<Scalar>& a, const BlockVector<Scalar>& b,
                               const BlockVector<Scalar>& x0, const SolverConfig& cfg,
                               const CycleObserver<Scalar>& observer = {}) {
  cfg.validate();
  detail::check_problem(a, b, x0);
  const auto start = std::chrono::steady_clock::now();

  Solution<Scalar> sol;
  sol.x = x0;
  BlockVector<Scalar> r = b - spmm(a, sol.x);
  sol.history.records.push_back(detail::make_record(0, r, b, cfg, start));
  if (sol.history.records.back().stop_metric <= cfg.tol) {
    sol.converged = true;
    return sol;
  }

  DeflationState<Scalar> defl;
  defl.tol = static_cast<RealOf<Scalar>>(cfg.eps_defl);
  defl.enabled = cfg.deflation;
  defl.max_width = b.cols();
  OuterSpace<Scalar> outer;
  outer.capacity = cfg.k;

  for (Index cycle = 1; cycle <= cfg.max_cycles; ++cycle) {
    defl.cycle = cycle;
    const std::size_t mark = defl.events.size();
    const auto inner = bgmres_inner(a, outer, r, cfg.m, defl);
    auto update = bgcro_cycle(a, outer, sol.x, r, inner, defl);
    if (update.stagnated) {
      sol.stagnated = true;
      break;
    }
    if (observer) observer(CycleView<Scalar>{cycle, a, b, outer, inner, sol.x, r, update});

    outer = truncate_outer(std::move(update.outer), cfg.k);
    sol.x = std::move(update.x);
    r = std::move(update.r);

    const BlockVector<Scalar> true_residual = b - spmm(a, sol.x);
    auto rec = detail::make_record(cycle, true_residual, b, cfg, start);
    rec.inner_steps = inner.steps();
    for (auto v : inner.step_residuals) rec.inner_residuals.push_back(static_cast<double>(v));
    rec.events.assign(defl.events.begin() + static_cast<std::ptrdiff_t>(mark), defl.events.end());
    sol.history.records.push_back(std::move(rec));
    sol.cycles_used = cycle;
    if (sol.history.records.back().stop_metric <= cfg.tol) {
      sol.converged = true;
      break;
    }
  }

  if (!defl.pool.empty()) {
    const std::size_t mark = defl.events.size();
    defl.retire_pool(0);
    auto& last = sol.history.records.back().events;
    last.insert(last.end(), defl.events.begin() + static_cast<std::ptrdiff_t>(mark), defl.events.end());
  }
  return sol;
}

template <typename Scalar>
Solution<Scalar> dbgcrot_solve(const SparseMatrix<Scalar>& a, const BlockVector<Scalar>& b, const SolverConfig& cfg,
                               const CycleObserver<Scalar>& observer = {}) {
  return dbgcrot_solve(a, b, BlockVector<Scalar>(BlockVector<Scalar>::Zero(b.rows(), b.cols())), cfg, observer);
}

/// Restarted block GMRES with the same deflation machinery: DBGCROT with an
/// empty outer space in every cycle.
template <typename Scalar>
Solution<Scalar> bgmres_restarted(const SparseMatrix<Scalar>& a, const BlockVector<Scalar>& b,
                                  const BlockVector<Scalar>& x0, SolverConfig cfg) {
  cfg.k = 0;
  return dbgcrot_solve(a, b, x0, cfg);
}

template <typename Scalar>
Solution<Scalar> bgmres_restarted(const SparseMatrix<Scalar>& a, const BlockVector<Scalar>& b,
                                  const BlockVector<Scalar>& x0, Index m, double tol, Index max_cycles) {
  SolverConfig cfg;
  cfg.m = m;
  cfg.tol = tol;
  cfg.max_cycles = max_cycles;
  return bgmres_restarted(a, b, x0, cfg);
}

/// Restarted single-vector GMRES(m) on every column independently, advanced
/// in lock step so that the history is per cycle. Under the max-column rule
/// a column stops once its own relative residual meets tol.
template <typename Scalar>
Solution<Scalar> gmres_columnwise(const SparseMatrix<Scalar>& a, const BlockVector<Scalar>& b,
                                  const BlockVector<Scalar>& x0, const SolverConfig& cfg) {
  cfg.validate();
  detail::check_problem(a, b, x0);
  const auto start = std::chrono::steady_clock::now();
  const Index p = b.cols();

  struct Column {
    BlockVector<Scalar> x, r;
    DeflationState<Scalar> defl;
    bool done = false;
  };
  std::vector<Column> cols(static_cast<std::size_t>(p));

  Solution<Scalar> sol;
  sol.x = x0;
  BlockVector<Scalar> residual = b - spmm(a, sol.x);
  for (Index j = 0; j < p; ++j) {
    auto& col = cols[static_cast<std::size_t>(j)];
    col.x = sol.x.col(j);
    col.r = residual.col(j);
    col.defl.tol = static_cast<RealOf<Scalar>>(cfg.eps_defl);
    col.defl.enabled = cfg.deflation;
    col.defl.max_width = 1;
  }
  sol.history.records.push_back(detail::make_record(0, residual, b, cfg, start));
  if (sol.history.records.back().stop_metric <= cfg.tol) {
    sol.converged = true;
    return sol;
  }

  const OuterSpace<Scalar> empty;
  for (Index cycle = 1; cycle <= cfg.max_cycles; ++cycle) {
    CycleRecord partial;
    bool progressed = false;
    for (Index j = 0; j < p; ++j) {
      auto& col = cols[static_cast<std::size_t>(j)];
      if (col.done) continue;
      col.defl.cycle = cycle;
      const std::size_t mark = col.defl.events.size();
      const auto inner = bgmres_inner(a, empty, col.r, cfg.m, col.defl);
      auto update = bgcro_cycle(a, empty, col.x, col.r, inner, col.defl);
      partial.events.insert(partial.events.end(), col.defl.events.begin() + static_cast<std::ptrdiff_t>(mark),
                            col.defl.events.end());
      partial.inner_steps += inner.steps();
      if (update.stagnated) {
        col.done = true;
        continue;
      }
      progressed = true;
      col.x = std::move(update.x);
      col.r = std::move(update.r);
      sol.x.col(j) = col.x;
    }
    if (!progressed) {
      sol.stagnated = true;
      break;
    }
    const BlockVector<Scalar> true_residual = b - spmm(a, sol.x);
    auto rec = detail::make_record(cycle, true_residual, b, cfg, start);
    rec.inner_steps = partial.inner_steps;
    rec.events = std::move(partial.events);
    sol.history.records.push_back(std::move(rec));
    sol.cycles_used = cycle;
    if (sol.history.records.back().stop_metric <= cfg.tol) {
      sol.converged = true;
      break;
    }
    if (cfg.stop_rule == StopRule::max_column) {
      for (Index j = 0; j < p; ++j) {
        const auto bj = b.col(j).norm();
        const auto rj = true_residual.col(j).norm();
        if (rj == 0 || (bj > 0 && rj <= cfg.tol * bj)) cols[static_cast<std::size_t>(j)].done = true;
      }
    }
  }
  return sol;
}

}  // namespace dbgcrot
