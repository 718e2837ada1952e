#include <doctest.h>

#include "dbgcrot/oracle.hpp"
#include "dbgcrot/solvers.hpp"
#include "test_util.hpp"

using namespace dbgcrot;
using dbgcrot::testing::random_matrix;

namespace {

SolverConfig config(Index m, Index k, double tol = 1e-8) {
  SolverConfig cfg;
  cfg.m = m;
  cfg.k = k;
  cfg.tol = tol;
  return cfg;
}

std::vector<double> fro_history(const Solution<double>& sol) {
  std::vector<double> out;
  for (const auto& r : sol.history.records) out.push_back(r.fro_residual);
  return out;
}

}  // namespace

TEST_CASE("identity operator converges in one cycle") {
  std::mt19937_64 gen(1);
  const Matrix<double> b = random_matrix(20, 3, gen);
  auto sol = dbgcrot_solve(testing::identity(20), b, config(5, 2));
  CHECK(sol.converged);
  CHECK(sol.cycles_used == 1);
  CHECK((sol.x - b).norm() <= 1e-12 * b.norm());
  auto base = bgmres_restarted(testing::identity(20), b, Matrix<double>(Matrix<double>::Zero(20, 3)), 5, 1e-8, 10);
  CHECK(base.converged);
  CHECK(base.cycles_used == 1);
}

TEST_CASE("zero right-hand side and exact warm start need no cycles") {
  std::mt19937_64 gen(2);
  const auto a = testing::random_sparse(15, 0.3, gen, 5.0);
  auto zero = dbgcrot_solve(a, Matrix<double>(Matrix<double>::Zero(15, 2)), config(4, 2));
  CHECK(zero.converged);
  CHECK(zero.cycles_used == 0);
  CHECK(zero.x.norm() == 0.0);

  const Matrix<double> x = random_matrix(15, 2, gen);
  const Matrix<double> b = densify(a) * x;
  auto warm = dbgcrot_solve(a, b, x, config(4, 2));
  CHECK(warm.converged);
  CHECK(warm.cycles_used == 0);
  CHECK(warm.history.records.size() == 1);
}

TEST_CASE("single right-hand side matches textbook GMRES") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 30;
    const auto a = testing::shifted_dense(n, 12.0, gen);
    const Matrix<double> b = random_matrix(n, 1, gen);
    SolverConfig cfg = config(6, 0, 1e-10);
    cfg.eps_defl = 0.0;
    auto sol = dbgcrot_solve(a, b, cfg);
    const Eigen::VectorXd bv = b.col(0);
    auto ref = oracle::gmres_reference<double>(a, bv, 6, 1e-10, 500);
    REQUIRE(sol.converged);
    REQUIRE(ref.converged);

    std::vector<double> ours;
    for (const auto& rec : sol.history.records)
      ours.insert(ours.end(), rec.inner_residuals.begin(), rec.inner_residuals.end());
    REQUIRE(ours.size() == ref.residuals.size());
    for (std::size_t i = 0; i < ours.size(); ++i)
      CHECK(std::abs(ours[i] - ref.residuals[i]) <= 1e-10 * bv.norm());
    CHECK(sol.cycles_used == static_cast<Index>(ref.steps_per_cycle.size()));
  }
}

TEST_CASE("cycle invariants on random problems") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 12; ++trial) {
    const Index n = 40 + 5 * (trial % 3);
    const Index p = 1 + trial % 4;
    const auto a = testing::random_sparse(n, 0.15, gen, 4.0);
    const Matrix<double> dense = densify(a);
    const Matrix<double> b = random_matrix(n, p, gen);
    const double a_norm = dense.norm();
    Index cycles_seen = 0;

    auto observer = [&](const CycleView<double>& v) {
      ++cycles_seen;
      const auto& up = v.update;
      const Matrix<double> c = up.outer.c_matrix(n);
      const Matrix<double> u = up.outer.u_matrix(n);
      CHECK(orthonormality_defect(c) <= 1e-10);
      CHECK((dense * u - c).norm() <= 1e-10 * a_norm * std::max(1.0, u.norm()));
      CHECK((c.transpose() * up.r).norm() <= 1e-10 * b.norm());

      // The inner least-squares residual is the projected residual.
      const Index steps = v.inner.steps();
      const Matrix<double> vm = v.inner.basis.concatenated(steps);
      const Matrix<double> c_old = v.outer_before.c_matrix(n);
      Matrix<double> proj = v.r_before - dense * vm * v.inner.y;
      proj -= c_old * (c_old.transpose() * proj);
      CHECK(std::abs(proj.norm() - v.inner.inner_res) <= 1e-10 * b.norm());

      // Orthogonal projection: ||R_{k+1}||^2 + ||C^H R_k||^2 = ||R_k||^2.
      const Matrix<double>& c_new = up.outer.c_blocks.back();
      const double lhs = up.r.squaredNorm() + (c_new.transpose() * v.r_before).squaredNorm();
      CHECK(lhs == doctest::Approx(v.r_before.squaredNorm()).epsilon(1e-10));

      // Recursively updated residual against the recomputed one.
      CHECK((up.r - (v.b - dense * up.x)).norm() <= 1e-8 * b.norm());
    };
    auto sol = dbgcrot_solve<double>(a, b, config(5, 3), observer);
    CHECK(sol.converged);
    CHECK(cycles_seen == sol.cycles_used);
    const auto fro = fro_history(sol);
    for (std::size_t i = 1; i < fro.size(); ++i) CHECK(fro[i] <= fro[i - 1] + 1e-12 * b.norm());
  }
}

TEST_CASE("outer update attains the dense global minimum") {
  std::mt19937_64 gen(5);
  const Index n = 40;
  const auto a = testing::random_sparse(n, 0.2, gen, 3.0);
  const Matrix<double> dense = densify(a);
  const Matrix<double> b = random_matrix(n, 2, gen);
  int checked = 0;
  auto observer = [&](const CycleView<double>& v) {
    const Index steps = v.inner.steps();
    const Matrix<double> u = v.outer_before.u_matrix(n);
    const Matrix<double> vm = v.inner.basis.concatenated(steps);
    Matrix<double> basis(n, u.cols() + vm.cols());
    basis << u, vm;
    const Matrix<double> best = oracle::dense_global_min(dense, v.b, v.x_before, basis);
    const double oracle_res = (v.b - dense * best).norm();
    const double solver_res = (v.b - dense * v.update.x).norm();
    const double floor = testing::residual_floor(dense, v.b, v.update.x);
    CHECK(std::abs(solver_res - oracle_res) <= 1e-9 * oracle_res + floor);
    ++checked;
  };
  auto sol = dbgcrot_solve<double>(a, b, config(5, 2, 1e-10), observer);
  CHECK(sol.converged);
  CHECK(checked >= 3);
}

TEST_CASE("truncate_outer examples") {
  std::mt19937_64 gen(6);
  const auto a = testing::random_sparse(20, 0.3, gen, 5.0);
  const auto outer = testing::random_outer(a, {2, 1, 2}, gen);
  const Matrix<double> third = outer.c_blocks[2];

  auto cut = truncate_outer(outer, 2);
  CHECK(cut.block_count() == 2);
  CHECK(cut.width() == 3);
  CHECK(cut.c_blocks.back() == third);
  CHECK(cut.capacity == 2);
  CHECK(orthonormality_defect(cut.c_matrix(20)) <= 1e-12);
  CHECK((densify(a) * cut.u_matrix(20) - cut.c_matrix(20)).norm() <= 1e-10);

  auto same = truncate_outer(outer, 3);
  CHECK(same.block_count() == 3);
  CHECK(truncate_outer(outer, 0).block_count() == 0);
  CHECK_THROWS_AS(truncate_outer(outer, -1), UsageError);
}

TEST_CASE("outer space never exceeds k blocks") {
  std::mt19937_64 gen(7);
  const auto a = convection_diffusion(12, 20.0);
  const Matrix<double> b = random_matrix(a.rows(), 2, gen);
  Index most = 0;
  auto observer = [&](const CycleView<double>& v) { most = std::max(most, v.outer_before.block_count()); };
  auto sol = dbgcrot_solve<double>(a, b, config(4, 2), observer);
  CHECK(sol.converged);
  CHECK(most == 2);
}

TEST_CASE("convection-diffusion 32x32 converges monotonically") {
  std::mt19937_64 gen(8);
  const auto a = convection_diffusion(32, 10.0);
  const Matrix<double> b = random_matrix(a.rows(), 4, gen);
  auto sol = dbgcrot_solve(a, b, config(20, 10));
  REQUIRE(sol.converged);
  const auto fro = fro_history(sol);
  for (std::size_t i = 1; i < fro.size(); ++i) CHECK(fro[i] <= fro[i - 1]);
  const Matrix<double> r = b - densify(a) * sol.x;
  CHECK(stop_metric(r, b, StopRule::max_column) <= 1e-8);
  CHECK(sol.history.records.back().sigmas.size() == 4);
}

TEST_CASE("nearly dependent right-hand sides deflate and converge") {
  std::mt19937_64 gen(9);
  const auto a = convection_diffusion(16, 10.0);
  const Index n = a.rows();
  Matrix<double> b = random_matrix(n, 4, gen);
  b.col(1) = b.col(0) + 1e-10 * random_matrix(n, 1, gen).normalized();
  auto sol = dbgcrot_solve(a, b, config(10, 4));
  CHECK(sol.converged);
  CHECK(sol.history.count(DeflationAction::deflate) >= 1);
  CHECK(sol.history.total_deflations() >= 1);
  const Matrix<double> r = b - densify(a) * sol.x;
  CHECK(stop_metric(r, b, StopRule::max_column) <= 1e-8);
}

TEST_CASE("k = 0 is restarted block GMRES") {
  std::mt19937_64 gen(10);
  const auto a = convection_diffusion(10, 5.0);
  const Matrix<double> b = random_matrix(a.rows(), 3, gen);
  const Matrix<double> x0 = Matrix<double>::Zero(a.rows(), 3);
  SolverConfig cfg = config(6, 0);
  auto one = dbgcrot_solve(a, b, x0, cfg);
  cfg.k = 5;
  auto two = bgmres_restarted(a, b, x0, cfg);
  CHECK(fro_history(one) == fro_history(two));
  CHECK(one.x == two.x);
}

TEST_CASE("deflation off equals eps_defl = 0 on a well-conditioned problem") {
  std::mt19937_64 gen(11);
  const auto a = testing::random_sparse(50, 0.1, gen, 6.0);
  const Matrix<double> b = random_matrix(50, 3, gen);
  SolverConfig cfg = config(5, 2, 1e-10);
  cfg.eps_defl = 0.0;
  auto zero = dbgcrot_solve(a, b, cfg);
  cfg.deflation = false;
  auto off = dbgcrot_solve(a, b, cfg);
  const auto f0 = fro_history(zero);
  const auto f1 = fro_history(off);
  REQUIRE(f0.size() == f1.size());
  for (std::size_t i = 0; i < f0.size(); ++i) CHECK(std::abs(f0[i] - f1[i]) <= 1e-12 * b.norm());
  CHECK((zero.x - off.x).norm() <= 1e-12 * zero.x.norm());
}

TEST_CASE("singular values of the true residual do not grow") {
  std::mt19937_64 gen(12);
  const auto a = convection_diffusion(16, 15.0);
  const Matrix<double> b = random_matrix(a.rows(), 4, gen);
  auto sol = dbgcrot_solve(a, b, config(8, 4));
  CHECK(sol.converged);
  const auto& recs = sol.history.records;
  const double sigma1 = recs.front().sigmas.front();
  for (std::size_t c = 1; c < recs.size(); ++c)
    for (std::size_t i = 0; i < 4; ++i) CHECK(recs[c].sigmas[i] <= recs[c - 1].sigmas[i] + 1e-10 * sigma1);
}

TEST_CASE("stop rules") {
  Matrix<double> r(2, 2), b(2, 2);
  r << 1, 0, 0, 3;
  b << 2, 0, 0, 4;
  CHECK(stop_metric(r, b, StopRule::max_column) == doctest::Approx(0.75));
  CHECK(stop_metric(r, b, StopRule::frobenius) == doctest::Approx(std::sqrt(10.0) / std::sqrt(20.0)));
  Matrix<double> zero_b = b;
  zero_b.col(0).setZero();
  CHECK(std::isinf(stop_metric(r, zero_b, StopRule::max_column)));
  r.col(0).setZero();
  CHECK(stop_metric(r, zero_b, StopRule::max_column) == doctest::Approx(0.75));

  std::mt19937_64 gen(13);
  const auto a = convection_diffusion(10, 5.0);
  Matrix<double> rhs = random_matrix(a.rows(), 2, gen);
  rhs.col(1) *= 1e-4;
  SolverConfig cfg = config(5, 2, 1e-6);
  cfg.stop_rule = StopRule::frobenius;
  auto fro = dbgcrot_solve(a, rhs, cfg);
  cfg.stop_rule = StopRule::max_column;
  auto col = dbgcrot_solve(a, rhs, cfg);
  CHECK(fro.converged);
  CHECK(col.converged);
  CHECK(col.cycles_used >= fro.cycles_used);
  const Matrix<double> r_col = rhs - densify(a) * col.x;
  CHECK(r_col.col(1).norm() <= 1e-6 * rhs.col(1).norm());
}

TEST_CASE("max_cycles exhaustion keeps the full history") {
  std::mt19937_64 gen(14);
  const auto a = convection_diffusion(16, 10.0);
  const Matrix<double> b = random_matrix(a.rows(), 2, gen);
  SolverConfig cfg = config(2, 1, 1e-12);
  cfg.max_cycles = 3;
  auto sol = dbgcrot_solve(a, b, cfg);
  CHECK_FALSE(sol.converged);
  CHECK(sol.cycles_used == 3);
  CHECK(sol.history.records.size() == 4);
}

TEST_CASE("column-wise GMRES baseline") {
  std::mt19937_64 gen(15);
  const auto a = convection_diffusion(12, 10.0);
  const Matrix<double> b = random_matrix(a.rows(), 3, gen);
  auto sol = gmres_columnwise(a, b, Matrix<double>(Matrix<double>::Zero(a.rows(), 3)), config(10, 0));
  CHECK(sol.converged);
  const Matrix<double> r = b - densify(a) * sol.x;
  CHECK(stop_metric(r, b, StopRule::max_column) <= 1e-8);
  for (Index j = 0; j < 3; ++j) {
    const Eigen::VectorXd bj = b.col(j);
    auto ref = oracle::gmres_reference<double>(a, bj, 10, 1e-8, 500);
    CHECK(ref.converged);
  }
}

TEST_CASE("solver argument checks") {
  const auto a = testing::identity(4);
  const Matrix<double> b = Matrix<double>::Ones(4, 2);
  SolverConfig cfg;
  cfg.m = 0;
  CHECK_THROWS_AS(dbgcrot_solve(a, b, cfg), UsageError);
  cfg = SolverConfig{};
  cfg.k = -1;
  CHECK_THROWS_AS(dbgcrot_solve(a, b, cfg), UsageError);
  cfg = SolverConfig{};
  cfg.tol = 0;
  CHECK_THROWS_AS(dbgcrot_solve(a, b, cfg), UsageError);
  cfg = SolverConfig{};
  cfg.eps_defl = -1;
  CHECK_THROWS_AS(dbgcrot_solve(a, b, cfg), UsageError);
  cfg = SolverConfig{};
  cfg.max_cycles = 0;
  CHECK_THROWS_AS(dbgcrot_solve(a, b, cfg), UsageError);
  CHECK_THROWS_AS(dbgcrot_solve(a, Matrix<double>(Matrix<double>::Ones(5, 2)), SolverConfig{}), UsageError);
  CHECK_THROWS_AS(dbgcrot_solve(a, Matrix<double>(4, 0), SolverConfig{}), UsageError);
  Matrix<double> bad = b;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(dbgcrot_solve(a, bad, SolverConfig{}), UsageError);
}
