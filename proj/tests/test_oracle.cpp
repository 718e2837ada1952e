#include <doctest.h>

#include "dbgcrot/oracle.hpp"
#include "test_util.hpp"

using namespace dbgcrot;
using dbgcrot::testing::random_matrix;

TEST_CASE("dense_global_min examples") {
  std::mt19937_64 gen(1);
  const Index n = 12;
  const Matrix<double> a = random_matrix(n, n, gen) + 5.0 * Matrix<double>::Identity(n, n);
  const Matrix<double> b = random_matrix(n, 2, gen);
  const Matrix<double> x0 = random_matrix(n, 2, gen);

  SUBCASE("full space gives the exact solution") {
    const Matrix<double> x = oracle::dense_global_min(a, b, x0, Matrix<double>(Matrix<double>::Identity(n, n)));
    CHECK((b - a * x).norm() <= 1e-12 * b.norm());
  }
  SUBCASE("empty basis returns X0") {
    CHECK(oracle::dense_global_min(a, b, x0, Matrix<double>(n, 0)) == x0);
  }
  SUBCASE("dimension guards") {
    CHECK_THROWS_AS(oracle::dense_global_min(Matrix<double>(Matrix<double>::Identity(201, 201)),
                                             Matrix<double>(Matrix<double>::Ones(201, 1)),
                                             Matrix<double>(Matrix<double>::Zero(201, 1)),
                                             Matrix<double>(Matrix<double>::Ones(201, 1))),
                    UsageError);
    CHECK_THROWS_AS(oracle::dense_global_min(a, b, Matrix<double>(n, 3), Matrix<double>(Matrix<double>::Identity(n, 2))), UsageError);
  }
}

TEST_CASE("dense_global_min beats random corrections") {
  std::mt19937_64 gen(2);
  for (int instance = 0; instance < 10; ++instance) {
    const Index n = 20 + 4 * instance;
    const Matrix<double> a = random_matrix(n, n, gen) + 6.0 * Matrix<double>::Identity(n, n);
    const Matrix<double> b = random_matrix(n, 3, gen);
    const Matrix<double> x0 = random_matrix(n, 3, gen);
    const Matrix<double> basis = random_matrix(n, 7, gen);
    const Matrix<double> best = oracle::dense_global_min(a, b, x0, basis);
    const double best_res = (b - a * best).norm();
    const Matrix<double> z_best = (basis.transpose() * basis).ldlt().solve(basis.transpose() * (best - x0));
    for (int trial = 0; trial < 100; ++trial) {
      const double scale = std::pow(10.0, -static_cast<double>(trial % 6));
      const Matrix<double> z = z_best + scale * random_matrix(7, 3, gen);
      const Matrix<double> x = x0 + basis * z;
      CHECK(best_res <= (b - a * x).norm() * (1.0 + 1e-12));
    }
    // First-order optimality: the residual is orthogonal to A basis.
    CHECK(((a * basis).transpose() * (b - a * best)).norm() <= 1e-10 * (a * basis).norm() * b.norm());
  }
}

TEST_CASE("gmres_reference examples") {
  SUBCASE("identity converges in one step") {
    std::mt19937_64 gen(3);
    const Eigen::VectorXd b = random_matrix(8, 1, gen);
    auto ref = oracle::gmres_reference<double>(Matrix<double>(Matrix<double>::Identity(8, 8)), b, 5, 1e-12, 3);
    CHECK(ref.converged);
    CHECK(ref.residuals.size() == 1);
    CHECK(ref.residuals[0] <= 1e-14);
    CHECK((ref.x - b).norm() <= 1e-14 * b.norm());
  }
  SUBCASE("diag(1..5) terminates within five steps") {
    Matrix<double> a = Matrix<double>::Zero(5, 5);
    for (Index i = 0; i < 5; ++i) a(i, i) = static_cast<double>(i + 1);
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(5);
    auto ref = oracle::gmres_reference<double>(a, b, 10, 1e-12, 1);
    CHECK(ref.converged);
    CHECK(ref.residuals.size() <= 5);
    CHECK(ref.residuals.back() <= 1e-12 * std::sqrt(5.0));
    Eigen::VectorXd expect(5);
    expect << 1.0, 0.5, 1.0 / 3.0, 0.25, 0.2;
    CHECK((ref.x - expect).norm() <= 1e-12);
  }
  SUBCASE("zero right-hand side") {
    auto ref = oracle::gmres_reference<double>(Matrix<double>(Matrix<double>::Identity(3, 3)),
                                               Eigen::VectorXd(Eigen::VectorXd::Zero(3)), 2, 1e-8, 2);
    CHECK(ref.converged);
    CHECK(ref.residuals.empty());
  }
}

TEST_CASE("gmres_reference residuals do not increase within a cycle") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = testing::random_sparse(40, 0.1, gen, 3.0);
    const Eigen::VectorXd b = random_matrix(40, 1, gen);
    auto ref = oracle::gmres_reference<double>(a, b, 8, 1e-10, 200);
    CHECK(ref.converged);
    std::size_t at = 0;
    for (Index steps : ref.steps_per_cycle) {
      for (Index j = 1; j < steps; ++j)
        CHECK(ref.residuals[at + static_cast<std::size_t>(j)] <=
              ref.residuals[at + static_cast<std::size_t>(j) - 1] * (1.0 + 1e-14));
      at += static_cast<std::size_t>(steps);
    }
    CHECK(at == ref.residuals.size());
    const Eigen::VectorXd r = b - a * ref.x;
    CHECK(r.norm() <= 1e-10 * b.norm());
  }
}
