#include <cmath>

#include "doctest.h"

#include "cace/error.hpp"
#include "cace/glm.hpp"
#include "cace/rng.hpp"

using namespace cace;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

Vector vec(std::initializer_list<double> v) { return col(v).col(0); }

}  // namespace

TEST_CASE("linear fit examples") {
  CHECK(fit_linear(Matrix::Ones(4, 1), vec({1, 2, 3, 4})).coef[0] == doctest::Approx(2.5).epsilon(1e-14));

  Matrix x(4, 2);
  x << 1, 0, 1, 0, 1, 1, 1, 1;
  const auto fit = fit_linear(x, vec({0, 2, 3, 5}));
  CHECK(fit.coef[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.coef[1] == doctest::Approx(3.0).epsilon(1e-12));

  const auto w = fit_linear(Matrix::Ones(4, 1), vec({1, 3, 99, 99}), vec({1, 1, 0, 0}));
  CHECK(w.coef[0] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("rank-deficient design is a numerical error") {
  Matrix x(4, 2);
  x << 1, 2, 1, 2, 1, 2, 1, 2;
  CHECK_THROWS_AS(fit_linear(x, vec({1, 2, 3, 4})), NumericalError);
}

TEST_CASE("linear vcov is sigma^2 (X'X)^-1 and symmetric PSD") {
  Rng rng(5);
  Matrix x(50, 3);
  Vector y(50);
  for (int i = 0; i < 50; ++i) {
    x(i, 0) = 1;
    x(i, 1) = standard_normal(rng);
    x(i, 2) = standard_normal(rng);
    y[i] = 1 + x(i, 1) - 0.5 * x(i, 2) + standard_normal(rng);
  }
  const auto fit = fit_linear(x, y);
  const Vector r = y - x * fit.coef;
  const double s2 = r.squaredNorm() / 47.0;
  const Matrix expected = s2 * (x.transpose() * x).inverse();
  CHECK((fit.vcov - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((fit.vcov - fit.vcov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(fit.vcov).eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("integer weights equal replicated rows") {
  Rng rng(9);
  const int n = 30;
  Matrix x(n, 2);
  Vector y(n), w(n);
  int total = 0;
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1;
    x(i, 1) = standard_normal(rng);
    y[i] = 0.3 + 2 * x(i, 1) + standard_normal(rng);
    w[i] = static_cast<double>(1 + i % 3);
    total += 1 + i % 3;
  }
  Matrix xr(total, 2);
  Vector yr(total);
  Vector yb(n), ybr(total);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    yb[i] = y[i] > 0.8 ? 1.0 : 0.0;
    for (int j = 0; j < 1 + i % 3; ++j, ++k) {
      xr.row(k) = x.row(i);
      yr[k] = y[i];
      ybr[k] = yb[i];
    }
  }
  CHECK((fit_linear(x, y, w).coef - fit_linear(xr, yr).coef).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((fit_logistic(x, yb, w).coef - fit_logistic(xr, ybr).coef).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("logistic intercept-only fits") {
  CHECK(std::abs(fit_logistic(Matrix::Ones(4, 1), vec({0, 1, 0, 1})).coef[0]) < 1e-12);
  const auto fit = fit_logistic(Matrix::Ones(5, 1), vec({1, 0, 0, 0, 0}));
  CHECK(fit.coef[0] == doctest::Approx(-1.3862943611198906).epsilon(1e-10));
  CHECK(fit.converged);
}

TEST_CASE("separated data raises the separation warning") {
  Matrix x(6, 2);
  x << 1, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1;
  const auto fit = fit_logistic(x, vec({0, 0, 0, 1, 1, 1}));
  CHECK(fit.separation);
  CHECK_FALSE(fit.warnings.empty());
}

TEST_CASE("logistic score vanishes at the optimum and linear-probability agrees with fit_linear") {
  Rng rng(21);
  const int n = 200;
  Matrix x(n, 3);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1;
    x(i, 1) = standard_normal(rng);
    x(i, 2) = i % 2;
    y[i] = bernoulli(rng, expit(-0.2 + 0.7 * x(i, 1) + 0.5 * x(i, 2))) ? 1 : 0;
  }
  const auto fit = fit_logistic(x, y);
  Vector mu(n);
  for (int i = 0; i < n; ++i) mu[i] = expit(x.row(i).dot(fit.coef));
  CHECK((x.transpose() * (y - mu)).cwiseAbs().maxCoeff() < 1e-6);

  const auto lpm = fit_linear(x, y);
  const Vector direct = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  CHECK((lpm.coef - direct).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("numeric Hessian examples") {
  const auto h1 = numeric_hessian([](const Vector& t) { return -t[0] * t[0]; }, Vector::Zero(1), 1e-4);
  CHECK(h1(0, 0) == doctest::Approx(-2.0).epsilon(1e-6));

  const auto h2 = numeric_hessian([](const Vector& t) { return -t[0] * t[0] - 2 * t[1] * t[1]; },
                                  Vector::Ones(2), 1e-4);
  CHECK(std::abs(h2(0, 0) + 2) < 1e-5);
  CHECK(std::abs(h2(1, 1) + 4) < 1e-5);
  CHECK(std::abs(h2(0, 1)) < 1e-5);

  Matrix x(8, 2);
  x << 1, -1, 1, -0.5, 1, 0, 1, 0.3, 1, 0.7, 1, 1.1, 1, 1.5, 1, 2;
  const Vector y = vec({0, 1, 0, 0, 1, 1, 0, 1});
  const Vector w = Vector::Ones(8);
  const Vector beta = vec({0.2, 0.4});
  const auto num = numeric_hessian([&](const Vector& b) { return logistic_loglik(x, y, w, b); }, beta, 1e-4);
  Matrix analytic = Matrix::Zero(2, 2);
  for (int i = 0; i < 8; ++i) {
    const double p = expit(x.row(i).dot(beta));
    analytic -= p * (1 - p) * x.row(i).transpose() * x.row(i);
  }
  CHECK((num - analytic).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("numeric Hessian reports non-finite evaluations") {
  CHECK_THROWS(numeric_hessian([](const Vector& t) { return std::log(t[0]); }, Vector::Zero(1), 1e-3));
}
