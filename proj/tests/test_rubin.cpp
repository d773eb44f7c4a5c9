#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "cace/error.hpp"
#include "cace/rng.hpp"
#include "cace/rubin.hpp"

using namespace cace;

TEST_CASE("identical inputs have zero between-variance") {
  const std::vector<double> p(5, 1.5), v(5, 0.04);
  const auto r = pool(p, v);
  CHECK(r.point == 1.5);
  CHECK(r.between_var == 0.0);
  CHECK(std::abs(r.total_var - 0.04) < 1e-12);
  CHECK(r.df > 0);
}

TEST_CASE("two-imputation hand example") {
  const std::vector<double> p{1, 3}, v{1, 1};
  const auto r = pool(p, v);
  CHECK(r.point == 2.0);
  CHECK(r.within_var == 1.0);
  CHECK(r.between_var == 2.0);
  CHECK(std::abs(r.total_var - 4.0) < 1e-12);
  CHECK(r.m == 2);
  // (m-1)/lambda^2 with lambda = 3/4.
  CHECK(r.df == doctest::Approx(1.7777777777777777).epsilon(1e-12));
  CHECK(r.ci_high - r.point == doctest::Approx(2.0 * 4.861472609226568).epsilon(1e-8));

  const auto small = pool(p, v, 10.0);
  CHECK(small.df == doctest::Approx(0.9659714599341384).epsilon(1e-12));
  CHECK(small.ci_high - small.point == doctest::Approx(2.0 * 13.814322918378636).epsilon(1e-8));
}

TEST_CASE("pool input errors") {
  const std::vector<double> one{1.0}, var{1.0};
  CHECK_THROWS_AS(pool(one, var), UsageError);
  const std::vector<double> p{1, 2}, bad{1, 0};
  CHECK_THROWS_AS(pool(p, bad), UsageError);
}

TEST_CASE("permutation invariance, affine equivariance and total >= within") {
  Rng rng(13);
  for (int rep = 0; rep < 200; ++rep) {
    const int m = 2 + rep % 20;
    std::vector<double> p(m), v(m);
    for (int i = 0; i < m; ++i) {
      p[i] = standard_normal(rng);
      v[i] = 0.01 + uniform01(rng);
    }
    const double complete_df = rep % 3 ? 50.0 + rep : std::numeric_limits<double>::infinity();
    const auto base = pool(p, v, complete_df);
    CHECK(std::abs(base.total_var - (base.within_var + (1.0 + 1.0 / m) * base.between_var)) < 1e-12);
    CHECK(base.total_var >= base.within_var);
    CHECK(base.between_var >= 0);
    CHECK(base.df > 0);

    std::vector<std::size_t> idx(m);
    for (int i = 0; i < m; ++i) idx[i] = static_cast<std::size_t>(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> pp(m), vp(m);
    for (int i = 0; i < m; ++i) pp[i] = p[idx[i]], vp[i] = v[idx[i]];
    const auto perm = pool(pp, vp, complete_df);
    CHECK(std::abs(perm.point - base.point) < 1e-12);
    CHECK(std::abs(perm.total_var - base.total_var) < 1e-12);
    CHECK(std::abs(perm.df - base.df) < 1e-12 * std::max(1.0, base.df));

    const double a = -2.5 + 0.1 * (rep % 7), b = 3.0;
    std::vector<double> pa(m), va(m);
    for (int i = 0; i < m; ++i) pa[i] = a * p[i] + b, va[i] = a * a * v[i];
    const auto aff = pool(pa, va, complete_df);
    CHECK(std::abs(aff.point - (a * base.point + b)) < 1e-12);
    CHECK(std::abs(aff.total_var - a * a * base.total_var) < 1e-12);
  }
}
