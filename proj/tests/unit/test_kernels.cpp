#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "stepforge/errors.hpp"
#include "stepforge/hashing.hpp"
#include "stepforge/kernels.hpp"

using namespace stepforge;

namespace {

std::vector<double> random_vector(StableRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.unit() - 1.0;
  return v;
}

double naive_dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

}  // namespace

TEST_CASE("scalar table is always available") {
  const auto isas = kernels::available_isas();
  REQUIRE_FALSE(isas.empty());
  CHECK(isas.front() == kernels::Isa::Scalar);
  const auto active = kernels::active_isa();
  CHECK(std::find(isas.begin(), isas.end(), active) != isas.end());
}

TEST_CASE("every available ISA matches the scalar reference") {
  StableRng rng(99);
  const auto& ref = kernels::table(kernels::Isa::Scalar);
  for (const auto isa : kernels::available_isas()) {
    CAPTURE(kernels::isa_name(isa));
    const auto& t = kernels::table(isa);
    for (std::size_t n = 0; n <= 67; ++n) {
      auto a = random_vector(rng, n);
      auto b = random_vector(rng, n);
      const double oracle = naive_dot(a, b);
      CHECK(t.dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-12));
      CHECK(std::abs(t.dot(a.data(), b.data(), n) - oracle) <= 1e-12 * (1.0 + static_cast<double>(n)));
      CHECK(t.squared_norm(a.data(), n) ==
            doctest::Approx(ref.squared_norm(a.data(), n)).epsilon(1e-12));
      auto c = a;
      auto d = a;
      t.scale(c.data(), n, 0.37);
      ref.scale(d.data(), n, 0.37);
      for (std::size_t i = 0; i < n; ++i) CHECK(c[i] == d[i]);
    }
  }
}

TEST_CASE("span wrappers validate sizes") {
  std::vector<double> a{1, 2, 3};
  std::vector<double> b{1, 2};
  CHECK_THROWS_AS(kernels::dot(a, b), PreconditionError);
  CHECK(kernels::dot(a, a) == doctest::Approx(14.0));
  CHECK(kernels::squared_norm(a) == doctest::Approx(14.0));
}

TEST_CASE("similarity matrix equals pairwise dot products") {
  StableRng rng(5);
  const std::size_t dim = 19, rows = 4, cols = 6;
  const auto r = random_vector(rng, rows * dim);
  const auto c = random_vector(rng, cols * dim);
  std::vector<double> out(rows * cols);
  kernels::similarity_matrix(r, c, dim, out);
  for (std::size_t k = 0; k < rows; ++k) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::vector<double> a(r.begin() + static_cast<long>(k * dim), r.begin() + static_cast<long>((k + 1) * dim));
      std::vector<double> b(c.begin() + static_cast<long>(j * dim), c.begin() + static_cast<long>((j + 1) * dim));
      CHECK(out[k * cols + j] == doctest::Approx(naive_dot(a, b)).epsilon(1e-12));
    }
  }
  std::vector<double> wrong(3);
  CHECK_THROWS(kernels::similarity_matrix(r, c, dim, wrong));
}
