#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"

#include "hiercurric/kernels.hpp"

using namespace hiercurric;
using kernels::Isa;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct IsaGuard {
  Isa saved = kernels::active_isa();
  ~IsaGuard() { kernels::force_isa(saved); }
};

}  // namespace

TEST_CASE("scalar table is always available") {
  CHECK(kernels::isa_available(Isa::scalar));
  CHECK(kernels::scalar_table().isa == Isa::scalar);
}

TEST_CASE("scalar reductions and gemm match naive loops") {
  Rng rng(11);
  const auto& t = kernels::scalar_table();
  for (std::size_t n : {0u, 1u, 7u, 64u, 129u}) {
    const auto x = random_vec(n, rng), y = random_vec(n, rng);
    double d = 0, s = 0;
    for (std::size_t i = 0; i < n; ++i) d += x[i] * y[i], s += x[i];
    CHECK(t.dot(x.data(), y.data(), n) == doctest::Approx(d).epsilon(1e-12));
    CHECK(t.sum(x.data(), n) == doctest::Approx(s).epsilon(1e-12));
  }
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {5, 7, 3}, {13, 17, 300}}) {
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> c(m * n, 0.0);
    t.gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n);
    const auto ref = oracle::matmul(a, b, m, n, k);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("gemm transposition modes agree with the naive product") {
  Rng rng(12);
  const std::size_t m = 6, n = 9, k = 11;
  const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
  const auto ref = oracle::matmul(a, b, m, n, k);
  std::vector<double> at(k * m), bt(n * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  using kernels::Trans;
  for (auto [ta, tb] : {std::pair{Trans::no, Trans::no}, {Trans::yes, Trans::no}, {Trans::no, Trans::yes},
                        {Trans::yes, Trans::yes}}) {
    std::vector<double> c(m * n, 1.0);
    kernels::gemm(ta, tb, m, n, k, ta == Trans::yes ? at.data() : a.data(), tb == Trans::yes ? bt.data() : b.data(),
                  c.data());
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i] + 1.0).epsilon(1e-12));
  }
}

TEST_CASE("avx2 kernels are equivalent to scalar") {
  if (!kernels::isa_available(Isa::avx2)) {
    MESSAGE("AVX2 not available on this machine; equivalence test skipped");
    return;
  }
  const auto& s = kernels::scalar_table();
  const auto& v = kernels::table(Isa::avx2);
  Rng rng(13);

  SUBCASE("elementwise kernels are bit-identical") {
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 31u, 1000u}) {
      const auto x = random_vec(n, rng);
      auto y1 = random_vec(n, rng), y2 = y1;
      s.axpy(0.37, x.data(), y1.data(), n);
      v.axpy(0.37, x.data(), y2.data(), n);
      CHECK(bit_equal(y1, y2));

      std::vector<double> r1(n), r2(n);
      s.relu(x.data(), r1.data(), n);
      v.relu(x.data(), r2.data(), n);
      CHECK(bit_equal(r1, r2));

      auto w1 = random_vec(n, rng), w2 = w1, m1 = random_vec(n, rng), m2 = m1;
      const auto g = random_vec(n, rng);
      s.sgd_update(w1.data(), m1.data(), g.data(), n, 0.9, 0.01, 0.0005);
      v.sgd_update(w2.data(), m2.data(), g.data(), n, 0.9, 0.01, 0.0005);
      CHECK(bit_equal(w1, w2));
      CHECK(bit_equal(m1, m2));
    }
  }

  SUBCASE("reductions agree to rounding") {
    for (std::size_t n : {1u, 7u, 8u, 9u, 1023u}) {
      const auto x = random_vec(n, rng), y = random_vec(n, rng);
      double mag = 0;
      for (std::size_t i = 0; i < n; ++i) mag += std::abs(x[i] * y[i]);
      CHECK(std::abs(s.dot(x.data(), y.data(), n) - v.dot(x.data(), y.data(), n)) <= 1e-14 * mag + 1e-300);
      double amag = 0;
      for (double e : x) amag += std::abs(e);
      CHECK(std::abs(s.sum(x.data(), n) - v.sum(x.data(), n)) <= 1e-14 * amag + 1e-300);
    }
  }

  SUBCASE("gemm agrees to rounding on ragged shapes") {
    for (auto [m, n, k] : {std::tuple{1, 1, 1}, {4, 8, 5}, {5, 13, 7}, {9, 27, 300}, {64, 100, 600}}) {
      const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
      std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
      s.gemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
      v.gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
      for (std::size_t i = 0; i < c1.size(); ++i) CHECK(std::abs(c1[i] - c2[i]) <= 1e-12 * std::sqrt(double(k)));
    }
  }
}

TEST_CASE("force_isa switches the active table") {
  IsaGuard guard;
  kernels::force_isa(Isa::scalar);
  CHECK(kernels::active_isa() == Isa::scalar);
  if (kernels::isa_available(Isa::avx2)) {
    kernels::force_isa(Isa::avx2);
    CHECK(kernels::active_isa() == Isa::avx2);
  }
}
