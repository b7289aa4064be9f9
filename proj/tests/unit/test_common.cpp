#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"

#include "hiercurric/csv.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/rng.hpp"
#include "hiercurric/tensor.hpp"

using namespace hiercurric;

TEST_CASE("rng streams are reproducible and restorable") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).next_u64() != c.next_u64());

  Rng r(7);
  for (int i = 0; i < 10; ++i) r.normal();
  const auto saved = r.state();
  const double next = r.uniform();
  Rng restored(0);
  restored.set_state(saved);
  CHECK(restored.uniform() == next);
}

TEST_CASE("rng distributions have the expected moments") {
  Rng r(1);
  const int n = 200000;
  double sum = 0, sq = 0, usum = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
    const double u = r.uniform();
    CHECK_UNARY(u >= 0.0);
    CHECK_UNARY(u < 1.0);
    usum += u;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.01).scale(1.0));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(usum / n == doctest::Approx(0.5).epsilon(0.01));

  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) ++hist[r.below(7)];
  for (int h : hist) CHECK(std::abs(h - 10000) < 500);
}

TEST_CASE("derive_seed separates purposes") {
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
  CHECK(derive_seed(5, 9) == derive_seed(5, 9));
}

TEST_CASE("csv quoting round-trips through the parser") {
  const csv::Row row{"plain", "with,comma", "with \"quote\"", "multi\nline", ""};
  const auto text = csv::format_row(row);
  CHECK(text == "plain,\"with,comma\",\"with \"\"quote\"\"\",\"multi\nline\",");
  const auto parsed = csv::parse(text + "\r\nnext,row\n");
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0] == row);
  CHECK(parsed[1] == csv::Row{"next", "row"});
}

TEST_CASE("csv number formatting") {
  CHECK(csv::fixed(0.123456789, 6) == "0.123457");
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678}) CHECK(std::stod(csv::round_trip(v)) == v);
}

TEST_CASE("tensor stream round trip and format errors") {
  Rng rng(3);
  const Tensor t = oracle::random_tensor({2, 3, 4}, rng);
  std::stringstream s;
  write_tensor(s, t);
  const Tensor back = read_tensor(s);
  CHECK(back == t);
  CHECK(tensor_hash(back) == tensor_hash(t));

  std::stringstream f;
  write_tensor(f, t, Dtype::f32);
  const Tensor narrowed = read_tensor(f);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(narrowed[i] == static_cast<double>(static_cast<float>(t[i])));

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), IoError);
  std::stringstream truncated(s.str().substr(0, 20));
  write_tensor(truncated, t);
  std::stringstream cut(truncated.str().substr(0, 40));
  CHECK_THROWS_AS(read_tensor(cut), IoError);
}

TEST_CASE("tensor checks") {
  Tensor t({2, 2});
  CHECK(t.size() == 4);
  CHECK_THROWS_AS(t.reshaped({3}), ShapeError);
  t[1] = std::nan("");
  CHECK_THROWS_AS(t.check_finite("t"), NumericFault);
  CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1.0}), ShapeError);
}
