#include <cmath>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "oracles.hpp"

#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"
#include "hiercurric/layers.hpp"
#include "hiercurric/optim.hpp"

using namespace hiercurric;
using namespace hiercurric::nn;

TEST_CASE("conv2d forward") {
  SUBCASE("1x1 identity kernel") {
    Rng rng(1);
    const Tensor x = oracle::random_tensor({2, 1, 5, 4}, rng);
    CHECK(conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), {}) == x);
  }
  SUBCASE("2x2 hand case") {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor k({1, 1, 2, 2}, {1, 0, 0, 1});
    const Tensor y = conv2d_forward(x, k, Tensor({1}), {});
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 5.0);
  }
  SUBCASE("matches the naive loop") {
    Rng rng(2);
    struct Case {
      Shape in, k;
      ConvParams p;
    };
    for (const auto& c : {Case{{2, 3, 8, 8}, {4, 3, 3, 3}, {2, 1, 1}}, Case{{1, 4, 9, 7}, {6, 2, 5, 3}, {1, 2, 2}},
                          Case{{3, 2, 11, 11}, {3, 2, 11, 11}, {4, 0, 1}}}) {
      const Tensor x = oracle::random_tensor(c.in, rng);
      const Tensor k = oracle::random_tensor(c.k, rng);
      const Tensor b = oracle::random_tensor({c.k[0]}, rng);
      const Tensor y = conv2d_forward(x, k, b, c.p);
      const Tensor ref = oracle::conv2d(x, k, b, c.p.stride, c.p.pad, c.p.groups);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-6);
    }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 3, 2, 2}), Tensor({1, 3, 3, 3}), Tensor({1}), {}), ShapeError);
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 3, 4, 4}), Tensor({1, 2, 3, 3}), Tensor({1}), {}), ShapeError);
    CHECK_THROWS_AS(conv_output_dim(2, 3, 1, 0), ShapeError);
    CHECK(conv_output_dim(227, 11, 4, 0) == 55);
  }
}

TEST_CASE("backward passes: linearity and the scalar chain rule") {
  Rng rng(3);
  const Tensor x = oracle::random_tensor({2, 3, 5, 5}, rng);
  const Tensor k = oracle::random_tensor({2, 3, 3, 3}, rng);
  ConvCache cache;
  const Tensor y = conv2d_forward(x, k, Tensor({2}), {1, 1, 1}, &cache);
  const auto g = conv2d_backward(Tensor(y.shape()), k, cache);
  for (const Tensor* t : {&g.d_input, &g.d_kernels, &g.d_bias})
    for (double v : t->values()) CHECK(v == 0.0);

  FcCache fc;
  const Tensor in({1, 1}, {2.5});
  fc_forward(in, Tensor({1, 1}, {0.7}), Tensor({1}), &fc);
  const auto fg = fc_backward(Tensor({1, 1}, {-3.0}), Tensor({1, 1}, {0.7}), fc);
  CHECK(fg.d_weight[0] == -3.0 * 2.5);
  CHECK(fg.d_bias[0] == -3.0);
  CHECK(fg.d_input[0] == doctest::Approx(-3.0 * 0.7));
}

TEST_CASE("gradient checks for every layer and a composed network") {
  for (const auto& r : oracle::run_gradient_suite(17, 20)) {
    CAPTURE(r.name);
    CHECK(r.checked == std::min<std::size_t>(20, r.size));
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("max pooling") {
  const Tensor c({1, 1, 4, 4}, 2.0);
  PoolCache cache;
  const Tensor y = maxpool_forward(c, 2, 2, &cache);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.values()) CHECK(v == 2.0);
  CHECK(cache.argmax == std::vector<std::size_t>{0, 2, 8, 10});

  CHECK(maxpool_forward(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2)[0] == 4.0);

  Rng rng(4);
  const Tensor x = oracle::random_tensor({2, 3, 7, 7}, rng);
  const Tensor p = maxpool_forward(x, 3, 2);
  REQUIRE(p.shape() == Shape{2, 3, 3, 3});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t oy = 0; oy < 3; ++oy)
        for (std::size_t ox = 0; ox < 3; ++ox) {
          double m = -INFINITY;
          for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx)
              m = std::max(m, x[((n * 3 + ch) * 7 + oy * 2 + dy) * 7 + ox * 2 + dx]);
          CHECK(p[((n * 3 + ch) * 3 + oy) * 3 + ox] == m);
        }
}

TEST_CASE("softmax cross-entropy") {
  const std::vector<std::size_t> labels{0, 2};
  CHECK(softmax_xent(Tensor({2, 3}), labels).loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Tensor sat({1, 3});
  sat[1] = 50.0;
  const std::vector<std::size_t> one{1};
  CHECK(softmax_xent(sat, one).loss < 1e-20);

  Rng rng(5);
  const Tensor logits = oracle::random_tensor({6, 7}, rng, 5.0);
  const auto lg = softmax_xent(logits, std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += lg.grad[r * 7 + c];
    CHECK(std::abs(s) < 1e-9);
  }
  const Tensor p = softmax(Tensor({1, 2}, {1000.0, 0.0}));
  CHECK(std::isfinite(p[1]));
  CHECK_THROWS_AS(softmax_xent(logits, std::vector<std::size_t>{0, 1, 2, 3, 4, 7}), ValidationError);
}

TEST_CASE("dropout") {
  Rng rng(6);
  const Tensor x = oracle::random_tensor({10, 10}, rng);
  CHECK(dropout_forward(x, 0.5, Mode::eval, rng) == x);
  CHECK(dropout_forward(x, 0.0, Mode::eval, rng) == x);
  CHECK(dropout_forward(x, 0.0, Mode::train, rng) == x);

  const Tensor ones({100000}, 1.0);
  const Tensor y = dropout_forward(ones, 0.5, Mode::train, rng);
  double kept = 0, sum = 0;
  for (double v : y.values()) kept += v != 0.0, sum += v;
  CHECK(std::abs(kept / 1e5 - 0.5) < 0.01);
  CHECK(std::abs(sum / 1e5 - 1.0) < 0.02);
}

TEST_CASE("sgd step") {
  SUBCASE("vanilla sgd") {
    ParamSet p;
    p.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
    p.at("w").grad = Tensor({3}, {0.5, 0.25, -1.0});
    SgdConfig cfg{0.1, 0.0, 0.0, 0.1, 100000, 1, std::nullopt};
    sgd_step(p, cfg, 0);
    CHECK(p.at("w").weight == Tensor({3}, {1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25, 0.5 + 0.1 * 1.0}));
  }
  SUBCASE("two-step momentum trace") {
    ParamSet p;
    p.add("w", Tensor({1}, 0.0));
    SgdConfig cfg{0.1, 0.9, 0.0, 0.1, 100000, 1, std::nullopt};
    p.at("w").grad = Tensor({1}, 1.0);
    sgd_step(p, cfg, 0);
    CHECK(p.at("w").momentum[0] == -0.1);
    CHECK(p.at("w").weight[0] == -0.1);
    sgd_step(p, cfg, 1);
    // Same recurrence in plain doubles; the decimal values hold to rounding.
    const double v2 = 0.9 * -0.1 - 0.1 * (1.0 + 0.0 * -0.1);
    CHECK(p.at("w").momentum[0] == v2);
    CHECK(p.at("w").weight[0] == -0.1 + v2);
    CHECK(v2 == doctest::Approx(-0.19).epsilon(1e-15));
    CHECK(-0.1 + v2 == doctest::Approx(-0.29).epsilon(1e-15));
  }
  SUBCASE("zero multiplier freezes an entry") {
    ParamSet p;
    p.add("frozen", Tensor({2}, {1.0, 2.0}), 0.0);
    p.at("frozen").grad = Tensor({2}, {100.0, -100.0});
    p.at("frozen").momentum = Tensor({2}, {0.3, 0.3});
    sgd_step(p, SgdConfig{}, 0);
    CHECK(p.at("frozen").weight == Tensor({2}, {1.0, 2.0}));
    CHECK(p.at("frozen").momentum == Tensor({2}, {0.3, 0.3}));
  }
}

TEST_CASE("learning rate schedule") {
  SgdConfig cfg;
  CHECK(lr_schedule(cfg, 0) == 0.01);
  CHECK(lr_schedule(cfg, 99999) == 0.01);
  CHECK(lr_schedule(cfg, 100000) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_schedule(cfg, 250000) == doctest::Approx(0.0001).epsilon(1e-15));
  cfg.lr_gamma = 1.0;
  CHECK(lr_schedule(cfg, 1000000) == 0.01);
  SgdConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("layers agree across kernel isas") {
  if (!kernels::isa_available(kernels::Isa::avx2)) return;
  const auto saved = kernels::active_isa();
  Rng rng(7);
  const Tensor x = oracle::random_tensor({2, 3, 9, 9}, rng);
  const Tensor k = oracle::random_tensor({5, 3, 3, 3}, rng);
  const Tensor b = oracle::random_tensor({5}, rng);
  kernels::force_isa(kernels::Isa::scalar);
  const Tensor ys = conv2d_forward(x, k, b, {2, 1, 1});
  kernels::force_isa(kernels::Isa::avx2);
  const Tensor yv = conv2d_forward(x, k, b, {2, 1, 1});
  kernels::force_isa(saved);
  for (std::size_t i = 0; i < ys.size(); ++i) CHECK(std::abs(ys[i] - yv[i]) < 1e-12);
}
