#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>

#include "oracles.hpp"

#include "hiercurric/layers.hpp"
#include "hiercurric/model.hpp"

namespace oracle {

namespace hc = hiercurric;
using hc::Rng;
using hc::Tensor;

namespace {

// Step for layers that are linear in the checked tensor; larger steps cut rounding error.
constexpr double kLinearStep = 1e-3;
// Piecewise layers: small enough that a step never crosses a kink in the spaced inputs.
constexpr double kKinkStep = 1e-6;
constexpr double kNetworkStep = 1e-5;

struct Suite {
  std::vector<TensorGradCheck> out;
  Rng pick;
  std::size_t coords;

  void check(const std::string& name, Tensor& x, const Tensor& analytic, const std::function<double()>& loss,
             double h, double floor = 1e-9) {
    const auto r = check_gradient(x, analytic, loss, coords, pick, h, floor);
    out.push_back({name, r.max_rel_error, r.checked, x.size()});
  }
};

// Values at least `gap` away from zero.
Tensor away_from_zero(const hc::Shape& shape, Rng& rng, double gap) {
  Tensor t = random_tensor(shape, rng);
  for (auto& v : t.values()) v += v < 0 ? -gap : gap;
  return t;
}

// Distinct values spaced by `gap` in a random order, so window maxima are unique.
Tensor spaced_values(const hc::Shape& shape, Rng& rng, double gap) {
  Tensor t(shape);
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t i = 0; i < order.size(); ++i) t[order[i]] = gap * static_cast<double>(i) - 1.0;
  return t;
}

void conv_cases(Suite& s, Rng& rng) {
  struct Case {
    const char* name;
    hc::Shape input;
    hc::Shape kernels;
    hc::nn::ConvParams params;
  };
  const Case cases[] = {
      {"conv", {2, 3, 6, 6}, {4, 3, 3, 3}, {1, 1, 1}},
      {"conv_strided", {2, 3, 8, 7}, {5, 3, 3, 2}, {2, 1, 1}},
      {"conv_grouped", {2, 4, 7, 7}, {6, 2, 3, 3}, {2, 2, 2}},
  };
  for (const auto& c : cases) {
    Tensor input = random_tensor(c.input, rng);
    Tensor kernels = random_tensor(c.kernels, rng);
    Tensor bias = random_tensor({c.kernels[0]}, rng);
    hc::nn::ConvCache cache;
    const Tensor y = hc::nn::conv2d_forward(input, kernels, bias, c.params, &cache);
    const Tensor w = random_tensor(y.shape(), rng);
    const auto g = hc::nn::conv2d_backward(w, kernels, cache);
    auto loss = [&] { return weighted_sum(hc::nn::conv2d_forward(input, kernels, bias, c.params), w); };
    s.check(std::string(c.name) + "/input", input, g.d_input, loss, kLinearStep);
    s.check(std::string(c.name) + "/kernels", kernels, g.d_kernels, loss, kLinearStep);
    s.check(std::string(c.name) + "/bias", bias, g.d_bias, loss, kLinearStep);
  }
}

void fc_case(Suite& s, Rng& rng) {
  Tensor input = random_tensor({3, 2, 3, 2}, rng);
  Tensor weight = random_tensor({5, 12}, rng);
  Tensor bias = random_tensor({5}, rng);
  hc::nn::FcCache cache;
  const Tensor y = hc::nn::fc_forward(input, weight, bias, &cache);
  const Tensor w = random_tensor(y.shape(), rng);
  const auto g = hc::nn::fc_backward(w, weight, cache);
  auto loss = [&] { return weighted_sum(hc::nn::fc_forward(input, weight, bias), w); };
  s.check("fc/input", input, g.d_input, loss, kLinearStep);
  s.check("fc/weight", weight, g.d_weight, loss, kLinearStep);
  s.check("fc/bias", bias, g.d_bias, loss, kLinearStep);
}

void piecewise_cases(Suite& s, Rng& rng) {
  {
    Tensor input = spaced_values({2, 3, 7, 7}, rng, 1e-3);
    hc::nn::PoolCache cache;
    const Tensor y = hc::nn::maxpool_forward(input, 3, 2, &cache);
    const Tensor w = random_tensor(y.shape(), rng);
    const Tensor g = hc::nn::maxpool_backward(w, cache);
    s.check("maxpool/input", input, g, [&] { return weighted_sum(hc::nn::maxpool_forward(input, 3, 2), w); },
            kKinkStep);
  }
  {
    Tensor input = away_from_zero({4, 30}, rng, 1e-3);
    hc::nn::ReluCache cache;
    const Tensor y = hc::nn::relu_forward(input, &cache);
    const Tensor w = random_tensor(y.shape(), rng);
    const Tensor g = hc::nn::relu_backward(w, cache);
    s.check("relu/input", input, g, [&] { return weighted_sum(hc::nn::relu_forward(input), w); }, kKinkStep);
  }
  {
    Tensor input = random_tensor({4, 30}, rng);
    const std::uint64_t mask_seed = rng.next_u64();
    Rng r(mask_seed);
    hc::nn::DropoutCache cache;
    const Tensor y = hc::nn::dropout_forward(input, 0.5, hc::nn::Mode::train, r, &cache);
    const Tensor w = random_tensor(y.shape(), rng);
    const Tensor g = hc::nn::dropout_backward(w, cache);
    auto loss = [&] {
      Rng same(mask_seed);
      return weighted_sum(hc::nn::dropout_forward(input, 0.5, hc::nn::Mode::train, same), w);
    };
    s.check("dropout/input", input, g, loss, kLinearStep);
  }
  {
    Tensor logits = random_tensor({4, 5}, rng, 2.0);
    const std::vector<std::size_t> labels{0, 3, 4, 3};
    const auto lg = hc::nn::softmax_xent(logits, labels);
    s.check("softmax_xent/logits", logits, lg.grad, [&] { return hc::nn::softmax_xent(logits, labels).loss; },
            kLinearStep);
  }
}

void network_case(Suite& s, Rng& rng) {
  namespace m = hc::model;
  m::ModelSpec spec = m::desk_spec(4, {3, 12, 12});
  spec.init.kind = m::InitPolicy::Kind::he;
  m::Checkpoint ckpt = m::build_model(spec, rng.next_u64());
  for (auto& e : ckpt.params.entries())
    if (e.name.ends_with(".bias")) e.weight = random_tensor(e.weight.shape(), rng, 0.1);
  Tensor batch = random_tensor({2, 3, 12, 12}, rng);
  const std::vector<std::size_t> labels{1, 3};
  const std::uint64_t drop_seed = rng.next_u64();

  m::Network net(spec);
  auto loss = [&] {
    Rng r(drop_seed);
    return hc::nn::softmax_xent(net.forward(ckpt.params, batch, hc::nn::Mode::train, &r), labels).loss;
  };
  Rng r(drop_seed);
  const auto lg = hc::nn::softmax_xent(net.forward(ckpt.params, batch, hc::nn::Mode::train, &r), labels);
  ckpt.params.zero_grad();
  const Tensor d_batch = net.backward(ckpt.params, lg.grad);
  // Analytic gradients are copied: the loss closure reruns forward and must not see them change.
  for (auto& e : ckpt.params.entries()) {
    const Tensor analytic = e.grad;
    s.check("network/" + e.name, e.weight, analytic, loss, kNetworkStep, 1e-7);
  }
  s.check("network/input", batch, d_batch, loss, kNetworkStep, 1e-7);
}

}  // namespace

std::vector<TensorGradCheck> run_gradient_suite(std::uint64_t seed, std::size_t coords) {
  Rng rng(seed);
  Suite s{{}, Rng(hc::derive_seed(seed, 1)), coords};
  conv_cases(s, rng);
  fc_case(s, rng);
  piecewise_cases(s, rng);
  network_case(s, rng);
  return s.out;
}

}  // namespace oracle
