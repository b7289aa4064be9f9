#include <algorithm>
#include <cmath>
#include <limits>

#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"
#include "hiercurric/layers.hpp"

namespace hiercurric::nn {

// ---------------------------------------------------------------------------
// Fully connected

Tensor fc_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, FcCache* cache) {
  if (input.rank() < 2) throw ShapeError("fc: input must have a batch axis, got " + shape_string(input.shape()));
  if (weight.rank() != 2) throw ShapeError("fc: weight must be [U,D], got " + shape_string(weight.shape()));
  const std::size_t n = input.dim(0);
  const std::size_t d = input.size() / std::max<std::size_t>(n, 1);
  const std::size_t u = weight.dim(0);
  if (weight.dim(1) != d)
    throw ShapeError("fc: input " + shape_string(input.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  if (bias.shape() != Shape{u}) throw ShapeError("fc: bias " + shape_string(bias.shape()) + " for " +
                                                 std::to_string(u) + " units");

  Tensor out({n, u});
  for (std::size_t i = 0; i < n; ++i) std::copy(bias.data(), bias.data() + u, out.data() + i * u);
  kernels::gemm(kernels::Trans::no, kernels::Trans::yes, n, u, d, input.data(), weight.data(), out.data());
  maybe_check_finite(out, "fc_forward");
  if (cache) {
    cache->input = input;
    cache->valid = true;
  }
  return out;
}

FcGrads fc_backward(const Tensor& d_out, const Tensor& weight, const FcCache& cache) {
  if (!cache.valid) throw ValidationError("fc_backward: missing forward cache");
  const std::size_t n = cache.input.dim(0);
  const std::size_t d = cache.input.size() / std::max<std::size_t>(n, 1);
  const std::size_t u = weight.dim(0);
  if (weight.rank() != 2 || weight.dim(1) != d)
    throw ShapeError("fc_backward: weight " + shape_string(weight.shape()) + " does not match cached input " +
                     shape_string(cache.input.shape()));
  if (d_out.shape() != Shape{n, u})
    throw ShapeError("fc_backward: upstream " + shape_string(d_out.shape()) + " expected " + shape_string({n, u}));

  FcGrads grads{Tensor(cache.input.shape()), Tensor(weight.shape()), Tensor({u})};
  kernels::gemm(kernels::Trans::yes, kernels::Trans::no, u, d, n, d_out.data(), cache.input.data(),
                grads.d_weight.data());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < u; ++j) grads.d_bias[j] += d_out[i * u + j];
  kernels::gemm(kernels::Trans::no, kernels::Trans::no, n, d, u, d_out.data(), weight.data(), grads.d_input.data());
  maybe_check_finite(grads.d_input, "fc_backward");
  return grads;
}

// ---------------------------------------------------------------------------
// Max pooling

Tensor maxpool_forward(const Tensor& input, std::size_t window, std::size_t stride, PoolCache* cache) {
  if (input.rank() != 4) throw ShapeError("maxpool: input must be [N,C,H,W], got " + shape_string(input.shape()));
  if (window == 0 || stride == 0) throw ShapeError("maxpool: window and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w)
    throw ShapeError("maxpool: window " + std::to_string(window) + " exceeds input " + shape_string(input.shape()));
  const std::size_t ho = (h - window) / stride + 1;
  const std::size_t wo = (w - window) / stride + 1;

  Tensor out({n, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x, ++o) {
        std::size_t best = base + (y * stride) * w + x * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (y * stride + i) * w + x * stride + j;
            if (input[idx] > input[best]) best = idx;
          }
        }
        out[o] = input[best];
        argmax[o] = best;
      }
    }
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->argmax = std::move(argmax);
    cache->valid = true;
  }
  return out;
}

Tensor maxpool_backward(const Tensor& d_out, const PoolCache& cache) {
  if (!cache.valid) throw ValidationError("maxpool_backward: missing forward cache");
  if (d_out.size() != cache.argmax.size())
    throw ShapeError("maxpool_backward: upstream " + shape_string(d_out.shape()) + " does not match cached output");
  Tensor d_in(cache.input_shape);
  for (std::size_t o = 0; o < d_out.size(); ++o) d_in[cache.argmax[o]] += d_out[o];
  return d_in;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor relu_forward(const Tensor& input, ReluCache* cache) {
  Tensor out(input.shape());
  kernels::active().relu(input.data(), out.data(), input.size());
  if (cache) {
    cache->input = input;
    cache->valid = true;
  }
  return out;
}

Tensor relu_backward(const Tensor& d_out, const ReluCache& cache) {
  if (!cache.valid) throw ValidationError("relu_backward: missing forward cache");
  if (d_out.shape() != cache.input.shape())
    throw ShapeError("relu_backward: upstream " + shape_string(d_out.shape()) + " expected " +
                     shape_string(cache.input.shape()));
  Tensor d_in(d_out.shape());
  for (std::size_t i = 0; i < d_in.size(); ++i) d_in[i] = cache.input[i] > 0.0 ? d_out[i] : 0.0;
  return d_in;
}

// ---------------------------------------------------------------------------
// Dropout

Tensor dropout_forward(const Tensor& input, double rate, Mode mode, Rng& rng, DropoutCache* cache) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must be in [0, 1)");
  DropoutCache local;
  local.shape = input.shape();
  local.valid = true;
  Tensor out = input;
  if (mode == Mode::train && rate > 0.0) {
    const double scale = 1.0 / (1.0 - rate);
    local.mask.resize(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) {
      local.mask[i] = rng.uniform() < rate ? 0.0 : scale;
      out[i] = input[i] * local.mask[i];
    }
  }
  if (cache) *cache = std::move(local);
  return out;
}

Tensor dropout_backward(const Tensor& d_out, const DropoutCache& cache) {
  if (!cache.valid) throw ValidationError("dropout_backward: missing forward cache");
  if (d_out.shape() != cache.shape)
    throw ShapeError("dropout_backward: upstream " + shape_string(d_out.shape()) + " expected " +
                     shape_string(cache.shape));
  Tensor d_in = d_out;
  if (!cache.mask.empty())
    for (std::size_t i = 0; i < d_in.size(); ++i) d_in[i] *= cache.mask[i];
  return d_in;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: logits must be [N,K], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (p[i * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= z;
  }
  return p;
}

LossAndGrad softmax_xent(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_xent: logits must be [N,K], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                                           std::to_string(n) + " rows");
  if (n == 0) throw ValidationError("softmax_xent: empty batch");
  for (std::size_t y : labels)
    if (y >= k) throw ValidationError("softmax_xent: label " + std::to_string(y) + " out of range [0," +
                                      std::to_string(k) + ")");

  LossAndGrad out{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    const std::size_t top = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    const double mx = row[top];
    // log z = log1p(sum of the non-maximal terms), accurate when one logit dominates
    double rest = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != top) rest += std::exp(row[j] - mx);
    const double log_z = std::log1p(rest);
    // -log softmax_y = log z - (x_y - max)
    out.loss += log_z - (row[labels[i]] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double pj = std::exp(row[j] - mx - log_z);
      out.grad[i * k + j] = (pj - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.loss *= inv_n;
  if (checked_mode() && !std::isfinite(out.loss)) throw NumericFault("softmax_xent: non-finite loss");
  return out;
}

void init_gaussian(Tensor& t, double stddev, Rng& rng) {
  for (double& v : t.values()) v = stddev * rng.normal();
}

}  // namespace hiercurric::nn
