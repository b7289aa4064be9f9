#pragma once

// Forward/backward primitives. Forward calls optionally fill a cache that
// the matching backward call consumes; backward returns fresh gradient
// tensors and never accumulates into its arguments.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hiercurric/rng.hpp"
#include "hiercurric/tensor.hpp"

namespace hiercurric::nn {

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding, optional channel groups)

struct ConvParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;
};

/// Output spatial size floor((in + 2 pad - k) / stride) + 1; throws ShapeError if the kernel does not fit.
std::size_t conv_output_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

struct ConvCache {
  Tensor input;
  Shape kernel_shape;
  ConvParams params;
  bool valid = false;
};

struct ConvGrads {
  Tensor d_input;
  Tensor d_kernels;
  Tensor d_bias;
};

/// input [N,C,H,W], kernels [K,C/groups,kh,kw], bias [K] -> [N,K,H',W'].
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias, const ConvParams& params,
                      ConvCache* cache = nullptr);
ConvGrads conv2d_backward(const Tensor& d_out, const Tensor& kernels, const ConvCache& cache);

// ---------------------------------------------------------------------------
// Fully connected: input [N, ...] is flattened to [N, D]; weight [U, D]; bias [U].

struct FcCache {
  Tensor input;
  bool valid = false;
};

struct FcGrads {
  Tensor d_input;  // shaped like the forward input
  Tensor d_weight;
  Tensor d_bias;
};

Tensor fc_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, FcCache* cache = nullptr);
FcGrads fc_backward(const Tensor& d_out, const Tensor& weight, const FcCache& cache);

// ---------------------------------------------------------------------------
// Max pooling. Ties go to the lowest linear index in the window.

struct PoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output cell
  bool valid = false;
};

Tensor maxpool_forward(const Tensor& input, std::size_t window, std::size_t stride, PoolCache* cache = nullptr);
Tensor maxpool_backward(const Tensor& d_out, const PoolCache& cache);

// ---------------------------------------------------------------------------
// ReLU

struct ReluCache {
  Tensor input;
  bool valid = false;
};

Tensor relu_forward(const Tensor& input, ReluCache* cache = nullptr);
Tensor relu_backward(const Tensor& d_out, const ReluCache& cache);

// ---------------------------------------------------------------------------
// Inverted dropout: train mode zeroes each unit with probability `rate`
// and scales survivors by 1 / (1 - rate); eval mode is the identity.

enum class Mode { train, eval };

struct DropoutCache {
  std::vector<double> mask;  // per-unit multiplier; empty means identity
  Shape shape;
  bool valid = false;
};

Tensor dropout_forward(const Tensor& input, double rate, Mode mode, Rng& rng, DropoutCache* cache = nullptr);
Tensor dropout_backward(const Tensor& d_out, const DropoutCache& cache);

// ---------------------------------------------------------------------------
// Softmax cross-entropy, averaged over the batch.

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  // [N, K] = (softmax - onehot) / N
};

/// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);
LossAndGrad softmax_xent(const Tensor& logits, std::span<const std::size_t> labels);

// ---------------------------------------------------------------------------

/// Fills `t` with N(0, stddev^2) draws from `rng`.
void init_gaussian(Tensor& t, double stddev, Rng& rng);

}  // namespace hiercurric::nn
