#include <algorithm>

#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"
#include "hiercurric/layers.hpp"

namespace hiercurric::nn {

namespace {

struct Geometry {
  std::size_t n, c, h, w;
  std::size_t k, kh, kw;
  std::size_t ho, wo;
  std::size_t groups, cg, kg;
  std::size_t stride, pad;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return ho * wo; }
};

Geometry geometry(const Shape& input, const Shape& kernels, const ConvParams& p) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_string(input));
  if (kernels.size() != 4) throw ShapeError("conv2d: kernels must be [K,C/g,kh,kw], got " + shape_string(kernels));
  if (p.stride == 0 || p.groups == 0) throw ShapeError("conv2d: stride and groups must be positive");
  Geometry g{};
  g.n = input[0];
  g.c = input[1];
  g.h = input[2];
  g.w = input[3];
  g.k = kernels[0];
  g.kh = kernels[2];
  g.kw = kernels[3];
  g.groups = p.groups;
  g.stride = p.stride;
  g.pad = p.pad;
  if (g.c % g.groups != 0 || g.k % g.groups != 0 || kernels[1] * g.groups != g.c)
    throw ShapeError("conv2d: input " + shape_string(input) + " incompatible with kernels " + shape_string(kernels) +
                     " at groups=" + std::to_string(g.groups));
  g.cg = g.c / g.groups;
  g.kg = g.k / g.groups;
  g.ho = conv_output_dim(g.h, g.kh, g.stride, g.pad);
  g.wo = conv_output_dim(g.w, g.kw, g.stride, g.pad);
  return g;
}

// col[(c*kh + i)*kw + j, y*wo + x] = image[c, y*s + i - p, x*s + j - p]
// Output positions [lo, hi) along one axis whose input index o * stride + offset - pad lies in [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t extent, std::size_t stride,
                                                std::size_t offset, std::size_t pad) {
  const std::size_t lo = offset >= pad ? 0 : (pad - offset + stride - 1) / stride;
  if (extent + pad <= offset) return {lo, lo};
  const std::size_t hi = std::min(out, (extent + pad - offset - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

void im2col(const Geometry& g, const double* image, double* col) {
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* plane = image + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      const auto [y_lo, y_hi] = valid_range(g.ho, g.h, g.stride, i, g.pad);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const auto [x_lo, x_hi] = valid_range(g.wo, g.w, g.stride, j, g.pad);
        double* row = col + ((c * g.kh + i) * g.kw + j) * g.col_cols();
        std::fill_n(row, y_lo * g.wo, 0.0);
        for (std::size_t y = y_lo; y < y_hi; ++y) {
          double* dst = row + y * g.wo;
          const double* src = plane + (y * g.stride + i - g.pad) * g.w;
          std::fill_n(dst, x_lo, 0.0);
          for (std::size_t x = x_lo; x < x_hi; ++x) dst[x] = src[x * g.stride + j - g.pad];
          std::fill(dst + x_hi, dst + g.wo, 0.0);
        }
        std::fill(row + y_hi * g.wo, row + g.ho * g.wo, 0.0);
      }
    }
  }
}

void col2im_add(const Geometry& g, const double* col, double* image) {
  for (std::size_t c = 0; c < g.c; ++c) {
    double* plane = image + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      const auto [y_lo, y_hi] = valid_range(g.ho, g.h, g.stride, i, g.pad);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const auto [x_lo, x_hi] = valid_range(g.wo, g.w, g.stride, j, g.pad);
        const double* row = col + ((c * g.kh + i) * g.kw + j) * g.col_cols();
        for (std::size_t y = y_lo; y < y_hi; ++y) {
          const double* src = row + y * g.wo;
          double* dst = plane + (y * g.stride + i - g.pad) * g.w;
          for (std::size_t x = x_lo; x < x_hi; ++x) dst[x * g.stride + j - g.pad] += src[x];
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (in + 2 * pad < kernel)
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " + std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias, const ConvParams& params,
                      ConvCache* cache) {
  const Geometry g = geometry(input.shape(), kernels.shape(), params);
  if (bias.shape() != Shape{g.k}) throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " for " +
                                                   std::to_string(g.k) + " kernels");

  Tensor out({g.n, g.k, g.ho, g.wo});
  std::vector<double> col(g.col_rows() * g.col_cols());
  const std::size_t group_k = g.cg * g.kh * g.kw;  // reduction length per group
  const auto& kern = kernels::active();
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, input.data() + n * g.c * g.h * g.w, col.data());
    double* out_n = out.data() + n * g.k * g.col_cols();
    for (std::size_t k = 0; k < g.k; ++k) std::fill_n(out_n + k * g.col_cols(), g.col_cols(), bias[k]);
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      kern.gemm_nn(g.kg, g.col_cols(), group_k, kernels.data() + grp * g.kg * group_k, group_k,
                   col.data() + grp * group_k * g.col_cols(), g.col_cols(), out_n + grp * g.kg * g.col_cols(),
                   g.col_cols());
    }
  }
  maybe_check_finite(out, "conv2d_forward");
  if (cache) {
    cache->input = input;
    cache->kernel_shape = kernels.shape();
    cache->params = params;
    cache->valid = true;
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& d_out, const Tensor& kernels, const ConvCache& cache) {
  if (!cache.valid) throw ValidationError("conv2d_backward: missing forward cache");
  if (kernels.shape() != cache.kernel_shape)
    throw ShapeError("conv2d_backward: kernels " + shape_string(kernels.shape()) + " differ from cached " +
                     shape_string(cache.kernel_shape));
  const Geometry g = geometry(cache.input.shape(), kernels.shape(), cache.params);
  const Shape expected{g.n, g.k, g.ho, g.wo};
  if (d_out.shape() != expected)
    throw ShapeError("conv2d_backward: upstream " + shape_string(d_out.shape()) + " expected " +
                     shape_string(expected));

  ConvGrads grads{Tensor(cache.input.shape()), Tensor(kernels.shape()), Tensor({g.k})};
  const std::size_t group_k = g.cg * g.kh * g.kw;
  std::vector<double> col(g.col_rows() * g.col_cols());
  std::vector<double> dcol(g.col_rows() * g.col_cols());
  const auto& kern = kernels::active();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* dout_n = d_out.data() + n * g.k * g.col_cols();
    for (std::size_t k = 0; k < g.k; ++k) grads.d_bias[k] += kern.sum(dout_n + k * g.col_cols(), g.col_cols());

    im2col(g, cache.input.data() + n * g.c * g.h * g.w, col.data());
    std::fill(dcol.begin(), dcol.end(), 0.0);
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* dout_g = dout_n + grp * g.kg * g.col_cols();
      // dW_g += dout_g * col_g^T
      kernels::gemm(kernels::Trans::no, kernels::Trans::yes, g.kg, group_k, g.col_cols(), dout_g,
                    col.data() + grp * group_k * g.col_cols(), grads.d_kernels.data() + grp * g.kg * group_k);
      // dcol_g = W_g^T * dout_g
      kernels::gemm(kernels::Trans::yes, kernels::Trans::no, group_k, g.col_cols(), g.kg,
                    kernels.data() + grp * g.kg * group_k, dout_g, dcol.data() + grp * group_k * g.col_cols());
    }
    col2im_add(g, dcol.data(), grads.d_input.data() + n * g.c * g.h * g.w);
  }
  maybe_check_finite(grads.d_input, "conv2d_backward");
  return grads;
}

}  // namespace hiercurric::nn
