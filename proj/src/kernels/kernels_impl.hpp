#pragma once

#include <cstddef>

namespace hiercurric::kernels {

#define HIERCURRIC_KERNEL_DECLS                                                                                     \
  double dot(const double* x, const double* y, std::size_t n);                                                     \
  double sum(const double* x, std::size_t n);                                                                      \
  void axpy(double a, const double* x, double* y, std::size_t n);                                                  \
  void relu(const double* x, double* y, std::size_t n);                                                            \
  void sgd_update(double* w, double* v, const double* g, std::size_t n, double momentum, double lr, double decay); \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,    \
               std::size_t ldb, double* c, std::size_t ldc);

namespace scalar {
HIERCURRIC_KERNEL_DECLS
}

#if defined(HIERCURRIC_HAVE_AVX2)
namespace avx2 {
HIERCURRIC_KERNEL_DECLS
}
#endif

#undef HIERCURRIC_KERNEL_DECLS

}  // namespace hiercurric::kernels
