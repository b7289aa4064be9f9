// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma
// and is only entered after the runtime CPU check in dispatch.cpp.

#include <immintrin.h>

#include <algorithm>

#include "kernels_impl.hpp"

namespace hiercurric::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// ROWS x (4 * VECS) block of C, full reduction over k.
template <int ROWS, int VECS>
inline void block(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                  std::size_t ldc) {
  __m256d acc[ROWS][VECS];
  for (int r = 0; r < ROWS; ++r)
    for (int v = 0; v < VECS; ++v) acc[r][v] = _mm256_setzero_pd();

  for (std::size_t p = 0; p < k; ++p) {
    __m256d bv[VECS];
    for (int v = 0; v < VECS; ++v) bv[v] = _mm256_loadu_pd(b + p * ldb + 4 * v);
    for (int r = 0; r < ROWS; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      for (int v = 0; v < VECS; ++v) acc[r][v] = _mm256_fmadd_pd(av, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < ROWS; ++r) {
    for (int v = 0; v < VECS; ++v) {
      double* dst = c + r * ldc + 4 * v;
      _mm256_storeu_pd(dst, _mm256_add_pd(_mm256_loadu_pd(dst), acc[r][v]));
    }
  }
}

inline void edge(std::size_t rows, std::size_t cols, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * lda + p] * b[p * ldb + j];
      c[i * ldc + j] += acc;
    }
  }
}

template <int ROWS>
inline void row_panel(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 12 <= n; j += 12) block<ROWS, 3>(k, a, lda, b + j, ldb, c + j, ldc);
  for (; j + 8 <= n; j += 8) block<ROWS, 2>(k, a, lda, b + j, ldb, c + j, ldc);
  for (; j + 4 <= n; j += 4) block<ROWS, 1>(k, a, lda, b + j, ldb, c + j, ldc);
  if (j < n) edge(ROWS, n - j, k, a, lda, b + j, ldb, c + j, ldc);
}

}  // namespace

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double total = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) total += x[i] * y[i];
  return total;
}

double sum(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double total = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) total += x[i];
  return total;
}

// No FMA here: mul then add matches the scalar kernel bit for bit.
void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void relu(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  // max_pd returns the second operand for NaN and for -0.0 vs +0.0, like the scalar select.
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void sgd_update(double* w, double* v, const double* g, std::size_t n, double momentum, double lr, double decay) {
  const __m256d mu = _mm256_set1_pd(momentum);
  const __m256d eta = _mm256_set1_pd(lr);
  const __m256d lambda = _mm256_set1_pd(decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d wv = _mm256_loadu_pd(w + i);
    const __m256d step = _mm256_add_pd(_mm256_loadu_pd(g + i), _mm256_mul_pd(lambda, wv));
    const __m256d vel = _mm256_sub_pd(_mm256_mul_pd(mu, _mm256_loadu_pd(v + i)), _mm256_mul_pd(eta, step));
    _mm256_storeu_pd(v + i, vel);
    _mm256_storeu_pd(w + i, _mm256_add_pd(wv, vel));
  }
  for (; i < n; ++i) {
    const double step = g[i] + decay * w[i];
    v[i] = momentum * v[i] - lr * step;
    w[i] = w[i] + v[i];
  }
}

// k is split into slabs so the active rows of B stay in cache across the row panels.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  constexpr std::size_t kSlab = 256;
  for (std::size_t p = 0; p < k; p += kSlab) {
    const std::size_t kc = std::min(kSlab, k - p);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) row_panel<4>(n, kc, a + i * lda + p, lda, b + p * ldb, ldb, c + i * ldc, ldc);
    for (; i < m; ++i) row_panel<1>(n, kc, a + i * lda + p, lda, b + p * ldb, ldb, c + i * ldc, ldc);
  }
}

}  // namespace hiercurric::kernels::avx2
