#pragma once

// Arithmetic inner loops behind the layers, the optimizer and NCC.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA implementation. The active table is chosen once at first use:
// AVX2 when the CPU reports avx2 and fma, scalar otherwise. The
// HIERCURRIC_ISA environment variable ("scalar" or "avx2") overrides the
// choice; force_isa() does the same programmatically (tests).
//
// Elementwise kernels (axpy, relu, sgd_update) produce bit-identical
// results across ISAs. Reductions (dot, sum, gemm) differ only by
// summation order and FMA rounding. Bitwise run-to-run determinism is
// guaranteed for a fixed ISA.

#include <cstddef>
#include <span>
#include <string_view>

namespace hiercurric::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y = max(x, 0)
  void (*relu)(const double* x, double* y, std::size_t n);
  // v = momentum * v - lr * (g + decay * w); w = w + v
  void (*sgd_update)(double* w, double* v, const double* g, std::size_t n, double momentum, double lr,
                     double decay);
  // C[M,N] += A[M,K] * B[K,N], row-major with leading dimensions.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_table() noexcept;
/// nullptr when the AVX2 variant is not compiled in.
const KernelTable* avx2_table() noexcept;

bool isa_available(Isa isa) noexcept;
const KernelTable& table(Isa isa);
const KernelTable& active() noexcept;
Isa active_isa() noexcept;
/// Throws ValidationError when `isa` is unavailable on this machine.
void force_isa(Isa isa);

// Convenience wrappers over the active table.

double dot(std::span<const double> x, std::span<const double> y);
double sum(std::span<const double> x);
void axpy(double a, std::span<const double> x, std::span<double> y);

enum class Trans { no, yes };

/// C[M,N] += op(A) * op(B); op(A) is M x K and op(B) is K x N.
/// A is stored M x K (or K x M when transposed), B is K x N (or N x K).
/// A * B^T runs as row dot products; other transposed operands are packed into
/// contiguous scratch first.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c);

}  // namespace hiercurric::kernels
