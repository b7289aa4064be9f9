#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"
#include "kernels_impl.hpp"

namespace hiercurric::kernels {

namespace {

constexpr KernelTable kScalar{Isa::scalar,        scalar::dot,        scalar::sum,    scalar::axpy,
                              scalar::relu,       scalar::sgd_update, scalar::gemm_nn};

#if defined(HIERCURRIC_HAVE_AVX2)
constexpr KernelTable kAvx2{Isa::avx2, avx2::dot, avx2::sum, avx2::axpy, avx2::relu, avx2::sgd_update, avx2::gemm_nn};
#endif

bool cpu_has_avx2() noexcept {
#if defined(HIERCURRIC_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() noexcept {
  const char* env = std::getenv("HIERCURRIC_ISA");
  if (env != nullptr && std::string(env) == "scalar") return &kScalar;
  if (cpu_has_avx2()) return avx2_table();
  return &kScalar;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

const KernelTable& scalar_table() noexcept { return kScalar; }

const KernelTable* avx2_table() noexcept {
#if defined(HIERCURRIC_HAVE_AVX2)
  return &kAvx2;
#else
  return nullptr;
#endif
}

bool isa_available(Isa isa) noexcept { return isa == Isa::scalar || cpu_has_avx2(); }

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) throw ValidationError("kernel ISA " + std::string(isa_name(isa)) + " unavailable");
  return isa == Isa::avx2 ? *avx2_table() : kScalar;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

Isa active_isa() noexcept { return active().isa; }

void force_isa(Isa isa) { current().store(&table(isa)); }

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("dot: length mismatch");
  return active().dot(x.data(), y.data(), x.size());
}

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  active().axpy(a, x.data(), y.data(), x.size());
}

namespace {

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  if (ta == Trans::no && tb == Trans::yes) {
    // Rows of A and rows of B are both contiguous: one dot product per element.
    const auto& t = active();
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) c[i * n + j] += t.dot(a + i * k, b + j * k, k);
    return;
  }
  std::vector<double> a_packed;
  std::vector<double> b_packed;
  if (ta == Trans::yes) {
    a_packed = transpose(a, k, m);
    a = a_packed.data();
  }
  if (tb == Trans::yes) {
    b_packed = transpose(b, n, k);
    b = b_packed.data();
  }
  active().gemm_nn(m, n, k, a, k, b, n, c, n);
}

}  // namespace hiercurric::kernels
