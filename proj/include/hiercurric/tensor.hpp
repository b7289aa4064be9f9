#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hiercurric {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_product(const Shape& shape);

/// Dense row-major tensor of doubles. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  void fill(double value);
  /// Same values, new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  /// Throws NumericFault naming `where` when any value is NaN or Inf.
  void check_finite(std::string_view where) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Global NaN/Inf faulting. On by default; long runs may switch it off.
void set_checked_mode(bool enabled) noexcept;
bool checked_mode() noexcept;

/// Runs check_finite only when checked mode is on.
void maybe_check_finite(const Tensor& t, std::string_view where);

// Serialization: "HCTN" magic, u32 version, u32 dtype code, u64 rank,
// u64 dims[rank], then raw values. All little-endian.
enum class Dtype : std::uint32_t { f32 = 1, f64 = 2 };

inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor load_tensor(const std::string& path);

/// FNV-1a over shape and value bytes; used for bitwise-identity checks.
std::uint64_t tensor_hash(const Tensor& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace hiercurric
