#include "hiercurric/tensor.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>

#include "hiercurric/error.hpp"

namespace hiercurric {

namespace {

std::atomic<bool> g_checked{true};

constexpr char kMagic[4] = {'H', 'C', 'T', 'N'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw IoError("tensor stream truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_product(shape_))
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " + std::to_string(values_.size()) +
                     " values");
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_product(shape) != values_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), values_);
}

void Tensor::check_finite(std::string_view where) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]))
      throw NumericFault(std::string(where) + ": non-finite value at index " + std::to_string(i));
  }
}

void set_checked_mode(bool enabled) noexcept { g_checked.store(enabled); }
bool checked_mode() noexcept { return g_checked.load(); }

void maybe_check_finite(const Tensor& t, std::string_view where) {
  if (checked_mode()) t.check_finite(where);
}

void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype) {
  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kTensorFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
  put_le<std::uint64_t>(out, t.rank());
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.values()) {
    if (dtype == Dtype::f64) {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!out) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a tensor stream (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kTensorFormatVersion) throw IoError("unsupported tensor format version " + std::to_string(version));
  const auto dtype = get_le<std::uint32_t>(in);
  if (dtype != static_cast<std::uint32_t>(Dtype::f32) && dtype != static_cast<std::uint32_t>(Dtype::f64))
    throw IoError("unknown tensor dtype code " + std::to_string(dtype));
  const auto rank = get_le<std::uint64_t>(in);
  if (rank > 16) throw IoError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint64_t>(in);
  std::vector<double> values(shape_product(shape));
  for (auto& v : values) {
    if (dtype == static_cast<std::uint32_t>(Dtype::f64)) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    } else {
      v = std::bit_cast<float>(get_le<std::uint32_t>(in));
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  write_tensor(out, t, dtype);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_tensor(in);
}

std::uint64_t tensor_hash(const Tensor& t, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto mix = [&h](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  mix(t.rank());
  for (auto d : t.shape()) mix(d);
  for (double v : t.values()) mix(std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace hiercurric
