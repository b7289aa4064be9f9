#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hiercurric/tensor.hpp"

namespace hiercurric::nn {

struct ParamEntry {
  std::string name;
  Tensor weight;
  Tensor grad;
  Tensor momentum;
  double lr_mult = 1.0;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Trainable tensors plus optimizer state, in insertion order.
class ParamSet {
 public:
  /// Adds an entry with zeroed gradient and momentum. Names must be unique.
  ParamEntry& add(std::string name, Tensor weight, double lr_mult = 1.0);

  ParamEntry& at(std::string_view name);
  const ParamEntry& at(std::string_view name) const;
  ParamEntry* find(std::string_view name);
  const ParamEntry* find(std::string_view name) const;

  std::vector<ParamEntry>& entries() noexcept { return entries_; }
  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  void zero_grad();
  /// Total number of weight scalars.
  std::size_t parameter_count() const;
  /// Hash over names and weights only (not gradients or momentum).
  std::uint64_t weight_hash() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<ParamEntry> entries_;
};

struct SgdConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_gamma = 0.1;
  std::int64_t lr_step = 100000;
  std::size_t batch_size = 256;
  /// Training-time rate for every dropout layer; nullopt keeps each layer's own rate.
  std::optional<double> dropout_rate;

  void validate() const;
};

/// base_lr * lr_gamma ^ floor(iteration / lr_step).
double lr_schedule(const SgdConfig& cfg, std::int64_t iteration);

/// Momentum SGD with weight decay, per entry with eta = lr_schedule * lr_mult:
///   v <- momentum * v - eta * (g + weight_decay * w);  w <- w + v
/// Entries whose eta is zero are skipped entirely (weight and momentum untouched).
void sgd_step(ParamSet& params, const SgdConfig& cfg, std::int64_t iteration);

}  // namespace hiercurric::nn
