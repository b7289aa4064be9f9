#include "hiercurric/optim.hpp"

#include <cmath>

#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"

namespace hiercurric::nn {

ParamEntry& ParamSet::add(std::string name, Tensor weight, double lr_mult) {
  if (find(name)) throw ValidationError("duplicate parameter name " + name);
  if (!(lr_mult >= 0.0)) throw ValidationError("lr_mult must be >= 0 for " + name);
  ParamEntry e;
  e.name = std::move(name);
  e.grad = Tensor(weight.shape());
  e.momentum = Tensor(weight.shape());
  e.weight = std::move(weight);
  e.lr_mult = lr_mult;
  entries_.push_back(std::move(e));
  return entries_.back();
}

ParamEntry* ParamSet::find(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const ParamEntry* ParamSet::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

ParamEntry& ParamSet::at(std::string_view name) {
  if (auto* e = find(name)) return *e;
  throw ValidationError("no parameter named " + std::string(name));
}

const ParamEntry& ParamSet::at(std::string_view name) const {
  if (const auto* e = find(name)) return *e;
  throw ValidationError("no parameter named " + std::string(name));
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.weight.size();
  return n;
}

std::uint64_t ParamSet::weight_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) {
    for (unsigned char c : e.name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h = tensor_hash(e.weight, h);
  }
  return h;
}

void SgdConfig::validate() const {
  if (!(base_lr >= 0.0)) throw ValidationError("base_lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ValidationError("lr_gamma must be in (0, 1]");
  if (lr_step <= 0) throw ValidationError("lr_step must be > 0");
  if (batch_size == 0) throw ValidationError("batch_size must be > 0");
  if (dropout_rate && !(*dropout_rate >= 0.0 && *dropout_rate < 1.0))
    throw ValidationError("dropout_rate must be in [0, 1)");
}

double lr_schedule(const SgdConfig& cfg, std::int64_t iteration) {
  if (iteration < 0) throw ValidationError("iteration must be >= 0");
  const std::int64_t drops = iteration / cfg.lr_step;
  double lr = cfg.base_lr;
  for (std::int64_t i = 0; i < drops && lr != 0.0; ++i) lr *= cfg.lr_gamma;
  return lr;
}

void sgd_step(ParamSet& params, const SgdConfig& cfg, std::int64_t iteration) {
  const double lr = lr_schedule(cfg, iteration);
  const auto& k = kernels::active();
  for (auto& e : params.entries()) {
    const double eta = lr * e.lr_mult;
    if (eta == 0.0) continue;
    k.sgd_update(e.weight.data(), e.momentum.data(), e.grad.data(), e.weight.size(), cfg.momentum, eta,
                 cfg.weight_decay);
    maybe_check_finite(e.weight, "sgd_step " + e.name);
  }
}

}  // namespace hiercurric::nn
