#include <cmath>

#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"
#include "hiercurric/model.hpp"

namespace hiercurric::model {

namespace {

void accumulate(Tensor& into, const Tensor& delta) {
  kernels::active().axpy(1.0, delta.data(), into.data(), into.size());
}

}  // namespace

Network::Network(const ModelSpec& spec) : spec_(spec), plan_(plan_model(spec)), caches_(spec.layers.size()) {}

Tensor Network::forward(const nn::ParamSet& params, const Tensor& batch, nn::Mode mode, Rng* rng,
                        std::optional<double> dropout_override, std::string_view stop_after) {
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != spec_.input)
    throw ShapeError("batch " + shape_string(batch.shape()) + " does not match model input [N," +
                     shape_string(spec_.input).substr(1));
  const bool full = stop_after.empty();
  full_pass_ = false;
  Tensor x = batch;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerDesc& l = spec_.layers[i];
    Cache& cache = caches_[i];
    switch (l.kind) {
      case LayerKind::conv: {
        auto& c = cache.emplace<nn::ConvCache>();
        x = nn::conv2d_forward(x, params.at(l.name + ".weight").weight, params.at(l.name + ".bias").weight,
                               {l.stride, l.pad, l.groups}, full ? &c : nullptr);
        break;
      }
      case LayerKind::fc: {
        auto& c = cache.emplace<nn::FcCache>();
        x = nn::fc_forward(x, params.at(l.name + ".weight").weight, params.at(l.name + ".bias").weight,
                           full ? &c : nullptr);
        break;
      }
      case LayerKind::maxpool: {
        auto& c = cache.emplace<nn::PoolCache>();
        x = nn::maxpool_forward(x, l.window, l.stride, full ? &c : nullptr);
        break;
      }
      case LayerKind::relu: {
        auto& c = cache.emplace<nn::ReluCache>();
        x = nn::relu_forward(x, full ? &c : nullptr);
        break;
      }
      case LayerKind::dropout: {
        auto& c = cache.emplace<nn::DropoutCache>();
        const double rate = dropout_override.value_or(l.rate);
        if (mode == nn::Mode::train && rate > 0.0 && rng == nullptr)
          throw ValidationError("train-mode dropout in layer " + l.name + " needs a random stream");
        Rng unused(0);
        x = nn::dropout_forward(x, rate, mode, rng ? *rng : unused, full ? &c : nullptr);
        break;
      }
    }
    if (!full && l.name == stop_after) return x.reshaped({x.dim(0), x.size() / std::max<std::size_t>(x.dim(0), 1)});
  }
  if (!full) throw ValidationError("unknown layer '" + std::string(stop_after) + "'");
  full_pass_ = true;
  return x;
}

Tensor Network::backward(nn::ParamSet& params, const Tensor& d_logits) {
  if (!full_pass_) throw ValidationError("backward called without a complete forward pass");
  Tensor g = d_logits;
  for (std::size_t i = spec_.layers.size(); i-- > 0;) {
    const LayerDesc& l = spec_.layers[i];
    const Cache& cache = caches_[i];
    switch (l.kind) {
      case LayerKind::conv: {
        auto& w = params.at(l.name + ".weight");
        auto grads = nn::conv2d_backward(g, w.weight, std::get<nn::ConvCache>(cache));
        accumulate(w.grad, grads.d_kernels);
        accumulate(params.at(l.name + ".bias").grad, grads.d_bias);
        g = std::move(grads.d_input);
        break;
      }
      case LayerKind::fc: {
        auto& w = params.at(l.name + ".weight");
        auto grads = nn::fc_backward(g, w.weight, std::get<nn::FcCache>(cache));
        accumulate(w.grad, grads.d_weight);
        accumulate(params.at(l.name + ".bias").grad, grads.d_bias);
        g = std::move(grads.d_input);
        break;
      }
      case LayerKind::maxpool:
        g = nn::maxpool_backward(g, std::get<nn::PoolCache>(cache));
        break;
      case LayerKind::relu:
        g = nn::relu_backward(g, std::get<nn::ReluCache>(cache));
        break;
      case LayerKind::dropout:
        g = nn::dropout_backward(g, std::get<nn::DropoutCache>(cache));
        break;
    }
  }
  return g;
}

Tensor forward_eval(const Checkpoint& ckpt, const Tensor& batch) {
  Network net(ckpt.spec);
  return net.forward(ckpt.params, batch, nn::Mode::eval);
}

Tensor forward_features(const Checkpoint& ckpt, const Tensor& batch, std::string_view layer) {
  if (layer.empty()) throw ValidationError("feature layer name is empty");
  Network net(ckpt.spec);
  return net.forward(ckpt.params, batch, nn::Mode::eval, nullptr, std::nullopt, layer);
}

}  // namespace hiercurric::model
