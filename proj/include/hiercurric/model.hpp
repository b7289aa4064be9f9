#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hiercurric/layers.hpp"
#include "hiercurric/optim.hpp"
#include "hiercurric/taxonomy.hpp"
#include "hiercurric/tensor.hpp"

namespace hiercurric::model {

enum class LayerKind { conv, maxpool, relu, dropout, fc };

std::string_view layer_kind_name(LayerKind kind) noexcept;

struct LayerDesc {
  LayerKind kind = LayerKind::relu;
  std::string name;
  std::size_t units = 0;  // conv: output maps, fc: output units
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;
  std::size_t window = 0;  // maxpool
  double rate = 0.0;       // dropout

  static LayerDesc conv(std::string name, std::size_t maps, std::size_t kernel, std::size_t stride, std::size_t pad,
                        std::size_t groups = 1);
  static LayerDesc maxpool(std::string name, std::size_t window, std::size_t stride);
  static LayerDesc relu(std::string name);
  static LayerDesc dropout(std::string name, double rate);
  static LayerDesc fc(std::string name, std::size_t units);

  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

/// Weight initialization. Biases always start at zero.
struct InitPolicy {
  enum class Kind { gaussian, he };
  Kind kind = Kind::gaussian;
  double stddev = 0.01;  // gaussian only; he uses sqrt(2 / fan_in)

  friend bool operator==(const InitPolicy&, const InitPolicy&) = default;
};

struct ModelSpec {
  Shape input;  // {C, H, W}
  std::vector<LayerDesc> layers;
  std::map<std::string, double> lr_mult_map;  // layer name -> lr multiplier (default 1)
  InitPolicy init;

  /// Width of the final fc layer.
  std::size_t n_outputs() const;
  /// Name of the final fc layer (the output head).
  const std::string& head_name() const;
  std::vector<std::string> conv_layer_names() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Small conv-then-fc network for desk-scale experiments (3 conv + 2 fc):
/// conv(32,5,p2)-relu-pool(2,2)-conv(64,5,p2)-relu-pool(2,2)-conv(64,3,p1)-relu-fc(256)-relu-dropout(0.5)-fc(n).
ModelSpec desk_spec(std::size_t n_outputs, Shape input = {3, 32, 32});

/// Full-size AlexNet layout (grouped conv2/4/5, LRN omitted) with `n_outputs` classes.
ModelSpec alexnet_spec(std::size_t n_outputs = 308);

struct LayerPlan {
  std::string name;
  LayerKind kind;
  Shape output;  // per-sample shape
  std::vector<std::pair<std::string, Shape>> params;
};

/// Shape pass over the spec. Throws ShapeError naming the first layer whose
/// input shape it cannot accept, ValidationError for malformed specs.
std::vector<LayerPlan> plan_model(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);
/// One line per layer: name, kind, output shape, parameter count.
std::string describe_shapes(const ModelSpec& spec);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------

enum class PhaseTag { basic, subordinate, transfer };
std::string_view phase_name(PhaseTag phase) noexcept;
PhaseTag phase_from_name(std::string_view name);

struct Checkpoint {
  ModelSpec spec;
  nn::ParamSet params;
  std::int64_t iteration = 0;
  PhaseTag phase = PhaseTag::basic;
  std::string rng_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Fresh parameters drawn in layer order from Rng(seed).
Checkpoint build_model(const ModelSpec& spec, std::uint64_t seed, PhaseTag phase = PhaseTag::basic);

enum class HeadInit { random, replicate };

/// Swaps the output head for one with `n_new_outputs` units. Body tensors
/// (weights and momentum) are copied verbatim; head momentum is zeroed and
/// the phase advances one step. In replicate mode output unit j takes the
/// weight row and bias of basic unit labels.sub_to_basic()[j].
Checkpoint replace_head(const Checkpoint& ckpt, std::size_t n_new_outputs, HeadInit init,
                        const taxonomy::LabelMap& labels, std::uint64_t seed);

/// First `prefix_count` conv layers get `mult`; every other layer gets 1.
Checkpoint set_layer_lr_mults(const Checkpoint& ckpt, std::size_t prefix_count, double mult);

// ---------------------------------------------------------------------------

/// Layer-by-layer executor holding the forward caches needed by backward().
class Network {
 public:
  explicit Network(const ModelSpec& spec);

  /// Runs the layers in order. With `stop_after` set, returns the activation
  /// of that layer instead of the logits. Train mode requires `rng`.
  Tensor forward(const nn::ParamSet& params, const Tensor& batch, nn::Mode mode, Rng* rng = nullptr,
                 std::optional<double> dropout_override = std::nullopt, std::string_view stop_after = {});

  /// Backpropagates d_logits through the last full forward pass, adding into params' gradients.
  /// Returns the gradient with respect to the input batch.
  Tensor backward(nn::ParamSet& params, const Tensor& d_logits);

  const std::vector<LayerPlan>& plan() const noexcept { return plan_; }

 private:
  using Cache = std::variant<std::monostate, nn::ConvCache, nn::FcCache, nn::PoolCache, nn::ReluCache,
                             nn::DropoutCache>;
  ModelSpec spec_;
  std::vector<LayerPlan> plan_;
  std::vector<Cache> caches_;
  bool full_pass_ = false;
};

/// Eval-mode logits for a [N, C, H, W] batch.
Tensor forward_eval(const Checkpoint& ckpt, const Tensor& batch);
/// Eval-mode activations of `layer`, flattened to [N, D].
Tensor forward_features(const Checkpoint& ckpt, const Tensor& batch, std::string_view layer);

// ---------------------------------------------------------------------------
// Checkpoint file: "HCCK" magic, u32 version, u64 JSON length, JSON manifest
// (spec, iteration, phase, rng state, tensor index), then the tensor blobs
// in index order, each in the tensor stream format.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hiercurric::model
