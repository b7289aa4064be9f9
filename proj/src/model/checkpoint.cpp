#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hiercurric/error.hpp"
#include "hiercurric/model.hpp"
#include "hiercurric/rng.hpp"

namespace hiercurric::model {

using nlohmann::json;

namespace {

double init_stddev(const InitPolicy& init, const Shape& weight_shape) {
  if (init.kind == InitPolicy::Kind::gaussian) return init.stddev;
  const std::size_t fan_in = shape_product(weight_shape) / weight_shape.at(0);
  return std::sqrt(2.0 / static_cast<double>(fan_in));
}

double lr_mult_for(const ModelSpec& spec, const std::string& layer) {
  const auto it = spec.lr_mult_map.find(layer);
  return it == spec.lr_mult_map.end() ? 1.0 : it->second;
}

PhaseTag next_phase(PhaseTag phase) {
  return phase == PhaseTag::basic ? PhaseTag::subordinate : PhaseTag::transfer;
}

constexpr char kMagic[4] = {'H', 'C', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  if (offset + width > bytes.size()) throw IoError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

}  // namespace

Checkpoint build_model(const ModelSpec& spec, std::uint64_t seed, PhaseTag phase) {
  const auto plan = plan_model(spec);
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.phase = phase;
  Rng rng(seed);
  for (const auto& layer : plan) {
    for (const auto& [name, shape] : layer.params) {
      Tensor t(shape);
      if (name.ends_with(".weight")) nn::init_gaussian(t, init_stddev(spec.init, shape), rng);
      ckpt.params.add(name, std::move(t), lr_mult_for(spec, layer.name));
    }
  }
  ckpt.rng_state = rng.state();
  return ckpt;
}

Checkpoint replace_head(const Checkpoint& ckpt, std::size_t n_new_outputs, HeadInit init,
                        const taxonomy::LabelMap& labels, std::uint64_t seed) {
  if (n_new_outputs == 0) throw ValidationError("replace_head: new head needs at least one output");
  const std::string head = ckpt.spec.head_name();
  const auto& old_w = ckpt.params.at(head + ".weight");
  const auto& old_b = ckpt.params.at(head + ".bias");
  const std::size_t n_old = old_w.weight.dim(0);
  const std::size_t width = old_w.weight.dim(1);

  std::vector<std::size_t> source_row;
  if (init == HeadInit::replicate) {
    if (n_old != labels.n_basic())
      throw ValidationError("replace_head: head has " + std::to_string(n_old) + " outputs but label map has " +
                            std::to_string(labels.n_basic()) + " basic categories");
    if (n_new_outputs != labels.n_sub())
      throw ValidationError("replace_head: " + std::to_string(n_new_outputs) + " new outputs but label map has " +
                            std::to_string(labels.n_sub()) + " subordinate categories");
    source_row = labels.sub_to_basic();
  }

  Checkpoint out;
  out.spec = ckpt.spec;
  out.spec.layers.back().units = n_new_outputs;
  out.iteration = 0;
  out.phase = next_phase(ckpt.phase);
  out.rng_state = ckpt.rng_state;

  Tensor weight({n_new_outputs, width});
  Tensor bias({n_new_outputs});
  if (init == HeadInit::replicate) {
    for (std::size_t j = 0; j < n_new_outputs; ++j) {
      const std::size_t src = source_row[j];
      std::copy_n(old_w.weight.data() + src * width, width, weight.data() + j * width);
      bias[j] = old_b.weight[src];
    }
  } else {
    Rng rng(seed);
    nn::init_gaussian(weight, init_stddev(ckpt.spec.init, weight.shape()), rng);
  }

  for (const auto& e : ckpt.params.entries()) {
    if (e.name == head + ".weight") {
      out.params.add(e.name, weight, e.lr_mult);
    } else if (e.name == head + ".bias") {
      out.params.add(e.name, bias, e.lr_mult);
    } else {
      auto& copy = out.params.add(e.name, e.weight, e.lr_mult);
      copy.momentum = e.momentum;
    }
  }
  return out;
}

Checkpoint set_layer_lr_mults(const Checkpoint& ckpt, std::size_t prefix_count, double mult) {
  const auto convs = ckpt.spec.conv_layer_names();
  if (prefix_count > convs.size())
    throw ValidationError("prefix_count " + std::to_string(prefix_count) + " exceeds " +
                          std::to_string(convs.size()) + " conv layers");
  if (!(mult >= 0.0)) throw ValidationError("lr multiplier must be >= 0");
  Checkpoint out = ckpt;
  out.spec.lr_mult_map.clear();
  for (std::size_t i = 0; i < prefix_count; ++i) out.spec.lr_mult_map[convs[i]] = mult;
  for (const auto& layer : ckpt.spec.layers) {
    const double m = lr_mult_for(out.spec, layer.name);
    for (const char* suffix : {".weight", ".bias"})
      if (auto* e = out.params.find(layer.name + suffix)) e->lr_mult = m;
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string blobs;
  json index = json::array();
  auto append = [&](const nn::ParamEntry& e, const char* role, const Tensor& t) {
    std::ostringstream s;
    write_tensor(s, t, Dtype::f64);
    const std::string bytes = s.str();
    index.push_back({{"name", e.name}, {"role", role}, {"lr_mult", e.lr_mult}, {"offset", blobs.size()},
                     {"bytes", bytes.size()}});
    blobs += bytes;
  };
  for (const auto& e : ckpt.params.entries()) {
    append(e, "weight", e.weight);
    append(e, "momentum", e.momentum);
  }
  const json manifest{{"format", "hiercurric-checkpoint"},
                      {"version", kCheckpointVersion},
                      {"spec", spec_to_json(ckpt.spec)},
                      {"iteration", ckpt.iteration},
                      {"phase", std::string(phase_name(ckpt.phase))},
                      {"rng_state", ckpt.rng_state},
                      {"tensors", index}};
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  out += blobs;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw IoError("not a checkpoint (bad magic)");
  const auto version = get_le(bytes, 4, 4);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto json_len = get_le(bytes, 8, 8);
  if (16 + json_len > bytes.size()) throw IoError("checkpoint truncated");
  const std::string_view blobs = bytes.substr(16 + json_len);

  Checkpoint ckpt;
  try {
    const json manifest = json::parse(bytes.substr(16, json_len));
    ckpt.spec = spec_from_json(manifest.at("spec"));
    ckpt.iteration = manifest.at("iteration").get<std::int64_t>();
    ckpt.phase = phase_from_name(manifest.at("phase").get<std::string>());
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
    for (const auto& entry : manifest.at("tensors")) {
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("bytes").get<std::size_t>();
      if (offset + length > blobs.size()) throw IoError("checkpoint tensor blob out of range");
      std::istringstream in{std::string(blobs.substr(offset, length))};
      Tensor t = read_tensor(in);
      const auto name = entry.at("name").get<std::string>();
      const auto role = entry.at("role").get<std::string>();
      if (role == "weight") {
        ckpt.params.add(name, std::move(t), entry.at("lr_mult").get<double>());
      } else if (role == "momentum") {
        auto& e = ckpt.params.at(name);
        if (t.shape() != e.weight.shape()) throw IoError("momentum shape mismatch for " + name);
        e.momentum = std::move(t);
      } else {
        throw IoError("unknown tensor role '" + role + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint manifest: ") + e.what());
  }

  std::size_t expected = 0;
  for (const auto& layer : plan_model(ckpt.spec)) {
    for (const auto& [name, shape] : layer.params) {
      ++expected;
      const auto* e = ckpt.params.find(name);
      if (!e || e->weight.shape() != shape) throw IoError("checkpoint tensor " + name + " does not match the spec");
    }
  }
  if (expected != ckpt.params.size()) throw IoError("checkpoint holds tensors the spec does not declare");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

}  // namespace hiercurric::model
