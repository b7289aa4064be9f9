#include <set>
#include <sstream>

#include "hiercurric/error.hpp"
#include "hiercurric/model.hpp"

namespace hiercurric::model {

using nlohmann::json;

std::string_view layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::fc: return "fc";
  }
  return "?";
}

LayerDesc LayerDesc::conv(std::string name, std::size_t maps, std::size_t kernel, std::size_t stride,
                          std::size_t pad, std::size_t groups) {
  LayerDesc d;
  d.kind = LayerKind::conv;
  d.name = std::move(name);
  d.units = maps;
  d.kernel_h = d.kernel_w = kernel;
  d.stride = stride;
  d.pad = pad;
  d.groups = groups;
  return d;
}

LayerDesc LayerDesc::maxpool(std::string name, std::size_t window, std::size_t stride) {
  LayerDesc d;
  d.kind = LayerKind::maxpool;
  d.name = std::move(name);
  d.window = window;
  d.stride = stride;
  return d;
}

LayerDesc LayerDesc::relu(std::string name) {
  LayerDesc d;
  d.kind = LayerKind::relu;
  d.name = std::move(name);
  return d;
}

LayerDesc LayerDesc::dropout(std::string name, double rate) {
  LayerDesc d;
  d.kind = LayerKind::dropout;
  d.name = std::move(name);
  d.rate = rate;
  return d;
}

LayerDesc LayerDesc::fc(std::string name, std::size_t units) {
  LayerDesc d;
  d.kind = LayerKind::fc;
  d.name = std::move(name);
  d.units = units;
  return d;
}

std::size_t ModelSpec::n_outputs() const {
  if (layers.empty() || layers.back().kind != LayerKind::fc) throw ValidationError("model must end in an fc layer");
  return layers.back().units;
}

const std::string& ModelSpec::head_name() const {
  if (layers.empty() || layers.back().kind != LayerKind::fc) throw ValidationError("model must end in an fc layer");
  return layers.back().name;
}

std::vector<std::string> ModelSpec::conv_layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers)
    if (l.kind == LayerKind::conv) names.push_back(l.name);
  return names;
}

ModelSpec desk_spec(std::size_t n_outputs, Shape input) {
  ModelSpec s;
  s.input = std::move(input);
  s.layers = {
      LayerDesc::conv("conv1", 32, 5, 1, 2), LayerDesc::relu("relu1"), LayerDesc::maxpool("pool1", 2, 2),
      LayerDesc::conv("conv2", 64, 5, 1, 2), LayerDesc::relu("relu2"), LayerDesc::maxpool("pool2", 2, 2),
      LayerDesc::conv("conv3", 64, 3, 1, 1), LayerDesc::relu("relu3"), LayerDesc::fc("fc4", 256),
      LayerDesc::relu("relu4"),              LayerDesc::dropout("drop4", 0.5), LayerDesc::fc("fc5", n_outputs),
  };
  return s;
}

ModelSpec alexnet_spec(std::size_t n_outputs) {
  ModelSpec s;
  s.input = {3, 227, 227};
  s.layers = {
      LayerDesc::conv("conv1", 96, 11, 4, 0),     LayerDesc::relu("relu1"), LayerDesc::maxpool("pool1", 3, 2),
      LayerDesc::conv("conv2", 256, 5, 1, 2, 2),  LayerDesc::relu("relu2"), LayerDesc::maxpool("pool2", 3, 2),
      LayerDesc::conv("conv3", 384, 3, 1, 1),     LayerDesc::relu("relu3"), LayerDesc::conv("conv4", 384, 3, 1, 1, 2),
      LayerDesc::relu("relu4"),                   LayerDesc::conv("conv5", 256, 3, 1, 1, 2),
      LayerDesc::relu("relu5"),                   LayerDesc::maxpool("pool5", 3, 2),
      LayerDesc::fc("fc6", 4096),                 LayerDesc::relu("relu6"), LayerDesc::dropout("drop6", 0.5),
      LayerDesc::fc("fc7", 4096),                 LayerDesc::relu("relu7"), LayerDesc::dropout("drop7", 0.5),
      LayerDesc::fc("fc8", n_outputs),
  };
  return s;
}

std::vector<LayerPlan> plan_model(const ModelSpec& spec) {
  if (spec.input.size() != 3 || shape_product(spec.input) == 0)
    throw ValidationError("model input must be [C,H,W] with positive dims, got " + shape_string(spec.input));
  if (spec.layers.empty()) throw ValidationError("model has no layers");
  if (spec.layers.back().kind != LayerKind::fc) throw ValidationError("model must end in an fc layer");

  std::set<std::string> names;
  for (const auto& l : spec.layers) {
    if (l.name.empty()) throw ValidationError("layer with empty name");
    if (!names.insert(l.name).second) throw ValidationError("duplicate layer name " + l.name);
  }
  for (const auto& [name, mult] : spec.lr_mult_map) {
    if (!names.count(name)) throw ValidationError("lr_mult for unknown layer " + name);
    if (!(mult >= 0.0)) throw ValidationError("lr_mult must be >= 0 for " + name);
  }

  std::vector<LayerPlan> plan;
  Shape shape = spec.input;
  for (const auto& l : spec.layers) {
    LayerPlan p{l.name, l.kind, {}, {}};
    auto fail = [&](const std::string& why) {
      throw ShapeError("layer " + l.name + " (" + std::string(layer_kind_name(l.kind)) + ") cannot take input " +
                       shape_string(shape) + ": " + why);
    };
    switch (l.kind) {
      case LayerKind::conv: {
        if (shape.size() != 3) fail("expects [C,H,W]");
        if (l.units == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0 || l.groups == 0)
          fail("conv parameters must be positive");
        if (shape[0] % l.groups != 0 || l.units % l.groups != 0) fail("channels not divisible by groups");
        if (shape[1] + 2 * l.pad < l.kernel_h || shape[2] + 2 * l.pad < l.kernel_w) fail("kernel larger than input");
        const std::size_t ho = (shape[1] + 2 * l.pad - l.kernel_h) / l.stride + 1;
        const std::size_t wo = (shape[2] + 2 * l.pad - l.kernel_w) / l.stride + 1;
        p.params = {{l.name + ".weight", {l.units, shape[0] / l.groups, l.kernel_h, l.kernel_w}},
                    {l.name + ".bias", {l.units}}};
        shape = {l.units, ho, wo};
        break;
      }
      case LayerKind::maxpool: {
        if (shape.size() != 3) fail("expects [C,H,W]");
        if (l.window == 0 || l.stride == 0) fail("window and stride must be positive");
        if (l.window > shape[1] || l.window > shape[2]) fail("window larger than input");
        shape = {shape[0], (shape[1] - l.window) / l.stride + 1, (shape[2] - l.window) / l.stride + 1};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0)) fail("dropout rate must be in [0, 1)");
        break;
      case LayerKind::fc: {
        if (l.units == 0) fail("fc units must be positive");
        p.params = {{l.name + ".weight", {l.units, shape_product(shape)}}, {l.name + ".bias", {l.units}}};
        shape = {l.units};
        break;
      }
    }
    p.output = shape;
    plan.push_back(std::move(p));
  }
  return plan;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& layer : plan_model(spec))
    for (const auto& [name, shape] : layer.params) n += shape_product(shape);
  return n;
}

std::string describe_shapes(const ModelSpec& spec) {
  std::ostringstream out;
  out << "input " << shape_string(spec.input) << '\n';
  std::size_t total = 0;
  for (const auto& layer : plan_model(spec)) {
    std::size_t count = 0;
    for (const auto& [name, shape] : layer.params) count += shape_product(shape);
    total += count;
    out << layer.name << ' ' << layer_kind_name(layer.kind) << ' ' << shape_string(layer.output) << " params="
        << count << '\n';
  }
  out << "total params=" << total << '\n';
  return out.str();
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ValidationError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

json spec_to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    json o{{"type", std::string(layer_kind_name(l.kind))}, {"name", l.name}};
    switch (l.kind) {
      case LayerKind::conv:
        o["maps"] = l.units;
        o["kernel"] = json::array({l.kernel_h, l.kernel_w});
        o["stride"] = l.stride;
        o["pad"] = l.pad;
        o["groups"] = l.groups;
        break;
      case LayerKind::maxpool:
        o["window"] = l.window;
        o["stride"] = l.stride;
        break;
      case LayerKind::dropout:
        o["rate"] = l.rate;
        break;
      case LayerKind::fc:
        o["units"] = l.units;
        break;
      case LayerKind::relu:
        break;
    }
    layers.push_back(std::move(o));
  }
  json init{{"kind", spec.init.kind == InitPolicy::Kind::he ? "he" : "gaussian"}};
  if (spec.init.kind == InitPolicy::Kind::gaussian) init["stddev"] = spec.init.stddev;
  return json{{"input", spec.input}, {"layers", layers}, {"lr_mult", spec.lr_mult_map}, {"init", init}};
}

ModelSpec spec_from_json(const json& j) {
  try {
    if (!j.is_object()) throw ValidationError("model spec must be an object");
    reject_unknown(j, {"input", "layers", "lr_mult", "init"}, "model spec");
    ModelSpec s;
    s.input = j.at("input").get<Shape>();
    std::size_t counter = 0;
    for (const auto& o : j.at("layers")) {
      ++counter;
      const auto type = o.at("type").get<std::string>();
      LayerDesc d;
      d.name = get_or<std::string>(o, "name", type + std::to_string(counter));
      if (type == "conv") {
        reject_unknown(o, {"type", "name", "maps", "kernel", "stride", "pad", "groups"}, "conv layer " + d.name);
        d.kind = LayerKind::conv;
        d.units = o.at("maps").get<std::size_t>();
        const auto& k = o.at("kernel");
        if (k.is_array()) {
          if (k.size() != 2) throw ValidationError("conv kernel must be an integer or [kh, kw]");
          d.kernel_h = k[0].get<std::size_t>();
          d.kernel_w = k[1].get<std::size_t>();
        } else {
          d.kernel_h = d.kernel_w = k.get<std::size_t>();
        }
        d.stride = get_or<std::size_t>(o, "stride", 1);
        d.pad = get_or<std::size_t>(o, "pad", 0);
        d.groups = get_or<std::size_t>(o, "groups", 1);
      } else if (type == "maxpool") {
        reject_unknown(o, {"type", "name", "window", "stride"}, "maxpool layer " + d.name);
        d.kind = LayerKind::maxpool;
        d.window = o.at("window").get<std::size_t>();
        d.stride = get_or<std::size_t>(o, "stride", d.window);
      } else if (type == "relu") {
        reject_unknown(o, {"type", "name"}, "relu layer " + d.name);
        d.kind = LayerKind::relu;
      } else if (type == "dropout") {
        reject_unknown(o, {"type", "name", "rate"}, "dropout layer " + d.name);
        d.kind = LayerKind::dropout;
        d.rate = o.at("rate").get<double>();
      } else if (type == "fc") {
        reject_unknown(o, {"type", "name", "units"}, "fc layer " + d.name);
        d.kind = LayerKind::fc;
        d.units = o.at("units").get<std::size_t>();
      } else {
        throw ValidationError("unknown layer type '" + type + "'");
      }
      s.layers.push_back(std::move(d));
    }
    if (j.contains("lr_mult")) s.lr_mult_map = j.at("lr_mult").get<std::map<std::string, double>>();
    if (j.contains("init")) {
      const auto& init = j.at("init");
      reject_unknown(init, {"kind", "stddev"}, "init");
      const auto kind = init.at("kind").get<std::string>();
      if (kind == "gaussian") {
        s.init.kind = InitPolicy::Kind::gaussian;
        s.init.stddev = get_or<double>(init, "stddev", 0.01);
      } else if (kind == "he") {
        s.init.kind = InitPolicy::Kind::he;
      } else {
        throw ValidationError("unknown init kind '" + kind + "'");
      }
    }
    plan_model(s);
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model spec: ") + e.what());
  }
}

std::string_view phase_name(PhaseTag phase) noexcept {
  switch (phase) {
    case PhaseTag::basic: return "basic";
    case PhaseTag::subordinate: return "subordinate";
    case PhaseTag::transfer: return "transfer";
  }
  return "?";
}

PhaseTag phase_from_name(std::string_view name) {
  if (name == "basic") return PhaseTag::basic;
  if (name == "subordinate") return PhaseTag::subordinate;
  if (name == "transfer") return PhaseTag::transfer;
  throw ValidationError("unknown phase tag '" + std::string(name) + "'");
}

}  // namespace hiercurric::model
