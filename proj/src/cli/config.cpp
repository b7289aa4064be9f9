#include <cstdio>
#include <set>

#include "hiercurric/cli.hpp"
#include "hiercurric/error.hpp"

namespace hiercurric::cli {

using nlohmann::json;

namespace {

// Typed access to one object of the config document. Error messages carry
// the dotted path of the offending key.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + " must be an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!allowed.count(it.key())) throw ValidationError(where() + ": unknown key '" + it.key() + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  Section sub(const char* key) const {
    if (!has(key)) throw ValidationError(name(key) + " is required");
    return Section(j_.at(key), name(key));
  }

  std::uint64_t seed(const char* key) const {
    if (!has(key)) throw ValidationError(name(key) + " is required (seeds are never implicit)");
    return count<std::uint64_t>(key);
  }

  template <typename T>
  T count(const char* key) const {
    const json& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ValidationError(name(key) + " must be a non-negative integer");
    return static_cast<T>(v.get<std::uint64_t>());
  }
  template <typename T>
  T count_or(const char* key, T fallback) const {
    return has(key) ? count<T>(key) : fallback;
  }

  double real_or(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ValidationError(name(key) + " must be a number");
    return v.get<double>();
  }

  std::string text(const char* key) const {
    if (!has(key)) throw ValidationError(name(key) + " is required");
    const json& v = j_.at(key);
    if (!v.is_string()) throw ValidationError(name(key) + " must be a string");
    return v.get<std::string>();
  }

  bool flag_or(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) throw ValidationError(name(key) + " must be true or false");
    return j_.at(key).get<bool>();
  }

  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

dataprep::SynthSpec parse_synth(const Section& s) {
  s.allow({"n_basic", "subs_per_basic", "channels", "height", "width", "prototype_scale", "subordinate_scale",
           "noise_scale", "samples_per_sub", "seed"});
  dataprep::SynthSpec spec;
  spec.n_basic = s.count_or<std::size_t>("n_basic", spec.n_basic);
  spec.subs_per_basic = s.count_or<std::size_t>("subs_per_basic", spec.subs_per_basic);
  spec.channels = s.count_or<std::size_t>("channels", spec.channels);
  spec.height = s.count_or<std::size_t>("height", spec.height);
  spec.width = s.count_or<std::size_t>("width", spec.width);
  spec.prototype_scale = s.real_or("prototype_scale", spec.prototype_scale);
  spec.subordinate_scale = s.real_or("subordinate_scale", spec.subordinate_scale);
  spec.noise_scale = s.real_or("noise_scale", spec.noise_scale);
  spec.samples_per_sub = s.count_or<std::size_t>("samples_per_sub", spec.samples_per_sub);
  spec.seed = s.seed("seed");
  spec.validate();
  return spec;
}

nn::SgdConfig parse_sgd(const Section& s, nn::SgdConfig cfg) {
  cfg.base_lr = s.real_or("base_lr", cfg.base_lr);
  cfg.momentum = s.real_or("momentum", cfg.momentum);
  cfg.weight_decay = s.real_or("weight_decay", cfg.weight_decay);
  cfg.lr_gamma = s.real_or("lr_gamma", cfg.lr_gamma);
  cfg.lr_step = s.count_or<std::int64_t>("lr_step", cfg.lr_step);
  cfg.batch_size = s.count_or<std::size_t>("batch_size", cfg.batch_size);
  if (s.has("dropout")) cfg.dropout_rate = s.real_or("dropout", 0.0);
  cfg.validate();
  return cfg;
}

curriculum::TrainConfig parse_phase(const Section& s) {
  s.allow({"iterations", "eval_every", "checkpoint_every", "seed", "base_lr", "momentum", "weight_decay", "lr_gamma",
           "lr_step", "batch_size", "dropout", "lowered_prefix", "lowered_mult"});
  curriculum::TrainConfig cfg;
  cfg.sgd = parse_sgd(s, cfg.sgd);
  cfg.max_iterations = s.count_or<std::int64_t>("iterations", cfg.max_iterations);
  cfg.eval_every = s.count_or<std::int64_t>("eval_every", cfg.eval_every);
  cfg.checkpoint_every = s.count_or<std::int64_t>("checkpoint_every", cfg.checkpoint_every);
  cfg.seed = s.seed("seed");
  cfg.lowered_prefix = s.count_or<std::size_t>("lowered_prefix", 0);
  cfg.lowered_mult = s.real_or("lowered_mult", 1.0);
  cfg.validate();
  return cfg;
}

model::InitPolicy parse_init(const json& j, const std::string& where) {
  model::InitPolicy init;
  if (j.is_string()) {
    const auto kind = j.get<std::string>();
    if (kind == "he") {
      init.kind = model::InitPolicy::Kind::he;
    } else if (kind != "gaussian") {
      throw ValidationError(where + ": unknown init '" + kind + "'");
    }
    return init;
  }
  Section s(j, where);
  s.allow({"kind", "stddev"});
  const auto kind = s.text("kind");
  if (kind == "he") {
    init.kind = model::InitPolicy::Kind::he;
  } else if (kind == "gaussian") {
    init.stddev = s.real_or("stddev", init.stddev);
    if (!(init.stddev > 0.0)) throw ValidationError(where + ".stddev must be > 0");
  } else {
    throw ValidationError(where + ": unknown init '" + kind + "'");
  }
  return init;
}

}  // namespace

void apply_override(json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &document;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ValidationError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

std::string config_hash(const json& document) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : document.dump()) h = (h ^ c) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const json& document, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  cfg.document = document;
  const Section root(document, "");
  root.allow({"taxonomy", "data", "model", "regime", "transfer", "output"});

  // data
  const Section data = root.sub("data");
  data.allow({"synth", "train_per_sub", "val_per_sub", "train", "val", "cap", "cap_seed"});
  if (data.has("synth")) {
    if (data.has("train") || data.has("val")) throw ValidationError("data: give either synth or train/val manifests");
    cfg.data.synth = parse_synth(data.sub("synth"));
    cfg.data.train_per_sub = data.count_or<std::size_t>("train_per_sub", cfg.data.synth->samples_per_sub);
    cfg.data.val_per_sub = data.count_or<std::size_t>("val_per_sub", 0);
    if (cfg.data.train_per_sub == 0) throw ValidationError("data.train_per_sub must be >= 1");
    if (cfg.data.train_per_sub + cfg.data.val_per_sub > cfg.data.synth->samples_per_sub)
      throw ValidationError("data.train_per_sub + data.val_per_sub exceeds data.synth.samples_per_sub");
    if (root.has("taxonomy")) throw ValidationError("taxonomy: synthetic data brings its own hierarchy");
  } else {
    cfg.data.train_manifest = resolve(base_dir, data.text("train"));
    if (data.has("val")) cfg.data.val_manifest = resolve(base_dir, data.text("val"));
    const Section tax = root.sub("taxonomy");
    tax.allow({"synsets", "marks"});
    cfg.synsets = resolve(base_dir, tax.text("synsets"));
    cfg.marks = resolve(base_dir, tax.text("marks"));
  }
  cfg.data.cap = data.count_or<std::size_t>("cap", 0);
  if (cfg.data.cap > 0) cfg.data.cap_seed = data.seed("cap_seed");

  // model
  const Section m = root.sub("model");
  m.allow({"spec", "input", "init", "seed"});
  cfg.model_seed = m.seed("seed");
  Shape input;
  if (m.has("input")) {
    input = m.raw("input").get<Shape>();
    if (input.size() != 3) throw ValidationError("model.input must be [channels, height, width]");
  } else if (cfg.data.synth) {
    input = {cfg.data.synth->channels, cfg.data.synth->height, cfg.data.synth->width};
  }
  const json& spec = m.has("spec") ? m.raw("spec") : json("desk");
  if (spec.is_string()) {
    const auto name = spec.get<std::string>();
    if (name == "desk") {
      if (input.empty()) throw ValidationError("model.input is required for the desk spec with manifest data");
      cfg.spec = model::desk_spec(1, input);
    } else if (name == "alexnet") {
      cfg.spec = model::alexnet_spec(1);
      if (!input.empty() && input != cfg.spec.input)
        throw ValidationError("alexnet expects input " + shape_string(cfg.spec.input));
    } else {
      throw ValidationError("model.spec: unknown spec '" + name + "'");
    }
  } else {
    cfg.spec = model::spec_from_json(spec);
  }
  if (m.has("init")) cfg.spec.init = parse_init(m.raw("init"), "model.init");
  model::plan_model(cfg.spec);

  // regime
  const Section r = root.sub("regime");
  r.allow({"kind", "phase_a", "phase_b", "random_category_count"});
  const json& kind = r.raw("kind");
  if (kind.is_string()) {
    cfg.regimes.push_back(curriculum::regime_from_name(kind.get<std::string>()));
  } else if (kind.is_array() && !kind.empty()) {
    for (const auto& k : kind) {
      if (!k.is_string()) throw ValidationError("regime.kind entries must be strings");
      const auto parsed = curriculum::regime_from_name(k.get<std::string>());
      if (std::find(cfg.regimes.begin(), cfg.regimes.end(), parsed) != cfg.regimes.end())
        throw ValidationError("regime.kind lists " + k.get<std::string>() + " twice");
      cfg.regimes.push_back(parsed);
    }
  } else {
    throw ValidationError("regime.kind must be a regime name or a non-empty list of names");
  }
  cfg.phase_b = parse_phase(r.sub("phase_b"));
  cfg.phase_b.task_level = dataprep::Level::sub;
  if (r.has("phase_a")) cfg.phase_a = parse_phase(r.sub("phase_a"));
  cfg.random_category_count = r.count_or<std::size_t>("random_category_count", 0);
  for (auto k : cfg.regimes) make_regime(cfg, k).validate();

  // transfer
  if (root.has("transfer")) {
    const Section t = root.sub("transfer");
    t.allow({"manifest", "n_train", "n_splits", "max_test_per_class", "iterations", "layer", "seed", "base_lr",
             "momentum", "weight_decay", "lr_gamma", "lr_step", "batch_size", "sweep", "jobs"});
    TransferConfig tc;
    if (t.has("manifest")) {
      tc.manifest = resolve(base_dir, t.text("manifest"));
    } else if (!cfg.data.synth) {
      throw ValidationError("transfer.manifest is required with manifest data");
    } else if (cfg.data.train_per_sub + cfg.data.val_per_sub >= cfg.data.synth->samples_per_sub) {
      throw ValidationError("transfer: no synthetic samples are held out; raise data.synth.samples_per_sub");
    }
    const json& nt = t.has("n_train") ? t.raw("n_train") : json::array({15});
    if (nt.is_number_unsigned()) {
      tc.n_train.push_back(nt.get<std::size_t>());
    } else if (nt.is_array() && !nt.empty()) {
      for (const auto& v : nt) {
        if (!v.is_number_unsigned() || v.get<std::size_t>() == 0)
          throw ValidationError("transfer.n_train entries must be positive integers");
        tc.n_train.push_back(v.get<std::size_t>());
      }
    } else {
      throw ValidationError("transfer.n_train must be a positive integer or a list of them");
    }
    tc.probe.n_splits = t.count_or<std::size_t>("n_splits", tc.probe.n_splits);
    tc.probe.max_test_per_class = t.count_or<std::size_t>("max_test_per_class", tc.probe.max_test_per_class);
    tc.probe.iterations = t.count_or<std::int64_t>("iterations", tc.probe.iterations);
    if (t.has("layer")) tc.probe.layer = t.text("layer");
    tc.probe.seed = t.seed("seed");
    tc.probe.jobs = t.count_or<std::size_t>("jobs", 1);
    tc.probe.sgd = parse_sgd(t, tc.probe.sgd);
    tc.sweep = t.flag_or("sweep", false);
    cfg.transfer = tc;
  }

  // output
  if (root.has("output")) {
    const Section o = root.sub("output");
    o.allow({"directory", "checkpoints"});
    if (o.has("directory")) cfg.output = resolve(base_dir, o.text("directory"));
    cfg.save_checkpoints = o.flag_or("checkpoints", true);
  }
  return cfg;
}

curriculum::Regime make_regime(const ExperimentConfig& config, curriculum::RegimeKind kind) {
  curriculum::Regime r;
  r.kind = kind;
  r.init_seed = config.model_seed;
  r.phase_b = config.phase_b;
  r.random_category_count = config.random_category_count;
  if (kind != curriculum::RegimeKind::reference) {
    if (!config.phase_a)
      throw ValidationError("regime " + std::string(curriculum::regime_name(kind)) + " needs regime.phase_a");
    r.phase_a = config.phase_a;
    r.phase_a->task_level =
        kind == curriculum::RegimeKind::reference_extended ? dataprep::Level::sub : dataprep::Level::basic;
  }
  return r;
}

}  // namespace hiercurric::cli
