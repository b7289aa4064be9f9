#include <algorithm>
#include <array>
#include <numeric>

#include "hiercurric/curriculum.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/rng.hpp"

namespace hiercurric::curriculum {

namespace {

constexpr std::uint64_t kHeadStream = 4;

constexpr std::array<std::pair<RegimeKind, std::string_view>, 5> kNames{{
    {RegimeKind::reference, "reference"},
    {RegimeKind::reference_extended, "reference_extended"},
    {RegimeKind::random_subset_pretrain, "random_subset_pretrain"},
    {RegimeKind::facilitated_random_head, "facilitated_random_head"},
    {RegimeKind::facilitated_replicated_head, "facilitated_replicated_head"},
}};

model::ModelSpec with_outputs(model::ModelSpec spec, std::size_t n) {
  spec.layers.back().units = n;
  return spec;
}

dataprep::DatasetManifest restrict_to(const dataprep::DatasetManifest& manifest, const taxonomy::LabelMap& labels) {
  dataprep::DatasetManifest out;
  out.split = manifest.split;
  for (const auto& s : manifest.samples)
    if (labels.contains(s.leaf_id)) out.samples.push_back(s);
  return out;
}

void append(RunReport& into, const RunReport& from) {
  into.curves.insert(into.curves.end(), from.curves.begin(), from.curves.end());
  for (const auto& [k, v] : from.final) into.final[k] = v;
  into.checkpoints.insert(into.checkpoints.end(), from.checkpoints.begin(), from.checkpoints.end());
}

}  // namespace

std::string_view regime_name(RegimeKind kind) noexcept {
  for (const auto& [k, name] : kNames)
    if (k == kind) return name;
  return "unknown";
}

RegimeKind regime_from_name(std::string_view name) {
  for (const auto& [k, n] : kNames)
    if (n == name) return k;
  throw ValidationError("unknown regime '" + std::string(name) + "'");
}

void Regime::validate() const {
  const std::string name(regime_name(kind));
  phase_b.validate();
  if (phase_b.task_level != Level::sub) throw ValidationError(name + ": phase B must train subordinate labels");
  if (kind == RegimeKind::reference) {
    if (phase_a) throw ValidationError("reference regime has no pretraining phase");
    return;
  }
  if (!phase_a) throw ValidationError(name + " needs a pretraining phase");
  phase_a->validate();
  const Level expected = kind == RegimeKind::reference_extended ? Level::sub : Level::basic;
  if (phase_a->task_level != expected)
    throw ValidationError(name + ": phase A must train " + (expected == Level::sub ? "subordinate" : "basic") +
                          " labels");
}

std::set<taxonomy::NodeId> random_category_set(const taxonomy::SynsetGraph& graph, std::size_t count,
                                               std::uint64_t seed) {
  if (count == 0) throw ValidationError("random category count must be >= 1");
  std::vector<std::size_t> candidates;
  for (std::size_t n = 0; n < graph.node_count(); ++n)
    if (!graph.is_root(n) && !graph.is_basic(n)) candidates.push_back(n);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(candidates));

  std::vector<std::size_t> chosen;
  for (std::size_t c : candidates) {
    if (chosen.size() == count) break;
    const bool nested = std::any_of(chosen.begin(), chosen.end(), [&](std::size_t o) {
      return graph.is_strict_ancestor(o, c) || graph.is_strict_ancestor(c, o);
    });
    if (!nested) chosen.push_back(c);
  }
  if (chosen.size() < count)
    throw ValidationError("only " + std::to_string(chosen.size()) + " non-nested non-basic categories available, " +
                          std::to_string(count) + " requested");
  std::set<taxonomy::NodeId> out;
  for (std::size_t c : chosen) out.insert(graph.id(c));
  return out;
}

RegimeResult run_regime(const Regime& regime, const DataBundle& data, const model::ModelSpec& spec,
                        const RegimeOptions& options) {
  regime.validate();
  if (!data.images) throw ValidationError("run_regime: data bundle has no images");
  const auto& images = *data.images;
  const auto& labels = data.labels;

  RegimeResult result;
  result.report.regime = std::string(regime_name(regime.kind));
  PhaseOptions phase_opts;
  phase_opts.checkpoint_dir = options.checkpoint_dir;
  phase_opts.keep_snapshots = options.keep_snapshots;

  model::Checkpoint start;
  if (regime.kind == RegimeKind::reference) {
    start = model::build_model(with_outputs(spec, labels.n_sub()), regime.init_seed, model::PhaseTag::subordinate);
  } else {
    const TrainConfig& cfg_a = *regime.phase_a;
    const taxonomy::LabelMap* labels_a = &labels;
    dataprep::DatasetManifest train_a;
    dataprep::DatasetManifest val_a;
    std::size_t n_a = 0;
    model::PhaseTag tag_a = model::PhaseTag::basic;
    switch (regime.kind) {
      case RegimeKind::reference_extended:
        train_a = data.train;
        val_a = data.val;
        n_a = labels.n_sub();
        tag_a = model::PhaseTag::subordinate;
        break;
      case RegimeKind::random_subset_pretrain: {
        const std::size_t count = regime.random_category_count ? regime.random_category_count : labels.n_basic();
        const auto set = random_category_set(data.graph, count, cfg_a.seed);
        for (const auto& id : set)
          if (data.graph.basic_marks().count(id))
            throw ValidationError("random pretraining category " + id + " is a basic category");
        result.pretrain_labels = taxonomy::allocate_covered_descendants(data.graph.with_marks(set));
        labels_a = &*result.pretrain_labels;
        train_a = restrict_to(data.train, *labels_a);
        val_a = restrict_to(data.val, *labels_a);
        n_a = labels_a->n_basic();
        break;
      }
      default:
        train_a = data.basic_train;
        val_a = data.val;
        n_a = labels.n_basic();
        break;
    }
    auto init = model::build_model(with_outputs(spec, n_a), regime.init_seed, tag_a);
    phase_opts.tag = "A";
    auto a = train_phase(init, cfg_a, train_a, val_a, images, *labels_a, phase_opts);
    append(result.report, a.report);
    for (auto& s : a.snapshots) result.snapshots.push_back(std::move(s));
    result.phase_a_snapshots = result.snapshots.size();
    result.phase_a_final = a.final;

    const std::uint64_t head_seed = derive_seed(regime.phase_b.seed, kHeadStream);
    switch (regime.kind) {
      case RegimeKind::reference_extended:
        start = a.final;
        start.iteration = 0;
        break;
      case RegimeKind::facilitated_replicated_head:
        start = model::replace_head(a.final, labels.n_sub(), model::HeadInit::replicate, labels, head_seed);
        break;
      default:
        start = model::replace_head(a.final, labels.n_sub(), model::HeadInit::random, labels, head_seed);
        break;
    }
    start = model::set_layer_lr_mults(start, regime.phase_b.lowered_prefix, regime.phase_b.lowered_mult);
  }

  result.phase_b_start = start;
  phase_opts.tag = "B";
  auto b = train_phase(start, regime.phase_b, data.train, data.val, images, labels, phase_opts);
  append(result.report, b.report);
  for (auto& s : b.snapshots) result.snapshots.push_back(std::move(s));
  result.final = std::move(b.final);
  result.report.check_series_order();
  return result;
}

}  // namespace hiercurric::curriculum
