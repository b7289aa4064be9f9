#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hiercurric/dataprep.hpp"
#include "hiercurric/model.hpp"
#include "hiercurric/optim.hpp"
#include "hiercurric/taxonomy.hpp"
#include "hiercurric/transfer.hpp"

namespace hiercurric::curriculum {

using dataprep::Level;

struct TrainConfig {
  nn::SgdConfig sgd;
  std::int64_t max_iterations = 2000;
  std::int64_t eval_every = 200;        // 0 disables periodic evaluation
  std::int64_t checkpoint_every = 0;    // 0 disables snapshots
  std::uint64_t seed = 0;
  Level task_level = Level::basic;
  std::size_t lowered_prefix = 0;
  double lowered_mult = 1.0;

  void validate() const;
};

struct CurvePoint {
  std::int64_t iteration = 0;
  std::string split;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct RunReport {
  std::vector<CurvePoint> curves;
  std::map<std::string, double> final;
  std::string regime;
  std::vector<std::string> checkpoints;

  /// Throws ValidationError if some (split, metric) series is not strictly increasing in iteration.
  void check_series_order() const;
  /// Values of one series in recorded order.
  std::vector<CurvePoint> series(const std::string& split, const std::string& metric) const;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// CSV `iteration,split,metric,value` with shortest round-trip values.
void write_curves_csv(const std::filesystem::path& path, const RunReport& report);
/// `final.json`: regime name, final metrics, checkpoint list.
void write_final_json(const std::filesystem::path& path, const RunReport& report);

/// Fraction of rows whose label ranks among the k largest logits. Equal
/// logits rank the lower class index first.
double topk_accuracy(const Tensor& logits, std::span<const std::size_t> labels, std::size_t k);

/// Stacks the images of manifest rows `rows` into [N, C, H, W].
Tensor make_batch(const dataprep::DatasetManifest& manifest, std::span<const std::size_t> rows,
                  const dataprep::ImageBank& images);

/// Class index per sample at `level`.
std::vector<std::size_t> labels_for(const dataprep::DatasetManifest& manifest, const taxonomy::LabelMap& labels,
                                    Level level);

struct Evaluation {
  double top1 = 0.0;
  double top5 = 0.0;  // top-min(5, K)
  double loss = 0.0;
};

Evaluation evaluate(const model::Checkpoint& ckpt, const dataprep::DatasetManifest& manifest,
                    const dataprep::ImageBank& images, const taxonomy::LabelMap& labels, Level level,
                    std::size_t batch_size = 64);

struct PhaseOptions {
  std::string tag = "A";  // curve split prefix: "<tag>.train", "<tag>.val"
  std::optional<std::filesystem::path> checkpoint_dir;
  bool keep_snapshots = false;
};

struct PhaseResult {
  model::Checkpoint final;
  RunReport report;
  std::vector<model::Checkpoint> snapshots;  // every checkpoint_every iterations, when kept
};

/// Seeded mini-batch SGD on `train` at cfg.task_level. Each epoch is a full
/// seeded shuffle; the last partial batch is kept. Records the batch loss
/// of every step (at the number of updates made before it) and val
/// top-1/top-5/loss at iteration 0, every eval_every updates and at the end.
PhaseResult train_phase(const model::Checkpoint& start, const TrainConfig& cfg,
                        const dataprep::DatasetManifest& train, const dataprep::DatasetManifest& val,
                        const dataprep::ImageBank& images, const taxonomy::LabelMap& labels,
                        const PhaseOptions& options = {});

// ---------------------------------------------------------------------------
// Regimes

enum class RegimeKind {
  reference,                    // train on subordinate labels only
  reference_extended,           // subordinate pretraining, then more subordinate training
  random_subset_pretrain,       // pretrain on random non-basic categories, random head
  facilitated_random_head,      // basic pretraining, random subordinate head
  facilitated_replicated_head,  // basic pretraining, head rows copied from basic rows
};

std::string_view regime_name(RegimeKind kind) noexcept;
RegimeKind regime_from_name(std::string_view name);
inline constexpr RegimeKind kAllRegimes[] = {RegimeKind::reference, RegimeKind::reference_extended,
                                             RegimeKind::random_subset_pretrain, RegimeKind::facilitated_random_head,
                                             RegimeKind::facilitated_replicated_head};

struct Regime {
  RegimeKind kind = RegimeKind::reference;
  std::optional<TrainConfig> phase_a;
  TrainConfig phase_b;
  std::size_t random_category_count = 0;  // 0: as many as the basic categories
  std::uint64_t init_seed = 0;            // model initialization

  void validate() const;
};

struct DataBundle {
  taxonomy::SynsetGraph graph;  // validated, with basic marks
  taxonomy::LabelMap labels;
  dataprep::DatasetManifest train;        // uncapped, used for subordinate phases
  dataprep::DatasetManifest basic_train;  // capped, used for basic pretraining
  dataprep::DatasetManifest val;
  const dataprep::ImageBank* images = nullptr;
};

struct RegimeResult {
  RunReport report;
  model::Checkpoint final;
  std::optional<model::Checkpoint> phase_a_final;
  model::Checkpoint phase_b_start;
  std::optional<taxonomy::LabelMap> pretrain_labels;  // random_subset_pretrain only
  std::vector<model::Checkpoint> snapshots;           // phase A then phase B, when kept
  std::size_t phase_a_snapshots = 0;                  // leading entries of `snapshots` from phase A
};

struct RegimeOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  bool keep_snapshots = false;
};

/// Random set of `count` non-root, non-basic nodes, none an ancestor of another.
std::set<taxonomy::NodeId> random_category_set(const taxonomy::SynsetGraph& graph, std::size_t count,
                                               std::uint64_t seed);

/// Runs phase A (when the regime has one), swaps or keeps the head, lowers
/// the first conv layers' rates for every pretrained regime, then runs
/// phase B on subordinate labels. Curves are tagged "A.*" and "B.*".
RegimeResult run_regime(const Regime& regime, const DataBundle& data, const model::ModelSpec& spec,
                        const RegimeOptions& options = {});

/// Linear-probe mean class recall per checkpoint, keyed by checkpoint iteration.
/// Checkpoints must be in strictly ascending iteration order.
RunReport checkpoint_sweep(const std::vector<model::Checkpoint>& checkpoints, const transfer::ProbeSpec& probe,
                           const dataprep::DatasetManifest& manifest, const dataprep::ImageBank& images);

}  // namespace hiercurric::curriculum
