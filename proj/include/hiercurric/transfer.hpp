#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hiercurric/dataprep.hpp"
#include "hiercurric/model.hpp"
#include "hiercurric/optim.hpp"

namespace hiercurric::transfer {

struct FeatureMatrix {
  Tensor rows;  // [N, D]
  std::vector<std::string> sample_ids;
  std::string source_layer;
};

/// Eval-mode activations of `layer` for every sample, in manifest order.
/// The layer must come before the output head.
FeatureMatrix extract_features(const model::Checkpoint& ckpt, const dataprep::DatasetManifest& manifest,
                               const dataprep::ImageBank& images, const std::string& layer,
                               std::size_t batch_size = 64);

/// Penultimate activation: the input of the output head.
std::string default_feature_layer(const model::ModelSpec& spec);

struct ProbeWeights {
  Tensor weight;  // [K, D]
  Tensor bias;    // [K]
};

/// Softmax regression on frozen features, trained with the shared SGD code.
/// Mini-batches come from a seeded per-epoch shuffle. Throws ValidationError
/// when fewer than two classes are present.
ProbeWeights train_softmax_probe(const Tensor& features, std::span<const std::size_t> labels, std::size_t n_classes,
                                 const nn::SgdConfig& cfg, std::int64_t iterations, std::uint64_t seed);

Tensor probe_logits(const ProbeWeights& probe, const Tensor& features);
std::vector<std::size_t> probe_predict(const ProbeWeights& probe, const Tensor& features);

struct ClassRecall {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt for classes absent from labels
};

/// recall_c = correct_c / total_c over classes present in `labels`; mean over those.
ClassRecall mean_class_recall(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                              std::size_t n_classes);

struct ProbeSpec {
  nn::SgdConfig sgd{0.01, 0.9, 0.0005, 1.0, 1000000, 64, std::nullopt};
  std::int64_t iterations = 1000;
  std::string layer;  // empty: default_feature_layer
  std::size_t n_train_per_class = 15;
  std::size_t max_test_per_class = 50;
  std::size_t n_splits = 3;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct SplitResult {
  std::size_t index = 0;
  double mean_class_recall = 0.0;
  std::vector<std::optional<double>> per_class;
};

struct ProbeResult {
  std::vector<SplitResult> per_split;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation across splits, 0 for one split
  std::size_t n_train_per_class = 0;
  std::vector<std::string> class_names;  // class index -> leaf id
};

/// Classes are the distinct leaf ids of `manifest`, sorted. For each split
/// from dataprep::random_class_splits: features on train and test, probe on
/// train, mean class recall on test. Refuses to run when a test image is
/// bit-identical to a train image of the same split.
ProbeResult evaluate_probe(const model::Checkpoint& ckpt, const dataprep::DatasetManifest& manifest,
                           const dataprep::ImageBank& images, const ProbeSpec& spec);

/// probe.json: one object per ProbeResult with per-split and aggregate values.
void write_probe_json(const std::filesystem::path& path, const std::vector<ProbeResult>& results);
/// per_class_recall.csv: n_train_per_class,split,class_id,recall (empty recall for absent classes).
void write_per_class_csv(const std::filesystem::path& path, const std::vector<ProbeResult>& results);

}  // namespace hiercurric::transfer
