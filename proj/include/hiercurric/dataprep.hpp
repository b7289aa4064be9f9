#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hiercurric/taxonomy.hpp"
#include "hiercurric/tensor.hpp"

namespace hiercurric::dataprep {

enum class SplitTag { train, val, test };

struct Sample {
  std::string sample_id;
  std::string source;  // file path relative to the manifest, or "synth:<id>"
  taxonomy::NodeId leaf_id;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetManifest {
  std::vector<Sample> samples;
  SplitTag split = SplitTag::train;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

/// Throws ValidationError on duplicate sample ids, or on leaf ids missing
/// from `labels` when it is given.
void validate_manifest(const DatasetManifest& manifest, const taxonomy::LabelMap* labels = nullptr);

/// CSV `sample_id,path,leaf_id`.
void write_manifest_csv(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest_csv(const std::filesystem::path& path, SplitTag split = SplitTag::train);

/// Channel-major (C, H, W) image with values in [0, 1].
struct ImageTensor {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  /// Throws ValidationError when dims and value count disagree or a value is non-finite.
  void validate() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// sample_id -> pixels.
class ImageBank {
 public:
  void add(const std::string& sample_id, ImageTensor image);
  const ImageTensor& at(const std::string& sample_id) const;
  bool contains(const std::string& sample_id) const { return images_.count(sample_id) != 0; }
  std::size_t size() const noexcept { return images_.size(); }
  /// Adds every image of `other`; ids must not collide.
  void merge(const ImageBank& other);

 private:
  std::unordered_map<std::string, ImageTensor> images_;
};

/// On-disk image: tensor file (see tensor.hpp) with dtype f32 and shape [C,H,W].
void save_image(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor load_image(const std::filesystem::path& path);

/// Loads every sample's `source` resolved against `base_dir`.
ImageBank load_images(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

// ---------------------------------------------------------------------------
// Capping

enum class Level { basic, sub };

/// Category index of a leaf at `level`.
std::size_t category_of(const taxonomy::LabelMap& labels, const taxonomy::NodeId& leaf, Level level);

/// Category index -> sample count.
std::map<std::size_t, std::size_t> category_counts(const DatasetManifest& manifest, const taxonomy::LabelMap& labels,
                                                   Level level);

/// Keeps at most `cap` samples per category, chosen uniformly without
/// replacement from a seeded stream; survivors keep their relative order.
DatasetManifest cap_per_category(const DatasetManifest& manifest, const taxonomy::LabelMap& labels, Level level,
                                 std::size_t cap, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic hierarchical images

struct SynthSpec {
  std::size_t n_basic = 4;
  std::size_t subs_per_basic = 3;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  double prototype_scale = 0.25;    // sigma_b
  double subordinate_scale = 0.1;   // sigma_s
  double noise_scale = 0.05;        // sigma_n
  std::size_t samples_per_sub = 50;
  std::uint64_t seed = 0;

  /// Throws ValidationError for non-positive counts or sigma_s >= sigma_b.
  void validate() const;
};

struct SynthDataset {
  DatasetManifest manifest;
  taxonomy::SynsetGraph graph;  // root -> basic -> leaf, all basics marked
  std::set<taxonomy::NodeId> marks;
  ImageBank images;
  std::vector<ImageTensor> basic_prototypes;
  std::vector<ImageTensor> sub_prototypes;  // basic-major order
};

/// Node ids: "B000" (basic), "B000S000" (leaf), samples "B000S000N0000".
/// Pixel draws are rounded to float precision so persisted images reload exactly.
SynthDataset generate_synthetic(const SynthSpec& spec);

/// Writes images/<sample_id>.f32 under `dir` plus manifest.csv, synsets.txt and marks.txt.
void write_synthetic(const std::filesystem::path& dir, const SynthDataset& data);

// ---------------------------------------------------------------------------
// Near-duplicate detection

inline constexpr std::size_t kComparisonSize = 32;
inline constexpr double kDefaultOverlapThreshold = 0.99;

/// Channel mean, then bilinear resample (pixel-centre aligned) to size x size.
std::vector<double> comparison_view(const ImageTensor& image, std::size_t size = kComparisonSize);

/// Pearson correlation of two equal-length vectors; nullopt when either has zero variance.
std::optional<double> normalized_correlation(std::span<const double> a, std::span<const double> b);

/// normalized_correlation of the comparison views of two images.
std::optional<double> image_correlation(const ImageTensor& a, const ImageTensor& b);

struct Overlap {
  std::string id_a;
  std::string id_b;
  double score = 0.0;
};

struct OverlapReport {
  std::vector<Overlap> pairs;       // descending score, then (id_a, id_b)
  DatasetManifest filtered_a;       // set_a without any matched sample
  std::vector<std::string> skipped;  // zero-variance sample ids, sorted
};

/// All cross-set pairs scoring >= threshold. Pairs with equal ids are
/// excluded, so deduplicating a set against itself reports only distinct
/// samples. `jobs` worker threads share the scan; output does not depend on it.
OverlapReport find_overlaps(const DatasetManifest& set_a, const ImageBank& images_a, const DatasetManifest& set_b,
                            const ImageBank& images_b, double threshold = kDefaultOverlapThreshold,
                            std::size_t jobs = 1);

/// CSV `id_a,id_b,score`, score with 6 decimals.
void write_overlaps_csv(const std::filesystem::path& path, const std::vector<Overlap>& pairs);

// ---------------------------------------------------------------------------
// Transfer splits

struct TrainTestSplit {
  DatasetManifest train;
  DatasetManifest test;
};

/// Per split and per class (leaf_id): exactly n_train random samples for
/// training and up to max_test of the rest for testing. Output manifests keep
/// the input order.
std::vector<TrainTestSplit> random_class_splits(const DatasetManifest& manifest, std::size_t n_train_per_class,
                                                std::size_t max_test_per_class, std::size_t n_splits,
                                                std::uint64_t seed);

}  // namespace hiercurric::dataprep
