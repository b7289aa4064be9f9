#include <algorithm>
#include <cmath>
#include <set>

#include "hiercurric/csv.hpp"
#include "hiercurric/dataprep.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/rng.hpp"

namespace hiercurric::dataprep {

void validate_manifest(const DatasetManifest& manifest, const taxonomy::LabelMap* labels) {
  std::set<std::string> ids;
  for (const auto& s : manifest.samples) {
    if (!ids.insert(s.sample_id).second) throw ValidationError("duplicate sample id " + s.sample_id);
    if (labels && !labels->contains(s.leaf_id))
      throw ValidationError("sample " + s.sample_id + " has unknown leaf id " + s.leaf_id);
  }
}

void write_manifest_csv(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::vector<csv::Row> rows;
  rows.reserve(manifest.size());
  for (const auto& s : manifest.samples) rows.push_back({s.sample_id, s.source, s.leaf_id});
  csv::write_file(path, {"sample_id", "path", "leaf_id"}, rows);
}

DatasetManifest read_manifest_csv(const std::filesystem::path& path, SplitTag split) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0] != csv::Row{"sample_id", "path", "leaf_id"})
    throw ParseError(1, path.string() + ": expected header sample_id,path,leaf_id");
  DatasetManifest manifest;
  manifest.split = split;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3) throw ParseError(r + 1, path.string() + ": expected 3 columns");
    manifest.samples.push_back({rows[r][0], rows[r][1], rows[r][2]});
  }
  validate_manifest(manifest);
  return manifest;
}

void ImageTensor::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw ValidationError("image has a zero dimension");
  if (values.size() != channels * height * width)
    throw ValidationError("image value count " + std::to_string(values.size()) + " does not match dims");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("image holds a non-finite value");
}

void ImageBank::add(const std::string& sample_id, ImageTensor image) {
  image.validate();
  if (!images_.emplace(sample_id, std::move(image)).second)
    throw ValidationError("duplicate image for sample " + sample_id);
}

const ImageTensor& ImageBank::at(const std::string& sample_id) const {
  const auto it = images_.find(sample_id);
  if (it == images_.end()) throw ValidationError("no image loaded for sample " + sample_id);
  return it->second;
}

void ImageBank::merge(const ImageBank& other) {
  for (const auto& [id, image] : other.images_) add(id, image);
}

void save_image(const std::filesystem::path& path, const ImageTensor& image) {
  image.validate();
  save_tensor(path.string(), Tensor({image.channels, image.height, image.width}, image.values), Dtype::f32);
}

ImageTensor load_image(const std::filesystem::path& path) {
  Tensor t = load_tensor(path.string());
  if (t.rank() != 3) throw IoError(path.string() + ": image tensor must have rank 3, got " + shape_string(t.shape()));
  ImageTensor image{t.dim(0), t.dim(1), t.dim(2), std::vector<double>(t.values().begin(), t.values().end())};
  image.validate();
  return image;
}

ImageBank load_images(const DatasetManifest& manifest, const std::filesystem::path& base_dir) {
  ImageBank bank;
  for (const auto& s : manifest.samples) {
    const std::filesystem::path p(s.source);
    bank.add(s.sample_id, load_image(p.is_absolute() ? p : base_dir / p));
  }
  return bank;
}

std::size_t category_of(const taxonomy::LabelMap& labels, const taxonomy::NodeId& leaf, Level level) {
  const auto& e = labels.at(leaf);
  return level == Level::basic ? e.basic_index : e.sub_index;
}

std::map<std::size_t, std::size_t> category_counts(const DatasetManifest& manifest, const taxonomy::LabelMap& labels,
                                                   Level level) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& s : manifest.samples) ++counts[category_of(labels, s.leaf_id, level)];
  return counts;
}

DatasetManifest cap_per_category(const DatasetManifest& manifest, const taxonomy::LabelMap& labels, Level level,
                                 std::size_t cap, std::uint64_t seed) {
  if (cap < 1) throw ValidationError("cap must be >= 1");
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    members[category_of(labels, manifest.samples[i].leaf_id, level)].push_back(i);

  std::vector<bool> keep(manifest.size(), true);
  for (const auto& [category, idx] : members) {
    if (idx.size() <= cap) continue;
    // Partial Fisher-Yates on positions; each category has its own stream.
    Rng rng(derive_seed(seed, category));
    std::vector<std::size_t> pos(idx.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    for (std::size_t i = 0; i < cap; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(pos.size() - i));
      std::swap(pos[i], pos[j]);
    }
    for (std::size_t i : idx) keep[i] = false;
    for (std::size_t i = 0; i < cap; ++i) keep[idx[pos[i]]] = true;
  }

  DatasetManifest out;
  out.split = manifest.split;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (keep[i]) out.samples.push_back(manifest.samples[i]);
  return out;
}

std::vector<TrainTestSplit> random_class_splits(const DatasetManifest& manifest, std::size_t n_train_per_class,
                                                std::size_t max_test_per_class, std::size_t n_splits,
                                                std::uint64_t seed) {
  if (n_train_per_class == 0) throw ValidationError("n_train_per_class must be >= 1");
  std::map<std::string, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < manifest.size(); ++i) classes[manifest.samples[i].leaf_id].push_back(i);
  for (const auto& [name, idx] : classes) {
    if (idx.size() < n_train_per_class + 1)
      throw ValidationError("class " + name + " has " + std::to_string(idx.size()) + " samples; need at least " +
                            std::to_string(n_train_per_class + 1));
  }

  std::vector<TrainTestSplit> splits;
  for (std::size_t s = 0; s < n_splits; ++s) {
    Rng rng(derive_seed(seed, s));
    enum class Role : unsigned char { none, train, test };
    std::vector<Role> role(manifest.size(), Role::none);
    for (const auto& [name, idx] : classes) {
      std::vector<std::size_t> order = idx;
      rng.shuffle(std::span<std::size_t>(order));
      const std::size_t n_test = std::min(max_test_per_class, order.size() - n_train_per_class);
      for (std::size_t i = 0; i < n_train_per_class; ++i) role[order[i]] = Role::train;
      for (std::size_t i = 0; i < n_test; ++i) role[order[n_train_per_class + i]] = Role::test;
    }
    TrainTestSplit split;
    split.train.split = SplitTag::train;
    split.test.split = SplitTag::test;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      if (role[i] == Role::train) split.train.samples.push_back(manifest.samples[i]);
      if (role[i] == Role::test) split.test.samples.push_back(manifest.samples[i]);
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

}  // namespace hiercurric::dataprep
