#include "hiercurric/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>

#include "hiercurric/csv.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/layers.hpp"
#include "hiercurric/rng.hpp"

namespace hiercurric::transfer {

namespace {

constexpr std::uint64_t kProbeStream = 100;

std::size_t layer_index(const model::ModelSpec& spec, const std::string& layer) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].name == layer) return i;
  throw ValidationError("unknown layer '" + layer + "'");
}

std::uint64_t image_hash(const dataprep::ImageTensor& img) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : img.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = (h ^ bits) * 1099511628211ULL;
  }
  return h;
}

void refuse_cross_split_duplicates(const dataprep::TrainTestSplit& split, const dataprep::ImageBank& images,
                                   std::size_t index) {
  std::unordered_multimap<std::uint64_t, const dataprep::Sample*> seen;
  for (const auto& s : split.train.samples) seen.emplace(image_hash(images.at(s.sample_id)), &s);
  for (const auto& s : split.test.samples) {
    const auto& img = images.at(s.sample_id);
    const auto [lo, hi] = seen.equal_range(image_hash(img));
    for (auto it = lo; it != hi; ++it)
      if (images.at(it->second->sample_id) == img)
        throw ValidationError("split " + std::to_string(index) + ": test sample " + s.sample_id +
                              " duplicates train sample " + it->second->sample_id + "; deduplicate first");
  }
}

Tensor gather_rows(const Tensor& all, const std::vector<std::size_t>& rows) {
  const std::size_t d = all.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(all.data() + rows[i] * d, d, out.data() + i * d);
  return out;
}

}  // namespace

std::string default_feature_layer(const model::ModelSpec& spec) {
  if (spec.layers.size() < 2) throw ValidationError("model has no layer before its head");
  return spec.layers[spec.layers.size() - 2].name;
}

FeatureMatrix extract_features(const model::Checkpoint& ckpt, const dataprep::DatasetManifest& manifest,
                               const dataprep::ImageBank& images, const std::string& layer, std::size_t batch_size) {
  if (layer_index(ckpt.spec, layer) + 1 >= ckpt.spec.layers.size())
    throw ValidationError("feature layer '" + layer + "' is the output head");
  if (manifest.empty()) throw ValidationError("extract_features: empty manifest");
  if (batch_size == 0) throw ValidationError("extract_features: batch size must be >= 1");

  model::Network net(ckpt.spec);
  FeatureMatrix out;
  out.source_layer = layer;
  std::vector<std::size_t> rows;
  std::vector<double> values;
  std::size_t width = 0;
  for (std::size_t start = 0; start < manifest.size(); start += batch_size) {
    const std::size_t end = std::min(manifest.size(), start + batch_size);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto& first = images.at(manifest.samples[start].sample_id);
    Tensor batch({rows.size(), first.channels, first.height, first.width});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& img = images.at(manifest.samples[rows[i]].sample_id);
      if (img.size() != first.size()) throw ShapeError("image " + manifest.samples[rows[i]].sample_id + " has a different shape");
      std::copy(img.values.begin(), img.values.end(), batch.data() + i * first.size());
    }
    const Tensor f = net.forward(ckpt.params, batch, nn::Mode::eval, nullptr, std::nullopt, layer);
    width = f.dim(1);
    values.insert(values.end(), f.values().begin(), f.values().end());
  }
  out.rows = Tensor({manifest.size(), width}, std::move(values));
  out.rows.check_finite("features of " + layer);
  for (const auto& s : manifest.samples) out.sample_ids.push_back(s.sample_id);
  return out;
}

ProbeWeights train_softmax_probe(const Tensor& features, std::span<const std::size_t> labels, std::size_t n_classes,
                                 const nn::SgdConfig& cfg, std::int64_t iterations, std::uint64_t seed) {
  cfg.validate();
  if (features.rank() != 2) throw ShapeError("probe features must be [N, D], got " + shape_string(features.shape()));
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  if (labels.size() != n) throw ValidationError("probe: label count does not match feature rows");
  if (n == 0) throw ValidationError("probe: no training rows");
  if (iterations < 0) throw ValidationError("probe: iterations must be >= 0");
  std::set<std::size_t> distinct;
  for (auto y : labels) {
    if (y >= n_classes) throw ValidationError("probe: label " + std::to_string(y) + " out of range");
    distinct.insert(y);
  }
  if (distinct.size() < 2) throw ValidationError("probe: training labels contain a single class");

  nn::ParamSet params;
  params.add("probe.weight", Tensor({n_classes, d}));
  params.add("probe.bias", Tensor({n_classes}));
  auto* w = &params.at("probe.weight");
  auto* b = &params.at("probe.bias");
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> yb;
  for (std::int64_t it = 0; it < iterations; ++it) {
    rows.clear();
    while (rows.size() < cfg.batch_size) {
      if (cursor == n) {
        if (!rows.empty()) break;
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      rows.push_back(order[cursor++]);
    }
    yb.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) yb[i] = labels[rows[i]];
    nn::FcCache cache;
    const Tensor logits = nn::fc_forward(gather_rows(features, rows), w->weight, b->weight, &cache);
    const auto lg = nn::softmax_xent(logits, yb);
    const auto grads = nn::fc_backward(lg.grad, w->weight, cache);
    w->grad = grads.d_weight;
    b->grad = grads.d_bias;
    nn::sgd_step(params, cfg, it);
  }
  w->weight.check_finite("probe weights");
  return {w->weight, b->weight};
}

Tensor probe_logits(const ProbeWeights& probe, const Tensor& features) {
  return nn::fc_forward(features, probe.weight, probe.bias);
}

std::vector<std::size_t> probe_predict(const ProbeWeights& probe, const Tensor& features) {
  const Tensor logits = probe_logits(probe, features);
  const std::size_t k = logits.dim(1);
  std::vector<std::size_t> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = logits.data() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);  // first maximum wins
  }
  return out;
}

ClassRecall mean_class_recall(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                              std::size_t n_classes) {
  if (labels.empty()) throw ValidationError("mean_class_recall: empty input");
  if (predictions.size() != labels.size()) throw ValidationError("mean_class_recall: length mismatch");
  std::vector<std::size_t> total(n_classes, 0), correct(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw ValidationError("mean_class_recall: label out of range");
    ++total[labels[i]];
    if (predictions[i] == labels[i]) ++correct[labels[i]];
  }
  ClassRecall out;
  out.per_class.resize(n_classes);
  double sum = 0.0;
  std::size_t present = 0;
  std::vector<std::size_t> absent;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (total[c] == 0) {
      absent.push_back(c);
      continue;
    }
    const double r = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    out.per_class[c] = r;
    sum += r;
    ++present;
  }
  if (!absent.empty()) {
    std::clog << "warning: " << absent.size() << " class(es) absent from the evaluation labels, excluded from the mean:";
    for (auto c : absent) std::clog << ' ' << c;
    std::clog << '\n';
  }
  out.mean = sum / static_cast<double>(present);
  return out;
}

ProbeResult evaluate_probe(const model::Checkpoint& ckpt, const dataprep::DatasetManifest& manifest,
                           const dataprep::ImageBank& images, const ProbeSpec& spec) {
  if (spec.n_splits == 0) throw ValidationError("probe: n_splits must be >= 1");
  const std::string layer = spec.layer.empty() ? default_feature_layer(ckpt.spec) : spec.layer;

  ProbeResult result;
  result.n_train_per_class = spec.n_train_per_class;
  {
    std::set<std::string> classes;
    for (const auto& s : manifest.samples) classes.insert(s.leaf_id);
    result.class_names.assign(classes.begin(), classes.end());
  }
  std::map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < result.class_names.size(); ++i) class_index[result.class_names[i]] = i;

  const auto splits = dataprep::random_class_splits(manifest, spec.n_train_per_class, spec.max_test_per_class,
                                                    spec.n_splits, spec.seed);
  for (std::size_t s = 0; s < splits.size(); ++s) refuse_cross_split_duplicates(splits[s], images, s);

  const FeatureMatrix all = extract_features(ckpt, manifest, images, layer);
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < all.sample_ids.size(); ++i) row_of[all.sample_ids[i]] = i;

  auto subset = [&](const dataprep::DatasetManifest& m, std::vector<std::size_t>& labels) {
    std::vector<std::size_t> rows;
    labels.clear();
    for (const auto& smp : m.samples) {
      rows.push_back(row_of.at(smp.sample_id));
      labels.push_back(class_index.at(smp.leaf_id));
    }
    return gather_rows(all.rows, rows);
  };

  result.per_split.resize(splits.size());
  auto run_split = [&](std::size_t s) {
    std::vector<std::size_t> y_train, y_test;
    const Tensor x_train = subset(splits[s].train, y_train);
    const Tensor x_test = subset(splits[s].test, y_test);
    const auto probe = train_softmax_probe(x_train, y_train, result.class_names.size(), spec.sgd, spec.iterations,
                                           derive_seed(spec.seed, kProbeStream + s));
    const auto recall = mean_class_recall(probe_predict(probe, x_test), y_test, result.class_names.size());
    result.per_split[s] = {s, recall.mean, recall.per_class};
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(spec.jobs, splits.size()));
  if (jobs == 1) {
    for (std::size_t s = 0; s < splits.size(); ++s) run_split(s);
  } else {
    std::vector<std::exception_ptr> errors(splits.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t s = t; s < splits.size(); s += jobs) {
          try {
            run_split(s);
          } catch (...) {
            errors[s] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  double sum = 0.0;
  for (const auto& r : result.per_split) sum += r.mean_class_recall;
  result.mean = sum / static_cast<double>(result.per_split.size());
  if (result.per_split.size() > 1) {
    double ss = 0.0;
    for (const auto& r : result.per_split) ss += (r.mean_class_recall - result.mean) * (r.mean_class_recall - result.mean);
    result.stddev = std::sqrt(ss / static_cast<double>(result.per_split.size() - 1));
  }
  return result;
}

void write_probe_json(const std::filesystem::path& path, const std::vector<ProbeResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json splits = nlohmann::json::array();
    for (const auto& s : r.per_split) splits.push_back({{"split", s.index}, {"mean_class_recall", s.mean_class_recall}});
    arr.push_back({{"n_train_per_class", r.n_train_per_class},
                   {"mean", r.mean},
                   {"stddev", r.stddev},
                   {"classes", r.class_names.size()},
                   {"splits", splits}});
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json{{"results", arr}}.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void write_per_class_csv(const std::filesystem::path& path, const std::vector<ProbeResult>& results) {
  std::vector<csv::Row> rows;
  for (const auto& r : results)
    for (const auto& s : r.per_split)
      for (std::size_t c = 0; c < s.per_class.size(); ++c)
        rows.push_back({std::to_string(r.n_train_per_class), std::to_string(s.index), r.class_names.at(c),
                        s.per_class[c] ? csv::fixed(*s.per_class[c], 6) : std::string()});
  csv::write_file(path, {"n_train_per_class", "split", "class_id", "recall"}, rows);
}

}  // namespace hiercurric::transfer
