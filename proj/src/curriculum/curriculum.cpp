#include "hiercurric/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "hiercurric/csv.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/layers.hpp"
#include "hiercurric/rng.hpp"

namespace hiercurric::curriculum {

namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;

std::string level_suffix(Level level) { return level == Level::basic ? "basic" : "sub"; }

}  // namespace

void TrainConfig::validate() const {
  sgd.validate();
  if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
  if (eval_every < 0) throw ValidationError("eval_every must be >= 0");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
  if (!(lowered_mult >= 0.0 && lowered_mult <= 1.0)) throw ValidationError("lowered_mult must be in [0, 1]");
}

void RunReport::check_series_order() const {
  std::map<std::pair<std::string, std::string>, std::int64_t> last;
  for (const auto& p : curves) {
    const auto key = std::make_pair(p.split, p.metric);
    const auto it = last.find(key);
    if (it != last.end() && p.iteration <= it->second)
      throw ValidationError("series " + p.split + "/" + p.metric + " is not strictly increasing at iteration " +
                            std::to_string(p.iteration));
    last[key] = p.iteration;
  }
}

std::vector<CurvePoint> RunReport::series(const std::string& split, const std::string& metric) const {
  std::vector<CurvePoint> out;
  for (const auto& p : curves)
    if (p.split == split && p.metric == metric) out.push_back(p);
  return out;
}

void write_curves_csv(const std::filesystem::path& path, const RunReport& report) {
  std::vector<csv::Row> rows;
  rows.reserve(report.curves.size());
  for (const auto& p : report.curves)
    rows.push_back({std::to_string(p.iteration), p.split, p.metric, csv::round_trip(p.value)});
  csv::write_file(path, {"iteration", "split", "metric", "value"}, rows);
}

void write_final_json(const std::filesystem::path& path, const RunReport& report) {
  nlohmann::json j;
  j["regime"] = report.regime;
  j["final"] = nlohmann::json::object();
  for (const auto& [k, v] : report.final) j["final"][k] = v;
  j["checkpoints"] = report.checkpoints;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

double topk_accuracy(const Tensor& logits, std::span<const std::size_t> labels, std::size_t k) {
  if (logits.rank() != 2) throw ShapeError("topk_accuracy expects [N, K] logits, got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != n) throw ValidationError("topk_accuracy: label count does not match rows");
  if (n == 0) throw ValidationError("topk_accuracy: empty batch");
  if (k == 0 || k > classes)
    throw ValidationError("topk_accuracy: k=" + std::to_string(k) + " outside [1, " + std::to_string(classes) + "]");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    if (y >= classes) throw ValidationError("label " + std::to_string(y) + " out of range");
    const double* row = logits.data() + i * classes;
    std::size_t rank = 0;
    for (std::size_t j = 0; j < classes; ++j)
      if (row[j] > row[y] || (row[j] == row[y] && j < y)) ++rank;
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

Tensor make_batch(const dataprep::DatasetManifest& manifest, std::span<const std::size_t> rows,
                  const dataprep::ImageBank& images) {
  if (rows.empty()) throw ValidationError("make_batch: no rows");
  const auto& first = images.at(manifest.samples.at(rows[0]).sample_id);
  Tensor batch({rows.size(), first.channels, first.height, first.width});
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& img = images.at(manifest.samples.at(rows[i]).sample_id);
    if (img.channels != first.channels || img.height != first.height || img.width != first.width)
      throw ShapeError("image " + manifest.samples[rows[i]].sample_id + " differs in shape from the batch");
    std::copy(img.values.begin(), img.values.end(), batch.data() + i * per);
  }
  return batch;
}

std::vector<std::size_t> labels_for(const dataprep::DatasetManifest& manifest, const taxonomy::LabelMap& labels,
                                    Level level) {
  std::vector<std::size_t> out;
  out.reserve(manifest.size());
  for (const auto& s : manifest.samples) out.push_back(dataprep::category_of(labels, s.leaf_id, level));
  return out;
}

Evaluation evaluate(const model::Checkpoint& ckpt, const dataprep::DatasetManifest& manifest,
                    const dataprep::ImageBank& images, const taxonomy::LabelMap& labels, Level level,
                    std::size_t batch_size) {
  if (manifest.empty()) throw ValidationError("evaluate: empty manifest");
  const auto y = labels_for(manifest, labels, level);
  const std::size_t classes = ckpt.spec.n_outputs();
  for (auto label : y)
    if (label >= classes)
      throw ValidationError("label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
                            " outputs");
  model::Network net(ckpt.spec);
  const std::size_t k5 = std::min<std::size_t>(5, classes);
  double top1 = 0.0, top5 = 0.0, loss = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < manifest.size(); start += batch_size) {
    const std::size_t end = std::min(manifest.size(), start + batch_size);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor logits = net.forward(ckpt.params, make_batch(manifest, rows, images), nn::Mode::eval);
    const std::span<const std::size_t> yb(y.data() + start, end - start);
    const double w = static_cast<double>(end - start);
    top1 += w * topk_accuracy(logits, yb, 1);
    top5 += w * topk_accuracy(logits, yb, k5);
    loss += w * nn::softmax_xent(logits, yb).loss;
  }
  const double n = static_cast<double>(manifest.size());
  return {top1 / n, top5 / n, loss / n};
}

PhaseResult train_phase(const model::Checkpoint& start, const TrainConfig& cfg,
                        const dataprep::DatasetManifest& train, const dataprep::DatasetManifest& val,
                        const dataprep::ImageBank& images, const taxonomy::LabelMap& labels,
                        const PhaseOptions& options) {
  cfg.validate();
  if (train.empty()) throw ValidationError("train_phase: empty training manifest");
  const std::size_t classes = start.spec.n_outputs();
  const auto y = labels_for(train, labels, cfg.task_level);
  for (auto label : y)
    if (label >= classes)
      throw ValidationError("label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
                            " outputs");

  PhaseResult result;
  result.final = start;
  model::Checkpoint& ckpt = result.final;
  RunReport& report = result.report;
  const std::string train_split = options.tag + ".train";
  const std::string val_split = options.tag + ".val";

  Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
  Rng dropout_rng(derive_seed(cfg.seed, kDropoutStream));
  model::Network net(ckpt.spec);

  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();  // forces a shuffle before the first batch
  std::vector<std::size_t> rows;
  std::vector<std::size_t> batch_labels;

  auto record_eval = [&](std::int64_t it) {
    if (val.empty()) return;
    const auto e = evaluate(ckpt, val, images, labels, cfg.task_level);
    report.curves.push_back({it, val_split, "top1", e.top1});
    report.curves.push_back({it, val_split, "top5", e.top5});
    report.curves.push_back({it, val_split, "loss", e.loss});
  };
  auto snapshot = [&]() {
    if (options.keep_snapshots) result.snapshots.push_back(ckpt);
    if (options.checkpoint_dir) {
      std::filesystem::create_directories(*options.checkpoint_dir);
      const auto name = options.tag + "_" + std::to_string(ckpt.iteration) + ".ckpt";
      model::save_checkpoint(*options.checkpoint_dir / name, ckpt);
      report.checkpoints.push_back(name);
    }
  };

  const std::int64_t first = ckpt.iteration;
  if (cfg.eval_every > 0) record_eval(first);
  for (std::int64_t step = 0; step < cfg.max_iterations; ++step) {
    const std::int64_t it = first + step;
    rows.clear();
    while (rows.size() < cfg.sgd.batch_size) {
      if (cursor == order.size()) {
        if (!rows.empty()) break;  // keep the last partial batch of an epoch
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      rows.push_back(order[cursor++]);
    }
    batch_labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) batch_labels[i] = y[rows[i]];

    try {
      const Tensor logits =
          net.forward(ckpt.params, make_batch(train, rows, images), nn::Mode::train, &dropout_rng, cfg.sgd.dropout_rate);
      const auto lg = nn::softmax_xent(logits, batch_labels);
      if (!std::isfinite(lg.loss)) throw NumericFault("non-finite loss");
      report.curves.push_back({it, train_split, "loss", lg.loss});
      ckpt.params.zero_grad();
      net.backward(ckpt.params, lg.grad);
      nn::sgd_step(ckpt.params, cfg.sgd, step);
      if (checked_mode())
        for (const auto& e : ckpt.params.entries()) e.weight.check_finite(e.name);
    } catch (const NumericFault& e) {
      throw NumericFault("iteration " + std::to_string(it) + ": " + e.what());
    }
    ckpt.iteration = it + 1;

    const std::int64_t done = step + 1;
    const bool last = done == cfg.max_iterations;
    if (cfg.eval_every > 0 && (done % cfg.eval_every == 0 || last)) record_eval(ckpt.iteration);
    if (cfg.checkpoint_every > 0 && (done % cfg.checkpoint_every == 0 || last)) snapshot();
  }
  ckpt.params.zero_grad();
  ckpt.rng_state = dropout_rng.state();

  const auto& v = report.curves;
  for (auto it = v.rbegin(); it != v.rend(); ++it) {
    const std::string key = it->split + "." + it->metric;
    if (!report.final.count(key)) report.final[key] = it->value;
  }
  const double epochs = static_cast<double>(cfg.max_iterations) * static_cast<double>(cfg.sgd.batch_size) /
                        static_cast<double>(train.size());
  report.final[options.tag + ".epochs"] = epochs;
  report.final[options.tag + ".train_samples"] = static_cast<double>(train.size());
  std::clog << "phase " << options.tag << " (" << level_suffix(cfg.task_level) << "): " << cfg.max_iterations
            << " iterations over " << train.size() << " samples, " << epochs << " epochs\n";
  return result;
}

RunReport checkpoint_sweep(const std::vector<model::Checkpoint>& checkpoints, const transfer::ProbeSpec& probe,
                           const dataprep::DatasetManifest& manifest, const dataprep::ImageBank& images) {
  if (checkpoints.empty()) throw ValidationError("checkpoint_sweep: no checkpoints");
  RunReport report;
  std::int64_t prev = -1;
  for (const auto& ckpt : checkpoints) {
    if (ckpt.iteration <= prev)
      throw ValidationError("checkpoint_sweep: checkpoints must have strictly ascending iterations");
    prev = ckpt.iteration;
    const auto r = transfer::evaluate_probe(ckpt, manifest, images, probe);
    const std::string split = "probe" + std::to_string(probe.n_train_per_class);
    report.curves.push_back({ckpt.iteration, split, "mean_class_recall", r.mean});
    report.curves.push_back({ckpt.iteration, split, "std", r.stddev});
  }
  const auto& last = report.curves[report.curves.size() - 2];
  report.final[last.split + ".mean_class_recall"] = last.value;
  return report;
}

}  // namespace hiercurric::curriculum
