#include <algorithm>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "synthetic_bundle.hpp"

#include "hiercurric/csv.hpp"
#include "hiercurric/curriculum.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/transfer.hpp"

using namespace hiercurric;
using namespace hiercurric::transfer;

namespace {

dataprep::SynthSpec probe_synth(std::uint64_t seed) {
  dataprep::SynthSpec s;
  s.height = 16;
  s.width = 16;
  s.noise_scale = 0.3;
  s.samples_per_sub = 60;
  s.seed = seed;
  return s;
}

model::ModelSpec net(std::size_t outputs) {
  auto s = model::desk_spec(outputs, {3, 16, 16});
  s.init.kind = model::InitPolicy::Kind::he;
  return s;
}

model::Checkpoint trained_on(const oracle::SyntheticBundle& b, std::uint64_t seed, std::int64_t iterations) {
  curriculum::TrainConfig cfg;
  cfg.sgd.batch_size = 16;
  cfg.max_iterations = iterations;
  cfg.eval_every = 0;
  cfg.seed = seed;
  cfg.task_level = dataprep::Level::sub;
  return curriculum::train_phase(model::build_model(net(12), seed), cfg, b.data.train, b.data.val, *b.data.images,
                                 b.data.labels)
      .final;
}

ProbeSpec small_probe(std::uint64_t seed, std::size_t n_train = 10) {
  ProbeSpec p;
  p.n_train_per_class = n_train;
  p.max_test_per_class = 10;
  p.n_splits = 3;
  p.iterations = 300;
  p.seed = seed;
  return p;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("mean class recall") {
  const std::vector<std::size_t> y{0, 0, 1};
  CHECK(mean_class_recall(y, y, 2).mean == 1.0);
  const auto r = mean_class_recall(std::vector<std::size_t>{0, 1, 1}, y, 2);
  CHECK(r.mean == 0.75);
  CHECK(*r.per_class[0] == 0.5);
  CHECK(*r.per_class[1] == 1.0);
  CHECK(mean_class_recall(std::vector<std::size_t>{0, 0, 0, 0}, std::vector<std::size_t>{0, 1, 0, 1}, 2).mean == 0.5);
  const auto absent = mean_class_recall(std::vector<std::size_t>{0, 2}, std::vector<std::size_t>{0, 2}, 3);
  CHECK_FALSE(absent.per_class[1].has_value());
  CHECK(absent.mean == 1.0);
}

TEST_CASE("softmax probe on separable features") {
  Rng rng(1);
  Tensor x({200, 2});
  std::vector<std::size_t> y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y[i] = i % 2;
    x[i * 2] = rng.normal(y[i] ? 2.0 : -2.0, 0.5);
    x[i * 2 + 1] = rng.normal();
  }
  nn::SgdConfig cfg{0.1, 0.9, 0.0, 1.0, 1000000, 32, std::nullopt};
  const auto probe = train_softmax_probe(x, y, 2, cfg, 500, 3);
  const auto pred = probe_predict(probe, x);
  CHECK(std::equal(pred.begin(), pred.end(), y.begin()));
  CHECK(probe_logits(probe, x).shape() == Shape{200, 2});

  const auto again = train_softmax_probe(x, y, 2, cfg, 500, 3);
  CHECK(again.weight == probe.weight);
  CHECK(again.bias == probe.bias);

  cfg.base_lr = 0.0;
  const auto frozen = train_softmax_probe(x, y, 2, cfg, 50, 3);
  for (double v : frozen.weight.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(train_softmax_probe(x, std::vector<std::size_t>(200, 0), 1, cfg, 10, 3), ValidationError);
}

TEST_CASE("feature extraction") {
  auto b = oracle::make_synthetic_bundle(probe_synth(2), 10, 0);
  const auto ckpt = model::build_model(net(12), 3);
  CHECK(default_feature_layer(ckpt.spec) == "drop4");
  const auto f = extract_features(ckpt, b->held_out, *b->data.images, default_feature_layer(ckpt.spec), 7);
  CHECK(f.rows.shape() == Shape{b->held_out.size(), 256});
  CHECK(f.sample_ids.front() == b->held_out.samples.front().sample_id);
  CHECK(extract_features(ckpt, b->held_out, *b->data.images, "drop4").rows == f.rows);
  const auto relu = extract_features(ckpt, b->held_out, *b->data.images, "relu3");
  for (double v : relu.rows.values()) CHECK(v >= 0.0);
  CHECK_THROWS_AS(extract_features(ckpt, b->held_out, *b->data.images, "fc5"), ValidationError);
  CHECK_THROWS_AS(extract_features(ckpt, b->held_out, *b->data.images, "nope"), ValidationError);
}

TEST_CASE("probe evaluation is reproducible and refuses leaked test images") {
  auto b = oracle::make_synthetic_bundle(probe_synth(4), 10, 0);
  const auto ckpt = model::build_model(net(12), 5);
  const auto a = evaluate_probe(ckpt, b->held_out, *b->data.images, small_probe(6));
  auto parallel = small_probe(6);
  parallel.jobs = 3;
  const auto c = evaluate_probe(ckpt, b->held_out, *b->data.images, parallel);
  REQUIRE(a.per_split.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) CHECK(a.per_split[s].mean_class_recall == c.per_split[s].mean_class_recall);
  CHECK(a.mean == c.mean);
  CHECK(a.class_names.size() == 12);

  dataprep::DatasetManifest leaky;
  dataprep::ImageBank images;
  for (std::size_t cls = 0; cls < 2; ++cls)
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string id = "c" + std::to_string(cls) + "_" + std::to_string(i);
      leaky.samples.push_back({id, "x", "class" + std::to_string(cls)});
      images.add(id, b->data.images->at(b->held_out.samples[cls].sample_id));
    }
  auto p = small_probe(1, 2);
  CHECK_THROWS_AS(evaluate_probe(ckpt, leaky, images, p), ValidationError);

  const auto dir = oracle::temp_dir("probe");
  write_probe_json(dir / "probe.json", {a});
  const auto j = nlohmann::json::parse(slurp(dir / "probe.json"));
  CHECK(j.at("results").size() == 1);
  CHECK(j.at("results")[0].at("splits").size() == 3);
  write_per_class_csv(dir / "per_class.csv", {a});
  const auto rows = csv::read_file(dir / "per_class.csv");
  CHECK(rows.size() == 1 + 3 * 12);
  CHECK(rows[0] == csv::Row{"n_train_per_class", "split", "class_id", "recall"});
  std::filesystem::remove_all(dir);
}

TEST_CASE("trained backbones beat random ones and recall grows with training samples") {
  for (std::uint64_t seed : {1, 2, 3}) {
    CAPTURE(seed);
    auto b = oracle::make_synthetic_bundle(probe_synth(10 + seed), 30, 10);
    const auto random = model::build_model(net(12), 100 + seed);
    const auto trained = trained_on(*b, 200 + seed, 200);
    const auto pr = evaluate_probe(random, b->held_out, *b->data.images, small_probe(seed));
    const auto pt = evaluate_probe(trained, b->held_out, *b->data.images, small_probe(seed));
    CHECK(pt.mean > pr.mean);

    if (seed == 1) {
      std::vector<double> medians;
      for (std::size_t n : {5, 10, 15}) {
        auto spec = small_probe(seed, n);
        spec.max_test_per_class = 5;
        spec.n_splits = 5;
        std::vector<double> v;
        for (const auto& s : evaluate_probe(trained, b->held_out, *b->data.images, spec).per_split)
          v.push_back(s.mean_class_recall);
        medians.push_back(median(v));
      }
      CAPTURE(medians);
      CHECK(medians[1] >= medians[0]);
      CHECK(medians[2] >= medians[1]);
    }
  }
}
