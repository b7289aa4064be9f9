#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "synthetic_bundle.hpp"

#include "hiercurric/curriculum.hpp"
#include "hiercurric/error.hpp"

using namespace hiercurric;
using namespace hiercurric::curriculum;

namespace {

dataprep::SynthSpec small_synth(std::uint64_t seed, double noise = 0.05, std::size_t per_sub = 20) {
  dataprep::SynthSpec s;
  s.height = 16;
  s.width = 16;
  s.noise_scale = noise;
  s.samples_per_sub = per_sub;
  s.seed = seed;
  return s;
}

model::ModelSpec net(std::size_t outputs = 4) {
  auto s = model::desk_spec(outputs, {3, 16, 16});
  s.init.kind = model::InitPolicy::Kind::he;
  return s;
}

TrainConfig phase(std::int64_t iterations, std::uint64_t seed, Level level) {
  TrainConfig c;
  c.sgd.batch_size = 16;
  c.max_iterations = iterations;
  c.eval_every = iterations;
  c.seed = seed;
  c.task_level = level;
  return c;
}

Regime regime(RegimeKind kind, std::int64_t a_iters, std::int64_t b_iters) {
  Regime r;
  r.kind = kind;
  r.init_seed = 3;
  r.phase_b = phase(b_iters, 4, Level::sub);
  r.phase_b.lowered_prefix = 2;
  r.phase_b.lowered_mult = 0.1;
  if (kind != RegimeKind::reference)
    r.phase_a = phase(a_iters, 5, kind == RegimeKind::reference_extended ? Level::sub : Level::basic);
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("top-k accuracy") {
  const std::vector<std::size_t> labels{0, 1, 2};
  const Tensor same({3, 3}, {3, 2, 1, 3, 2, 1, 3, 2, 1});
  CHECK(topk_accuracy(same, labels, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(topk_accuracy(same, labels, 3) == 1.0);
  CHECK(topk_accuracy(same, labels, 1) == doctest::Approx(1.0 / 3.0));
  const Tensor onehot({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(topk_accuracy(onehot, labels, 1) == 1.0);
  // ties rank the lower index first
  const Tensor ties({2, 3}, {1, 1, 1, 1, 1, 1});
  CHECK(topk_accuracy(ties, std::vector<std::size_t>{0, 2}, 1) == 0.5);
}

TEST_CASE("run report bookkeeping") {
  RunReport r;
  r.regime = "reference";
  r.curves = {{0, "B.val", "top1", 0.25}, {0, "B.train", "loss", 1.5}, {10, "B.val", "top1", 0.1 + 0.2}};
  CHECK_NOTHROW(r.check_series_order());
  CHECK(r.series("B.val", "top1").size() == 2);
  r.curves.push_back({10, "B.val", "top1", 0.5});
  CHECK_THROWS_AS(r.check_series_order(), ValidationError);
  r.curves.pop_back();

  const auto dir = oracle::temp_dir("report");
  write_curves_csv(dir / "curves.csv", r);
  CHECK(slurp(dir / "curves.csv") ==
        "iteration,split,metric,value\n0,B.val,top1,0.25\n0,B.train,loss,1.5\n10,B.val,top1,0.30000000000000004\n");
  write_final_json(dir / "final.json", r);
  CHECK(nlohmann::json::parse(slurp(dir / "final.json")).at("regime") == "reference");
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero learning rate leaves the checkpoint unchanged") {
  auto b = oracle::make_synthetic_bundle(small_synth(1), 12, 4);
  const auto start = model::build_model(net(), 1);
  auto cfg = phase(1, 2, Level::basic);
  cfg.sgd.base_lr = 0.0;
  const auto r = train_phase(start, cfg, b->data.train, b->data.val, *b->data.images, b->data.labels);
  CHECK(r.final.params.weight_hash() == start.params.weight_hash());
  CHECK(r.report.series("A.train", "loss").size() == 1);
  CHECK(r.final.iteration == 1);
}

TEST_CASE("basic training separates the synthetic categories") {
  auto b = oracle::make_synthetic_bundle(small_synth(2, 0.05, 40), 30, 10);
  auto cfg = phase(200, 3, Level::basic);
  cfg.eval_every = 100;
  const auto r =
      train_phase(model::build_model(net(), 4), cfg, b->data.train, b->data.val, *b->data.images, b->data.labels);
  CHECK(r.report.final.at("A.val.top1") >= 0.95);

  // 20-iteration block means of the training loss trend down
  const auto loss = r.report.series("A.train", "loss");
  REQUIRE(loss.size() == 200);
  std::vector<double> blocks;
  for (std::size_t i = 0; i < 200; i += 20) {
    double s = 0;
    for (std::size_t j = i; j < i + 20; ++j) s += loss[j].value;
    blocks.push_back(s / 20);
  }
  CAPTURE(blocks);
  for (std::size_t i = 1; i < blocks.size(); ++i) CHECK(blocks[i] < blocks[0]);
  CHECK(blocks.back() < 0.5 * blocks.front());
  CHECK(r.report.final.at("A.epochs") == doctest::Approx(200.0 * 16 / 360));
}

TEST_CASE("training is reproducible") {
  auto b = oracle::make_synthetic_bundle(small_synth(3), 12, 4);
  const auto start = model::build_model(net(), 5);
  auto cfg = phase(7, 6, Level::sub);
  cfg.eval_every = 3;
  cfg.checkpoint_every = 4;
  PhaseOptions opts;
  opts.keep_snapshots = true;
  const auto a = train_phase(model::build_model(net(12), 5), cfg, b->data.train, b->data.val, *b->data.images,
                             b->data.labels, opts);
  const auto c = train_phase(model::build_model(net(12), 5), cfg, b->data.train, b->data.val, *b->data.images,
                             b->data.labels, opts);
  CHECK(a.report == c.report);
  CHECK(model::serialize_checkpoint(a.final) == model::serialize_checkpoint(c.final));
  REQUIRE(a.snapshots.size() == 2);
  CHECK(a.snapshots[0].iteration == 4);
  CHECK(a.snapshots[1].iteration == 7);
  std::vector<std::int64_t> evals;
  for (const auto& p : a.report.series("A.val", "top1")) evals.push_back(p.iteration);
  CHECK(evals == std::vector<std::int64_t>{0, 3, 6, 7});
  CHECK_NOTHROW(a.report.check_series_order());
}

TEST_CASE("regime validation") {
  auto r = regime(RegimeKind::reference, 0, 5);
  CHECK_NOTHROW(r.validate());
  r.phase_a = phase(5, 1, Level::basic);
  CHECK_THROWS_AS(r.validate(), ValidationError);
  auto f = regime(RegimeKind::facilitated_random_head, 5, 5);
  f.phase_a->task_level = Level::sub;
  CHECK_THROWS_AS(f.validate(), ValidationError);
  auto e = regime(RegimeKind::reference_extended, 5, 5);
  CHECK_NOTHROW(e.validate());
  e.phase_b.task_level = Level::basic;
  CHECK_THROWS_AS(e.validate(), ValidationError);
  for (auto k : kAllRegimes) CHECK(regime_from_name(regime_name(k)) == k);
  CHECK_THROWS_AS(regime_from_name("bogus"), ValidationError);
}

TEST_CASE("reference regime is a single subordinate phase") {
  auto b = oracle::make_synthetic_bundle(small_synth(4), 12, 4);
  const auto r = regime(RegimeKind::reference, 0, 6);
  const auto result = run_regime(r, b->data, net());
  PhaseOptions opts;
  opts.tag = "B";
  const auto direct = train_phase(model::build_model(net(12), r.init_seed, model::PhaseTag::subordinate), r.phase_b,
                                  b->data.train, b->data.val, *b->data.images, b->data.labels, opts);
  CHECK(model::serialize_checkpoint(result.final) == model::serialize_checkpoint(direct.final));
  CHECK(result.report.curves == direct.report.curves);
  CHECK_FALSE(result.phase_a_final.has_value());
}

TEST_CASE("pretrained regimes") {
  auto b = oracle::make_synthetic_bundle(small_synth(5), 12, 4);
  const auto& d = b->data;

  SUBCASE("replicated head starts with equal sibling logits") {
    const auto result = run_regime(regime(RegimeKind::facilitated_replicated_head, 5, 3), d, net());
    REQUIRE(result.phase_a_final.has_value());
    const auto& start = result.phase_b_start;
    CHECK(start.iteration == 0);
    CHECK(start.params.at("conv1.weight").lr_mult == 0.1);
    CHECK(start.params.at("conv2.weight").lr_mult == 0.1);
    CHECK(start.params.at("conv3.weight").lr_mult == 1.0);
    std::vector<std::size_t> rows(d.val.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const Tensor logits = model::forward_eval(start, make_batch(d.val, rows, *d.images));
    const auto s2b = d.labels.sub_to_basic();
    for (std::size_t n = 0; n < rows.size(); ++n)
      for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 12; ++j)
          if (s2b[i] == s2b[j]) CHECK(std::abs(logits[n * 12 + i] - logits[n * 12 + j]) <= 1e-12);
    CHECK(result.report.series("A.val", "top1").size() == 2);
    CHECK(result.report.series("B.val", "top1").size() == 2);
  }

  SUBCASE("random subset pretraining avoids the basic categories") {
    const auto result = run_regime(regime(RegimeKind::random_subset_pretrain, 3, 3), d, net());
    REQUIRE(result.pretrain_labels.has_value());
    CHECK(result.pretrain_labels->n_basic() == 4);
    for (const auto& name : result.pretrain_labels->basic_names) CHECK(d.graph.basic_marks().count(name) == 0);
    CHECK(result.phase_a_final->spec.n_outputs() == 4);
    CHECK(result.final.spec.n_outputs() == 12);
  }

  SUBCASE("random category sets are non-nested and seeded") {
    const auto g = taxonomy::validate_basic_marks(
        taxonomy::parse_synset_file(std::filesystem::path(HC_FIXTURE_DIR) / "taxonomy" / "synsets.txt"),
        {"dog", "fish", "car"});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto set = random_category_set(g, 2, seed);
      CHECK(set.size() == 2);
      CHECK(set == random_category_set(g, 2, seed));
      for (const auto& a : set) {
        CHECK(g.basic_marks().count(a) == 0);
        CHECK(a != "root");
        for (const auto& c : set)
          CHECK_FALSE(g.is_strict_ancestor(*g.find(a), *g.find(c)));
      }
    }
    CHECK_THROWS_AS(random_category_set(g, 5, 1), ValidationError);
  }

  SUBCASE("extended reference continues the subordinate model") {
    const auto result = run_regime(regime(RegimeKind::reference_extended, 4, 3), d, net());
    CHECK(result.phase_a_final->spec.n_outputs() == 12);
    CHECK(result.phase_b_start.params.at("fc5.weight").weight == result.phase_a_final->params.at("fc5.weight").weight);
    CHECK(result.phase_b_start.iteration == 0);
  }

  SUBCASE("random head regime") {
    const auto result = run_regime(regime(RegimeKind::facilitated_random_head, 3, 3), d, net());
    CHECK(result.phase_b_start.params.at("fc5.weight").weight.dim(0) == 12);
    CHECK(result.phase_b_start.params.at("conv1.weight").weight ==
          result.phase_a_final->params.at("conv1.weight").weight);
  }
}

TEST_CASE("checkpoint sweep") {
  auto b = oracle::make_synthetic_bundle(small_synth(6, 0.3, 60), 30, 10);
  auto cfg = phase(400, 7, Level::sub);
  cfg.checkpoint_every = 400;
  PhaseOptions opts;
  opts.keep_snapshots = true;
  const auto untrained = model::build_model(net(12), 8);
  const auto trained = train_phase(untrained, cfg, b->data.train, b->data.val, *b->data.images, b->data.labels, opts);
  REQUIRE(trained.snapshots.size() == 1);

  transfer::ProbeSpec probe;
  probe.n_train_per_class = 10;
  probe.max_test_per_class = 10;
  probe.n_splits = 2;
  probe.iterations = 300;
  probe.seed = 9;

  const auto single = checkpoint_sweep({trained.snapshots[0]}, probe, b->held_out, *b->data.images);
  const auto s1 = single.series("probe10", "mean_class_recall");
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].iteration == 400);

  const auto sweep = checkpoint_sweep({untrained, trained.snapshots[0]}, probe, b->held_out, *b->data.images);
  const auto s = sweep.series("probe10", "mean_class_recall");
  REQUIRE(s.size() == 2);
  CHECK(s[0].iteration == 0);
  CHECK(s[1].iteration == 400);
  CHECK(s[1].value > s[0].value);

  CHECK_THROWS_AS(checkpoint_sweep({trained.snapshots[0], untrained}, probe, b->held_out, *b->data.images),
                  ValidationError);
}
