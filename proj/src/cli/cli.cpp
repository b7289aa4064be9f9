#include "hiercurric/cli.hpp"

#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "hiercurric/csv.hpp"
#include "hiercurric/error.hpp"
#include "hiercurric/kernels.hpp"
#include "hiercurric/taxonomy.hpp"

namespace hiercurric::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path output_dir(const std::string& flag, const std::optional<fs::path>& configured, const char* command) {
  if (!flag.empty()) return flag;
  if (configured) return *configured;
  if (const char* root = std::getenv("HIERCURRIC_OUT"); root != nullptr && *root != '\0')
    return fs::path(root) / command;
  throw ValidationError(std::string(command) + ": no output directory (use --out or set HIERCURRIC_OUT)");
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ValidationError(std::string(what) + " not found: " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

dataprep::DatasetManifest load_manifest(const fs::path& path, dataprep::SplitTag split) {
  require_file(path, "manifest");
  return dataprep::read_manifest_csv(path, split);
}

taxonomy::SynsetGraph load_taxonomy(const fs::path& synsets, const fs::path& marks) {
  require_file(synsets, "synset file");
  require_file(marks, "marks file");
  return taxonomy::validate_basic_marks(taxonomy::parse_synset_file(synsets), taxonomy::parse_marks_file(marks));
}

std::string summary_line(const transfer::ProbeResult& r) {
  std::ostringstream s;
  s << "n_train=" << r.n_train_per_class << " mean_class_recall=" << csv::fixed(r.mean, 4)
    << " std=" << csv::fixed(r.stddev, 4) << " splits=" << r.per_split.size() << " classes=" << r.class_names.size();
  return s.str();
}

// ---------------------------------------------------------------------------

struct TaxonomyArgs {
  std::string synsets, marks, out, height_mode = "longest";
};

int cmd_taxonomy(const TaxonomyArgs& a, std::ostream& out) {
  const auto graph = load_taxonomy(a.synsets, a.marks);
  const auto mode = a.height_mode == "shortest" ? taxonomy::HeightMode::shortest : taxonomy::HeightMode::longest;
  const auto labels = taxonomy::allocate_descendants(graph);
  const auto histogram = taxonomy::category_height_histogram(graph, mode);

  const fs::path dir = output_dir(a.out, std::nullopt, "taxonomy");
  fs::create_directories(dir);
  taxonomy::write_labelmap_csv(dir / "labelmap.csv", labels);
  std::vector<csv::Row> rows;
  for (const auto& [height, count] : histogram) rows.push_back({std::to_string(height), std::to_string(count)});
  csv::write_file(dir / "heights.csv", {"height", "count"}, rows);
  out << labels.n_sub() << " leaves in " << labels.n_basic() << " basic categories\n";
  return kOk;
}

struct PrepareArgs {
  std::string synsets, marks, manifest, out, level = "basic";
  std::size_t cap = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  if (!a.seed) throw ValidationError("prepare: --seed is required");
  const auto graph = load_taxonomy(a.synsets, a.marks);
  const auto labels = taxonomy::allocate_descendants(graph);
  const auto input = load_manifest(a.manifest, dataprep::SplitTag::train);
  dataprep::validate_manifest(input, &labels);
  const auto level = a.level == "sub" ? dataprep::Level::sub : dataprep::Level::basic;
  const auto capped = a.cap > 0 ? dataprep::cap_per_category(input, labels, level, a.cap, *a.seed) : input;

  const fs::path dir = output_dir(a.out, std::nullopt, "prepare");
  fs::create_directories(dir);
  // Paths are rewritten relative to the output directory so the new manifest resolves from there.
  const fs::path src_dir = fs::absolute(fs::path(a.manifest)).parent_path();
  const fs::path out_abs = fs::absolute(dir);
  dataprep::DatasetManifest rewritten = capped;
  for (auto& s : rewritten.samples) {
    if (s.source.starts_with("synth:")) continue;
    const fs::path p(s.source);
    const fs::path abs = (p.is_absolute() ? p : src_dir / p).lexically_normal();
    s.source = abs.lexically_relative(out_abs).generic_string();
  }
  const auto before = dataprep::category_counts(input, labels, level);
  const auto after = dataprep::category_counts(capped, labels, level);
  const auto& names = level == dataprep::Level::basic ? labels.basic_names : labels.sub_names;
  std::vector<csv::Row> rows;
  std::size_t total = 0;
  for (const auto& [cat, available] : before) {
    const std::size_t kept = after.count(cat) ? after.at(cat) : 0;
    total += kept;
    rows.push_back({std::to_string(cat), names.at(cat), std::to_string(kept), std::to_string(available)});
    out << names.at(cat) << ": " << kept << " of " << available << '\n';
  }
  dataprep::write_manifest_csv(dir / "manifest.csv", rewritten);
  taxonomy::write_labelmap_csv(dir / "labelmap.csv", labels);
  csv::write_file(dir / "counts.csv", {"category", "id", "retained", "available"}, rows);
  out << "retained " << total << " of " << input.size() << " samples\n";
  return kOk;
}

struct SynthArgs {
  dataprep::SynthSpec spec;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_synth(SynthArgs a, std::ostream& out) {
  if (!a.seed) throw ValidationError("synth: --seed is required");
  a.spec.seed = *a.seed;
  const auto data = dataprep::generate_synthetic(a.spec);
  const fs::path dir = output_dir(a.out, std::nullopt, "synth");
  dataprep::write_synthetic(dir, data);
  out << data.manifest.size() << " samples, " << a.spec.n_basic << " basic x " << a.spec.subs_per_basic
      << " subordinate categories\n";
  return kOk;
}

struct DedupArgs {
  std::string a, b, out;
  double threshold = dataprep::kDefaultOverlapThreshold;
  std::size_t jobs = 1;
};

int cmd_dedup(const DedupArgs& a, std::ostream& out, std::ostream& err) {
  const auto set_a = load_manifest(a.a, dataprep::SplitTag::train);
  const auto images_a = dataprep::load_images(set_a, fs::path(a.a).parent_path());
  const std::string b_path = a.b.empty() ? a.a : a.b;
  const auto set_b = load_manifest(b_path, dataprep::SplitTag::test);
  const auto images_b = dataprep::load_images(set_b, fs::path(b_path).parent_path());
  const auto report = dataprep::find_overlaps(set_a, images_a, set_b, images_b, a.threshold, a.jobs);

  const fs::path dir = output_dir(a.out, std::nullopt, "dedup");
  fs::create_directories(dir);
  dataprep::write_overlaps_csv(dir / "overlaps.csv", report.pairs);
  auto filtered = report.filtered_a;
  const fs::path src_dir = fs::absolute(fs::path(a.a)).parent_path();
  for (auto& s : filtered.samples)
    if (!s.source.starts_with("synth:") && fs::path(s.source).is_relative())
      s.source = (src_dir / s.source).lexically_normal().lexically_relative(fs::absolute(dir)).generic_string();
  dataprep::write_manifest_csv(dir / "filtered.csv", filtered);
  for (const auto& id : report.skipped) err << "warning: " << id << " has zero variance and was not compared\n";
  out << report.pairs.size() << " overlapping pairs; " << filtered.size() << " of " << set_a.size()
      << " samples kept\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct LoadedData {
  curriculum::DataBundle bundle;
  dataprep::ImageBank images;
  dataprep::DatasetManifest held_out;
};

// Hierarchy and label map only; images are not touched.
std::pair<taxonomy::SynsetGraph, taxonomy::LabelMap> load_labels(const ExperimentConfig& cfg) {
  taxonomy::SynsetGraph graph;
  if (cfg.data.synth) {
    dataprep::SynthSpec tiny = *cfg.data.synth;
    tiny.samples_per_sub = 1;
    tiny.height = tiny.width = tiny.channels = 1;
    graph = dataprep::generate_synthetic(tiny).graph;
  } else {
    graph = load_taxonomy(cfg.synsets, cfg.marks);
  }
  auto labels = taxonomy::allocate_descendants(graph);
  return {std::move(graph), std::move(labels)};
}

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData d;
  auto& b = d.bundle;
  if (cfg.data.synth) {
    auto synth = dataprep::generate_synthetic(*cfg.data.synth);
    b.graph = synth.graph;
    const std::size_t per = cfg.data.synth->samples_per_sub;
    b.train.split = dataprep::SplitTag::train;
    b.val.split = dataprep::SplitTag::val;
    d.held_out.split = dataprep::SplitTag::test;
    for (std::size_t i = 0; i < synth.manifest.size(); ++i) {
      const std::size_t n = i % per;
      auto& dest = n < cfg.data.train_per_sub                          ? b.train
                   : n < cfg.data.train_per_sub + cfg.data.val_per_sub ? b.val
                                                                       : d.held_out;
      dest.samples.push_back(synth.manifest.samples[i]);
    }
    d.images = std::move(synth.images);
  } else {
    b.graph = load_taxonomy(cfg.synsets, cfg.marks);
    b.train = load_manifest(cfg.data.train_manifest, dataprep::SplitTag::train);
    d.images = dataprep::load_images(b.train, cfg.data.train_manifest.parent_path());
    if (!cfg.data.val_manifest.empty()) {
      b.val = load_manifest(cfg.data.val_manifest, dataprep::SplitTag::val);
      d.images.merge(dataprep::load_images(b.val, cfg.data.val_manifest.parent_path()));
    }
  }
  b.labels = taxonomy::allocate_descendants(b.graph);
  dataprep::validate_manifest(b.train, &b.labels);
  dataprep::validate_manifest(b.val, &b.labels);
  b.basic_train = cfg.data.cap > 0
                      ? dataprep::cap_per_category(b.train, b.labels, dataprep::Level::basic, cfg.data.cap,
                                                   cfg.data.cap_seed)
                      : b.train;
  return d;
}

struct ProbeData {
  dataprep::DatasetManifest manifest;
  dataprep::ImageBank images;
};

std::vector<transfer::ProbeResult> run_probes(const model::Checkpoint& ckpt, const TransferConfig& tc,
                                              const ProbeData& data) {
  std::vector<transfer::ProbeResult> results;
  for (std::size_t n : tc.n_train) {
    auto spec = tc.probe;
    spec.n_train_per_class = n;
    results.push_back(transfer::evaluate_probe(ckpt, data.manifest, data.images, spec));
  }
  return results;
}

struct TrainArgs {
  std::string config, out;
  std::vector<std::string> overrides;
  bool dry_run = false;
  std::size_t jobs = 1;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  require_file(a.config, "config");
  json document;
  {
    std::ifstream in(a.config);
    document = json::parse(in, nullptr, false);
    if (document.is_discarded()) throw ValidationError("config " + a.config + " is not valid JSON");
  }
  for (const auto& o : a.overrides) apply_override(document, o);
  const ExperimentConfig cfg = parse_config(document, fs::path(a.config).parent_path());
  const std::string hash = config_hash(cfg.document);

  if (a.dry_run) {
    const auto [graph, labels] = load_labels(cfg);
    out << "config " << hash << " is valid: " << labels.n_sub() << " subordinate / " << labels.n_basic()
        << " basic categories\n";
    for (auto kind : cfg.regimes) out << "regime " << curriculum::regime_name(kind) << '\n';
    auto spec = cfg.spec;
    spec.layers.back().units = labels.n_sub();
    out << model::describe_shapes(spec);
    return kOk;
  }

  const fs::path dir = output_dir(a.out, cfg.output, "train");
  const fs::path manifest_path = dir / "MANIFEST.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    const json prior = json::parse(in, nullptr, false);
    if (prior.is_discarded() || !prior.contains("config_hash") || prior["config_hash"] != hash)
      throw ValidationError(dir.string() + " holds a run with a different config; choose another --out");
  }
  fs::create_directories(dir);

  LoadedData data = load_data(cfg);
  data.bundle.images = &data.images;
  std::optional<ProbeData> probe_data;
  if (cfg.transfer) {
    probe_data.emplace();
    if (cfg.transfer->manifest.empty()) {
      probe_data->manifest = data.held_out;
      probe_data->images = data.images;
    } else {
      probe_data->manifest = load_manifest(cfg.transfer->manifest, dataprep::SplitTag::test);
      probe_data->images = dataprep::load_images(probe_data->manifest, cfg.transfer->manifest.parent_path());
    }
  }

  std::vector<std::string> logs(cfg.regimes.size());
  std::vector<std::exception_ptr> errors(cfg.regimes.size());
  auto run_one = [&](std::size_t i) {
    const auto kind = cfg.regimes[i];
    const std::string name(curriculum::regime_name(kind));
    const fs::path rdir = dir / name;
    fs::create_directories(rdir);
    curriculum::RegimeOptions opts;
    if (cfg.save_checkpoints) opts.checkpoint_dir = rdir / "checkpoints";
    opts.keep_snapshots = cfg.transfer && cfg.transfer->sweep;
    auto result = curriculum::run_regime(make_regime(cfg, kind), data.bundle, cfg.spec, opts);
    if (cfg.save_checkpoints) {
      model::save_checkpoint(rdir / "checkpoints" / "final.ckpt", result.final);
      result.report.checkpoints.push_back("final.ckpt");
    }
    std::ostringstream log;
    log << name << ":";
    for (const char* key : {"A.val.top1", "B.val.top1", "B.val.top5"})
      if (result.report.final.count(key)) log << ' ' << key << '=' << csv::fixed(result.report.final.at(key), 4);
    log << '\n';
    if (cfg.transfer) {
      const auto probes = run_probes(result.final, *cfg.transfer, *probe_data);
      transfer::write_probe_json(rdir / "probe.json", probes);
      transfer::write_per_class_csv(rdir / "per_class_recall.csv", probes);
      for (const auto& p : probes) log << "  probe " << summary_line(p) << '\n';
      if (cfg.transfer->sweep) {
        curriculum::RunReport sweep;
        for (std::size_t n : cfg.transfer->n_train) {
          auto spec = cfg.transfer->probe;
          spec.n_train_per_class = n;
          // Phase A and phase B snapshots restart their iteration counts; sweep each phase separately.
          const auto split = result.snapshots.begin() + static_cast<std::ptrdiff_t>(result.phase_a_snapshots);
          const std::vector<model::Checkpoint> phase_a(result.snapshots.begin(), split);
          const std::vector<model::Checkpoint> phase_b(split, result.snapshots.end());
          for (auto* series : {&phase_a, &phase_b}) {
            if (series->empty()) continue;
            auto r = curriculum::checkpoint_sweep(*series, spec, probe_data->manifest, probe_data->images);
            const std::string prefix = series == &phase_a ? "A." : "B.";
            for (auto& p : r.curves) {
              p.split = prefix + p.split;
              sweep.curves.push_back(p);
            }
          }
        }
        curriculum::write_curves_csv(rdir / "sweep.csv", sweep);
      }
    }
    curriculum::write_curves_csv(rdir / "curves.csv", result.report);
    curriculum::write_final_json(rdir / "final.json", result.report);
    logs[i] = log.str();
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(a.jobs, cfg.regimes.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cfg.regimes.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < cfg.regimes.size(); i += jobs) {
          try {
            run_one(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  json regimes = json::array();
  for (auto k : cfg.regimes) regimes.push_back(std::string(curriculum::regime_name(k)));
  const json manifest{{"format", "hiercurric-run"},
                      {"version", HIERCURRIC_VERSION},
                      {"config_hash", hash},
                      {"kernels", std::string(kernels::isa_name(kernels::active_isa()))},
                      {"regimes", regimes},
                      {"config", cfg.document}};
  write_text(manifest_path, manifest.dump(2) + "\n");
  for (const auto& l : logs) out << l;
  (void)err;
  return kOk;
}

// ---------------------------------------------------------------------------
// probe / sweep

struct ProbeArgs {
  std::vector<std::string> checkpoints;
  std::string checkpoint_dir, manifest, out, layer;
  std::vector<std::size_t> n_train{15};
  std::size_t splits = 3, max_test = 50, jobs = 1, batch = 64;
  std::int64_t iterations = 1000;
  double lr = 0.01;
  std::optional<std::uint64_t> seed;
};

transfer::ProbeSpec probe_spec(const ProbeArgs& a) {
  if (!a.seed) throw ValidationError("--seed is required");
  transfer::ProbeSpec spec;
  spec.n_splits = a.splits;
  spec.max_test_per_class = a.max_test;
  spec.iterations = a.iterations;
  spec.layer = a.layer;
  spec.seed = *a.seed;
  spec.jobs = a.jobs;
  spec.sgd.base_lr = a.lr;
  spec.sgd.batch_size = a.batch;
  spec.sgd.validate();
  return spec;
}

ProbeData load_probe_data(const std::string& manifest) {
  ProbeData d;
  d.manifest = load_manifest(manifest, dataprep::SplitTag::test);
  d.images = dataprep::load_images(d.manifest, fs::path(manifest).parent_path());
  return d;
}

int cmd_probe(const ProbeArgs& a, std::ostream& out) {
  const auto spec = probe_spec(a);
  if (a.checkpoints.size() != 1) throw ValidationError("probe: give exactly one --checkpoint");
  require_file(a.checkpoints[0], "checkpoint");
  const auto ckpt = model::load_checkpoint(a.checkpoints[0]);
  const auto data = load_probe_data(a.manifest);
  TransferConfig tc;
  tc.n_train = a.n_train;
  tc.probe = spec;
  const auto results = run_probes(ckpt, tc, data);

  const fs::path dir = output_dir(a.out, std::nullopt, "probe");
  fs::create_directories(dir);
  transfer::write_probe_json(dir / "probe.json", results);
  transfer::write_per_class_csv(dir / "per_class_recall.csv", results);
  for (const auto& r : results) out << summary_line(r) << '\n';
  return kOk;
}

int cmd_sweep(const ProbeArgs& a, std::ostream& out) {
  const auto base = probe_spec(a);
  std::vector<model::Checkpoint> ckpts;
  if (!a.checkpoint_dir.empty()) {
    if (!a.checkpoints.empty()) throw ValidationError("sweep: give --checkpoint or --checkpoint-dir, not both");
    if (!fs::is_directory(a.checkpoint_dir)) throw ValidationError("not a directory: " + a.checkpoint_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.checkpoint_dir))
      if (e.path().extension() == ".ckpt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::pair<model::Checkpoint, fs::path>> loaded;
    for (const auto& f : files) loaded.emplace_back(model::load_checkpoint(f), f);
    std::stable_sort(loaded.begin(), loaded.end(),
                     [](const auto& x, const auto& y) { return x.first.iteration < y.first.iteration; });
    // final.ckpt repeats the last snapshot; identical copies are probed once.
    fs::path previous;
    for (auto& [ckpt, path] : loaded) {
      if (!ckpts.empty() && ckpt.iteration == ckpts.back().iteration) {
        if (ckpt.params.weight_hash() == ckpts.back().params.weight_hash()) continue;
        throw ValidationError("sweep: " + previous.filename().string() + " and " + path.filename().string() +
                              " share iteration " + std::to_string(ckpt.iteration) +
                              " but hold different weights; pass the checkpoints of one phase with --checkpoint");
      }
      ckpts.push_back(std::move(ckpt));
      previous = path;
    }
  } else {
    for (const auto& p : a.checkpoints) {
      require_file(p, "checkpoint");
      ckpts.push_back(model::load_checkpoint(p));
    }
  }
  if (ckpts.empty()) throw ValidationError("sweep: no checkpoints");
  const auto data = load_probe_data(a.manifest);
  curriculum::RunReport sweep;
  for (std::size_t n : a.n_train) {
    auto spec = base;
    spec.n_train_per_class = n;
    auto r = curriculum::checkpoint_sweep(ckpts, spec, data.manifest, data.images);
    sweep.curves.insert(sweep.curves.end(), r.curves.begin(), r.curves.end());
  }
  const fs::path dir = output_dir(a.out, std::nullopt, "sweep");
  fs::create_directories(dir);
  curriculum::write_curves_csv(dir / "sweep.csv", sweep);
  out << ckpts.size() << " checkpoints x " << a.n_train.size() << " probe sizes\n";
  return kOk;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation:
      return kValidation;
    case ErrorKind::numeric:
      return kNumeric;
    case ErrorKind::io:
      return kIo;
  }
  return kValidation;
}

void add_probe_options(CLI::App* cmd, ProbeArgs& a) {
  cmd->add_option("--manifest", a.manifest, "Probe images (manifest CSV)")->required();
  cmd->add_option("--n-train", a.n_train, "Training images per class; repeat or comma-separate")->delimiter(',');
  cmd->add_option("--splits", a.splits, "Random train/test splits");
  cmd->add_option("--max-test", a.max_test, "Test images per class, at most");
  cmd->add_option("--iterations", a.iterations, "Probe SGD iterations");
  cmd->add_option("--lr", a.lr, "Probe learning rate");
  cmd->add_option("--batch", a.batch, "Probe batch size");
  cmd->add_option("--layer", a.layer, "Feature layer (default: input of the output layer)");
  cmd->add_option("--seed", a.seed, "Split and probe seed")->required();
  cmd->add_option("--jobs", a.jobs, "Worker threads across splits");
  cmd->add_option("--out", a.out, "Output directory");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical curriculum training toolkit", "hiercurric"};
  app.set_version_flag("--version", HIERCURRIC_VERSION);
  app.require_subcommand(1);

  TaxonomyArgs tax;
  auto* c_tax = app.add_subcommand("taxonomy", "Allocate leaves to basic categories");
  c_tax->add_option("--synsets", tax.synsets, "Edge list, one parent>child per line")->required();
  c_tax->add_option("--marks", tax.marks, "Basic-level node ids, one per line")->required();
  c_tax->add_option("--height-mode", tax.height_mode, "Category height: longest or shortest path to a leaf")
      ->check(CLI::IsMember({"longest", "shortest"}));
  c_tax->add_option("--out", tax.out, "Output directory");

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "Cap a manifest per category");
  c_prep->add_option("--synsets", prep.synsets)->required();
  c_prep->add_option("--marks", prep.marks)->required();
  c_prep->add_option("--manifest", prep.manifest, "sample_id,path,leaf_id CSV")->required();
  c_prep->add_option("--cap", prep.cap, "Samples kept per category (0: all)");
  c_prep->add_option("--level", prep.level, "Category level for the cap")->check(CLI::IsMember({"basic", "sub"}));
  c_prep->add_option("--seed", prep.seed, "Sampling seed")->required();
  c_prep->add_option("--out", prep.out, "Output directory");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate a synthetic hierarchical image set");
  c_syn->add_option("--basic", syn.spec.n_basic, "Basic categories");
  c_syn->add_option("--subs", syn.spec.subs_per_basic, "Subordinate categories per basic category");
  c_syn->add_option("--samples", syn.spec.samples_per_sub, "Samples per subordinate category");
  c_syn->add_option("--channels", syn.spec.channels);
  c_syn->add_option("--height", syn.spec.height);
  c_syn->add_option("--width", syn.spec.width);
  c_syn->add_option("--sigma-basic", syn.spec.prototype_scale, "Basic prototype spread");
  c_syn->add_option("--sigma-sub", syn.spec.subordinate_scale, "Subordinate prototype spread");
  c_syn->add_option("--noise", syn.spec.noise_scale, "Per-sample noise");
  c_syn->add_option("--seed", syn.seed, "Generator seed")->required();
  c_syn->add_option("--out", syn.out, "Output directory");

  DedupArgs dd;
  auto* c_dd = app.add_subcommand("dedup", "Find near-duplicate images across two sets");
  c_dd->add_option("--a", dd.a, "Manifest to filter")->required();
  c_dd->add_option("--b", dd.b, "Reference manifest (default: --a)");
  c_dd->add_option("--threshold", dd.threshold, "Correlation threshold");
  c_dd->add_option("--jobs", dd.jobs, "Worker threads");
  c_dd->add_option("--out", dd.out, "Output directory");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Run the regimes of an experiment config");
  c_tr->add_option("--config", tr.config, "Experiment config (JSON)")->required();
  c_tr->add_option("--set", tr.overrides, "Override a config key: key.path=value");
  c_tr->add_flag("--dry-run", tr.dry_run, "Validate the config and print the layer shapes");
  c_tr->add_option("--jobs", tr.jobs, "Regimes run in parallel");
  c_tr->add_option("--out", tr.out, "Output directory (overrides output.directory)");

  ProbeArgs pr;
  auto* c_pr = app.add_subcommand("probe", "Linear probe on frozen features");
  c_pr->add_option("--checkpoint", pr.checkpoints, "Backbone checkpoint")->required();
  add_probe_options(c_pr, pr);

  ProbeArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "Linear probe across a series of checkpoints");
  c_sw->add_option("--checkpoint", sw.checkpoints, "Checkpoints in ascending iteration order");
  c_sw->add_option("--checkpoint-dir", sw.checkpoint_dir, "Directory of .ckpt files");
  add_probe_options(c_sw, sw);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (c_tax->parsed()) return cmd_taxonomy(tax, out);
    if (c_prep->parsed()) return cmd_prepare(prep, out);
    if (c_syn->parsed()) return cmd_synth(syn, out);
    if (c_dd->parsed()) return cmd_dedup(dd, out, err);
    if (c_tr->parsed()) return cmd_train(tr, out, err);
    if (c_pr->parsed()) return cmd_probe(pr, out);
    if (c_sw->parsed()) return cmd_sweep(sw, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return kValidation;
}

}  // namespace hiercurric::cli
