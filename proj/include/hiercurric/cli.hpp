#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hiercurric/curriculum.hpp"
#include "hiercurric/dataprep.hpp"
#include "hiercurric/model.hpp"
#include "hiercurric/transfer.hpp"

namespace hiercurric::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kNumeric = 3, kIo = 4 };

// ---------------------------------------------------------------------------
// Experiment configuration (JSON; schema in docs/config.schema.json)

struct DataConfig {
  std::optional<dataprep::SynthSpec> synth;
  // Synthetic data: per leaf, the first train_per_sub samples train, the next
  // val_per_sub validate and the rest are held out for probing.
  std::size_t train_per_sub = 0;
  std::size_t val_per_sub = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::size_t cap = 0;  // per basic category for phase A; 0 keeps everything
  std::uint64_t cap_seed = 0;
};

struct TransferConfig {
  std::filesystem::path manifest;  // empty: the synthetic held-out samples
  std::vector<std::size_t> n_train;
  transfer::ProbeSpec probe;
  bool sweep = false;  // also probe every saved checkpoint
};

struct ExperimentConfig {
  nlohmann::json document;  // after overrides, as validated
  std::filesystem::path synsets;
  std::filesystem::path marks;
  DataConfig data;
  model::ModelSpec spec;  // head width is set per regime
  std::uint64_t model_seed = 0;
  std::vector<curriculum::RegimeKind> regimes;
  std::optional<curriculum::TrainConfig> phase_a;
  curriculum::TrainConfig phase_b;
  std::size_t random_category_count = 0;
  std::optional<TransferConfig> transfer;
  std::optional<std::filesystem::path> output;
  bool save_checkpoints = true;
};

/// Applies `key.path=value`; value is parsed as JSON and falls back to a plain string.
void apply_override(nlohmann::json& document, const std::string& assignment);

/// Validates the document (unknown keys, types, explicit seeds) and resolves
/// relative paths against `base_dir`. Throws ValidationError.
ExperimentConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& document);

curriculum::Regime make_regime(const ExperimentConfig& config, curriculum::RegimeKind kind);

// ---------------------------------------------------------------------------

/// Runs the command line; never throws. Diagnostics go to `err`, summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hiercurric::cli
