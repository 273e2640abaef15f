#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "craft/adapter.hpp"
#include "craft/anchors.hpp"
#include "craft/dataio.hpp"
#include "craft/eval.hpp"
#include "craft/train.hpp"

namespace craft {

enum class ExperimentKind { BaseToNovel, GroupRobustness, OOD };

/// CLI spellings: base-to-novel, group-robustness, ood.
const char* to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& text);

struct SplitConfig {
  /// Share of classes (rounded up) kept as base classes.
  double base_fraction = 0.5;
  /// Share of each (class, modality) bucket (rounded up) used for training.
  double train_fraction = 0.5;

  void validate() const;
};

struct PathConfig {
  std::string source = "source.cemb";
  std::string target = "target.cemb";
  std::string anchors = "anchors.cemb";
  std::string checkpoint = "adapter.cadp";
  std::string history = "history.jsonl";
  std::string report = "report.json";
};

struct RunConfig {
  ExperimentKind kind = ExperimentKind::BaseToNovel;
  SyntheticConfig synthetic;
  TrainConfig train;
  SplitConfig split;
  ImageAnchorOptions anchors;
  PathConfig paths;

  void validate() const;
};

/// Parses a run config. Every key is optional; unknown keys and wrongly
/// typed values raise ConfigError naming the offending key path.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& cfg);

/// Deterministic train/test partitions for one experiment kind. Splitting
/// uses no randomness, so train and eval recompute identical partitions.
struct ExperimentSplits {
  EmbeddingSet train;                       ///< labeled source (base classes for base-to-novel)
  EmbeddingSet test;                        ///< source test (base classes for base-to-novel)
  std::optional<EmbeddingSet> novel_test;   ///< base-to-novel only
  std::optional<EmbeddingSet> target_train; ///< ood only; labels unused except in oracle mode
  std::optional<EmbeddingSet> target_test;  ///< ood only
};

/// Throws ConfigError when the kind needs a target set and none is given.
ExperimentSplits make_splits(const RunConfig& cfg, const EmbeddingSet& source, const EmbeddingSet* target);

/// Frozen static anchors over the labeled training pool of `cfg.train`.
StaticAnchors build_anchors(const EmbeddingSet& pool, std::uint64_t seed, const ImageAnchorOptions& options);

/// Training pool and anchors for the given splits.
StaticAnchors experiment_anchors(const RunConfig& cfg, const ExperimentSplits& splits);

TrainResult run_training(const RunConfig& cfg, const ExperimentSplits& splits, const StaticAnchors& anchors);

/// Biased MMD^2 between encoded source-test and target-test images, aligned
/// on the frozen static text anchors. The kernel bandwidth is the median
/// heuristic over the pooled aligned features of the untrained adapter, so
/// values from different adapters share one kernel.
struct DomainDiscrepancy {
  double mmd2 = 0.0;
  double bandwidth = 0.0;
};
DomainDiscrepancy domain_discrepancy(const Adapter& adapter, const ExperimentSplits& splits,
                                     const StaticAnchors& anchors, double tau);

/// Runs the harness matching cfg.kind and returns its results object.
nlohmann::ordered_json evaluate_experiment(const RunConfig& cfg, const Adapter& adapter, const ExperimentSplits& splits,
                                           const StaticAnchors& anchors);

/// Human-readable table for a results object produced above.
std::string render_results(ExperimentKind kind, const nlohmann::ordered_json& results);

}  // namespace craft
