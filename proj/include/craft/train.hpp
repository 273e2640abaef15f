#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "craft/adapter.hpp"
#include "craft/anchors.hpp"
#include "craft/dataio.hpp"
#include "craft/losses.hpp"

namespace craft {

enum class TrainMode { BaselineCE, Aligned, AlignedPlusMMD, Oracle };

/// CLI spellings: baseline, aligned, aligned-mmd, oracle.
const char* to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  /// When unset: 0.01 for batches of 128 or more, 0.0025 otherwise.
  std::optional<double> learning_rate;
  double tau = 30.0;
  LossWeights weights;
  /// Few-shot budget per class and modality; 0 trains on every record.
  std::size_t shots = 16;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Aligned;
  /// Fixed MMD bandwidth; unset selects the median heuristic.
  std::optional<double> bandwidth;
  /// Compute the median-heuristic bandwidth once before the first step.
  bool freeze_bandwidth = false;
  /// Unlabeled target rows per MMD step; 0 reuses batch_size.
  std::size_t target_batch_size = 0;

  double effective_learning_rate() const;
  /// Weights actually optimized in the configured mode.
  LossWeights effective_weights() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// lr0 * (1 + cos(pi t / T)) / 2. Throws ScheduleError unless 0 <= t <= T
/// and T >= 1.
double cosine_lr(std::size_t epoch, std::size_t total, double lr0);

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  std::size_t steps = 0;
  /// Per-term means over the epoch's steps.
  LossReport loss;
  /// Accuracy on the training images against text anchors encoded by the
  /// adapter at the end of the epoch.
  double train_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;

  /// One JSON object per line, one line per epoch.
  std::string to_jsonl() const;
};

struct TrainResult {
  Adapter adapter;
  TrainHistory history;
};

/// The labeled records train() optimizes on: the seeded few-shot sample of
/// `source`, plus that of `target` in Oracle mode. Static anchors should be
/// built from this set.
EmbeddingSet training_pool(const EmbeddingSet& source, const EmbeddingSet* target, const TrainConfig& cfg);

/// Runs minibatch SGD with a per-epoch cosine schedule from a zero adapter.
///
/// `anchors` are the frozen static anchors of the labeled training classes.
/// `target` supplies unlabeled images for AlignedPlusMMD and labeled pairs
/// for Oracle; it must share the source class vocabulary. Throws ConfigError
/// on a mode/target mismatch.
TrainResult train(const EmbeddingSet& source, const EmbeddingSet* target, const StaticAnchors& anchors,
                  const TrainConfig& cfg);

/// Same as train() but starting from `initial`.
TrainResult train_from(const Adapter& initial, const EmbeddingSet& source, const EmbeddingSet* target,
                       const StaticAnchors& anchors, const TrainConfig& cfg);

}  // namespace craft
