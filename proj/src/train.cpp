#include "craft/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "craft/eval.hpp"

namespace craft {

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::BaselineCE: return "baseline";
    case TrainMode::Aligned: return "aligned";
    case TrainMode::AlignedPlusMMD: return "aligned-mmd";
    case TrainMode::Oracle: return "oracle";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "baseline") return TrainMode::BaselineCE;
  if (text == "aligned") return TrainMode::Aligned;
  if (text == "aligned-mmd") return TrainMode::AlignedPlusMMD;
  if (text == "oracle") return TrainMode::Oracle;
  throw ConfigError("unknown mode \"" + text + "\" (expected baseline, aligned, aligned-mmd or oracle)");
}

double TrainConfig::effective_learning_rate() const {
  if (learning_rate) return *learning_rate;
  return batch_size >= 128 ? 0.01 : 0.0025;
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  switch (mode) {
    case TrainMode::BaselineCE:
      w = LossWeights{1.0, 0.0, 0.0, 0.0, 0.0};
      break;
    case TrainMode::Aligned:
    case TrainMode::Oracle:
      w.mmd = 0.0;
      break;
    case TrainMode::AlignedPlusMMD:
      break;
  }
  return w;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  const double lr = effective_learning_rate();
  if (!std::isfinite(lr) || lr <= 0.0) throw ConfigError("train.learning_rate must be positive");
  if (!std::isfinite(tau) || tau <= 0.0) throw ConfigError("train.tau must be positive");
  for (double v : {weights.text_ce, weights.static_image, weights.static_text, weights.stochastic, weights.mmd}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("train.weights entries must be finite and non-negative");
  }
  if (bandwidth && (!std::isfinite(*bandwidth) || *bandwidth <= 0.0)) {
    throw ConfigError("train.bandwidth must be positive");
  }
}

double cosine_lr(std::size_t epoch, std::size_t total, double lr0) {
  if (total < 1) throw ScheduleError("cosine schedule needs at least one epoch");
  if (epoch > total) {
    throw ScheduleError("epoch " + std::to_string(epoch) + " is past the schedule end " + std::to_string(total));
  }
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total)));
}

std::string TrainHistory::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["learning_rate"] = e.learning_rate;
    j["steps"] = e.steps;
    j["total"] = e.loss.total;
    j["static"] = e.loss.static_term;
    j["stochastic"] = e.loss.stochastic_term;
    j["mmd"] = e.loss.mmd_term;
    j["text_ce"] = e.loss.ce_term;
    j["train_accuracy"] = e.train_accuracy;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

void require_same_vocabulary(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.class_names != b.class_names) throw ConfigError("target set does not share the source class vocabulary");
  if (a.dim != b.dim) throw ShapeError("source and target dimensions differ");
}

EmbeddingSet concatenate(const EmbeddingSet& a, const EmbeddingSet& b) {
  EmbeddingSet out = a;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  out.warnings.insert(out.warnings.end(), b.warnings.begin(), b.warnings.end());
  return out;
}

Matrix sample_rows(const Matrix& pool, std::size_t count, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pool.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  const auto n = std::min<std::size_t>(count, idx.size());
  Matrix out(static_cast<Eigen::Index>(n), pool.cols());
  for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) = pool.row(idx[i]);
  return out;
}

}  // namespace

EmbeddingSet training_pool(const EmbeddingSet& source, const EmbeddingSet* target, const TrainConfig& cfg) {
  if (cfg.mode == TrainMode::Oracle && target == nullptr) throw ConfigError("mode oracle requires a target set");
  if (target != nullptr) require_same_vocabulary(source, *target);
  Rng sampling = Rng(cfg.seed).fork(1);
  EmbeddingSet labeled = cfg.shots > 0 ? few_shot_sample(source, cfg.shots, sampling) : source;
  if (cfg.mode == TrainMode::Oracle) {
    labeled = concatenate(labeled, cfg.shots > 0 ? few_shot_sample(*target, cfg.shots, sampling) : *target);
  }
  return labeled;
}

TrainResult train(const EmbeddingSet& source, const EmbeddingSet* target, const StaticAnchors& anchors,
                  const TrainConfig& cfg) {
  return train_from(Adapter::zeros(source.dim), source, target, anchors, cfg);
}

TrainResult train_from(const Adapter& initial, const EmbeddingSet& source, const EmbeddingSet* target,
                       const StaticAnchors& anchors, const TrainConfig& cfg) {
  cfg.validate();
  source.validate();
  if (source.records.empty()) throw ConfigError("training source set is empty");
  if (initial.dim() != source.dim) {
    throw ShapeError("adapter dimension " + std::to_string(initial.dim()) + " does not match data dimension " +
                     std::to_string(source.dim));
  }
  if (anchors.text.size() != source.num_classes() || anchors.image.size() != source.num_classes()) {
    throw AnchorError("static anchors cover " + std::to_string(anchors.text.size()) + " classes, source has " +
                      std::to_string(source.num_classes()));
  }
  const bool needs_target = cfg.mode == TrainMode::AlignedPlusMMD || cfg.mode == TrainMode::Oracle;
  if (needs_target && target == nullptr) {
    throw ConfigError(std::string("mode ") + to_string(cfg.mode) + " requires a target set");
  }
  if (target != nullptr) require_same_vocabulary(source, *target);

  const Rng root(cfg.seed);
  Rng shuffling = root.fork(2);
  Rng target_stream = root.fork(3);

  TrainResult result{initial, {}};
  const EmbeddingSet labeled = training_pool(source, target, cfg);
  result.history.warnings = labeled.warnings;

  const LossWeights weights = cfg.effective_weights();
  const bool use_mmd = weights.mmd != 0.0;
  Matrix target_pool;
  if (use_mmd) {
    target_pool = target->matrix(Modality::Image);
    if (target_pool.rows() == 0) throw ConfigError("target set has no image records for the MMD term");
  }
  const std::size_t target_batch = cfg.target_batch_size > 0 ? cfg.target_batch_size : cfg.batch_size;

  LossConfig loss_cfg{cfg.tau, weights, cfg.bandwidth};
  if (use_mmd && !cfg.bandwidth && cfg.freeze_bandwidth) {
    const Matrix zs = anchor_align(labeled.matrix(Modality::Image), anchors.text, cfg.tau).rows;
    const Matrix zt = anchor_align(target_pool, anchors.text, cfg.tau).rows;
    Matrix pooled(zs.rows() + zt.rows(), zs.cols());
    pooled << zs, zt;
    loss_cfg.bandwidth = median_heuristic(pooled);
  }

  const double lr0 = cfg.effective_learning_rate();
  const Matrix train_images = labeled.matrix(Modality::Image);
  const auto train_labels = labeled.labels(Modality::Image);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, lr0);
    const auto batches = paired_batches(labeled, cfg.batch_size, shuffling);
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    for (const auto& batch : batches) {
      Matrix target_rows;
      if (use_mmd) target_rows = sample_rows(target_pool, target_batch, target_stream);
      const auto step = loss_gradient(result.adapter, batch, use_mmd ? &target_rows : nullptr, anchors, loss_cfg);
      result.adapter = sgd_step(result.adapter, step.gradient, lr);
      record.loss.total += step.report.total;
      record.loss.static_term += step.report.static_term;
      record.loss.stochastic_term += step.report.stochastic_term;
      record.loss.mmd_term += step.report.mmd_term;
      record.loss.ce_term += step.report.ce_term;
      record.loss.batch_size = std::max(record.loss.batch_size, step.report.batch_size);
      ++record.steps;
    }
    if (record.steps > 0) {
      const double n = static_cast<double>(record.steps);
      record.loss.total /= n;
      record.loss.static_term /= n;
      record.loss.stochastic_term /= n;
      record.loss.mmd_term /= n;
      record.loss.ce_term /= n;
    }
    if (train_images.rows() > 0) {
      const AnchorSet text = build_static_text_anchors(labeled, result.adapter);
      record.train_accuracy = accuracy_of(result.adapter.encode_rows(Modality::Image, train_images), train_labels,
                                          text, cfg.tau);
    }
    result.history.epochs.push_back(record);
  }
  return result;
}

}  // namespace craft
