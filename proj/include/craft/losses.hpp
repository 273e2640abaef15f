#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "craft/adapter.hpp"
#include "craft/anchors.hpp"
#include "craft/core.hpp"
#include "craft/mmd.hpp"

namespace craft {

/// Softmax over temperature-scaled similarities of one query to K anchors of
/// the other modality.
struct ClassDistribution {
  Vector probs;
  std::uint32_t query_class = 0;
};

/// probs = softmax(tau * <query, anchor_k>). Throws AnchorError for an empty
/// anchor set, ConfigError for tau <= 0.
ClassDistribution class_distribution(const Vector& query, const AnchorSet& anchors, double tau,
                                     std::uint32_t query_class = 0);

/// Batch means of the two halves of the static aligned loss.
struct StaticTerms {
  double image = 0.0;  ///< mean -log p_x(label | image) against text anchors
  double text = 0.0;   ///< mean -log p_y(label | text) against image anchors
  double sum() const { return image + text; }
};

StaticTerms aligned_loss_static_terms(const Matrix& batch_img, const Matrix& batch_txt,
                                      const std::vector<std::uint32_t>& labels, const AnchorSet& text_anchors,
                                      const AnchorSet& image_anchors, double tau);

/// Mean over the batch of -log p_x - log p_y with static anchors.
double aligned_loss_static(const Matrix& batch_img, const Matrix& batch_txt, const std::vector<std::uint32_t>& labels,
                           const AnchorSet& text_anchors, const AnchorSet& image_anchors, double tau);

/// Symmetric in-batch contrastive loss: S = tau * img * txt^T, diagonal
/// targets, averaged over the row-wise and column-wise cross-entropies.
double aligned_loss_stochastic(const Matrix& batch_img, const Matrix& batch_txt, double tau);

/// Image-to-text-anchor cross-entropy (the prompt-tuning baseline). Equal to
/// the image half of aligned_loss_static by construction.
double text_cross_entropy(const Matrix& batch_img, const std::vector<std::uint32_t>& labels,
                          const AnchorSet& text_anchors, double tau);

/// Weights of every loss term. `static_image` and `static_text` split the
/// static aligned loss into its two halves; the usual configuration sets
/// both to the same value.
struct LossWeights {
  double text_ce = 0.0;
  double static_image = 1.0;
  double static_text = 1.0;
  double stochastic = 1.0;
  double mmd = 1.0;
};

struct LossReport {
  double total = 0.0;
  double static_term = 0.0;      ///< unweighted static image + text halves
  double stochastic_term = 0.0;  ///< unweighted
  double mmd_term = 0.0;         ///< unweighted; 0 when no target batch
  double ce_term = 0.0;          ///< unweighted text cross-entropy
  std::size_t batch_size = 0;
};

/// w_static * static + w_stochastic * stochastic (+ w_text_ce * ce). The MMD
/// weight is ignored here; see loss_gradient for the full objective.
LossReport aligned_loss_total(const Matrix& batch_img, const Matrix& batch_txt,
                              const std::vector<std::uint32_t>& labels, const AnchorSet& text_anchors,
                              const AnchorSet& image_anchors, double tau, const LossWeights& weights = {});

struct LossConfig {
  double tau = 1.0;
  LossWeights weights;
  /// Fixed RBF bandwidth for the MMD term. When empty, the median heuristic
  /// over the pooled anchor-aligned source and target rows is used; it is
  /// treated as a constant for differentiation.
  std::optional<double> bandwidth;
};

struct LossAndGradient {
  LossReport report;
  GradientVector gradient;
  /// Bandwidth the MMD term was evaluated with (0 when no MMD term ran).
  double bandwidth = 0.0;
};

/// Full objective for one step, evaluated through the adapter. `target_images`
/// (frozen embeddings, unlabeled) is required when weights.mmd > 0.
LossReport evaluate_loss(const Adapter& adapter, const PairedBatch& batch, const Matrix* target_images,
                         const StaticAnchors& anchors, const LossConfig& config);

/// Objective value and its exact gradient with respect to every adapter
/// parameter, including the Jacobian of the output normalization. Throws
/// NumericError naming the term that produced a non-finite value.
LossAndGradient loss_gradient(const Adapter& adapter, const PairedBatch& batch, const Matrix* target_images,
                              const StaticAnchors& anchors, const LossConfig& config);

}  // namespace craft
