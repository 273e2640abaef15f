#pragma once

#include <utility>

#include "craft/anchors.hpp"
#include "craft/core.hpp"
#include "craft/rng.hpp"

namespace craft {

/// Gaussian RBF kernel k(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
struct KernelSpec {
  double bandwidth = 1.0;

  /// Throws ConfigError unless the bandwidth is finite and positive.
  void validate() const;
};

double rbf_kernel(const Vector& x, const Vector& y, double sigma);

/// sqrt(median squared pairwise distance / 2) over all rows; 1 when every
/// row coincides. Throws ConfigError for fewer than two rows.
double median_heuristic(const Matrix& samples);

/// Biased (V-statistic) MMD^2 between the row sets X and Y. Non-negative up
/// to rounding and exactly symmetric in its arguments.
double mmd2_biased(const Matrix& x, const Matrix& y, const KernelSpec& kernel);

/// Unbiased (U-statistic) MMD^2; can be negative. Needs two rows per side.
double mmd2_unbiased(const Matrix& x, const Matrix& y, const KernelSpec& kernel);

/// Gradients of mmd2_biased with respect to every row of X and of Y, with the
/// bandwidth held fixed.
std::pair<Matrix, Matrix> mmd2_biased_gradient(const Matrix& x, const Matrix& y, const KernelSpec& kernel);

/// Sample features projected on the static text anchors: row i holds
/// tau * <f_i, a_k> for every class k.
struct AlignedFeatureBatch {
  Matrix rows;
  Domain domain = Domain::InDomain;
};

AlignedFeatureBatch anchor_align(const Matrix& features, const AnchorSet& text_anchors, double tau,
                                 Domain domain = Domain::InDomain);

/// Biased MMD^2 between the anchor-aligned source and target features.
double mmd_loss(const Matrix& source_features, const Matrix& target_features, const AnchorSet& text_anchors,
                const KernelSpec& kernel, double tau);

/// Two-sample permutation test on the biased statistic. Returns
/// (1 + #{permuted >= observed}) / (1 + n_perms). Throws ConfigError when
/// n_perms < 100.
double permutation_test(const Matrix& x, const Matrix& y, const KernelSpec& kernel, std::size_t n_perms, Rng& rng);

}  // namespace craft
