#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "craft/adapter.hpp"
#include "craft/core.hpp"
#include "craft/dataio.hpp"
#include "craft/rng.hpp"

namespace craft {

enum class AnchorKind : std::uint8_t { Static, Stochastic };

/// Reference vectors of one modality. For static sets row k is the anchor of
/// class k; for stochastic sets row i is the i-th batch feature.
struct AnchorSet {
  Matrix anchors;
  Modality modality = Modality::Text;
  AnchorKind kind = AnchorKind::Static;

  std::size_t size() const { return static_cast<std::size_t>(anchors.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(anchors.cols()); }
};

struct KMeansResult {
  Matrix centroids;                     ///< m x H
  std::vector<std::size_t> assignments; ///< per input point, in input order
  double objective = 0.0;               ///< sum of squared distances
  std::size_t iterations_run = 0;
  /// Objective after every assignment step, first entry from the seeding.
  std::vector<double> objective_history;
};

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// move is below `tol` or `max_iter` updates ran. Points are visited in
/// lexicographic order during seeding, so the result does not depend on
/// input row order. An emptied cluster is re-seeded at the point farthest
/// from its previous centroid. Throws ClusterError if m is zero or exceeds the
/// number of points.
KMeansResult kmeans(const Matrix& points, std::size_t m, Rng& rng, std::size_t max_iter = 100,
                    double tol = 1e-10);

struct ImageAnchorOptions {
  std::size_t centroids_per_class = 1;
  std::size_t max_iter = 100;
  double tol = 1e-10;
};

/// Per class: encode the image records, cluster them, and keep the
/// normalized centroid (the one nearest the class mean when several are
/// requested). Throws ClusterError naming any class without image records.
AnchorSet build_static_image_anchors(const EmbeddingSet& set, const Adapter& encoder, Rng& rng,
                                     const ImageAnchorOptions& options = {});

/// Per class: normalized mean of the encoded text records. Throws
/// AnchorError naming any class without text records.
AnchorSet build_static_text_anchors(const EmbeddingSet& set, const Adapter& encoder);

/// Static image and text anchors of one source set.
struct StaticAnchors {
  AnchorSet image;
  AnchorSet text;
};

/// A paired minibatch: row i of `images` and row i of `texts` share labels[i].
struct PairedBatch {
  Matrix images;
  Matrix texts;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
};

/// In-batch features used directly as anchors for the contrastive term.
/// Throws ShapeError when the two sides have different row counts or dims.
std::pair<AnchorSet, AnchorSet> stochastic_anchor_batch(const Matrix& batch_images, const Matrix& batch_texts);

/// One epoch of image/text pairs: within each class, shuffled image records
/// are matched with shuffled text records (cycling texts when there are fewer),
/// then all pairs are shuffled and cut into batches of `batch_size` (the last
/// batch may be short). Classes lacking either modality contribute no pairs.
std::vector<PairedBatch> paired_batches(const EmbeddingSet& set, std::size_t batch_size, Rng& rng);

/// Anchors stored as a CEMB set: one record per class and modality, class
/// names prefixed with "anchor:".
inline constexpr const char* kAnchorPrefix = "anchor:";
EmbeddingSet anchors_to_set(const StaticAnchors& anchors, const std::vector<std::string>& class_names);
/// Inverse of anchors_to_set. Throws AnchorError when the prefix is missing or
/// a class lacks exactly one record of a modality.
StaticAnchors anchors_from_set(const EmbeddingSet& set);
/// Class names with the anchor prefix stripped.
std::vector<std::string> anchor_class_names(const EmbeddingSet& set);

}  // namespace craft
