#include "craft/anchors.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace craft {

namespace {

bool row_less(const Matrix& m, Eigen::Index a, Eigen::Index b) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (m(a, c) != m(b, c)) return m(a, c) < m(b, c);
  }
  return a < b;
}

// Assigns every point to its nearest centroid (lowest index on ties) and
// returns the objective.
double assign(const Matrix& points, const Matrix& centroids, std::vector<std::size_t>& assignment) {
  double objective = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(c);
      }
    }
    assignment[static_cast<std::size_t>(i)] = arg;
    objective += best;
  }
  return objective;
}

Matrix seed_plus_plus(const Matrix& points, std::size_t m, Rng& rng) {
  const Eigen::Index n = points.rows();
  Matrix centroids(static_cast<Eigen::Index>(m), points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  Vector nearest = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (std::size_t c = 1; c < m; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        cumulative += nearest[i];
        if (nearest[i] > 0.0 && cumulative > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    }
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(pick);
    nearest = nearest.cwiseMin((points.rowwise() - points.row(pick)).rowwise().squaredNorm());
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t m, Rng& rng, std::size_t max_iter, double tol) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (m == 0) throw ClusterError("k-means needs at least one cluster");
  if (n < m) {
    throw ClusterError("k-means with " + std::to_string(m) + " clusters needs at least as many points, got " +
                       std::to_string(n));
  }

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return row_less(points, a, b); });
  Matrix sorted(points.rows(), points.cols());
  for (std::size_t i = 0; i < n; ++i) sorted.row(static_cast<Eigen::Index>(i)) = points.row(order[i]);

  KMeansResult result;
  result.centroids = seed_plus_plus(sorted, m, rng);
  std::vector<std::size_t> assignment(n, 0);
  result.objective = assign(sorted, result.centroids, assignment);
  result.objective_history.push_back(result.objective);

  for (std::size_t it = 1; it <= max_iter; ++it) {
    Matrix updated = Matrix::Zero(result.centroids.rows(), result.centroids.cols());
    std::vector<std::size_t> members(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      updated.row(static_cast<Eigen::Index>(assignment[i])) += sorted.row(static_cast<Eigen::Index>(i));
      ++members[assignment[i]];
    }
    for (std::size_t c = 0; c < m; ++c) {
      const auto row = static_cast<Eigen::Index>(c);
      if (members[c] > 0) {
        updated.row(row) /= static_cast<double>(members[c]);
        continue;
      }
      Eigen::Index farthest = 0;
      (sorted.rowwise() - result.centroids.row(row)).rowwise().squaredNorm().maxCoeff(&farthest);
      updated.row(row) = sorted.row(farthest);
    }
    const double movement = (updated - result.centroids).rowwise().norm().maxCoeff();
    result.centroids = std::move(updated);
    result.objective = assign(sorted, result.centroids, assignment);
    result.objective_history.push_back(result.objective);
    result.iterations_run = it;
    if (movement < tol) break;
  }

  result.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) result.assignments[static_cast<std::size_t>(order[i])] = assignment[i];
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<Vector>> encoded_by_class(const EmbeddingSet& set, const Adapter& encoder,
                                                  Modality modality) {
  std::vector<std::vector<Vector>> out(set.num_classes());
  for (const auto& r : set.records) {
    if (r.modality == modality) out[r.class_id].push_back(encoder.encode(modality, r.vector));
  }
  return out;
}

Matrix stack(const std::vector<Vector>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

}  // namespace

AnchorSet build_static_image_anchors(const EmbeddingSet& set, const Adapter& encoder, Rng& rng,
                                     const ImageAnchorOptions& options) {
  set.validate();
  const auto per_class = encoded_by_class(set, encoder, Modality::Image);
  AnchorSet out;
  out.modality = Modality::Image;
  out.kind = AnchorKind::Static;
  out.anchors.resize(static_cast<Eigen::Index>(set.num_classes()), static_cast<Eigen::Index>(set.dim));
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c].empty()) {
      throw ClusterError("class " + std::to_string(c) + " (" + set.class_names[c] + ") has no image records");
    }
    const Matrix points = stack(per_class[c]);
    // Each class draws from its own stream so anchors do not depend on the
    // order classes are processed in.
    Rng class_rng = rng.fork(c);
    const auto km = kmeans(points, options.centroids_per_class, class_rng, options.max_iter, options.tol);
    Eigen::Index chosen = 0;
    if (km.centroids.rows() > 1) {
      const Vector mean = points.colwise().mean().transpose();
      (km.centroids.rowwise() - mean.transpose()).rowwise().squaredNorm().minCoeff(&chosen);
    }
    out.anchors.row(static_cast<Eigen::Index>(c)) = l2_normalize(km.centroids.row(chosen).transpose()).transpose();
  }
  return out;
}

AnchorSet build_static_text_anchors(const EmbeddingSet& set, const Adapter& encoder) {
  set.validate();
  const auto per_class = encoded_by_class(set, encoder, Modality::Text);
  AnchorSet out;
  out.modality = Modality::Text;
  out.kind = AnchorKind::Static;
  out.anchors.resize(static_cast<Eigen::Index>(set.num_classes()), static_cast<Eigen::Index>(set.dim));
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c].empty()) {
      throw AnchorError("class " + std::to_string(c) + " (" + set.class_names[c] + ") has no text records");
    }
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(set.dim));
    for (const auto& v : per_class[c]) sum += v;
    out.anchors.row(static_cast<Eigen::Index>(c)) =
        l2_normalize(sum / static_cast<double>(per_class[c].size())).transpose();
  }
  return out;
}

std::pair<AnchorSet, AnchorSet> stochastic_anchor_batch(const Matrix& batch_images, const Matrix& batch_texts) {
  if (batch_images.rows() != batch_texts.rows() || batch_images.cols() != batch_texts.cols()) {
    throw ShapeError("stochastic anchors need paired batches, got " + std::to_string(batch_images.rows()) + "x" +
                     std::to_string(batch_images.cols()) + " images and " + std::to_string(batch_texts.rows()) +
                     "x" + std::to_string(batch_texts.cols()) + " texts");
  }
  return {AnchorSet{batch_images, Modality::Image, AnchorKind::Stochastic},
          AnchorSet{batch_texts, Modality::Text, AnchorKind::Stochastic}};
}

std::vector<PairedBatch> paired_batches(const EmbeddingSet& set, std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  std::vector<std::vector<std::size_t>> images(set.num_classes()), texts(set.num_classes());
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    (r.modality == Modality::Image ? images : texts)[r.class_id].push_back(i);
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t c = 0; c < set.num_classes(); ++c) {
    if (images[c].empty() || texts[c].empty()) continue;
    rng.shuffle(images[c]);
    rng.shuffle(texts[c]);
    for (std::size_t j = 0; j < images[c].size(); ++j) {
      pairs.emplace_back(images[c][j], texts[c][j % texts[c].size()]);
    }
  }
  rng.shuffle(pairs);

  std::vector<PairedBatch> batches;
  const auto h = static_cast<Eigen::Index>(set.dim);
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, pairs.size() - start);
    PairedBatch batch;
    batch.images.resize(static_cast<Eigen::Index>(b), h);
    batch.texts.resize(static_cast<Eigen::Index>(b), h);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& [img, txt] = pairs[start + i];
      batch.images.row(static_cast<Eigen::Index>(i)) = set.records[img].vector.transpose();
      batch.texts.row(static_cast<Eigen::Index>(i)) = set.records[txt].vector.transpose();
      batch.labels.push_back(set.records[img].class_id);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------

EmbeddingSet anchors_to_set(const StaticAnchors& anchors, const std::vector<std::string>& class_names) {
  const std::size_t k = class_names.size();
  if (anchors.image.size() != k || anchors.text.size() != k) {
    throw AnchorError("anchor sets must hold one anchor per class (" + std::to_string(k) + ")");
  }
  if (anchors.image.dim() != anchors.text.dim()) throw ShapeError("image and text anchors differ in dimension");
  EmbeddingSet set;
  set.dim = anchors.image.dim();
  for (const auto& name : class_names) set.class_names.push_back(kAnchorPrefix + name);
  for (const AnchorSet* a : {&anchors.image, &anchors.text}) {
    for (std::size_t c = 0; c < k; ++c) {
      set.records.push_back({a->anchors.row(static_cast<Eigen::Index>(c)).transpose(),
                             static_cast<std::uint32_t>(c), a->modality, Domain::InDomain, 0});
    }
  }
  return set;
}

std::vector<std::string> anchor_class_names(const EmbeddingSet& set) {
  std::vector<std::string> names;
  const std::string prefix = kAnchorPrefix;
  for (const auto& n : set.class_names) {
    if (n.rfind(prefix, 0) != 0) throw AnchorError("class name \"" + n + "\" lacks the \"anchor:\" prefix");
    names.push_back(n.substr(prefix.size()));
  }
  return names;
}

StaticAnchors anchors_from_set(const EmbeddingSet& set) {
  set.validate();
  anchor_class_names(set);
  const std::size_t k = set.num_classes();
  const auto h = static_cast<Eigen::Index>(set.dim);
  StaticAnchors out{{Matrix(static_cast<Eigen::Index>(k), h), Modality::Image, AnchorKind::Static},
                    {Matrix(static_cast<Eigen::Index>(k), h), Modality::Text, AnchorKind::Static}};
  std::vector<int> seen(2 * k, 0);
  for (const auto& r : set.records) {
    auto& target = r.modality == Modality::Image ? out.image : out.text;
    target.anchors.row(r.class_id) = r.vector.transpose();
    ++seen[2 * r.class_id + static_cast<std::size_t>(r.modality)];
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i] != 1) {
      throw AnchorError("anchor file holds " + std::to_string(seen[i]) + " " +
                        to_string(static_cast<Modality>(i % 2)) + " anchors for class " + set.class_names[i / 2] +
                        ", expected 1");
    }
  }
  return out;
}

}  // namespace craft
