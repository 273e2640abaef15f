#include <doctest.h>

#include <algorithm>
#include <map>

#include "craft/anchors.hpp"
#include "support.hpp"

using namespace craft;

static Matrix blobs(Rng& rng, std::size_t per, double sep, double spread) {
  Matrix p(static_cast<Eigen::Index>(2 * per), 2);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const double cx = i < per ? sep : -sep;
    p(static_cast<Eigen::Index>(i), 0) = cx + spread * rng.normal();
    p(static_cast<Eigen::Index>(i), 1) = spread * rng.normal();
  }
  return p;
}

TEST_CASE("kmeans with one cluster returns the mean") {
  Rng rng(1);
  const Matrix p = testing::random_matrix(30, 4, rng);
  Rng k(2);
  const auto r = kmeans(p, 1, k);
  CHECK((r.centroids.row(0) - p.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
  for (auto a : r.assignments) CHECK(a == 0);
}

TEST_CASE("kmeans with one cluster per point") {
  Rng rng(3);
  const Matrix p = testing::random_matrix(6, 3, rng);
  Rng k(4);
  const auto r = kmeans(p, 6, k);
  CHECK(r.objective == doctest::Approx(0.0));
  std::vector<std::size_t> a = r.assignments;
  std::sort(a.begin(), a.end());
  CHECK(std::unique(a.begin(), a.end()) == a.end());
  for (Eigen::Index i = 0; i < 6; ++i)
    CHECK((r.centroids.row(static_cast<Eigen::Index>(r.assignments[static_cast<std::size_t>(i)])) - p.row(i)).norm() <
          1e-12);
}

TEST_CASE("kmeans recovers two blobs") {
  Rng rng(5);
  const Matrix p = blobs(rng, 100, 5.0, 0.1);
  Rng k(6);
  const auto r = kmeans(p, 2, k);
  Matrix c = r.centroids;
  if (c(0, 0) < c(1, 0)) c.row(0).swap(c.row(1));
  CHECK(std::abs(c(0, 0) - 5.0) < 0.1);
  CHECK(std::abs(c(0, 1)) < 0.1);
  CHECK(std::abs(c(1, 0) + 5.0) < 0.1);
  CHECK(std::abs(c(1, 1)) < 0.1);
}

TEST_CASE("kmeans objective never increases") {
  Rng rng(7);
  for (int run = 0; run < 30; ++run) {
    const std::size_t n = 20 + rng.index(60);
    const std::size_t m = 1 + rng.index(8);
    const Matrix p = testing::random_matrix(n, 1 + rng.index(5), rng);
    Rng k(static_cast<std::uint64_t>(run));
    const auto r = kmeans(p, m, k);
    for (std::size_t i = 1; i < r.objective_history.size(); ++i)
      CHECK(r.objective_history[i] <= r.objective_history[i - 1] + 1e-12);
    for (auto a : r.assignments) CHECK(a < m);
    CHECK(r.objective >= 0.0);
  }
}

TEST_CASE("kmeans errors") {
  Rng rng(8);
  const Matrix p = testing::random_matrix(3, 2, rng);
  CHECK_THROWS_AS(kmeans(p, 4, rng), ClusterError);
  CHECK_THROWS_AS(kmeans(p, 0, rng), ClusterError);
}

TEST_CASE("kmeans ignores input order") {
  Rng rng(9);
  const Matrix p = testing::random_matrix(40, 3, rng);
  Matrix q = p.colwise().reverse();
  Rng a(1), b(1);
  const auto ra = kmeans(p, 3, a);
  const auto rb = kmeans(q, 3, b);
  CHECK((ra.centroids - rb.centroids).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("static image anchors") {
  Rng rng(10);
  const Matrix rows = testing::random_unit_rows(3, 5, rng);
  const auto single = testing::make_set(rows, {0, 1, 2}, Modality::Image, 3);
  Rng k(0);
  const auto a = build_static_image_anchors(single, Adapter::zeros(5), k);
  CHECK(a.kind == AnchorKind::Static);
  CHECK(a.modality == Modality::Image);
  CHECK((a.anchors - rows).cwiseAbs().maxCoeff() < 1e-12);

  const Matrix many = testing::random_unit_rows(12, 5, rng);
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(static_cast<std::uint32_t>(i % 3));
  const auto set = testing::make_set(many, labels, Modality::Image, 3);
  Rng k2(0);
  const auto b = build_static_image_anchors(set, Adapter::zeros(5), k2);
  for (Eigen::Index c = 0; c < 3; ++c) {
    Vector mean = Vector::Zero(5);
    for (int i = 0; i < 12; ++i)
      if (i % 3 == c) mean += many.row(i).transpose();
    CHECK((b.anchors.row(c).transpose() - mean.normalized()).norm() < 1e-12);
    CHECK(std::abs(b.anchors.row(c).norm() - 1.0) < 1e-12);
  }

  // Reversing record order within classes leaves the anchors unchanged.
  auto reversed = set;
  std::reverse(reversed.records.begin(), reversed.records.end());
  Rng k3(0);
  ImageAnchorOptions opts;
  opts.centroids_per_class = 2;
  Rng k4(0);
  const auto c1 = build_static_image_anchors(set, Adapter::zeros(5), k3, opts);
  const auto c2 = build_static_image_anchors(reversed, Adapter::zeros(5), k4, opts);
  CHECK((c1.anchors - c2.anchors).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index c = 0; c < 3; ++c) CHECK(std::abs(c1.anchors.row(c).norm() - 1.0) < 1e-12);
}

TEST_CASE("static image anchors pass through the encoder") {
  Rng rng(11);
  const Matrix rows = testing::random_unit_rows(2, 4, rng);
  const auto set = testing::make_set(rows, {0, 1}, Modality::Image, 2);
  const Adapter enc = testing::random_adapter(4, rng, 0.3);
  Rng k(0);
  const auto a = build_static_image_anchors(set, enc, k);
  CHECK((a.anchors - enc.encode_rows(Modality::Image, rows)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("static image anchors need images for every class") {
  Rng rng(12);
  const auto set = testing::make_set(testing::random_unit_rows(2, 4, rng), {0, 0}, Modality::Image, 2);
  Rng k(0);
  CHECK_THROWS_AS(build_static_image_anchors(set, Adapter::zeros(4), k), ClusterError);
}

TEST_CASE("static text anchors") {
  Rng rng(13);
  const Matrix rows = testing::random_unit_rows(3, 4, rng);
  const auto set = testing::make_set(rows, {0, 1, 2}, Modality::Text, 3);
  const auto a = build_static_text_anchors(set, Adapter::zeros(4));
  CHECK(a.modality == Modality::Text);
  CHECK((a.anchors - rows).cwiseAbs().maxCoeff() < 1e-12);

  auto dup = set;
  dup.records.push_back(dup.records[1]);
  CHECK((build_static_text_anchors(dup, Adapter::zeros(4)).anchors - rows).cwiseAbs().maxCoeff() < 1e-12);

  const auto missing = testing::make_set(rows.topRows(2), {0, 0}, Modality::Text, 3);
  CHECK_THROWS_AS(build_static_text_anchors(missing, Adapter::zeros(4)), AnchorError);
}

TEST_CASE("static text anchors match the generator text means") {
  SyntheticConfig cfg;
  cfg.num_classes = 3;
  cfg.dim = 16;
  cfg.samples_per_class_per_modality = 200;
  cfg.cross_modal_noise = 0.3;
  cfg.seed = 2;
  const auto d = generate_synthetic(cfg);
  const auto a = build_static_text_anchors(d.source, Adapter::zeros(16));
  // Mean of n noisy copies: residual noise norm about sigma*sqrt(H/n).
  for (Eigen::Index c = 0; c < 3; ++c) CHECK((a.anchors.row(c) - d.truth.text_means.row(c)).norm() < 0.1);
}

TEST_CASE("stochastic anchor batch") {
  Rng rng(14);
  const Matrix img = testing::random_unit_rows(1, 4, rng);
  const Matrix txt = testing::random_unit_rows(1, 4, rng);
  auto [ai, at] = stochastic_anchor_batch(img, txt);
  CHECK(ai.size() == 1);
  CHECK(ai.kind == AnchorKind::Stochastic);
  CHECK(ai.anchors == img);
  CHECK(at.anchors == txt);
  CHECK_THROWS_AS(stochastic_anchor_batch(testing::random_unit_rows(2, 4, rng), txt), ShapeError);
}

TEST_CASE("paired batches") {
  SyntheticConfig cfg;
  cfg.num_classes = 4;
  cfg.dim = 6;
  cfg.samples_per_class_per_modality = 10;
  const auto set = generate_synthetic(cfg).source;
  Rng r1(1), r2(1), r3(2);
  const auto a = paired_batches(set, 4, r1);
  const auto b = paired_batches(set, 4, r2);
  const auto c = paired_batches(set, 4, r3);
  CHECK(a.size() == 10);
  std::size_t total = 0;
  std::map<std::uint32_t, int> per_class;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].images == b[i].images);
    CHECK(a[i].images.rows() == a[i].texts.rows());
    total += a[i].size();
    for (auto l : a[i].labels) ++per_class[l];
  }
  CHECK(total == 40);
  for (auto& [k, v] : per_class) CHECK(v == 10);
  CHECK(a[0].images != c[0].images);

  // Each pair shares a class: every image row is a record of its label.
  const auto& batch = a[0];
  for (Eigen::Index i = 0; i < batch.images.rows(); ++i) {
    bool found_img = false, found_txt = false;
    for (const auto& r : set.records) {
      if (r.class_id != batch.labels[static_cast<std::size_t>(i)]) continue;
      if (r.modality == Modality::Image && r.vector == batch.images.row(i).transpose()) found_img = true;
      if (r.modality == Modality::Text && r.vector == batch.texts.row(i).transpose()) found_txt = true;
    }
    CHECK(found_img);
    CHECK(found_txt);
  }
}

TEST_CASE("anchor serialization round trip") {
  Rng rng(15);
  StaticAnchors s;
  s.image = testing::anchors_of(testing::random_unit_rows(3, 4, rng), Modality::Image);
  s.text = testing::anchors_of(testing::random_unit_rows(3, 4, rng), Modality::Text);
  const std::vector<std::string> names{"a", "b", "c"};
  const auto set = anchors_to_set(s, names);
  for (const auto& n : set.class_names) CHECK(n.rfind(kAnchorPrefix, 0) == 0);
  CHECK(anchor_class_names(set) == names);
  const auto back = anchors_from_set(decode_embeddings(encode_embeddings(set)));
  CHECK((back.image.anchors - s.image.anchors).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((back.text.anchors - s.text.anchors).cwiseAbs().maxCoeff() < 1e-6);

  auto broken = set;
  broken.records.pop_back();
  CHECK_THROWS_AS(anchors_from_set(broken), AnchorError);
}
