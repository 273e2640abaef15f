#include <doctest.h>

#include <filesystem>

#include "craft/eval.hpp"
#include "support.hpp"

using namespace craft;

namespace {

Matrix basis(std::initializer_list<int> axes, int h) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(axes.size()), h);
  Eigen::Index i = 0;
  for (int a : axes) m(i++, a) = 1.0;
  return m;
}

EmbeddingSet paired_set(const Matrix& images, const std::vector<std::uint32_t>& labels, const Matrix& texts) {
  auto s = testing::make_set(images, labels, Modality::Image, static_cast<std::size_t>(texts.rows()));
  for (Eigen::Index k = 0; k < texts.rows(); ++k)
    s.records.push_back({texts.row(k).transpose(), static_cast<std::uint32_t>(k), Modality::Text, Domain::InDomain, 0});
  return s;
}

}  // namespace

TEST_CASE("predict examples") {
  const auto a = testing::anchors_of(basis({0, 1, 2}, 3), Modality::Text);
  Vector q(3);
  q << 0.1, 0.9, 0.2;
  CHECK(predict(q.normalized(), a, 1.0) == 1);
  // Ties go to the lowest class id.
  Vector tie(3);
  tie << 1.0, 1.0, 0.0;
  CHECK(predict(tie.normalized(), a, 5.0) == 0);
}

TEST_CASE("predict ignores the temperature") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto a = testing::anchors_of(testing::random_unit_rows(6, 5, rng), Modality::Text);
    const Vector q = testing::random_unit(5, rng);
    CHECK(predict(q, a, 1.0) == predict(q, a, 1.0 + 99.0 * rng.uniform()));
  }
}

TEST_CASE("accuracy examples") {
  const Matrix t = basis({0, 1}, 2);
  const auto a = testing::anchors_of(t, Modality::Text);
  CHECK(accuracy_of(basis({0, 1, 0}, 2), {0, 1, 0}, a, 1.0) == 1.0);
  CHECK(accuracy_of(basis({0, 1, 0}, 2), {1, 0, 1}, a, 1.0) == 0.0);
  CHECK(accuracy_of(basis({0, 1, 0, 0}, 2), {0, 1, 1, 1}, a, 1.0) == 0.5);
  CHECK_THROWS_AS(accuracy_of(Matrix(0, 2), {}, a, 1.0), EvalError);
  CHECK_THROWS_AS(accuracy_of(basis({0}, 2), {0, 1}, a, 1.0), ShapeError);
}

TEST_CASE("zero adapter accuracy equals zero-shot accuracy") {
  SyntheticConfig cfg;
  cfg.num_classes = 5;
  cfg.dim = 8;
  cfg.samples_per_class_per_modality = 20;
  cfg.cluster_spread = 1.5;
  cfg.modality_gap = 2.0;
  const auto d = generate_synthetic(cfg);
  const auto text = build_static_text_anchors(d.source, Adapter::zeros(8));
  // Zero-shot: raw image rows, normalized, against normalized text means.
  const Matrix raw = d.source.matrix(Modality::Image);
  const auto labels = d.source.labels(Modality::Image);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const Vector s = text.anchors * raw.row(i).transpose().normalized();
    Eigen::Index best;
    s.maxCoeff(&best);
    hits += static_cast<std::uint32_t>(best) == labels[static_cast<std::size_t>(i)];
  }
  CHECK(accuracy(Adapter::zeros(8), d.source, text, 30.0) ==
        doctest::Approx(static_cast<double>(hits) / static_cast<double>(raw.rows())));
}

TEST_CASE("group metrics examples") {
  const std::vector<GroupCount> three{{"a", 785, 1000}, {"b", 962, 1000}, {"c", 941, 1000}};
  const auto r = group_metrics(three);
  CHECK(format_percent(r.worst_group) == "78.5");
  CHECK(format_percent(r.average) == "89.6");
  CHECK(format_percent(r.gap) == "11.1");

  const std::vector<GroupCount> perfect{{"x", 5, 5}, {"y", 0, 3}};
  const auto p = group_metrics(perfect);
  CHECK(p.worst_group == 0.0);
  CHECK(p.average == 0.5);
  CHECK(p.gap == 0.5);

  const std::vector<GroupCount> equal{{"x", 3, 4}, {"y", 6, 8}};
  CHECK(group_metrics(equal).gap == 0.0);

  CHECK_THROWS_AS(group_metrics(std::span<const GroupCount>{}), EvalError);
  const std::vector<GroupCount> empty{{"x", 0, 0}};
  CHECK_THROWS_AS(group_metrics(empty), EvalError);
  const std::vector<GroupCount> over{{"x", 4, 3}};
  CHECK_THROWS_AS(group_metrics(over), EvalError);
}

TEST_CASE("group metrics properties") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<GroupCount> g;
    const std::size_t n = 1 + rng.index(6);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t total = 1 + rng.index(50);
      g.push_back({"g" + std::to_string(k), rng.index(total + 1), total});
    }
    const auto r = group_metrics(g);
    CHECK(r.worst_group <= r.average + 1e-15);
    CHECK(r.gap >= 0.0);
    CHECK(r.gap == doctest::Approx(r.average - r.worst_group));
  }
}

TEST_CASE("ood average examples") {
  const std::vector<double> t{0.602, 0.587, 0.606, 0.609};
  CHECK(format_percent(ood_average(t)) == "60.1");
  CHECK_THROWS_AS(ood_average(std::span<const double>{}), EvalError);
}

TEST_CASE("confusion matrix") {
  const Matrix t = basis({0, 1, 2}, 3);
  const auto set = paired_set(basis({0, 1, 1, 2, 0}, 3), {0, 1, 2, 2, 1}, t);
  const auto a = testing::anchors_of(t, Modality::Text);
  const auto m = confusion(Adapter::zeros(3), set, a, 1.0);
  CHECK(m.total() == 5);
  CHECK(m.trace() == 3);
  CHECK(static_cast<double>(m.trace()) / m.total() == accuracy(Adapter::zeros(3), set, a, 1.0));
  CHECK(m.counts[2][1] == 1);
  CHECK(m.counts[1][0] == 1);
  const auto csv = m.to_csv(set.class_names);
  CHECK(csv.rfind("true\\predicted,c0,c1,c2\n", 0) == 0);
  CHECK(csv.find("c2,0,1,1\n") != std::string::npos);

  // Swapping anchors 0 and 1 swaps the predicted columns.
  Matrix swapped = t;
  swapped.row(0).swap(swapped.row(1));
  const auto s = confusion(Adapter::zeros(3), set, testing::anchors_of(swapped, Modality::Text), 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s.counts[i][0] == m.counts[i][1]);
    CHECK(s.counts[i][1] == m.counts[i][0]);
    CHECK(s.counts[i][2] == m.counts[i][2]);
  }
  CHECK_THROWS_AS(confusion(Adapter::zeros(3), set, testing::anchors_of(basis({0, 1}, 3), Modality::Text), 1.0),
                  AnchorError);
}

TEST_CASE("base to novel harness") {
  SyntheticConfig cfg;
  cfg.num_classes = 6;
  cfg.dim = 8;
  cfg.samples_per_class_per_modality = 10;
  const auto d = generate_synthetic(cfg);
  const auto [base, novel] = split_base_novel(d.source, 0.5);
  const auto r = base_to_novel(Adapter::zeros(8), base, novel, 10.0);
  CHECK(r.base_accuracy == accuracy(Adapter::zeros(8), base, build_static_text_anchors(base, Adapter::zeros(8)), 10));
  CHECK(r.novel_accuracy ==
        accuracy(Adapter::zeros(8), novel, build_static_text_anchors(novel, Adapter::zeros(8)), 10));
  CHECK_THROWS_AS(base_to_novel(Adapter::zeros(8), base, base, 10.0), SplitError);
  const auto j = to_json(r);
  CHECK(j["rendered"]["Base"] == format_percent(r.base_accuracy));
  CHECK(render_table(r).find("Novel") != std::string::npos);
}

TEST_CASE("group robustness harness") {
  SyntheticConfig cfg;
  cfg.num_classes = 3;
  cfg.dim = 8;
  cfg.samples_per_class_per_modality = 20;
  cfg.group_spurious_strength = 0.8;
  const auto d = generate_synthetic(cfg);
  const auto text = build_static_text_anchors(d.source, Adapter::zeros(8));
  const auto r = group_robustness(Adapter::zeros(8), d.source, text, 10.0);
  CHECK(r.groups.size() == 6);
  CHECK(r.groups[0] == d.source.class_names[0] + "/group0");
  CHECK(r.worst_group <= r.average);
}

TEST_CASE("ood suite on an unshifted target stays close to the source") {
  SyntheticConfig cfg;
  cfg.num_classes = 5;
  cfg.dim = 12;
  cfg.samples_per_class_per_modality = 200;
  cfg.cluster_spread = 1.5;
  cfg.modality_gap = 2.0;
  const auto d = generate_synthetic(cfg);
  const std::vector<EmbeddingSet> targets{d.target};
  const auto r = ood_suite(Adapter::zeros(12), d.source, targets, 10.0);
  CHECK(std::abs(r.source_accuracy - r.target_average) <= 0.02);
  auto other = d.target;
  other.class_names.back() = "other";
  const std::vector<EmbeddingSet> bad{other};
  CHECK_THROWS_AS(ood_suite(Adapter::zeros(12), d.source, bad, 10.0), EvalError);
  CHECK_THROWS_AS(ood_suite(Adapter::zeros(12), d.source, {}, 10.0), EvalError);
  const auto j = to_json(r);
  CHECK(j["rendered"]["Avg"] == format_percent(r.target_average));
}

TEST_CASE("feature dump round trip") {
  Rng rng(3);
  SyntheticConfig cfg;
  cfg.num_classes = 3;
  cfg.dim = 5;
  cfg.samples_per_class_per_modality = 4;
  const auto d = generate_synthetic(cfg);
  const Adapter a = testing::random_adapter(5, rng, 0.3);
  const auto path = std::filesystem::temp_directory_path() / "craft_dump_test.cemb";
  dump_features(a, d.source, path);
  const auto back = read_embeddings(path);
  std::filesystem::remove(path);
  REQUIRE(back.records.size() == d.source.records.size());
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    const auto& r = d.source.records[i];
    CHECK(back.records[i].class_id == r.class_id);
    CHECK(back.records[i].modality == r.modality);
    CHECK((back.records[i].vector - a.encode(r.modality, r.vector)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("percent formatting") {
  CHECK(format_percent(0.785) == "78.5");
  CHECK(format_percent(1.0) == "100.0");
  CHECK(format_percent(0.0) == "0.0");
  CHECK(format_percent(0.12345) == "12.3");
}
