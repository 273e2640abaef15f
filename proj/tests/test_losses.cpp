#include <doctest.h>

#include <cmath>
#include <numeric>

#include "craft/losses.hpp"
#include "support.hpp"

using namespace craft;

namespace {

Matrix basis(std::initializer_list<int> axes, int h) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(axes.size()), h);
  Eigen::Index i = 0;
  for (int a : axes) m(i++, a) = 1.0;
  return m;
}

// Naive -log softmax(tau * <q, a_k>)[label].
double naive_nll(const Vector& q, const Matrix& anchors, std::uint32_t label, double tau) {
  double denom = 0.0;
  for (Eigen::Index k = 0; k < anchors.rows(); ++k) denom += std::exp(tau * anchors.row(k).dot(q));
  return -std::log(std::exp(tau * anchors.row(label).dot(q)) / denom);
}

double naive_static(const Matrix& img, const Matrix& txt, const std::vector<std::uint32_t>& labels, const Matrix& ta,
                    const Matrix& ia, double tau) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    s += naive_nll(img.row(i).transpose(), ta, labels[static_cast<std::size_t>(i)], tau);
    s += naive_nll(txt.row(i).transpose(), ia, labels[static_cast<std::size_t>(i)], tau);
  }
  return s / static_cast<double>(img.rows());
}

double naive_contrastive(const Matrix& img, const Matrix& txt, double tau) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    s += naive_nll(img.row(i).transpose(), txt, static_cast<std::uint32_t>(i), tau);
    s += naive_nll(txt.row(i).transpose(), img, static_cast<std::uint32_t>(i), tau);
  }
  return s / (2.0 * static_cast<double>(img.rows()));
}

struct Fixture {
  Adapter adapter;
  PairedBatch batch;
  Matrix target;
  StaticAnchors anchors;
};

Fixture fixture(std::uint64_t seed, std::size_t h, std::size_t k, std::size_t b, std::size_t t) {
  Rng rng(seed);
  Fixture f;
  f.adapter = testing::random_adapter(h, rng, 0.2);
  f.batch.images = testing::random_unit_rows(b, h, rng);
  f.batch.texts = testing::random_unit_rows(b, h, rng);
  for (std::size_t i = 0; i < b; ++i) f.batch.labels.push_back(static_cast<std::uint32_t>(rng.index(k)));
  f.target = testing::random_unit_rows(t, h, rng);
  f.anchors.image = testing::anchors_of(testing::random_unit_rows(k, h, rng), Modality::Image);
  f.anchors.text = testing::anchors_of(testing::random_unit_rows(k, h, rng), Modality::Text);
  return f;
}

}  // namespace

TEST_CASE("class distribution examples") {
  const auto a = testing::anchors_of(basis({0, 1}, 2), Modality::Text);
  Vector q(2);
  q << 1.0, 0.0;
  const auto d = class_distribution(q, a, 1.0);
  CHECK(d.probs[0] == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(d.probs[1] == doctest::Approx(0.26894).epsilon(1e-5));

  const auto one = testing::anchors_of(basis({1}, 2), Modality::Text);
  CHECK(class_distribution(q, one, 3.0).probs[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(class_distribution(q, testing::anchors_of(Matrix(0, 2), Modality::Text), 1.0), AnchorError);
  CHECK_THROWS_AS(class_distribution(q, a, 0.0), ConfigError);
  CHECK_THROWS_AS(class_distribution(q, a, -1.0), ConfigError);
  CHECK_THROWS_AS(class_distribution(Vector::Zero(3), a, 1.0), ShapeError);
}

TEST_CASE("class distribution is a distribution") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto a = testing::anchors_of(testing::random_unit_rows(1 + rng.index(10), 5, rng), Modality::Text);
    const auto d = class_distribution(testing::random_unit(5, rng), a, 1.0 + 100.0 * rng.uniform());
    CHECK(d.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.probs.minCoeff() >= 0.0);
  }
}

TEST_CASE("static loss examples") {
  // Query orthogonal to both anchors: uniform over two classes in each half.
  const Matrix q = basis({2}, 3);
  const auto a2 = testing::anchors_of(basis({0, 1}, 3), Modality::Text);
  const auto i2 = testing::anchors_of(basis({0, 1}, 3), Modality::Image);
  CHECK(aligned_loss_static(q, q, {0}, a2, i2, 1.0) == doctest::Approx(2.0 * std::log(2.0)));

  const auto a1 = testing::anchors_of(basis({0}, 3), Modality::Text);
  const auto i1 = testing::anchors_of(basis({0}, 3), Modality::Image);
  CHECK(aligned_loss_static(q, q, {0}, a1, i1, 5.0) == doctest::Approx(0.0));

  const Matrix e0 = basis({0}, 3);
  CHECK(aligned_loss_static(e0, e0, {0}, a2, i2, 1.0) == doctest::Approx(0.62652).epsilon(1e-5));
  CHECK_THROWS_AS(aligned_loss_static(e0, basis({0, 1}, 3), {0}, a2, i2, 1.0), ShapeError);
}

TEST_CASE("static loss matches a naive oracle") {
  auto f = fixture(2, 6, 4, 8, 1);
  const double got = aligned_loss_static(f.batch.images, f.batch.texts, f.batch.labels, f.anchors.text,
                                         f.anchors.image, 7.0);
  CHECK(got == doctest::Approx(naive_static(f.batch.images, f.batch.texts, f.batch.labels, f.anchors.text.anchors,
                                            f.anchors.image.anchors, 7.0))
                   .epsilon(1e-12));
  CHECK(text_cross_entropy(f.batch.images, f.batch.labels, f.anchors.text, 7.0) ==
        doctest::Approx(aligned_loss_static_terms(f.batch.images, f.batch.texts, f.batch.labels, f.anchors.text,
                                                  f.anchors.image, 7.0)
                            .image));
}

TEST_CASE("stochastic loss examples") {
  const Matrix e0 = basis({0}, 2);
  CHECK(aligned_loss_stochastic(e0, e0, 4.0) == doctest::Approx(0.0));
  const Matrix e01 = basis({0, 1}, 2);
  CHECK(aligned_loss_stochastic(e01, e01, 1.0) == doctest::Approx(0.31326).epsilon(1e-5));
  const Matrix same = basis({0, 0}, 2);
  CHECK(aligned_loss_stochastic(same, same, 1.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("stochastic loss oracle and permutation invariance") {
  Rng rng(3);
  const Matrix img = testing::random_unit_rows(7, 5, rng);
  const Matrix txt = testing::random_unit_rows(7, 5, rng);
  const double base = aligned_loss_stochastic(img, txt, 9.0);
  CHECK(base == doctest::Approx(naive_contrastive(img, txt, 9.0)).epsilon(1e-12));
  std::vector<Eigen::Index> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Matrix pi(7, 5), pt(7, 5);
  for (Eigen::Index i = 0; i < 7; ++i) {
    pi.row(i) = img.row(perm[static_cast<std::size_t>(i)]);
    pt.row(i) = txt.row(perm[static_cast<std::size_t>(i)]);
  }
  CHECK(aligned_loss_stochastic(pi, pt, 9.0) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("total loss weights") {
  auto f = fixture(4, 5, 3, 6, 1);
  const double tau = 4.0;
  const auto s = aligned_loss_static_terms(f.batch.images, f.batch.texts, f.batch.labels, f.anchors.text,
                                           f.anchors.image, tau);
  const double st = aligned_loss_stochastic(f.batch.images, f.batch.texts, tau);
  LossWeights w{0.5, 2.0, 3.0, 7.0, 0.0};
  const auto r = aligned_loss_total(f.batch.images, f.batch.texts, f.batch.labels, f.anchors.text, f.anchors.image,
                                    tau, w);
  CHECK(r.total == doctest::Approx(0.5 * s.image + 2.0 * s.image + 3.0 * s.text + 7.0 * st).epsilon(1e-12));
  CHECK(r.static_term == doctest::Approx(s.sum()));
  CHECK(r.stochastic_term == doctest::Approx(st));
}

TEST_CASE("baseline weights reduce to the text cross-entropy") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = fixture(seed, 5, 4, 6, 6);
    LossConfig baseline{10.0, {1, 0, 0, 0, 0}, std::nullopt};
    LossConfig image_half{10.0, {0, 1, 0, 0, 0}, std::nullopt};
    const auto a = loss_gradient(f.adapter, f.batch, nullptr, f.anchors, baseline);
    const auto b = loss_gradient(f.adapter, f.batch, nullptr, f.anchors, image_half);
    CHECK(std::abs(a.report.total - b.report.total) <= 1e-12);
    CHECK((a.gradient.values - b.gradient.values).cwiseAbs().maxCoeff() <= 1e-12);
    const Matrix u = f.adapter.encode_rows(Modality::Image, f.batch.images);
    CHECK(a.report.total == doctest::Approx(text_cross_entropy(u, f.batch.labels, f.anchors.text, 10.0)));
    // Baseline gradient never touches the text branch.
    const ParameterLayout l{5};
    CHECK(a.gradient.values.segment(static_cast<Eigen::Index>(l.w_txt()), 30).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("evaluate_loss matches a naive oracle through the adapter") {
  auto f = fixture(5, 4, 3, 5, 7);
  LossConfig cfg{6.0, {0.3, 1.0, 1.5, 0.7, 2.0}, 1.7};
  const auto r = evaluate_loss(f.adapter, f.batch, &f.target, f.anchors, cfg);
  const Matrix u = f.adapter.encode_rows(Modality::Image, f.batch.images);
  const Matrix v = f.adapter.encode_rows(Modality::Text, f.batch.texts);
  const Matrix t = f.adapter.encode_rows(Modality::Image, f.target);
  double ce = 0.0, txt = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    ce += naive_nll(u.row(i).transpose(), f.anchors.text.anchors, f.batch.labels[static_cast<std::size_t>(i)], 6.0);
    txt += naive_nll(v.row(i).transpose(), f.anchors.image.anchors, f.batch.labels[static_cast<std::size_t>(i)], 6.0);
  }
  ce /= 5.0;
  txt /= 5.0;
  const double st = naive_contrastive(u, v, 6.0);
  // Biased MMD^2 on tau * f * A^T with the fixed bandwidth.
  const Matrix zs = 6.0 * u * f.anchors.text.anchors.transpose();
  const Matrix zt = 6.0 * t * f.anchors.text.anchors.transpose();
  auto k = [](const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    return std::exp(-(a.row(i) - b.row(j)).squaredNorm() / (2.0 * 1.7 * 1.7));
  };
  double kxx = 0, kyy = 0, kxy = 0;
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) kxx += k(zs, i, zs, j);
  for (Eigen::Index i = 0; i < 7; ++i)
    for (Eigen::Index j = 0; j < 7; ++j) kyy += k(zt, i, zt, j);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 7; ++j) kxy += k(zs, i, zt, j);
  const double mmd = kxx / 25.0 + kyy / 49.0 - 2.0 * kxy / 35.0;
  CHECK(r.mmd_term == doctest::Approx(mmd).epsilon(1e-12));
  CHECK(r.total == doctest::Approx(0.3 * ce + 1.0 * ce + 1.5 * txt + 0.7 * st + 2.0 * mmd).epsilon(1e-12));
}

TEST_CASE("mmd weight needs a target batch") {
  auto f = fixture(6, 4, 3, 5, 5);
  LossConfig cfg{6.0, {0, 1, 1, 1, 1}, std::nullopt};
  CHECK_THROWS_AS(loss_gradient(f.adapter, f.batch, nullptr, f.anchors, cfg), ConfigError);
}

TEST_CASE("gradient matches finite differences") {
  const std::vector<LossWeights> weights{
      {1, 0, 0, 0, 0}, {0, 1, 1, 0, 0}, {0, 0, 0, 1, 0}, {0, 1, 1, 1, 0}, {0, 0, 0, 0, 1}, {0.2, 1, 1, 1, 3}};
  std::uint64_t seed = 100;
  for (const auto& w : weights) {
    for (int rep = 0; rep < 3; ++rep) {
      auto f = fixture(seed++, 4, 3, 5, 6);
      const double tau = 2.0 + 3.0 * rep;
      const LossConfig cfg{tau, w, rep == 2 ? std::optional<double>() : std::optional<double>(2.5)};
      const auto g = loss_gradient(f.adapter, f.batch, &f.target, f.anchors, cfg);
      // The median bandwidth is treated as constant: freeze it for the probe.
      LossConfig fixed = cfg;
      if (w.mmd != 0.0) fixed.bandwidth = g.bandwidth;
      const auto fd = testing::finite_difference(
          [&](const Vector& p) {
            return evaluate_loss(Adapter::from_flat(4, p), f.batch, &f.target, f.anchors, fixed).total;
          },
          f.adapter.flat(), 1e-5);
      const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
      CHECK((g.gradient.values - fd).cwiseAbs().maxCoeff() / scale < 1e-6);
    }
  }
}

TEST_CASE("single class static loss has zero gradient") {
  auto f = fixture(7, 4, 1, 5, 1);
  LossConfig cfg{5.0, {0, 1, 1, 0, 0}, std::nullopt};
  const auto g = loss_gradient(f.adapter, f.batch, nullptr, f.anchors, cfg);
  CHECK(g.report.total == doctest::Approx(0.0));
  CHECK(g.gradient.values.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("non-finite values raise numeric errors") {
  auto f = fixture(8, 4, 3, 5, 1);
  LossConfig cfg{5.0, {0, 1, 1, 1, 0}, std::nullopt};
  auto bad = f;
  bad.batch.images(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    loss_gradient(bad.adapter, bad.batch, nullptr, bad.anchors, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Numeric);
  }
  LossConfig huge{1e308, {0, 1, 1, 1, 0}, std::nullopt};
  CHECK_THROWS_AS(loss_gradient(f.adapter, f.batch, nullptr, f.anchors, huge), NumericError);
}
