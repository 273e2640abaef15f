#pragma once

#include <cmath>
#include <functional>

#include "craft/adapter.hpp"
#include "craft/anchors.hpp"
#include "craft/dataio.hpp"
#include "craft/rng.hpp"

namespace testing {

using craft::Matrix;
using craft::Vector;

inline Vector random_unit(std::size_t h, craft::Rng& rng) {
  Vector v(static_cast<Eigen::Index>(h));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v.normalized();
}

inline Matrix random_unit_rows(std::size_t n, std::size_t h, craft::Rng& rng) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h));
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) = random_unit(h, rng).transpose();
  return m;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, craft::Rng& rng, double scale = 1.0) {
  Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline craft::Adapter random_adapter(std::size_t h, craft::Rng& rng, double scale) {
  craft::Adapter a = craft::Adapter::zeros(h);
  a.w_img = random_matrix(h, h, rng, scale);
  a.w_txt = random_matrix(h, h, rng, scale);
  a.b_img = random_matrix(h, 1, rng, scale).col(0);
  a.b_txt = random_matrix(h, 1, rng, scale).col(0);
  return a;
}

inline craft::AnchorSet anchors_of(const Matrix& rows, craft::Modality m) {
  return craft::AnchorSet{rows, m, craft::AnchorKind::Static};
}

/// One record per row, class ids as given.
inline craft::EmbeddingSet make_set(const Matrix& rows, const std::vector<std::uint32_t>& labels,
                                    craft::Modality modality, std::size_t num_classes) {
  craft::EmbeddingSet s;
  s.dim = static_cast<std::size_t>(rows.cols());
  for (std::size_t c = 0; c < num_classes; ++c) s.class_names.push_back("c" + std::to_string(c));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    s.records.push_back({rows.row(i).transpose(), labels[static_cast<std::size_t>(i)], modality,
                         craft::Domain::InDomain, 0});
  }
  return s;
}

/// Central finite difference of f over every coordinate of x.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, const Vector& x, double step) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + step;
    const double up = f(probe);
    probe[i] = keep - step;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace testing
