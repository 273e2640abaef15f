#include "craft/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace craft {

void KernelSpec::validate() const {
  if (!std::isfinite(bandwidth) || bandwidth <= 0.0) {
    throw ConfigError("kernel bandwidth must be finite and positive, got " + std::to_string(bandwidth));
  }
}

double rbf_kernel(const Vector& x, const Vector& y, double sigma) {
  KernelSpec{sigma}.validate();
  if (x.size() != y.size()) throw ShapeError("rbf_kernel: dimension mismatch");
  return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
}

double median_heuristic(const Matrix& samples) {
  const Eigen::Index n = samples.rows();
  if (n < 2) throw ConfigError("median heuristic needs at least two samples");
  std::vector<double> sq;
  sq.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) sq.push_back((samples.row(i) - samples.row(j)).squaredNorm());
  }
  const std::size_t mid = sq.size() / 2;
  std::nth_element(sq.begin(), sq.begin() + static_cast<long>(mid), sq.end());
  double median = sq[mid];
  if (sq.size() % 2 == 0) {
    const double lower = *std::max_element(sq.begin(), sq.begin() + static_cast<long>(mid));
    median = 0.5 * (lower + median);
  }
  if (median <= 0.0) return 1.0;
  return std::sqrt(median / 2.0);
}

namespace {

Matrix gram(const Matrix& a, const Matrix& b, double sigma) {
  const double scale = -1.0 / (2.0 * sigma * sigma);
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = std::exp(scale * (a.row(i) - b.row(j)).squaredNorm());
  }
  return k;
}

void check_pair(const Matrix& x, const Matrix& y, Eigen::Index min_rows, const char* who) {
  if (x.rows() < min_rows || y.rows() < min_rows) {
    throw ShapeError(std::string(who) + " needs at least " + std::to_string(min_rows) + " samples per side, got " +
                     std::to_string(x.rows()) + " and " + std::to_string(y.rows()));
  }
  if (x.cols() != y.cols()) {
    throw ShapeError(std::string(who) + ": sample dimensions " + std::to_string(x.cols()) + " and " +
                     std::to_string(y.cols()) + " differ");
  }
}

// Row-major and column-major sums of the cross block, averaged, so that
// swapping X and Y reproduces the same floating-point value.
double symmetric_cross_sum(const Matrix& kxy) {
  double by_rows = 0.0, by_cols = 0.0;
  for (Eigen::Index i = 0; i < kxy.rows(); ++i) {
    for (Eigen::Index j = 0; j < kxy.cols(); ++j) by_rows += kxy(i, j);
  }
  for (Eigen::Index j = 0; j < kxy.cols(); ++j) {
    for (Eigen::Index i = 0; i < kxy.rows(); ++i) by_cols += kxy(i, j);
  }
  return 0.5 * (by_rows + by_cols);
}

double full_sum(const Matrix& k) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.cols(); ++j) s += k(i, j);
  }
  return s;
}

double off_diagonal_sum(const Matrix& k) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.cols(); ++j) {
      if (i != j) s += k(i, j);
    }
  }
  return s;
}

}  // namespace

double mmd2_biased(const Matrix& x, const Matrix& y, const KernelSpec& kernel) {
  kernel.validate();
  check_pair(x, y, 1, "mmd2_biased");
  const double m = static_cast<double>(x.rows());
  const double n = static_cast<double>(y.rows());
  const double self_x = full_sum(gram(x, x, kernel.bandwidth)) / (m * m);
  const double self_y = full_sum(gram(y, y, kernel.bandwidth)) / (n * n);
  const double cross = symmetric_cross_sum(gram(x, y, kernel.bandwidth)) / (m * n);
  return (self_x + self_y) - 2.0 * cross;
}

double mmd2_unbiased(const Matrix& x, const Matrix& y, const KernelSpec& kernel) {
  kernel.validate();
  check_pair(x, y, 2, "mmd2_unbiased");
  const double m = static_cast<double>(x.rows());
  const double n = static_cast<double>(y.rows());
  const double self_x = off_diagonal_sum(gram(x, x, kernel.bandwidth)) / (m * (m - 1.0));
  const double self_y = off_diagonal_sum(gram(y, y, kernel.bandwidth)) / (n * (n - 1.0));
  const double cross = symmetric_cross_sum(gram(x, y, kernel.bandwidth)) / (m * n);
  return (self_x + self_y) - 2.0 * cross;
}

std::pair<Matrix, Matrix> mmd2_biased_gradient(const Matrix& x, const Matrix& y, const KernelSpec& kernel) {
  kernel.validate();
  check_pair(x, y, 1, "mmd2_biased_gradient");
  const double s2 = kernel.bandwidth * kernel.bandwidth;
  const double m = static_cast<double>(x.rows());
  const double n = static_cast<double>(y.rows());
  const Matrix kxx = gram(x, x, kernel.bandwidth);
  const Matrix kyy = gram(y, y, kernel.bandwidth);
  const Matrix kxy = gram(x, y, kernel.bandwidth);

  // d k(a, b) / d a = -k(a, b) (a - b) / sigma^2. Each self-pair appears
  // twice in the double sum, hence the factor 2.
  Matrix gx = Matrix::Zero(x.rows(), x.cols());
  Matrix gy = Matrix::Zero(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      gx.row(i) -= (2.0 / (m * m)) * kxx(i, j) * (x.row(i) - x.row(j)) / s2;
    }
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      gx.row(i) += (2.0 / (m * n)) * kxy(i, j) * (x.row(i) - y.row(j)) / s2;
    }
  }
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      gy.row(i) -= (2.0 / (n * n)) * kyy(i, j) * (y.row(i) - y.row(j)) / s2;
    }
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      gy.row(i) += (2.0 / (m * n)) * kxy(j, i) * (y.row(i) - x.row(j)) / s2;
    }
  }
  return {gx, gy};
}

AlignedFeatureBatch anchor_align(const Matrix& features, const AnchorSet& text_anchors, double tau, Domain domain) {
  if (text_anchors.size() == 0) throw AnchorError("anchor_align needs at least one anchor");
  if (features.cols() != text_anchors.anchors.cols()) {
    throw ShapeError("anchor_align: feature dimension " + std::to_string(features.cols()) +
                     " does not match anchor dimension " + std::to_string(text_anchors.anchors.cols()));
  }
  return {tau * features * text_anchors.anchors.transpose(), domain};
}

double mmd_loss(const Matrix& source_features, const Matrix& target_features, const AnchorSet& text_anchors,
                const KernelSpec& kernel, double tau) {
  return mmd2_biased(anchor_align(source_features, text_anchors, tau).rows,
                     anchor_align(target_features, text_anchors, tau, Domain::OutOfDomain).rows, kernel);
}

double permutation_test(const Matrix& x, const Matrix& y, const KernelSpec& kernel, std::size_t n_perms, Rng& rng) {
  if (n_perms < 100) throw ConfigError("permutation_test needs n_perms >= 100, got " + std::to_string(n_perms));
  kernel.validate();
  check_pair(x, y, 1, "permutation_test");
  const Eigen::Index m = x.rows();
  const Eigen::Index total = x.rows() + y.rows();
  Matrix pooled(total, x.cols());
  pooled << x, y;
  const Matrix k = gram(pooled, pooled, kernel.bandwidth);

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), 0);
  auto statistic = [&](const std::vector<Eigen::Index>& order) {
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (Eigen::Index a = 0; a < total; ++a) {
      for (Eigen::Index b = 0; b < total; ++b) {
        const double v = k(order[static_cast<std::size_t>(a)], order[static_cast<std::size_t>(b)]);
        const bool ax = a < m, bx = b < m;
        if (ax && bx) {
          sxx += v;
        } else if (!ax && !bx) {
          syy += v;
        } else if (ax) {
          sxy += v;
        }
      }
    }
    const double dm = static_cast<double>(m);
    const double dn = static_cast<double>(total - m);
    return sxx / (dm * dm) + syy / (dn * dn) - 2.0 * sxy / (dm * dn);
  };

  const double observed = statistic(idx);
  std::size_t at_least = 0;
  for (std::size_t p = 0; p < n_perms; ++p) {
    rng.shuffle(idx);
    if (statistic(idx) >= observed) ++at_least;
  }
  return static_cast<double>(at_least + 1) / static_cast<double>(n_perms + 1);
}

}  // namespace craft
