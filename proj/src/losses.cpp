#include "craft/losses.hpp"

#include <cmath>
#include <string>

namespace craft {

namespace {

void check_tau(double tau) {
  if (!std::isfinite(tau) || tau <= 0.0) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
}

void check_labels(const std::vector<std::uint32_t>& labels, const AnchorSet& anchors, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw ShapeError("batch has " + std::to_string(rows) + " rows but " + std::to_string(labels.size()) + " labels");
  }
  for (auto label : labels) {
    if (label >= anchors.size()) {
      throw LabelError("label " + std::to_string(label) + " out of range for " + std::to_string(anchors.size()) +
                       " anchors");
    }
  }
}

void check_anchor_dims(const Matrix& batch, const AnchorSet& anchors) {
  if (anchors.size() == 0) throw AnchorError("empty anchor set");
  if (batch.cols() != anchors.anchors.cols()) {
    throw ShapeError("feature dimension " + std::to_string(batch.cols()) + " does not match anchor dimension " +
                     std::to_string(anchors.anchors.cols()));
  }
}

// Mean -log softmax(tau * A q_i)[label_i]; when `grad` is given, adds the
// gradient of that mean with respect to each query row, scaled by `weight`.
double anchor_cross_entropy(const Matrix& queries, const std::vector<std::uint32_t>& labels,
                            const AnchorSet& anchors, double tau, Matrix* grad, double weight) {
  check_tau(tau);
  check_anchor_dims(queries, anchors);
  check_labels(labels, anchors, queries.rows());
  const Eigen::Index b = queries.rows();
  if (b == 0) throw ShapeError("empty batch");
  const Matrix& a = anchors.anchors;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vector logits = tau * (a * queries.row(i).transpose());
    const Vector log_p = log_softmax(logits);
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    loss -= log_p[y];
    if (grad != nullptr) {
      Vector delta = log_p.array().exp().matrix();
      delta[y] -= 1.0;
      grad->row(i) += (weight * tau / static_cast<double>(b)) * (a.transpose() * delta).transpose();
    }
  }
  return loss / static_cast<double>(b);
}

Matrix row_softmax(const Matrix& s) {
  Matrix p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) p.row(i) = softmax(s.row(i).transpose()).transpose();
  return p;
}

// Symmetric contrastive loss on paired rows; gradient accumulation optional.
double contrastive(const Matrix& img, const Matrix& txt, double tau, Matrix* grad_img, Matrix* grad_txt,
                   double weight) {
  check_tau(tau);
  if (img.rows() != txt.rows() || img.cols() != txt.cols()) {
    throw ShapeError("stochastic loss needs paired batches, got " + std::to_string(img.rows()) + " images and " +
                     std::to_string(txt.rows()) + " texts");
  }
  const Eigen::Index b = img.rows();
  if (b == 0) throw ShapeError("empty batch");
  const Matrix s = tau * img * txt.transpose();
  double row_loss = 0.0, col_loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    row_loss -= log_softmax(s.row(i).transpose())[i];
    col_loss -= log_softmax(s.col(i))[i];
  }
  const double bb = static_cast<double>(b);
  const double loss = 0.5 * (row_loss / bb + col_loss / bb);
  if (grad_img != nullptr) {
    const Matrix eye = Matrix::Identity(b, b);
    const Matrix p_row = row_softmax(s);
    const Matrix p_col = row_softmax(s.transpose()).transpose();
    const Matrix g = (0.5 / bb) * ((p_row - eye) + (p_col - eye));
    *grad_img += (weight * tau) * g * txt;
    *grad_txt += (weight * tau) * g.transpose() * img;
  }
  return loss;
}

// d/dx of encode(x) given d/du at u = z / |z|, z = x + W x + b.
void backprop_rows(const Matrix& base, const Matrix& encoded, const Matrix& grad_encoded, const Matrix& w,
                   const Vector& b, Matrix& grad_w, Vector& grad_b) {
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    const Vector x = base.row(i).transpose();
    const Vector u = encoded.row(i).transpose();
    const Vector du = grad_encoded.row(i).transpose();
    const double norm = (x + w * x + b).norm();
    const Vector dz = (du - u * u.dot(du)) / norm;
    grad_w += dz * x.transpose();
    grad_b += dz;
  }
}

void require_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw NumericError(std::string("loss term '") + term + "' is not finite");
}

void require_finite(const Matrix& value, const char* term) {
  if (!value.allFinite()) throw NumericError(std::string("gradient of loss term '") + term + "' is not finite");
}

LossAndGradient compute(const Adapter& adapter, const PairedBatch& batch, const Matrix* target_images,
                        const StaticAnchors& anchors, const LossConfig& config, bool want_gradient) {
  check_tau(config.tau);
  adapter.check_finite();
  if (batch.size() == 0) throw ShapeError("empty batch");
  const auto& w = config.weights;
  const double tau = config.tau;

  const Matrix u = adapter.encode_rows(Modality::Image, batch.images);
  const Matrix v = adapter.encode_rows(Modality::Text, batch.texts);
  Matrix du = Matrix::Zero(u.rows(), u.cols());
  Matrix dv = Matrix::Zero(v.rows(), v.cols());

  LossAndGradient out;
  auto& r = out.report;
  r.batch_size = batch.size();

  // The image half of the static loss and the text cross-entropy are the
  // same quantity; their weights add.
  const double w_image = w.text_ce + w.static_image;
  r.ce_term = anchor_cross_entropy(u, batch.labels, anchors.text, tau, want_gradient ? &du : nullptr, w_image);
  require_finite(r.ce_term, "static_image");
  const double text_half =
      anchor_cross_entropy(v, batch.labels, anchors.image, tau, want_gradient ? &dv : nullptr, w.static_text);
  require_finite(text_half, "static_text");
  r.static_term = r.ce_term + text_half;

  const bool stochastic_grad = want_gradient && w.stochastic != 0.0;
  r.stochastic_term = contrastive(u, v, tau, stochastic_grad ? &du : nullptr, stochastic_grad ? &dv : nullptr,
                                  w.stochastic);
  require_finite(r.stochastic_term, "stochastic");

  r.total = w.text_ce * r.ce_term + w.static_image * r.ce_term + w.static_text * text_half +
            w.stochastic * r.stochastic_term;

  Matrix t, dt;
  const bool use_mmd = w.mmd != 0.0;
  if (use_mmd) {
    if (target_images == nullptr || target_images->rows() == 0) {
      throw ConfigError("MMD weight is non-zero but no target batch was supplied");
    }
    t = adapter.encode_rows(Modality::Image, *target_images);
    const Matrix zs = anchor_align(u, anchors.text, tau).rows;
    const Matrix zt = anchor_align(t, anchors.text, tau, Domain::OutOfDomain).rows;
    double sigma = 0.0;
    if (config.bandwidth) {
      sigma = *config.bandwidth;
    } else {
      Matrix pooled(zs.rows() + zt.rows(), zs.cols());
      pooled << zs, zt;
      sigma = median_heuristic(pooled);
    }
    const KernelSpec kernel{sigma};
    out.bandwidth = sigma;
    r.mmd_term = mmd2_biased(zs, zt, kernel);
    require_finite(r.mmd_term, "mmd");
    r.total += w.mmd * r.mmd_term;
    if (want_gradient) {
      const auto [gs, gt] = mmd2_biased_gradient(zs, zt, kernel);
      du += (w.mmd * tau) * gs * anchors.text.anchors;
      dt = (w.mmd * tau) * gt * anchors.text.anchors;
      require_finite(dt, "mmd");
    }
  }
  require_finite(r.total, "total");

  const ParameterLayout layout{adapter.dim()};
  out.gradient.layout = layout;
  if (!want_gradient) return out;
  require_finite(du, "image terms");
  require_finite(dv, "text terms");

  const auto h = static_cast<Eigen::Index>(adapter.dim());
  Matrix gw_img = Matrix::Zero(h, h), gw_txt = Matrix::Zero(h, h);
  Vector gb_img = Vector::Zero(h), gb_txt = Vector::Zero(h);
  backprop_rows(batch.images, u, du, adapter.w_img, adapter.b_img, gw_img, gb_img);
  backprop_rows(batch.texts, v, dv, adapter.w_txt, adapter.b_txt, gw_txt, gb_txt);
  if (use_mmd) backprop_rows(*target_images, t, dt, adapter.w_img, adapter.b_img, gw_img, gb_img);

  Adapter packed{gw_img, gb_img, gw_txt, gb_txt};
  out.gradient.values = packed.flat();
  return out;
}

}  // namespace

ClassDistribution class_distribution(const Vector& query, const AnchorSet& anchors, double tau,
                                     std::uint32_t query_class) {
  check_tau(tau);
  if (anchors.size() == 0) throw AnchorError("class_distribution needs at least one anchor");
  if (query.size() != anchors.anchors.cols()) {
    throw ShapeError("query dimension " + std::to_string(query.size()) + " does not match anchor dimension " +
                     std::to_string(anchors.anchors.cols()));
  }
  return {softmax(tau * (anchors.anchors * query)), query_class};
}

StaticTerms aligned_loss_static_terms(const Matrix& batch_img, const Matrix& batch_txt,
                                      const std::vector<std::uint32_t>& labels, const AnchorSet& text_anchors,
                                      const AnchorSet& image_anchors, double tau) {
  if (batch_img.rows() != batch_txt.rows()) throw ShapeError("image and text batches are not paired");
  return {anchor_cross_entropy(batch_img, labels, text_anchors, tau, nullptr, 0.0),
          anchor_cross_entropy(batch_txt, labels, image_anchors, tau, nullptr, 0.0)};
}

double aligned_loss_static(const Matrix& batch_img, const Matrix& batch_txt, const std::vector<std::uint32_t>& labels,
                           const AnchorSet& text_anchors, const AnchorSet& image_anchors, double tau) {
  // -log(p_x * p_y) evaluated as a sum of logs.
  return aligned_loss_static_terms(batch_img, batch_txt, labels, text_anchors, image_anchors, tau).sum();
}

double aligned_loss_stochastic(const Matrix& batch_img, const Matrix& batch_txt, double tau) {
  return contrastive(batch_img, batch_txt, tau, nullptr, nullptr, 0.0);
}

double text_cross_entropy(const Matrix& batch_img, const std::vector<std::uint32_t>& labels,
                          const AnchorSet& text_anchors, double tau) {
  return anchor_cross_entropy(batch_img, labels, text_anchors, tau, nullptr, 0.0);
}

LossReport aligned_loss_total(const Matrix& batch_img, const Matrix& batch_txt,
                              const std::vector<std::uint32_t>& labels, const AnchorSet& text_anchors,
                              const AnchorSet& image_anchors, double tau, const LossWeights& weights) {
  const auto terms = aligned_loss_static_terms(batch_img, batch_txt, labels, text_anchors, image_anchors, tau);
  LossReport r;
  r.batch_size = labels.size();
  r.ce_term = terms.image;
  r.static_term = terms.sum();
  r.stochastic_term = aligned_loss_stochastic(batch_img, batch_txt, tau);
  r.total = weights.text_ce * terms.image + weights.static_image * terms.image + weights.static_text * terms.text +
            weights.stochastic * r.stochastic_term;
  return r;
}

LossReport evaluate_loss(const Adapter& adapter, const PairedBatch& batch, const Matrix* target_images,
                         const StaticAnchors& anchors, const LossConfig& config) {
  return compute(adapter, batch, target_images, anchors, config, false).report;
}

LossAndGradient loss_gradient(const Adapter& adapter, const PairedBatch& batch, const Matrix* target_images,
                              const StaticAnchors& anchors, const LossConfig& config) {
  return compute(adapter, batch, target_images, anchors, config, true);
}

}  // namespace craft
