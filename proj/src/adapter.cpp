#include "craft/adapter.hpp"

#include <cstring>

namespace craft {

Adapter Adapter::zeros(std::size_t dim) {
  const auto h = static_cast<Eigen::Index>(dim);
  return {Matrix::Zero(h, h), Vector::Zero(h), Matrix::Zero(h, h), Vector::Zero(h)};
}

Vector Adapter::flat() const {
  const ParameterLayout layout{dim()};
  const auto h = static_cast<Eigen::Index>(dim());
  Vector out(static_cast<Eigen::Index>(layout.size()));
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < h; ++c) {
      out[static_cast<Eigen::Index>(layout.w_img()) + r * h + c] = w_img(r, c);
      out[static_cast<Eigen::Index>(layout.w_txt()) + r * h + c] = w_txt(r, c);
    }
  }
  out.segment(static_cast<Eigen::Index>(layout.b_img()), h) = b_img;
  out.segment(static_cast<Eigen::Index>(layout.b_txt()), h) = b_txt;
  return out;
}

Adapter Adapter::from_flat(std::size_t dim, const Vector& params) {
  const ParameterLayout layout{dim};
  if (static_cast<std::size_t>(params.size()) != layout.size()) {
    throw ShapeError("adapter of dimension " + std::to_string(dim) + " needs " + std::to_string(layout.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  Adapter a = zeros(dim);
  const auto h = static_cast<Eigen::Index>(dim);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < h; ++c) {
      a.w_img(r, c) = params[static_cast<Eigen::Index>(layout.w_img()) + r * h + c];
      a.w_txt(r, c) = params[static_cast<Eigen::Index>(layout.w_txt()) + r * h + c];
    }
  }
  a.b_img = params.segment(static_cast<Eigen::Index>(layout.b_img()), h);
  a.b_txt = params.segment(static_cast<Eigen::Index>(layout.b_txt()), h);
  return a;
}

void Adapter::check_finite() const {
  if (!w_img.allFinite() || !b_img.allFinite()) throw NumericError("image adapter has non-finite parameters");
  if (!w_txt.allFinite() || !b_txt.allFinite()) throw NumericError("text adapter has non-finite parameters");
}

Vector Adapter::encode(Modality modality, const Vector& base) const {
  if (static_cast<std::size_t>(base.size()) != dim()) {
    throw ShapeError("encode: embedding dimension " + std::to_string(base.size()) + " does not match adapter " +
                     std::to_string(dim()));
  }
  const Matrix& w = modality == Modality::Image ? w_img : w_txt;
  const Vector& b = modality == Modality::Image ? b_img : b_txt;
  if (!w.allFinite() || !b.allFinite()) {
    throw NumericError(std::string(to_string(modality)) + " adapter has non-finite parameters");
  }
  return l2_normalize(base + w * base + b);
}

Matrix Adapter::encode_rows(Modality modality, const Matrix& base) const {
  Matrix out(base.rows(), base.cols());
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    out.row(i) = encode(modality, base.row(i).transpose()).transpose();
  }
  return out;
}

EmbeddingSet Adapter::encode_set(const EmbeddingSet& set) const {
  EmbeddingSet out = set;
  for (auto& r : out.records) r.vector = encode(r.modality, r.vector);
  return out;
}

Adapter sgd_step(const Adapter& adapter, const GradientVector& gradient, double lr) {
  if (gradient.layout.dim != adapter.dim() ||
      static_cast<std::size_t>(gradient.values.size()) != adapter.parameter_count()) {
    throw ShapeError("gradient layout (dim " + std::to_string(gradient.layout.dim) + ", " +
                     std::to_string(gradient.values.size()) + " values) does not match adapter of dimension " +
                     std::to_string(adapter.dim()));
  }
  return Adapter::from_flat(adapter.dim(), adapter.flat() - lr * gradient.values);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'C', 'A', 'D', 'P'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Adapter& adapter) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  bytes::put_u32(out, kVersion);
  bytes::put_u32(out, static_cast<std::uint32_t>(adapter.dim()));
  // flat() is already W_img, b_img, W_txt, b_txt in row-major order.
  const Vector params = adapter.flat();
  for (Eigen::Index i = 0; i < params.size(); ++i) bytes::put_f64(out, params[i]);
  return out;
}

Adapter decode_checkpoint(const std::vector<std::uint8_t>& data) {
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic, expected \"CADP\"", 0);
  }
  bytes::Reader in(data);
  in.str(4);
  const std::size_t version_at = in.offset();
  const auto version = in.u32();
  if (version != kVersion) throw FormatError("unsupported CADP version " + std::to_string(version), version_at);
  const std::size_t dim_at = in.offset();
  const auto dim = in.u32();
  if (dim == 0) throw FormatError("adapter dimension must be positive", dim_at);
  const ParameterLayout layout{dim};
  if (in.remaining() != 8 * layout.size()) {
    throw FormatError("checkpoint payload holds " + std::to_string(in.remaining()) + " bytes, dimension " +
                          std::to_string(dim) + " needs " + std::to_string(8 * layout.size()),
                      in.offset());
  }
  Vector params(static_cast<Eigen::Index>(layout.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = in.f64();
  return Adapter::from_flat(dim, params);
}

void write_checkpoint(const Adapter& adapter, const std::filesystem::path& path) {
  bytes::write_file(path, encode_checkpoint(adapter));
}

Adapter read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(bytes::read_file(path));
}

}  // namespace craft
