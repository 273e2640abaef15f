#pragma once

#include <filesystem>
#include <vector>

#include "craft/core.hpp"
#include "craft/dataio.hpp"

namespace craft {

/// Learnable residual maps applied to frozen embeddings, one per modality:
///
///   encode(x) = normalize(x + W x + b)
///
/// With W = 0 and b = 0 the adapter is the identity (up to renormalization),
/// so a zero adapter reproduces frozen zero-shot behaviour.
///
/// Flat parameter layout, used by gradients and SGD:
///   [ W_img row-major (H*H) | b_img (H) | W_txt row-major (H*H) | b_txt (H) ]
struct Adapter {
  Matrix w_img;
  Vector b_img;
  Matrix w_txt;
  Vector b_txt;

  static Adapter zeros(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(b_img.size()); }
  std::size_t parameter_count() const { return 2 * (dim() * dim() + dim()); }

  Vector flat() const;
  static Adapter from_flat(std::size_t dim, const Vector& params);

  /// Throws NumericError when any parameter is non-finite.
  void check_finite() const;

  /// Encodes one base embedding. Throws NormalizationError if the residual
  /// output is zero, ShapeError on dimension mismatch.
  Vector encode(Modality modality, const Vector& base) const;

  /// Row-wise encode of a row-per-sample matrix.
  Matrix encode_rows(Modality modality, const Matrix& base) const;

  /// Encodes every record of `set` (modality taken from each record).
  EmbeddingSet encode_set(const EmbeddingSet& set) const;
};

/// Offsets of each block inside the flat parameter vector.
struct ParameterLayout {
  std::size_t dim = 0;
  std::size_t w_img() const { return 0; }
  std::size_t b_img() const { return dim * dim; }
  std::size_t w_txt() const { return dim * dim + dim; }
  std::size_t b_txt() const { return 2 * dim * dim + dim; }
  std::size_t size() const { return 2 * (dim * dim + dim); }
};

/// Gradient of a scalar loss with respect to every adapter parameter, in the
/// flat layout above.
struct GradientVector {
  ParameterLayout layout;
  Vector values;
};

/// parameters <- parameters - lr * gradient. Throws ShapeError when the
/// gradient layout does not match the adapter.
Adapter sgd_step(const Adapter& adapter, const GradientVector& gradient, double lr);

/// CADP checkpoint (little-endian):
///   "CADP" | u32 version=1 | u32 H | W_img | b_img | W_txt | b_txt
/// with every block as row-major f64.
std::vector<std::uint8_t> encode_checkpoint(const Adapter& adapter);
Adapter decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const Adapter& adapter, const std::filesystem::path& path);
Adapter read_checkpoint(const std::filesystem::path& path);

}  // namespace craft
