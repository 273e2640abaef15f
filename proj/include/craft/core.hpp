#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>

#include "craft/errors.hpp"

namespace craft {

/// Embedding coordinates. All arithmetic runs in double precision; files
/// store single precision.
using Vector = Eigen::VectorXd;
/// Row-per-sample feature matrix.
using Matrix = Eigen::MatrixXd;

/// Unit-norm copy of `v`. Throws NormalizationError for an all-zero (or
/// non-finite) vector.
Vector l2_normalize(const Vector& v);

/// Euclidean dot product. Throws ShapeError on dimension mismatch.
double inner_product(const Vector& u, const Vector& v);

/// Numerically stable softmax (max-subtracted). Throws NumericError on empty
/// or non-finite input.
Vector softmax(const Vector& logits);

/// log(softmax(logits)), computed with log-sum-exp.
Vector log_softmax(const Vector& logits);

/// Worker count honoured by parallel loops: CRAFT_THREADS when set to a
/// positive integer, otherwise the hardware concurrency.
std::size_t thread_limit();

/// Runs body(i) for i in [0, n) over up to thread_limit() workers. The body
/// must only write to slots owned by index i, so results do not depend on
/// scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace craft
