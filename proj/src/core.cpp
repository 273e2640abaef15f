#include "craft/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace craft {

Vector l2_normalize(const Vector& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NormalizationError("cannot normalize a vector with norm " + std::to_string(norm));
  }
  return v / norm;
}

double inner_product(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) {
    throw ShapeError("inner_product: dimensions " + std::to_string(u.size()) + " and " +
                     std::to_string(v.size()) + " differ");
  }
  return u.dot(v);
}

namespace {

void check_logits(const Vector& logits) {
  if (logits.size() == 0) throw NumericError("softmax of an empty vector");
  if (!logits.allFinite()) throw NumericError("softmax input contains a non-finite entry");
}

}  // namespace

Vector softmax(const Vector& logits) {
  check_logits(logits);
  const double shift = logits.maxCoeff();
  Vector e = (logits.array() - shift).exp().matrix();
  return e / e.sum();
}

Vector log_softmax(const Vector& logits) {
  check_logits(logits);
  const double shift = logits.maxCoeff();
  const double lse = shift + std::log((logits.array() - shift).exp().sum());
  return (logits.array() - lse).matrix();
}

std::size_t thread_limit() {
  if (const char* env = std::getenv("CRAFT_THREADS")) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && value > 0) return static_cast<std::size_t>(value);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(thread_limit(), n);
  // Small loops are not worth a thread launch.
  if (workers <= 1 || n < 64) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

}  // namespace craft
