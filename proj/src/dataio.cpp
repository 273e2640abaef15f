#include "craft/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace craft {

const char* to_string(Modality m) { return m == Modality::Image ? "image" : "text"; }
const char* to_string(Domain d) { return d == Domain::InDomain ? "in-domain" : "out-of-domain"; }

void EmbeddingSet::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (static_cast<std::size_t>(r.vector.size()) != dim) {
      throw ShapeError("record " + std::to_string(i) + " has dimension " +
                       std::to_string(r.vector.size()) + ", set dimension is " + std::to_string(dim));
    }
    if (r.class_id >= class_names.size()) {
      throw LabelError("record " + std::to_string(i) + " has class_id " + std::to_string(r.class_id) +
                       " but the set declares " + std::to_string(class_names.size()) + " classes");
    }
  }
}

Matrix EmbeddingSet::matrix(Modality modality) const {
  Matrix out(static_cast<Eigen::Index>(count(modality)), static_cast<Eigen::Index>(dim));
  Eigen::Index row = 0;
  for (const auto& r : records) {
    if (r.modality == modality) out.row(row++) = r.vector.transpose();
  }
  return out;
}

std::vector<std::uint32_t> EmbeddingSet::labels(Modality modality) const {
  std::vector<std::uint32_t> out;
  for (const auto& r : records) {
    if (r.modality == modality) out.push_back(r.class_id);
  }
  return out;
}

std::size_t EmbeddingSet::count(Modality modality) const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [&](const auto& r) { return r.modality == modality; }));
}

// ---------------------------------------------------------------------------
// Synthetic generation

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("synthetic." + field + ": " + why);
  };
  if (num_classes < 2) fail("num_classes", "must be at least 2");
  if (dim < 2) fail("dim", "must be at least 2");
  if (samples_per_class_per_modality < 1) fail("samples_per_class_per_modality", "must be positive");
  auto finite_nonneg = [&](const std::string& field, double v) {
    if (!std::isfinite(v) || v < 0.0) fail(field, "must be finite and non-negative");
  };
  if (!std::isfinite(cluster_spread) || cluster_spread <= 0.0) {
    fail("cluster_spread", "must be finite and positive");
  }
  finite_nonneg("cross_modal_noise", cross_modal_noise);
  finite_nonneg("domain_shift_magnitude", domain_shift_magnitude);
  finite_nonneg("modality_gap", modality_gap);
  if (!std::isfinite(group_spurious_strength) || group_spurious_strength < 0.0 ||
      group_spurious_strength > 1.0) {
    fail("group_spurious_strength", "must lie in [0, 1]");
  }
  if (!std::isfinite(majority_fraction) || majority_fraction <= 0.0 || majority_fraction >= 1.0) {
    fail("majority_fraction", "must lie in (0, 1)");
  }
}

namespace {

Vector gaussian(std::size_t dim, Rng& rng) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v;
}

Vector random_unit(std::size_t dim, Rng& rng) { return l2_normalize(gaussian(dim, rng)); }

// Rotation by `angle` inside the plane spanned by two random orthonormal
// directions; identity on the complement.
Matrix plane_rotation(std::size_t dim, double angle, Rng& rng) {
  const Vector p = random_unit(dim, rng);
  Vector q = gaussian(dim, rng);
  q -= q.dot(p) * p;
  q = l2_normalize(q);
  const auto n = static_cast<Eigen::Index>(dim);
  Matrix rot = Matrix::Identity(n, n);
  const double c = std::cos(angle) - 1.0;
  const double s = std::sin(angle);
  rot += c * (p * p.transpose() + q * q.transpose()) + s * (q * p.transpose() - p * q.transpose());
  return rot;
}

std::vector<std::string> default_class_names(std::size_t k) {
  std::vector<std::string> names;
  names.reserve(k);
  for (std::size_t c = 0; c < k; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.num_classes;
  const std::size_t h = cfg.dim;
  const auto kk = static_cast<Eigen::Index>(k);
  const auto hh = static_cast<Eigen::Index>(h);

  // Separate streams keep structure draws stable when sample counts change.
  Rng structure = Rng(cfg.seed).fork(1);
  Rng source_rng = Rng(cfg.seed).fork(2);
  Rng target_rng = Rng(cfg.seed).fork(3);

  SyntheticTruth truth;
  truth.latent_means.resize(kk, hh);
  for (Eigen::Index c = 0; c < kk; ++c) truth.latent_means.row(c) = random_unit(h, structure).transpose();
  truth.image_offset = cfg.modality_gap * random_unit(h, structure);
  truth.text_offset = cfg.modality_gap * random_unit(h, structure);
  const Matrix rotation = plane_rotation(h, 0.5 * cfg.domain_shift_magnitude, structure);
  const Vector translation = 0.5 * cfg.domain_shift_magnitude * random_unit(h, structure);
  truth.spurious_coordinate = h - 1;

  Matrix image_raw(kk, hh), target_raw(kk, hh), text_raw(kk, hh);
  for (Eigen::Index c = 0; c < kk; ++c) {
    const Vector mu = truth.latent_means.row(c).transpose();
    image_raw.row(c) = (mu + truth.image_offset).transpose();
    text_raw.row(c) = (mu + truth.text_offset).transpose();
    target_raw.row(c) = (rotation * (mu + truth.image_offset) + translation).transpose();
  }
  truth.image_means = image_raw.rowwise().normalized();
  truth.text_means = text_raw.rowwise().normalized();
  truth.target_image_means = target_raw.rowwise().normalized();

  const double image_sigma = cfg.cluster_spread / std::sqrt(static_cast<double>(h));
  const double text_sigma = cfg.cross_modal_noise / std::sqrt(static_cast<double>(h));
  const std::size_t n = cfg.samples_per_class_per_modality;
  const bool grouped = cfg.group_spurious_strength > 0.0;
  const auto majority = static_cast<std::size_t>(std::llround(cfg.majority_fraction * static_cast<double>(n)));

  auto build = [&](const Matrix& image_centers, Domain domain, Rng& rng) {
    EmbeddingSet set;
    set.dim = h;
    set.class_names = default_class_names(k);
    set.records.reserve(2 * k * n);
    for (std::size_t c = 0; c < k; ++c) {
      const auto row = static_cast<Eigen::Index>(c);
      std::vector<std::uint16_t> groups(n, 0);
      if (grouped) {
        for (std::size_t i = majority; i < n; ++i) groups[i] = 1;
        rng.shuffle(groups);
      }
      const double label_sign = (c % 2 == 0) ? 1.0 : -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        Vector raw = image_centers.row(row).transpose() + image_sigma * gaussian(h, rng);
        if (grouped) {
          const double sign = groups[i] == 0 ? label_sign : -label_sign;
          raw[static_cast<Eigen::Index>(truth.spurious_coordinate)] += sign * cfg.group_spurious_strength;
        }
        set.records.push_back({l2_normalize(raw), static_cast<std::uint32_t>(c), Modality::Image, domain,
                               groups[i]});
      }
      for (std::size_t i = 0; i < n; ++i) {
        Vector raw = text_raw.row(row).transpose() + text_sigma * gaussian(h, rng);
        set.records.push_back({l2_normalize(raw), static_cast<std::uint32_t>(c), Modality::Text, domain, 0});
      }
    }
    return set;
  };

  SyntheticData data;
  data.source = build(image_raw, Domain::InDomain, source_rng);
  data.target = build(target_raw, Domain::OutOfDomain, target_rng);
  data.truth = std::move(truth);
  return data;
}

// ---------------------------------------------------------------------------
// Splits and sampling

std::pair<EmbeddingSet, EmbeddingSet> split_base_novel(const EmbeddingSet& set, double base_fraction) {
  const std::size_t k = set.num_classes();
  if (k < 2) throw SplitError("base/novel split needs at least 2 classes, got " + std::to_string(k));
  if (!(base_fraction > 0.0 && base_fraction < 1.0)) {
    throw SplitError("base_fraction must lie in (0, 1), got " + std::to_string(base_fraction));
  }
  auto base_count = static_cast<std::size_t>(std::ceil(base_fraction * static_cast<double>(k)));
  base_count = std::clamp<std::size_t>(base_count, 1, k - 1);

  EmbeddingSet base, novel;
  base.dim = novel.dim = set.dim;
  base.class_names.assign(set.class_names.begin(), set.class_names.begin() + static_cast<long>(base_count));
  novel.class_names.assign(set.class_names.begin() + static_cast<long>(base_count), set.class_names.end());
  for (const auto& r : set.records) {
    if (r.class_id < base_count) {
      base.records.push_back(r);
    } else {
      auto moved = r;
      moved.class_id = static_cast<std::uint32_t>(r.class_id - base_count);
      novel.records.push_back(std::move(moved));
    }
  }
  return {std::move(base), std::move(novel)};
}

namespace {

// Record indices bucketed by (class, modality), in record order.
std::vector<std::vector<std::size_t>> bucket(const EmbeddingSet& set) {
  std::vector<std::vector<std::size_t>> buckets(set.num_classes() * 2);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    buckets[r.class_id * 2 + static_cast<std::size_t>(r.modality)].push_back(i);
  }
  return buckets;
}

EmbeddingSet empty_like(const EmbeddingSet& set) {
  EmbeddingSet out;
  out.dim = set.dim;
  out.class_names = set.class_names;
  out.warnings = set.warnings;
  return out;
}

}  // namespace

EmbeddingSet few_shot_sample(const EmbeddingSet& set, std::size_t shots, Rng& rng) {
  if (shots < 1) throw ConfigError("few_shot_sample: shots must be at least 1");
  set.validate();
  const auto buckets = bucket(set);
  std::vector<char> keep(set.records.size(), 0);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    auto indices = buckets[b];
    if (indices.empty()) continue;
    rng.shuffle(indices);
    const std::size_t take = std::min(shots, indices.size());
    for (std::size_t i = 0; i < take; ++i) keep[indices[i]] = 1;
  }
  EmbeddingSet out = empty_like(set);
  for (std::size_t c = 0; c < set.num_classes(); ++c) {
    for (std::size_t m = 0; m < 2; ++m) {
      const auto available = buckets[c * 2 + m].size();
      if (available == 0) {
        out.warnings.push_back("class " + std::to_string(c) + " (" + set.class_names[c] + ") has no " +
                               to_string(static_cast<Modality>(m)) + " records");
      } else if (available < shots) {
        out.warnings.push_back("class " + std::to_string(c) + " (" + set.class_names[c] + ") has only " +
                               std::to_string(available) + " " + to_string(static_cast<Modality>(m)) +
                               " records for " + std::to_string(shots) + " shots");
      }
    }
  }
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    if (keep[i]) out.records.push_back(set.records[i]);
  }
  return out;
}

std::pair<EmbeddingSet, EmbeddingSet> holdout_split(const EmbeddingSet& set, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("holdout_split: train_fraction must lie in (0, 1]");
  }
  set.validate();
  const auto buckets = bucket(set);
  std::vector<char> to_train(set.records.size(), 0);
  for (const auto& indices : buckets) {
    const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(indices.size())));
    for (std::size_t i = 0; i < std::min(n_train, indices.size()); ++i) to_train[indices[i]] = 1;
  }
  EmbeddingSet train = empty_like(set), test = empty_like(set);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    (to_train[i] ? train : test).records.push_back(set.records[i]);
  }
  return {std::move(train), std::move(test)};
}

EmbeddingSet filter(const EmbeddingSet& set, Modality modality) {
  EmbeddingSet out = empty_like(set);
  for (const auto& r : set.records) {
    if (r.modality == modality) out.records.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Byte helpers

namespace bytes {

namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) { put_le(out, v); }
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) { put_le(out, v); }
void put_f32(std::vector<std::uint8_t>& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::vector<std::uint8_t>& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

void Reader::need(std::size_t n, const char* what) {
  if (remaining() < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
}

std::uint8_t Reader::u8() {
  need(1, "u8");
  return data_[pos_++];
}

std::uint16_t Reader::u16() {
  need(2, "u16");
  std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t Reader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

double Reader::f64() {
  need(8, "f64");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(v);
}

std::string Reader::str(std::size_t length) {
  need(length, "string");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), length);
  pos_ += length;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string() + " for reading", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing", 0);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("write failed for " + path.string(), data.size());
}

}  // namespace bytes

// ---------------------------------------------------------------------------
// CEMB codec

namespace {

constexpr char kMagic[4] = {'C', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr double kLoadNormTolerance = 1e-5;

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set) {
  set.validate();
  std::vector<std::uint8_t> out;
  out.reserve(20 + set.records.size() * (8 + 4 * set.dim));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  bytes::put_u32(out, kVersion);
  bytes::put_u32(out, static_cast<std::uint32_t>(set.records.size()));
  bytes::put_u32(out, static_cast<std::uint32_t>(set.dim));
  bytes::put_u32(out, static_cast<std::uint32_t>(set.class_names.size()));
  for (const auto& name : set.class_names) {
    if (name.size() > UINT16_MAX) throw FormatError("class name longer than 65535 bytes", out.size());
    bytes::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  for (const auto& r : set.records) {
    bytes::put_u32(out, r.class_id);
    bytes::put_u8(out, static_cast<std::uint8_t>(r.modality));
    bytes::put_u8(out, static_cast<std::uint8_t>(r.domain));
    bytes::put_u16(out, r.group_id);
    for (Eigen::Index i = 0; i < r.vector.size(); ++i) bytes::put_f32(out, static_cast<float>(r.vector[i]));
  }
  return out;
}

EmbeddingSet decode_embeddings(const std::vector<std::uint8_t>& data) {
  bytes::Reader in(data);
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic, expected \"CEMB\"", 0);
  }
  in.str(4);
  const std::size_t version_at = in.offset();
  const auto version = in.u32();
  if (version != kVersion) {
    throw FormatError("unsupported CEMB version " + std::to_string(version), version_at);
  }
  const auto count = in.u32();
  const std::size_t dim_at = in.offset();
  const auto dim = in.u32();
  if (dim == 0) throw FormatError("dimension must be positive", dim_at);
  const auto num_classes = in.u32();

  EmbeddingSet set;
  set.dim = dim;
  set.class_names.reserve(num_classes);
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    const auto len = in.u16();
    set.class_names.push_back(in.str(len));
  }

  const std::size_t record_bytes = 8 + 4 * static_cast<std::size_t>(dim);
  const std::size_t expected = record_bytes * count;
  if (in.remaining() != expected) {
    const char* what = in.remaining() < expected ? "truncated file: " : "dimension inconsistency: ";
    throw FormatError(std::string(what) + std::to_string(in.remaining()) + " payload bytes for " +
                          std::to_string(count) + " records of dimension " + std::to_string(dim) +
                          " (expected " + std::to_string(expected) + ")",
                      in.offset());
  }

  set.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    EmbeddingRecord r;
    r.class_id = in.u32();
    if (r.class_id >= num_classes) {
      throw FormatError("record " + std::to_string(i) + " class_id " + std::to_string(r.class_id) +
                            " out of range",
                        at);
    }
    const auto modality = in.u8();
    const auto domain = in.u8();
    if (modality > 1) throw FormatError("invalid modality byte " + std::to_string(modality), at + 4);
    if (domain > 1) throw FormatError("invalid domain byte " + std::to_string(domain), at + 5);
    r.modality = static_cast<Modality>(modality);
    r.domain = static_cast<Domain>(domain);
    r.group_id = in.u16();
    r.vector.resize(dim);
    for (std::uint32_t d = 0; d < dim; ++d) r.vector[d] = static_cast<double>(in.f32());
    const double norm = r.vector.norm();
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > kLoadNormTolerance) {
      throw FormatError("record " + std::to_string(i) + " is not unit-normalized (norm " +
                            std::to_string(norm) + ")",
                        at);
    }
    set.records.push_back(std::move(r));
  }
  return set;
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  bytes::write_file(path, encode_embeddings(set));
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(bytes::read_file(path));
}

}  // namespace craft
