#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "craft/core.hpp"
#include "craft/rng.hpp"

namespace craft {

enum class Modality : std::uint8_t { Image = 0, Text = 1 };
enum class Domain : std::uint8_t { InDomain = 0, OutOfDomain = 1 };

const char* to_string(Modality m);
const char* to_string(Domain d);

/// One labeled, unit-normalized embedding.
struct EmbeddingRecord {
  Vector vector;
  std::uint32_t class_id = 0;
  Modality modality = Modality::Image;
  Domain domain = Domain::InDomain;
  /// Spurious-correlation group; 0 when unused.
  std::uint16_t group_id = 0;
};

struct EmbeddingSet {
  std::vector<EmbeddingRecord> records;
  std::size_t dim = 0;
  std::vector<std::string> class_names;
  /// Non-fatal notes produced while building the set (e.g. short classes in
  /// few-shot sampling). Not persisted.
  std::vector<std::string> warnings;

  std::size_t num_classes() const { return class_names.size(); }

  /// Throws ShapeError / LabelError when records disagree with dim or K.
  void validate() const;

  /// Rows of all records with the given modality, in record order.
  Matrix matrix(Modality modality) const;
  std::vector<std::uint32_t> labels(Modality modality) const;
  std::size_t count(Modality modality) const;
};

/// Parameters of the synthetic dual-modality generator.
struct SyntheticConfig {
  std::size_t num_classes = 20;
  std::size_t dim = 32;
  std::size_t samples_per_class_per_modality = 48;
  /// Norm of the isotropic Gaussian noise around each image class center.
  double cluster_spread = 0.3;
  /// Norm of the isotropic Gaussian noise around each text class center.
  double cross_modal_noise = 0.3;
  double domain_shift_magnitude = 0.0;
  double group_spurious_strength = 0.0;
  double majority_fraction = 0.9;
  /// Norm of the class-agnostic offsets separating the image and text
  /// modalities (the same norm is used for both offsets).
  double modality_gap = 0.5;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Noise-free quantities of a generated dataset, for oracle checks.
struct SyntheticTruth {
  Matrix latent_means;        ///< K x H shared class latents (unit norm)
  Matrix image_means;         ///< K x H normalized source image centers
  Matrix text_means;          ///< K x H normalized text centers
  Matrix target_image_means;  ///< K x H normalized shifted image centers
  Vector image_offset;
  Vector text_offset;
  std::size_t spurious_coordinate = 0;
};

struct SyntheticData {
  EmbeddingSet source;
  EmbeddingSet target;
  SyntheticTruth truth;
};

/// Draws source (in-domain) and target (out-of-domain) sets that share class
/// latents. See README for the generative model.
SyntheticData generate_synthetic(const SyntheticConfig& cfg);

/// Routes records by class: the first ceil(base_fraction * K) class ids go to
/// base, the rest to novel. Class ids are re-indexed densely within each
/// output set, preserving order.
std::pair<EmbeddingSet, EmbeddingSet> split_base_novel(const EmbeddingSet& set,
                                                       double base_fraction);

/// Per class and modality, keeps min(shots, available) records drawn without
/// replacement. Output order follows the input order.
EmbeddingSet few_shot_sample(const EmbeddingSet& set, std::size_t shots, Rng& rng);

/// Per class and modality, the first ceil(train_fraction * n) records go to
/// the first set and the remainder to the second. Class vocabulary is kept.
std::pair<EmbeddingSet, EmbeddingSet> holdout_split(const EmbeddingSet& set,
                                                    double train_fraction);

/// Keeps only records of one domain / modality. Class vocabulary is kept.
EmbeddingSet filter(const EmbeddingSet& set, Modality modality);

/// CEMB binary format (little-endian):
///   "CEMB" | u32 version=1 | u32 count | u32 dim | u32 num_classes
///   num_classes x (u16 byte length | UTF-8 name)
///   count x (u32 class_id | u8 modality | u8 domain | u16 group_id | dim x f32)
std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(const std::vector<std::uint8_t>& bytes);

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

/// Byte-level helpers shared by the CEMB and checkpoint codecs.
namespace bytes {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
void put_f64(std::vector<std::uint8_t>& out, double v);

/// Bounds-checked little-endian reader. Every read failure is a FormatError
/// carrying the current offset.
class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& data) : data_(data) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  double f64();
  std::string str(std::size_t length);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what);
  const std::vector<std::uint8_t>& data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data);

}  // namespace bytes

}  // namespace craft
