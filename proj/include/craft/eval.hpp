#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "craft/adapter.hpp"
#include "craft/anchors.hpp"
#include "craft/dataio.hpp"

namespace craft {

/// Argmax of the class distribution; ties go to the lowest class id.
std::uint32_t predict(const Vector& image_feature, const AnchorSet& text_anchors, double tau);

/// Fraction of rows of `encoded_images` whose prediction equals the label.
/// Throws EvalError when there are no rows.
double accuracy_of(const Matrix& encoded_images, const std::vector<std::uint32_t>& labels,
                   const AnchorSet& text_anchors, double tau);

/// Accuracy of the adapter on the image records of `set`. `text_anchors`
/// are used as given (build them with the same adapter for consistency).
double accuracy(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors, double tau);

/// Image predictions for every image record of `set`, in record order.
std::vector<std::uint32_t> predictions(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors,
                                       double tau);

struct BaseToNovelReport {
  double base_accuracy = 0.0;
  double novel_accuracy = 0.0;
};

/// Base accuracy against base-class text anchors and novel accuracy against
/// novel-class text anchors, both encoded through the adapter's text side.
/// Throws SplitError when the two sets share a class name.
BaseToNovelReport base_to_novel(const Adapter& adapter, const EmbeddingSet& base_set, const EmbeddingSet& novel_set,
                                double tau);

struct GroupCount {
  std::string name;
  std::size_t correct = 0;
  std::size_t total = 0;
};

struct GroupReport {
  std::vector<std::string> groups;
  std::vector<double> per_group_accuracy;  ///< fractions in [0, 1]
  double worst_group = 0.0;
  double average = 0.0;  ///< unweighted mean over groups
  double gap = 0.0;      ///< average - worst_group
};

/// Throws EvalError when there are no groups or a group is empty.
GroupReport group_metrics(std::span<const GroupCount> counts);

/// Per (class, spurious group) accuracy of the adapter on `set`.
GroupReport group_robustness(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors,
                             double tau);

struct OODReport {
  double source_accuracy = 0.0;
  std::vector<double> target_accuracies;
  double target_average = 0.0;  ///< mean over targets only
};

/// Arithmetic mean of the target accuracies. Throws EvalError when empty.
double ood_average(std::span<const double> target_accuracies);

/// Accuracy on the source test set and each target set, all scored against
/// text anchors built from `source_test` through the adapter. Throws
/// EvalError when a target's class vocabulary differs from the source.
OODReport ood_suite(const Adapter& adapter, const EmbeddingSet& source_test, std::span<const EmbeddingSet> targets,
                    double tau);

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::size_t trace() const;
  std::string to_csv(const std::vector<std::string>& class_names) const;
};

ConfusionMatrix confusion(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors, double tau);

/// Writes the adapted features of every record in CEMB format.
void dump_features(const Adapter& adapter, const EmbeddingSet& set, const std::filesystem::path& path);

/// Percentage with one decimal, e.g. 0.8961 -> "89.6".
std::string format_percent(double fraction);

nlohmann::ordered_json to_json(const GroupReport& report);
nlohmann::ordered_json to_json(const OODReport& report);
nlohmann::ordered_json to_json(const BaseToNovelReport& report);

/// Aligned plain-text tables, percentages rendered to one decimal.
std::string render_table(const GroupReport& report);
std::string render_table(const OODReport& report, const std::vector<std::string>& target_names);
std::string render_table(const BaseToNovelReport& report);

}  // namespace craft
