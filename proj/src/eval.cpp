#include "craft/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "craft/losses.hpp"

namespace craft {

std::uint32_t predict(const Vector& image_feature, const AnchorSet& text_anchors, double tau) {
  const auto dist = class_distribution(image_feature, text_anchors, tau);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < dist.probs.size(); ++k) {
    if (dist.probs[k] > dist.probs[best]) best = k;
  }
  return static_cast<std::uint32_t>(best);
}

double accuracy_of(const Matrix& encoded_images, const std::vector<std::uint32_t>& labels,
                   const AnchorSet& text_anchors, double tau) {
  if (encoded_images.rows() == 0) throw EvalError("accuracy of an empty image set");
  if (static_cast<std::size_t>(encoded_images.rows()) != labels.size()) {
    throw ShapeError("accuracy: row and label counts differ");
  }
  std::vector<char> hit(labels.size(), 0);
  parallel_for(labels.size(), [&](std::size_t i) {
    hit[i] = predict(encoded_images.row(static_cast<Eigen::Index>(i)).transpose(), text_anchors, tau) == labels[i];
  });
  const auto correct = static_cast<double>(std::count(hit.begin(), hit.end(), 1));
  return correct / static_cast<double>(labels.size());
}

std::vector<std::uint32_t> predictions(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors,
                                       double tau) {
  const Matrix images = set.matrix(Modality::Image);
  std::vector<std::uint32_t> out(static_cast<std::size_t>(images.rows()), 0);
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = predict(adapter.encode(Modality::Image, images.row(static_cast<Eigen::Index>(i)).transpose()),
                     text_anchors, tau);
  });
  return out;
}

double accuracy(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors, double tau) {
  const Matrix images = set.matrix(Modality::Image);
  if (images.rows() == 0) throw EvalError("set has no image records to evaluate");
  return accuracy_of(adapter.encode_rows(Modality::Image, images), set.labels(Modality::Image), text_anchors, tau);
}

BaseToNovelReport base_to_novel(const Adapter& adapter, const EmbeddingSet& base_set, const EmbeddingSet& novel_set,
                                double tau) {
  const std::set<std::string> base_names(base_set.class_names.begin(), base_set.class_names.end());
  for (const auto& name : novel_set.class_names) {
    if (base_names.count(name)) throw SplitError("class \"" + name + "\" appears in both base and novel sets");
  }
  BaseToNovelReport r;
  r.base_accuracy = accuracy(adapter, base_set, build_static_text_anchors(base_set, adapter), tau);
  r.novel_accuracy = accuracy(adapter, novel_set, build_static_text_anchors(novel_set, adapter), tau);
  return r;
}

GroupReport group_metrics(std::span<const GroupCount> counts) {
  if (counts.empty()) throw EvalError("group metrics need at least one group");
  GroupReport r;
  double sum = 0.0;
  r.worst_group = 1.0;
  for (const auto& g : counts) {
    if (g.total == 0) throw EvalError("group \"" + g.name + "\" has no samples");
    if (g.correct > g.total) throw EvalError("group \"" + g.name + "\" has more correct than total samples");
    const double acc = static_cast<double>(g.correct) / static_cast<double>(g.total);
    r.groups.push_back(g.name);
    r.per_group_accuracy.push_back(acc);
    r.worst_group = std::min(r.worst_group, acc);
    sum += acc;
  }
  r.average = sum / static_cast<double>(counts.size());
  r.gap = std::max(0.0, r.average - r.worst_group);
  return r;
}

GroupReport group_robustness(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors,
                             double tau) {
  const auto predicted = predictions(adapter, set, text_anchors, tau);
  std::map<std::pair<std::uint32_t, std::uint16_t>, GroupCount> groups;
  std::size_t i = 0;
  for (const auto& r : set.records) {
    if (r.modality != Modality::Image) continue;
    auto& g = groups[{r.class_id, r.group_id}];
    g.name = set.class_names[r.class_id] + "/group" + std::to_string(r.group_id);
    ++g.total;
    if (predicted[i++] == r.class_id) ++g.correct;
  }
  std::vector<GroupCount> counts;
  for (auto& [key, g] : groups) counts.push_back(g);
  return group_metrics(counts);
}

double ood_average(std::span<const double> target_accuracies) {
  if (target_accuracies.empty()) throw EvalError("OOD average needs at least one target");
  double sum = 0.0;
  for (double a : target_accuracies) sum += a;
  return sum / static_cast<double>(target_accuracies.size());
}

OODReport ood_suite(const Adapter& adapter, const EmbeddingSet& source_test, std::span<const EmbeddingSet> targets,
                    double tau) {
  if (targets.empty()) throw EvalError("OOD suite needs at least one target set");
  const AnchorSet text = build_static_text_anchors(source_test, adapter);
  OODReport r;
  r.source_accuracy = accuracy(adapter, source_test, text, tau);
  for (const auto& t : targets) {
    if (t.class_names != source_test.class_names) {
      throw EvalError("target set does not share the source class vocabulary");
    }
    r.target_accuracies.push_back(accuracy(adapter, t, text, tau));
  }
  r.target_average = ood_average(r.target_accuracies);
  return r;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& class_names) const {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& n : class_names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out << class_names[i];
    for (auto c : counts[i]) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix confusion(const Adapter& adapter, const EmbeddingSet& set, const AnchorSet& text_anchors, double tau) {
  const std::size_t k = set.num_classes();
  if (text_anchors.size() != k) throw AnchorError("confusion: anchor count does not match the class count");
  ConfusionMatrix m;
  m.counts.assign(k, std::vector<std::size_t>(k, 0));
  const auto predicted = predictions(adapter, set, text_anchors, tau);
  const auto labels = set.labels(Modality::Image);
  if (labels.empty()) throw EvalError("confusion of an empty image set");
  for (std::size_t i = 0; i < labels.size(); ++i) ++m.counts[labels[i]][predicted[i]];
  return m;
}

void dump_features(const Adapter& adapter, const EmbeddingSet& set, const std::filesystem::path& path) {
  write_embeddings(adapter.encode_set(set), path);
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * fraction);
  return buf;
}

nlohmann::ordered_json to_json(const GroupReport& report) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json groups = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < report.groups.size(); ++i) groups[report.groups[i]] = report.per_group_accuracy[i];
  j["per_group_accuracy"] = groups;
  j["worst_group"] = report.worst_group;
  j["average"] = report.average;
  j["gap"] = report.gap;
  j["rendered"] = {{"WG", format_percent(report.worst_group)},
                   {"Avg", format_percent(report.average)},
                   {"Gap", format_percent(report.gap)}};
  return j;
}

nlohmann::ordered_json to_json(const OODReport& report) {
  nlohmann::ordered_json j;
  j["source_accuracy"] = report.source_accuracy;
  j["target_accuracies"] = report.target_accuracies;
  j["target_average"] = report.target_average;
  nlohmann::ordered_json rendered;
  rendered["Source"] = format_percent(report.source_accuracy);
  std::vector<std::string> targets;
  for (double a : report.target_accuracies) targets.push_back(format_percent(a));
  rendered["Targets"] = targets;
  rendered["Avg"] = format_percent(report.target_average);
  j["rendered"] = rendered;
  return j;
}

nlohmann::ordered_json to_json(const BaseToNovelReport& report) {
  nlohmann::ordered_json j;
  j["base_accuracy"] = report.base_accuracy;
  j["novel_accuracy"] = report.novel_accuracy;
  j["rendered"] = {{"Base", format_percent(report.base_accuracy)},
                   {"Novel", format_percent(report.novel_accuracy)}};
  return j;
}

namespace {

std::string row(const std::vector<std::string>& cells, std::size_t width) {
  std::string line;
  for (const auto& c : cells) {
    line += std::string(width > c.size() ? width - c.size() : 1, ' ');
    line += c;
  }
  return line + '\n';
}

}  // namespace

std::string render_table(const GroupReport& report) {
  std::string out = row({"WG", "Avg", "Gap"}, 8);
  out += row({format_percent(report.worst_group), format_percent(report.average), format_percent(report.gap)}, 8);
  out += '\n';
  std::size_t width = 8;
  for (const auto& g : report.groups) width = std::max(width, g.size() + 2);
  for (std::size_t i = 0; i < report.groups.size(); ++i) {
    out += row({report.groups[i], format_percent(report.per_group_accuracy[i])}, width);
  }
  return out;
}

std::string render_table(const OODReport& report, const std::vector<std::string>& target_names) {
  std::vector<std::string> header{"Source"}, values{format_percent(report.source_accuracy)};
  for (std::size_t i = 0; i < report.target_accuracies.size(); ++i) {
    header.push_back(i < target_names.size() ? target_names[i] : "T" + std::to_string(i));
    values.push_back(format_percent(report.target_accuracies[i]));
  }
  header.push_back("Avg");
  values.push_back(format_percent(report.target_average));
  return row(header, 10) + row(values, 10);
}

std::string render_table(const BaseToNovelReport& report) {
  return row({"Base", "Novel"}, 8) +
         row({format_percent(report.base_accuracy), format_percent(report.novel_accuracy)}, 8);
}

}  // namespace craft
