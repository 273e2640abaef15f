#include "craft/experiment.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "craft/mmd.hpp"

namespace craft {

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::BaseToNovel: return "base-to-novel";
    case ExperimentKind::GroupRobustness: return "group-robustness";
    case ExperimentKind::OOD: return "ood";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  if (text == "base-to-novel") return ExperimentKind::BaseToNovel;
  if (text == "group-robustness") return ExperimentKind::GroupRobustness;
  if (text == "ood") return ExperimentKind::OOD;
  throw ConfigError("unknown kind \"" + text + "\" (expected base-to-novel, group-robustness or ood)");
}

void SplitConfig::validate() const {
  if (!(base_fraction > 0.0 && base_fraction < 1.0)) throw ConfigError("split.base_fraction must lie in (0, 1)");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split.train_fraction must lie in (0, 1)");
}

void RunConfig::validate() const {
  synthetic.validate();
  train.validate();
  split.validate();
  if (anchors.centroids_per_class < 1) throw ConfigError("anchors.centroids_per_class must be at least 1");
  if (anchors.max_iter < 1) throw ConfigError("anchors.max_iter must be at least 1");
  if (!(anchors.tol >= 0.0)) throw ConfigError("anchors.tol must be non-negative");
}

namespace {

// Reads typed fields out of one JSON object and rejects whatever is left.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  template <typename F>
  void field(const std::string& key, F&& apply) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    apply(*it, join(key));
  }

  void number(const std::string& key, double& out) {
    field(key, [&](const nlohmann::json& v, const std::string& p) {
      if (!v.is_number()) throw ConfigError(p + " must be a number");
      out = v.get<double>();
    });
  }

  void optional_number(const std::string& key, std::optional<double>& out) {
    field(key, [&](const nlohmann::json& v, const std::string& p) {
      if (v.is_null()) {
        out.reset();
        return;
      }
      if (!v.is_number()) throw ConfigError(p + " must be a number or null");
      out = v.get<double>();
    });
  }

  template <typename T>
  void count(const std::string& key, T& out) {
    field(key, [&](const nlohmann::json& v, const std::string& p) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError(p + " must be a non-negative integer");
      }
      out = static_cast<T>(v.get<unsigned long long>());
    });
  }

  void boolean(const std::string& key, bool& out) {
    field(key, [&](const nlohmann::json& v, const std::string& p) {
      if (!v.is_boolean()) throw ConfigError(p + " must be true or false");
      out = v.get<bool>();
    });
  }

  void string(const std::string& key, std::string& out) {
    field(key, [&](const nlohmann::json& v, const std::string& p) {
      if (!v.is_string()) throw ConfigError(p + " must be a string");
      out = v.get<std::string>();
    });
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key \"" + join(it.key()) + "\"");
    }
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string label() const { return path_.empty() ? "config" : path_; }

  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc) {
  RunConfig cfg;
  ObjectReader root(doc, "");
  root.field("kind", [&](const nlohmann::json& v, const std::string& p) {
    if (!v.is_string()) throw ConfigError(p + " must be a string");
    cfg.kind = parse_experiment_kind(v.get<std::string>());
  });
  root.field("synthetic", [&](const nlohmann::json& v, const std::string& p) {
    auto& s = cfg.synthetic;
    ObjectReader r(v, p);
    r.count("num_classes", s.num_classes);
    r.count("dim", s.dim);
    r.count("samples_per_class_per_modality", s.samples_per_class_per_modality);
    r.number("cluster_spread", s.cluster_spread);
    r.number("cross_modal_noise", s.cross_modal_noise);
    r.number("domain_shift_magnitude", s.domain_shift_magnitude);
    r.number("group_spurious_strength", s.group_spurious_strength);
    r.number("majority_fraction", s.majority_fraction);
    r.number("modality_gap", s.modality_gap);
    r.count("seed", s.seed);
    r.finish();
  });
  root.field("train", [&](const nlohmann::json& v, const std::string& p) {
    auto& t = cfg.train;
    ObjectReader r(v, p);
    r.count("epochs", t.epochs);
    r.count("batch_size", t.batch_size);
    r.optional_number("learning_rate", t.learning_rate);
    r.number("tau", t.tau);
    r.count("shots", t.shots);
    r.count("seed", t.seed);
    r.field("mode", [&](const nlohmann::json& m, const std::string& mp) {
      if (!m.is_string()) throw ConfigError(mp + " must be a string");
      t.mode = parse_train_mode(m.get<std::string>());
    });
    r.optional_number("bandwidth", t.bandwidth);
    r.boolean("freeze_bandwidth", t.freeze_bandwidth);
    r.count("target_batch_size", t.target_batch_size);
    r.field("weights", [&](const nlohmann::json& w, const std::string& wp) {
      ObjectReader wr(w, wp);
      wr.number("text_ce", t.weights.text_ce);
      wr.number("static_image", t.weights.static_image);
      wr.number("static_text", t.weights.static_text);
      wr.number("stochastic", t.weights.stochastic);
      wr.number("mmd", t.weights.mmd);
      wr.finish();
    });
    r.finish();
  });
  root.field("split", [&](const nlohmann::json& v, const std::string& p) {
    ObjectReader r(v, p);
    r.number("base_fraction", cfg.split.base_fraction);
    r.number("train_fraction", cfg.split.train_fraction);
    r.finish();
  });
  root.field("anchors", [&](const nlohmann::json& v, const std::string& p) {
    ObjectReader r(v, p);
    r.count("centroids_per_class", cfg.anchors.centroids_per_class);
    r.count("max_iter", cfg.anchors.max_iter);
    r.number("tol", cfg.anchors.tol);
    r.finish();
  });
  root.field("paths", [&](const nlohmann::json& v, const std::string& p) {
    ObjectReader r(v, p);
    r.string("source", cfg.paths.source);
    r.string("target", cfg.paths.target);
    r.string("anchors", cfg.paths.anchors);
    r.string("checkpoint", cfg.paths.checkpoint);
    r.string("history", cfg.paths.history);
    r.string("report", cfg.paths.report);
    r.finish();
  });
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  const auto& s = cfg.synthetic;
  const auto& t = cfg.train;
  nlohmann::ordered_json j;
  j["kind"] = to_string(cfg.kind);
  j["synthetic"] = {{"num_classes", s.num_classes},
                    {"dim", s.dim},
                    {"samples_per_class_per_modality", s.samples_per_class_per_modality},
                    {"cluster_spread", s.cluster_spread},
                    {"cross_modal_noise", s.cross_modal_noise},
                    {"domain_shift_magnitude", s.domain_shift_magnitude},
                    {"group_spurious_strength", s.group_spurious_strength},
                    {"majority_fraction", s.majority_fraction},
                    {"modality_gap", s.modality_gap},
                    {"seed", s.seed}};
  nlohmann::ordered_json train;
  train["epochs"] = t.epochs;
  train["batch_size"] = t.batch_size;
  train["learning_rate"] = t.effective_learning_rate();
  train["tau"] = t.tau;
  train["shots"] = t.shots;
  train["seed"] = t.seed;
  train["mode"] = to_string(t.mode);
  train["bandwidth"] = t.bandwidth ? nlohmann::ordered_json(*t.bandwidth) : nlohmann::ordered_json(nullptr);
  train["freeze_bandwidth"] = t.freeze_bandwidth;
  train["target_batch_size"] = t.target_batch_size;
  train["weights"] = {{"text_ce", t.weights.text_ce},
                      {"static_image", t.weights.static_image},
                      {"static_text", t.weights.static_text},
                      {"stochastic", t.weights.stochastic},
                      {"mmd", t.weights.mmd}};
  j["train"] = train;
  j["split"] = {{"base_fraction", cfg.split.base_fraction}, {"train_fraction", cfg.split.train_fraction}};
  j["anchors"] = {{"centroids_per_class", cfg.anchors.centroids_per_class},
                  {"max_iter", cfg.anchors.max_iter},
                  {"tol", cfg.anchors.tol}};
  j["paths"] = {{"source", cfg.paths.source},         {"target", cfg.paths.target},
                {"anchors", cfg.paths.anchors},       {"checkpoint", cfg.paths.checkpoint},
                {"history", cfg.paths.history},       {"report", cfg.paths.report}};
  return j;
}

ExperimentSplits make_splits(const RunConfig& cfg, const EmbeddingSet& source, const EmbeddingSet* target) {
  auto [train_all, test_all] = holdout_split(source, cfg.split.train_fraction);
  ExperimentSplits out;
  switch (cfg.kind) {
    case ExperimentKind::BaseToNovel: {
      auto [base_train, novel_train] = split_base_novel(train_all, cfg.split.base_fraction);
      auto [base_test, novel_test] = split_base_novel(test_all, cfg.split.base_fraction);
      out.train = std::move(base_train);
      out.test = std::move(base_test);
      out.novel_test = std::move(novel_test);
      break;
    }
    case ExperimentKind::GroupRobustness:
      out.train = std::move(train_all);
      out.test = std::move(test_all);
      break;
    case ExperimentKind::OOD: {
      if (target == nullptr) throw ConfigError("kind ood requires a target set");
      if (target->class_names != source.class_names) {
        throw ConfigError("target set does not share the source class vocabulary");
      }
      auto [target_train, target_test] = holdout_split(*target, cfg.split.train_fraction);
      out.train = std::move(train_all);
      out.test = std::move(test_all);
      out.target_train = std::move(target_train);
      out.target_test = std::move(target_test);
      break;
    }
  }
  return out;
}

StaticAnchors build_anchors(const EmbeddingSet& pool, std::uint64_t seed, const ImageAnchorOptions& options) {
  const Adapter frozen = Adapter::zeros(pool.dim);
  Rng rng = Rng(seed).fork(7);
  StaticAnchors anchors;
  anchors.image = build_static_image_anchors(pool, frozen, rng, options);
  anchors.text = build_static_text_anchors(pool, frozen);
  return anchors;
}

StaticAnchors experiment_anchors(const RunConfig& cfg, const ExperimentSplits& splits) {
  const EmbeddingSet* target = splits.target_train ? &*splits.target_train : nullptr;
  return build_anchors(training_pool(splits.train, target, cfg.train), cfg.train.seed, cfg.anchors);
}

TrainResult run_training(const RunConfig& cfg, const ExperimentSplits& splits, const StaticAnchors& anchors) {
  const EmbeddingSet* target = splits.target_train ? &*splits.target_train : nullptr;
  return train(splits.train, target, anchors, cfg.train);
}

DomainDiscrepancy domain_discrepancy(const Adapter& adapter, const ExperimentSplits& splits,
                                     const StaticAnchors& anchors, double tau) {
  if (!splits.target_test) throw EvalError("domain discrepancy needs a target test set");
  const Matrix src = splits.test.matrix(Modality::Image);
  const Matrix tgt = splits.target_test->matrix(Modality::Image);
  const Matrix zs = anchor_align(src, anchors.text, tau).rows;
  const Matrix zt = anchor_align(tgt, anchors.text, tau).rows;
  Matrix pooled(zs.rows() + zt.rows(), zs.cols());
  pooled << zs, zt;
  const KernelSpec kernel{median_heuristic(pooled)};
  DomainDiscrepancy d;
  d.bandwidth = kernel.bandwidth;
  d.mmd2 = mmd_loss(adapter.encode_rows(Modality::Image, src), adapter.encode_rows(Modality::Image, tgt),
                    anchors.text, kernel, tau);
  return d;
}

nlohmann::ordered_json evaluate_experiment(const RunConfig& cfg, const Adapter& adapter, const ExperimentSplits& splits,
                                           const StaticAnchors& anchors) {
  const double tau = cfg.train.tau;
  switch (cfg.kind) {
    case ExperimentKind::BaseToNovel: {
      if (!splits.novel_test) throw EvalError("base-to-novel evaluation needs a novel split");
      return to_json(base_to_novel(adapter, splits.test, *splits.novel_test, tau));
    }
    case ExperimentKind::GroupRobustness: {
      const AnchorSet text = build_static_text_anchors(splits.test, adapter);
      return to_json(group_robustness(adapter, splits.test, text, tau));
    }
    case ExperimentKind::OOD: {
      if (!splits.target_test) throw EvalError("ood evaluation needs a target split");
      const std::vector<EmbeddingSet> targets{*splits.target_test};
      auto j = to_json(ood_suite(adapter, splits.test, targets, tau));
      const auto before = domain_discrepancy(Adapter::zeros(adapter.dim()), splits, anchors, tau);
      const auto after = domain_discrepancy(adapter, splits, anchors, tau);
      j["mmd2_initial"] = before.mmd2;
      j["mmd2"] = after.mmd2;
      j["mmd_bandwidth"] = after.bandwidth;
      return j;
    }
  }
  return {};
}

std::string render_results(ExperimentKind kind, const nlohmann::ordered_json& results) {
  switch (kind) {
    case ExperimentKind::BaseToNovel:
      return render_table(BaseToNovelReport{results.at("base_accuracy").get<double>(),
                                            results.at("novel_accuracy").get<double>()});
    case ExperimentKind::GroupRobustness: {
      GroupReport r;
      for (auto it = results.at("per_group_accuracy").begin(); it != results.at("per_group_accuracy").end(); ++it) {
        r.groups.push_back(it.key());
        r.per_group_accuracy.push_back(it.value().get<double>());
      }
      r.worst_group = results.at("worst_group").get<double>();
      r.average = results.at("average").get<double>();
      r.gap = results.at("gap").get<double>();
      return render_table(r);
    }
    case ExperimentKind::OOD: {
      OODReport r;
      r.source_accuracy = results.at("source_accuracy").get<double>();
      r.target_accuracies = results.at("target_accuracies").get<std::vector<double>>();
      r.target_average = results.at("target_average").get<double>();
      std::ostringstream out;
      out << render_table(r, {"Target"});
      char buf[96];
      std::snprintf(buf, sizeof buf, "MMD^2 %.6g (untrained %.6g)\n", results.at("mmd2").get<double>(),
                    results.at("mmd2_initial").get<double>());
      out << '\n' << buf;
      return out.str();
    }
  }
  return {};
}

}  // namespace craft
