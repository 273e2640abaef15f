// craft: command-line front end for synthetic experiments.
//
//   craft gen     --config C --out DIR
//   craft anchors --data FILE --out FILE [--config C] [--centroids-per-class N]
//   craft train   --config C --data FILE [--target FILE] [--anchors FILE] --out DIR
//   craft eval    --config C --checkpoint FILE --data FILE [--target FILE] --out DIR
//   craft mmd     --a FILE --b FILE --anchors FILE [--n-perms N]

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "craft/experiment.hpp"
#include "craft/mmd.hpp"

namespace fs = std::filesystem;
using namespace craft;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string kind;
  std::string mode;
  std::string data;
  std::string target;
  std::string checkpoint;
  std::string anchors;
  std::string set_a;
  std::string set_b;
  std::size_t n_perms = 1000;
  std::optional<std::size_t> centroids_per_class;
  std::optional<double> tau;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    cfg.synthetic.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (!o.kind.empty()) cfg.kind = parse_experiment_kind(o.kind);
  if (!o.mode.empty()) cfg.train.mode = parse_train_mode(o.mode);
  if (o.centroids_per_class) cfg.anchors.centroids_per_class = *o.centroids_per_class;
  if (o.tau) cfg.train.tau = *o.tau;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Options& o) {
  fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing", 0);
  out << text;
  if (!out) throw FormatError("write failed for " + path.string(), 0);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<EmbeddingSet> maybe_read(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_embeddings(path);
}

EmbeddingSet require_data(const Options& o) {
  if (o.data.empty()) throw ConfigError("--data is required");
  return read_embeddings(o.data);
}

int cmd_gen(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = out_dir(o);
  const auto data = generate_synthetic(cfg.synthetic);
  write_embeddings(data.source, dir / cfg.paths.source);
  write_embeddings(data.target, dir / cfg.paths.target);
  nlohmann::ordered_json j;
  j["source"] = (dir / cfg.paths.source).string();
  j["target"] = (dir / cfg.paths.target).string();
  j["records"] = data.source.records.size();
  j["dim"] = data.source.dim;
  j["num_classes"] = data.source.num_classes();
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_anchors(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const EmbeddingSet data = require_data(o);
  const auto target = maybe_read(o.target);
  StaticAnchors anchors;
  std::vector<std::string> names;
  if (o.config.empty()) {
    // Without a config, every record of the file is anchor material.
    anchors = build_anchors(data, cfg.train.seed, cfg.anchors);
    names = data.class_names;
  } else {
    const auto splits = make_splits(cfg, data, target ? &*target : nullptr);
    anchors = experiment_anchors(cfg, splits);
    names = splits.train.class_names;
  }
  const fs::path path = o.out.empty() ? fs::path(cfg.paths.anchors) : fs::path(o.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_embeddings(anchors_to_set(anchors, names), path);
  nlohmann::ordered_json j;
  j["anchors"] = path.string();
  j["classes"] = names.size();
  j["centroids_per_class"] = cfg.anchors.centroids_per_class;
  std::cout << j.dump() << '\n';
  return 0;
}

StaticAnchors load_or_build_anchors(const Options& o, const RunConfig& cfg, const ExperimentSplits& splits) {
  if (o.anchors.empty()) return experiment_anchors(cfg, splits);
  StaticAnchors anchors = anchors_from_set(read_embeddings(o.anchors));
  if (anchors.text.size() != splits.train.num_classes() || anchors.text.dim() != splits.train.dim) {
    throw ShapeError("anchor file " + o.anchors + " holds " + std::to_string(anchors.text.size()) + " x " +
                     std::to_string(anchors.text.dim()) + " anchors, training split needs " +
                     std::to_string(splits.train.num_classes()) + " x " + std::to_string(splits.train.dim));
  }
  return anchors;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const EmbeddingSet data = require_data(o);
  const auto target = maybe_read(o.target);
  const auto splits = make_splits(cfg, data, target ? &*target : nullptr);
  const StaticAnchors anchors = load_or_build_anchors(o, cfg, splits);
  const auto result = run_training(cfg, splits, anchors);
  const fs::path dir = out_dir(o);
  write_checkpoint(result.adapter, dir / cfg.paths.checkpoint);
  write_text(dir / cfg.paths.history, result.history.to_jsonl());
  nlohmann::ordered_json j;
  j["checkpoint"] = (dir / cfg.paths.checkpoint).string();
  j["history"] = (dir / cfg.paths.history).string();
  j["epochs"] = result.history.epochs.size();
  j["final_loss"] = result.history.epochs.back().loss.total;
  j["warnings"] = result.history.warnings;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const Adapter adapter = read_checkpoint(o.checkpoint);
  const EmbeddingSet data = require_data(o);
  if (adapter.dim() != data.dim) {
    throw ShapeError("checkpoint dimension " + std::to_string(adapter.dim()) + " does not match data dimension " +
                     std::to_string(data.dim));
  }
  const auto target = maybe_read(o.target);
  const auto splits = make_splits(cfg, data, target ? &*target : nullptr);
  const StaticAnchors anchors = load_or_build_anchors(o, cfg, splits);
  const auto results = evaluate_experiment(cfg, adapter, splits, anchors);

  const fs::path dir = out_dir(o);
  nlohmann::ordered_json report;
  report["kind"] = to_string(cfg.kind);
  report["mode"] = to_string(cfg.train.mode);
  report["config"] = to_json(cfg);
  report["results"] = results;
  report["timestamp"] = utc_timestamp();
  write_text(dir / cfg.paths.report, report.dump(2) + "\n");

  const fs::path stem = (dir / cfg.paths.report).replace_extension();
  write_text(stem.string() + ".txt", render_results(cfg.kind, results));
  const AnchorSet text = build_static_text_anchors(splits.test, adapter);
  write_text(stem.string() + "_confusion.csv",
             confusion(adapter, splits.test, text, cfg.train.tau).to_csv(splits.test.class_names));
  std::cout << render_results(cfg.kind, results);
  return 0;
}

int cmd_mmd(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  if (o.set_a.empty() || o.set_b.empty()) throw ConfigError("--a and --b are required");
  if (o.anchors.empty()) throw ConfigError("--anchors is required");
  const EmbeddingSet a = read_embeddings(o.set_a);
  const EmbeddingSet b = read_embeddings(o.set_b);
  const StaticAnchors anchors = anchors_from_set(read_embeddings(o.anchors));
  Adapter adapter = Adapter::zeros(a.dim);
  if (!o.checkpoint.empty()) adapter = read_checkpoint(o.checkpoint);
  const double tau = cfg.train.tau;
  const Matrix za = anchor_align(adapter.encode_rows(Modality::Image, a.matrix(Modality::Image)), anchors.text, tau).rows;
  const Matrix zb = anchor_align(adapter.encode_rows(Modality::Image, b.matrix(Modality::Image)), anchors.text, tau).rows;
  Matrix pooled(za.rows() + zb.rows(), za.cols());
  pooled << za, zb;
  const KernelSpec kernel{cfg.train.bandwidth ? *cfg.train.bandwidth : median_heuristic(pooled)};
  Rng rng(o.seed ? *o.seed : cfg.train.seed);
  nlohmann::ordered_json j;
  j["mmd2_biased"] = mmd2_biased(za, zb, kernel);
  j["mmd2_unbiased"] = mmd2_unbiased(za, zb, kernel);
  j["bandwidth"] = kernel.bandwidth;
  j["n_perms"] = o.n_perms;
  j["p_value"] = permutation_test(za, zb, kernel, o.n_perms, rng);
  std::cout << j.dump() << '\n';
  return 0;
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numeric: return 4;
  }
  return 1;
}

int report_error(const std::string& name, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"] = name;
  j["message"] = message;
  j["exit_code"] = code;
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-aligned adapter tuning on frozen dual-modality embeddings"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed overriding the synthetic and training seeds");
    sub->add_option("--out", o.out, "Output directory (file for anchors)");
  };

  auto* gen = app.add_subcommand("gen", "Generate synthetic source and target sets");
  add_common(gen);

  auto* anchors = app.add_subcommand("anchors", "Build and serialize static anchors");
  add_common(anchors);
  anchors->add_option("--data", o.data, "Source embedding file")->check(CLI::ExistingFile);
  anchors->add_option("--target", o.target, "Target embedding file")->check(CLI::ExistingFile);
  anchors->add_option("--centroids-per-class", o.centroids_per_class, "k-means centroids per class");
  anchors->add_option("--mode", o.mode, "baseline, aligned, aligned-mmd or oracle");
  anchors->add_option("--kind", o.kind, "base-to-novel, group-robustness or ood");

  auto* train = app.add_subcommand("train", "Train an adapter and write checkpoint and history");
  add_common(train);
  train->add_option("--data", o.data, "Source embedding file")->check(CLI::ExistingFile);
  train->add_option("--target", o.target, "Target embedding file")->check(CLI::ExistingFile);
  train->add_option("--anchors", o.anchors, "Static anchor file")->check(CLI::ExistingFile);
  train->add_option("--mode", o.mode, "baseline, aligned, aligned-mmd or oracle");
  train->add_option("--kind", o.kind, "base-to-novel, group-robustness or ood");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write reports");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Adapter checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--data", o.data, "Source embedding file")->check(CLI::ExistingFile);
  eval->add_option("--target", o.target, "Target embedding file")->check(CLI::ExistingFile);
  eval->add_option("--anchors", o.anchors, "Static anchor file")->check(CLI::ExistingFile);
  eval->add_option("--kind", o.kind, "base-to-novel, group-robustness or ood");
  eval->add_option("--mode", o.mode, "Recorded in the report; selects the oracle anchor pool");

  auto* mmd = app.add_subcommand("mmd", "MMD^2 and permutation test between two sets");
  add_common(mmd);
  mmd->add_option("--a", o.set_a, "First embedding file")->check(CLI::ExistingFile);
  mmd->add_option("--b", o.set_b, "Second embedding file")->check(CLI::ExistingFile);
  mmd->add_option("--anchors", o.anchors, "Static anchor file")->check(CLI::ExistingFile);
  mmd->add_option("--checkpoint", o.checkpoint, "Adapter applied before alignment")->check(CLI::ExistingFile);
  mmd->add_option("--n-perms", o.n_perms, "Permutations for the p-value (>= 100)");
  mmd->add_option("--tau", o.tau, "Temperature of the anchor alignment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("ConfigError", e.what(), 2);
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*anchors) return cmd_anchors(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*mmd) return cmd_mmd(o);
  } catch (const Error& e) {
    return report_error(e.name(), e.what(), exit_code(e.category()));
  } catch (const fs::filesystem_error& e) {
    return report_error("FormatError", e.what(), 3);
  } catch (const std::exception& e) {
    return report_error("InternalError", e.what(), 1);
  }
  return 0;
}
