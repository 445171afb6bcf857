#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xgml/error.hpp"
#include "xgml/importance.hpp"
#include "xgml/model.hpp"
#include "xgml/pipeline.hpp"
#include "xgml/synth.hpp"
#include "xgml/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xgml;

namespace {

constexpr double kDisplayThreshold = 0.70;

struct Options {
  std::string command;
  fs::path manifest_path;
  fs::path graphs_dir;
  fs::path model_path;
  fs::path spec_path;
  fs::path out_dir;
  fs::path config_path;
  std::uint64_t seed = 42;
  double trim = 0.1;
  std::string dtw_cost = "absolute_difference";
  std::size_t repeats = 20;
  unsigned threads = 0;
  bool holdout = false;
  model::HyperGrid grid;
};

unsigned env_threads() {
  const char* value = std::getenv("XGML_THREADS");
  if (value == nullptr || *value == '\0') return 0;
  long long parsed = 0;
  if (!parse_int(value, parsed) || parsed < 0)
    raise(Errc::bad_config, "XGML_THREADS must be a non-negative integer");
  return static_cast<unsigned>(parsed);
}

/// Values in the config file replace whatever the flags said.
void apply_config(Options& opts) {
  if (opts.config_path.empty()) return;
  std::ifstream in(opts.config_path, std::ios::binary);
  if (!in) raise(Errc::bad_config, "cannot open config " + opts.config_path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    raise(Errc::bad_config, opts.config_path.string() + ": " + e.what());
  }
  if (!doc.is_object()) raise(Errc::bad_config, "config root must be a JSON object");
  try {
    if (doc.contains("manifest")) opts.manifest_path = doc["manifest"].get<std::string>();
    if (doc.contains("graphs")) opts.graphs_dir = doc["graphs"].get<std::string>();
    if (doc.contains("model")) opts.model_path = doc["model"].get<std::string>();
    if (doc.contains("spec")) opts.spec_path = doc["spec"].get<std::string>();
    if (doc.contains("out")) opts.out_dir = doc["out"].get<std::string>();
    if (doc.contains("seed")) opts.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("trim")) opts.trim = doc["trim"].get<double>();
    if (doc.contains("dtw_cost")) opts.dtw_cost = doc["dtw_cost"].get<std::string>();
    if (doc.contains("repeats")) opts.repeats = doc["repeats"].get<std::size_t>();
    if (doc.contains("threads")) opts.threads = doc["threads"].get<unsigned>();
    if (doc.contains("holdout")) opts.holdout = doc["holdout"].get<bool>();
    if (doc.contains("c_values")) opts.grid.c_values = doc["c_values"].get<std::vector<double>>();
    if (doc.contains("gamma_factors"))
      opts.grid.gamma_factors = doc["gamma_factors"].get<std::vector<double>>();
    if (doc.contains("epsilon_values"))
      opts.grid.epsilon_values = doc["epsilon_values"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    raise(Errc::bad_config, opts.config_path.string() + ": " + e.what());
  }
}

class StageTimer {
public:
  explicit StageTimer(fs::path log_path) : log_path_(std::move(log_path)) {}

  template <typename Fn>
  auto time(const std::string& label, Fn&& fn) {
    auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record(label, start);
    } else {
      auto result = fn();
      record(label, start);
      return result;
    }
  }

private:
  void record(const std::string& label, std::chrono::steady_clock::time_point start) {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - start)
                  .count();
    std::ofstream log(log_path_, std::ios::app);
    log << label << ' ' << ms << " ms\n";
  }

  fs::path log_path_;
};

json config_block(const Options& opts) {
  json block;
  block["seed"] = opts.seed;
  block["trim"] = opts.trim;
  block["dtw_cost"] = opts.dtw_cost;
  block["repeats"] = opts.repeats;
  block["holdout"] = opts.holdout;
  return block;
}

void write_provenance(const Options& opts, json doc) {
  doc["command"] = opts.command;
  doc["config"] = config_block(opts);
  doc["tool_version"] = pipeline::kVersion;
  fs::create_directories(opts.out_dir);
  auto path = opts.out_dir / ("provenance_" + opts.command + ".json");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot create " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) raise(Errc::io_error, "write failed for " + path.string());
}

int cmd_synth(Options& opts) {
  auto spec = synth::read_spec(opts.spec_path);
  fs::create_directories(opts.out_dir);
  StageTimer timer(opts.out_dir / "run_log.txt");
  auto cohort = timer.time("synth.generate", [&] { return synth::generate_cohort(spec, opts.threads); });
  auto manifest_path =
      timer.time("synth.write", [&] { return synth::write_cohort(opts.out_dir, cohort); });

  json prov;
  prov["inputs"] = {{opts.spec_path.generic_string(), pipeline::hash_file(opts.spec_path)}};
  prov["outputs"] = {{"manifest", manifest_path.generic_string()},
                     {"subjects", cohort.subjects.size()},
                     {"regions", cohort.spec.k_regions}};
  prov["spec_seed"] = cohort.spec.seed;
  write_provenance(opts, std::move(prov));
  std::cout << "wrote cohort of " << cohort.subjects.size() << " subjects to "
            << opts.out_dir.generic_string() << '\n';
  return 0;
}

int cmd_build_graphs(Options& opts) {
  auto manifest = ingest::CohortManifest::read(opts.manifest_path);
  auto atlas = ingest::read_volume(manifest.atlas_path, ingest::VolumeKind::label);
  auto table = ingest::AtlasTable::read_tsv(manifest.atlas_table_path);
  dtw::DtwConfig cfg{dtw::parse_local_cost(opts.dtw_cost)};

  fs::create_directories(opts.out_dir);
  StageTimer timer(opts.out_dir / "run_log.txt");
  json subjects_prov = json::array();
  std::vector<std::string> failures;
  for (const auto& subject : manifest.subjects) {
    try {
      auto result = timer.time("build-graphs." + subject.id, [&] {
        return pipeline::build_subject_graph(subject.scan_path, atlas, table, subject.id, cfg,
                                             opts.threads);
      });
      graph::write_graph(opts.out_dir / (subject.id + ".xgmlg"), result.distances);
      json entry;
      entry["id"] = subject.id;
      entry["scan_hash"] = pipeline::hash_file(subject.scan_path);
      entry["bandwidths"] = json::array();
      for (const auto& bw : result.bandwidths)
        entry["bandwidths"].push_back({{"region_id", bw.region_id},
                                       {"h", bw.h},
                                       {"method", density::to_string(bw.method)},
                                       {"grid_length", bw.grid_length}});
      subjects_prov.push_back(std::move(entry));
    } catch (const std::exception& e) {
      failures.push_back(subject.id + ": " + e.what());
      std::cerr << "subject " << subject.id << " failed: " << e.what() << '\n';
    }
  }

  json prov;
  prov["inputs"] = {{opts.manifest_path.generic_string(), pipeline::hash_file(opts.manifest_path)},
                    {manifest.atlas_path.generic_string(), pipeline::hash_file(manifest.atlas_path)},
                    {manifest.atlas_table_path.generic_string(),
                     pipeline::hash_file(manifest.atlas_table_path)}};
  prov["subjects"] = std::move(subjects_prov);
  prov["failures"] = failures;
  write_provenance(opts, std::move(prov));
  std::cout << "built " << manifest.subjects.size() - failures.size() << " of "
            << manifest.subjects.size() << " graphs\n";
  return failures.empty() ? 0 : 1;
}

int cmd_group_stats(Options& opts) {
  auto manifest = ingest::CohortManifest::read(opts.manifest_path);
  fs::create_directories(opts.out_dir);
  StageTimer timer(opts.out_dir / "run_log.txt");
  auto table = ingest::AtlasTable::read_tsv(manifest.atlas_table_path);

  std::map<ingest::GroupLabel, std::vector<graph::DistanceGraph>> by_group;
  std::vector<std::string> failures;
  json inputs;
  inputs[opts.manifest_path.generic_string()] = pipeline::hash_file(opts.manifest_path);
  for (const auto& subject : manifest.subjects) {
    auto path = opts.graphs_dir / (subject.id + ".xgmlg");
    try {
      by_group[subject.group].push_back(graph::read_graph(path));
      inputs[path.generic_string()] = pipeline::hash_file(path);
    } catch (const std::exception& e) {
      failures.push_back(subject.id + ": " + e.what());
      std::cerr << "subject " << subject.id << " failed: " << e.what() << '\n';
    }
  }

  json summary = json::object();
  for (auto group : {ingest::GroupLabel::cn, ingest::GroupLabel::mci, ingest::GroupLabel::ad}) {
    auto it = by_group.find(group);
    const char* name = ingest::to_string(group);
    if (it == by_group.end() || it->second.empty()) {
      std::cerr << "warning: no subjects in group " << name << ", report omitted\n";
      continue;
    }
    auto gg = timer.time(std::string("group-stats.") + name, [&] {
      return graph::group_graph(it->second, group, opts.trim);
    });
    graph::write_group_report(opts.out_dir / ("group_" + std::string(name) + ".json"), gg);
    graph::write_group_edges_csv(opts.out_dir / ("group_" + std::string(name) + "_edges.csv"), gg,
                                 kDisplayThreshold, &table);
    summary[name] = {{"n_subjects", gg.n_subjects}, {"mean_distance", graph::mean_distance(gg)}};
  }

  json prov;
  prov["inputs"] = std::move(inputs);
  prov["groups"] = std::move(summary);
  prov["failures"] = failures;
  write_provenance(opts, std::move(prov));
  return failures.empty() ? 0 : 1;
}

int cmd_train_eval(Options& opts) {
  auto manifest = ingest::CohortManifest::read(opts.manifest_path);
  auto subjects = pipeline::load_cohort(manifest, opts.graphs_dir);
  auto features = pipeline::features_matrix(subjects);
  auto targets = pipeline::targets_matrix(subjects);
  auto ids = pipeline::subject_ids(subjects);

  fs::create_directories(opts.out_dir);
  StageTimer timer(opts.out_dir / "run_log.txt");

  bool single_point = opts.grid.c_values.size() == 1 && opts.grid.gamma_factors.size() == 1 &&
                      opts.grid.epsilon_values.size() == 1;
  std::vector<model::SvrHyperParams> params;
  json search_prov;
  if (single_point) {
    model::SvrHyperParams point{opts.grid.c_values[0],
                                opts.grid.gamma_factors[0] * model::gamma_base(features.cols),
                                opts.grid.epsilon_values[0]};
    params.assign(targets.cols, point);
    search_prov["skipped"] = "grid has a single point";
  } else {
    auto search = timer.time("train-eval.grid_search", [&] {
      return model::grid_search_5fold(features, targets, ids, opts.grid, opts.seed, opts.threads);
    });
    params = search.per_outcome;
    search_prov["cv_score"] = search.cv_score;
  }
  search_prov["chosen"] = json::array();
  for (const auto& p : params)
    search_prov["chosen"].push_back({{"c", p.c}, {"gamma", p.gamma}, {"epsilon", p.epsilon}});

  auto report = timer.time("train-eval.loocv", [&] {
    return model::loocv_evaluate(features, targets, ids, params, opts.threads);
  });
  auto trained = timer.time("train-eval.fit", [&] {
    return model::fit_multi(features, targets, params, opts.threads);
  });

  model::write_model_json(opts.out_dir / "model.json", trained, opts.seed);
  model::write_eval_report(opts.out_dir, report);
  for (const auto& note : report.stall_notes) std::cerr << "warning: " << note << '\n';

  json prov;
  json inputs;
  inputs[opts.manifest_path.generic_string()] = pipeline::hash_file(opts.manifest_path);
  inputs[manifest.scores_path.generic_string()] = pipeline::hash_file(manifest.scores_path);
  for (const auto& subject : manifest.subjects) {
    auto path = opts.graphs_dir / (subject.id + ".xgmlg");
    inputs[path.generic_string()] = pipeline::hash_file(path);
  }
  prov["inputs"] = std::move(inputs);
  prov["search"] = std::move(search_prov);
  prov["mean_r"] = report.mean_r;
  write_provenance(opts, std::move(prov));
  std::cout << "mean LOOCV r over outcomes: " << format_double(report.mean_r) << '\n';
  return 0;
}

int cmd_importance(Options& opts) {
  auto manifest = ingest::CohortManifest::read(opts.manifest_path);
  auto subjects = pipeline::load_cohort(manifest, opts.graphs_dir);
  auto features = pipeline::features_matrix(subjects);
  auto targets = pipeline::targets_matrix(subjects);
  auto ids = pipeline::subject_ids(subjects);
  auto table = ingest::AtlasTable::read_tsv(manifest.atlas_table_path);
  auto trained = model::read_model_json(opts.model_path);

  fs::create_directories(opts.out_dir);
  StageTimer timer(opts.out_dir / "run_log.txt");
  importance::ImportanceOptions imp_opts;
  imp_opts.repeats = opts.repeats;
  imp_opts.seed = opts.seed;
  imp_opts.threads = opts.threads;

  std::vector<importance::EdgeImportance> imps;
  if (opts.holdout) {
    std::vector<model::SvrHyperParams> params;
    for (const auto& svr : trained.per_outcome) params.push_back(svr.params);
    imps = timer.time("importance.holdout", [&] {
      return importance::holdout_importance(features, targets, ids, params, imp_opts);
    });
  } else {
    imps = timer.time("importance.permute", [&] {
      return importance::permutation_importance(trained, features, targets, imp_opts);
    });
  }

  auto report = importance::build_report(imps, subjects, table, trained.outcome_names);
  importance::write_importance_report(opts.out_dir, report, subjects[0].distances.region_ids,
                                      table);

  json prov;
  json inputs;
  inputs[opts.manifest_path.generic_string()] = pipeline::hash_file(opts.manifest_path);
  inputs[opts.model_path.generic_string()] = pipeline::hash_file(opts.model_path);
  for (const auto& subject : manifest.subjects) {
    auto path = opts.graphs_dir / (subject.id + ".xgmlg");
    inputs[path.generic_string()] = pipeline::hash_file(path);
  }
  prov["inputs"] = std::move(inputs);
  prov["mode"] = opts.holdout ? "holdout" : "in_sample";
  write_provenance(opts, std::move(prov));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metabolic distance graph pipeline"};
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", opts.seed, "Pipeline seed");
    sub->add_option("--threads", opts.threads, "Worker thread cap, 0 = all cores");
    sub->add_option("--config", opts.config_path, "JSON config file; its values override flags");
  };

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic cohort");
  synth_cmd->add_option("--spec", opts.spec_path, "Cohort spec JSON")->required();
  synth_cmd->add_option("--out", opts.out_dir, "Output directory")->required();
  add_common(synth_cmd);

  auto* build_cmd = app.add_subcommand("build-graphs", "Build per-subject distance graphs");
  build_cmd->add_option("--manifest", opts.manifest_path, "Cohort manifest JSON")->required();
  build_cmd->add_option("--out", opts.out_dir, "Graph output directory")->required();
  build_cmd->add_option("--dtw-cost", opts.dtw_cost,
                        "Local cost: absolute_difference or squared_difference");
  add_common(build_cmd);

  auto* group_cmd = app.add_subcommand("group-stats", "Aggregate graphs per diagnostic group");
  group_cmd->add_option("--manifest", opts.manifest_path, "Cohort manifest JSON")->required();
  group_cmd->add_option("--graphs", opts.graphs_dir, "Directory of .xgmlg files")->required();
  group_cmd->add_option("--out", opts.out_dir, "Report output directory")->required();
  group_cmd->add_option("--trim", opts.trim, "Per-edge trim fraction");
  add_common(group_cmd);

  auto* train_cmd = app.add_subcommand("train-eval", "Grid search, LOOCV report, final model");
  train_cmd->add_option("--manifest", opts.manifest_path, "Cohort manifest JSON")->required();
  train_cmd->add_option("--graphs", opts.graphs_dir, "Directory of .xgmlg files")->required();
  train_cmd->add_option("--out", opts.out_dir, "Model/report output directory")->required();
  add_common(train_cmd);

  auto* imp_cmd = app.add_subcommand("importance", "Permutation importance analysis");
  imp_cmd->add_option("--manifest", opts.manifest_path, "Cohort manifest JSON")->required();
  imp_cmd->add_option("--graphs", opts.graphs_dir, "Directory of .xgmlg files")->required();
  imp_cmd->add_option("--model", opts.model_path, "Trained model JSON")->required();
  imp_cmd->add_option("--out", opts.out_dir, "Report output directory")->required();
  imp_cmd->add_option("--repeats", opts.repeats, "Shuffles per edge");
  imp_cmd->add_flag("--holdout", opts.holdout, "Score drops on leave-one-out folds");
  add_common(imp_cmd);

  try {
    opts.threads = env_threads();
    app.parse(argc, argv);
    apply_config(opts);
    opts.command = app.get_subcommands().front()->get_name();
    if (opts.command == "synth") return cmd_synth(opts);
    if (opts.command == "build-graphs") return cmd_build_graphs(opts);
    if (opts.command == "group-stats") return cmd_group_stats(opts);
    if (opts.command == "train-eval") return cmd_train_eval(opts);
    return cmd_importance(opts);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
