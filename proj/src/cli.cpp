#include "cotprobe/cli.hpp"

#include "cotprobe/analysis.hpp"
#include "cotprobe/earlyexit.hpp"
#include "cotprobe/errors.hpp"
#include "cotprobe/report.hpp"
#include "cotprobe/serialize.hpp"
#include "cotprobe/synth.hpp"
#include "cotprobe/trace_store.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>

namespace cotprobe::cli {

namespace fs = std::filesystem;

namespace {

int default_threads() {
  if (const char* env = std::getenv("COTPROBE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("COTPROBE_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

Json load_config(const std::string& path) {
  try {
    return read_json_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

// Relative paths inside a config file are resolved against the config's directory.
std::string resolve(const std::string& config_path, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return p;
  return (fs::path(config_path).parent_path() / path).lexically_normal().string();
}

std::string required_string(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) throw ConfigError(std::string("config needs string '") + key + "'");
  return j.at(key).get<std::string>();
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<long> k_max;
  std::optional<std::string> output_dir;
  std::optional<int> threads;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Split seed (overrides config)");
    app->add_option("--lambda", lambda, "L2 strength (overrides config)");
    app->add_option("--k-max", k_max, "PCA component cap (overrides config)");
    app->add_option("--output-dir", output_dir, "Output directory (overrides config)");
    app->add_option("--threads", threads, "Worker threads (default: COTPROBE_THREADS or 1)");
  }

  AnalysisConfig apply(const Json& j) const {
    AnalysisConfig c;
    c.threads = default_threads();
    c = analysis_config_from_json(j, c);
    if (seed) c.split.seed = *seed;
    if (lambda) c.lambda = *lambda;
    if (k_max) c.k_max = *k_max;
    if (threads) c.threads = *threads;
    if (!(c.lambda > 0.0) || c.k_max < 1 || c.threads < 1) {
      throw ConfigError("lambda must be positive, k_max and threads >= 1");
    }
    return c;
  }
};

const std::initializer_list<const char*> kSweepKeys = {
    "pack", "grid", "cohorts", "feature_sets", "lambda", "k_max", "split", "pca_fit",
    "tol", "max_iter", "threshold", "threads", "output_dir"};

void check_keys(const Json& j, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
}

std::vector<int> grid_from(const Json& j, const TracePack& pack) {
  if (!j.contains("grid")) return pack.prefix_grid;
  try {
    return j.at("grid").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config 'grid': ") + e.what());
  }
}

int cmd_validate(const std::string& pack_path, std::ostream& out) {
  std::vector<std::string> violations;
  try {
    load_pack(pack_path);
  } catch (const ValidationError& e) {
    violations = e.violations();
  }
  out << violations.size() << " violations\n";
  for (const auto& v : violations) out << "  " << v << '\n';
  return violations.empty() ? kOk : kInvalidData;
}

int cmd_synth(const std::string& config_path, const std::string& out_path, std::optional<std::uint64_t> seed,
              std::ostream& out) {
  SynthConfig c;
  try {
    c = synth_config_from_json(load_config(config_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  if (seed) c.seed = *seed;
  const TracePack pack = generate(c);
  write_pack(pack, out_path);
  Json resolved = to_json(c);
  resolved["bayes_auc"] = bayes_auc(c);
  write_text_file((fs::path(out_path) / "synth_config.json").string(), resolved.dump(2) + "\n");
  out << "wrote " << pack.examples.size() << " examples to " << out_path << " (bayes_auc " << bayes_auc(c) << ")\n";
  return kOk;
}

int cmd_sweep(const std::string& config_path, const Overrides& ov, bool baselines, std::ostream& out) {
  const Json j = load_config(config_path);
  check_keys(j, kSweepKeys);
  const AnalysisConfig config = ov.apply(j);
  const std::string pack_path = resolve(config_path, required_string(j, "pack"));
  std::string out_dir = ov.output_dir ? *ov.output_dir
                                      : resolve(config_path, j.contains("output_dir")
                                                                 ? j.at("output_dir").get<std::string>()
                                                                 : std::string("."));

  std::vector<CohortFilter> cohorts;
  if (j.contains("cohorts")) {
    for (const auto& c : j.at("cohorts")) cohorts.push_back(cohort_from_json(c));
  } else {
    cohorts.push_back(CohortFilter{});
  }
  std::vector<FeatureSet> features;
  if (j.contains("feature_sets")) {
    for (const auto& f : j.at("feature_sets")) features.push_back(parse_feature_set(f.get<std::string>()));
  } else if (baselines) {
    features = {FeatureSet::entropy, FeatureSet::length, FeatureSet::entropy_length};
  } else {
    features = {FeatureSet::hidden_state};
  }
  if (baselines) {
    for (auto f : features) {
      if (f == FeatureSet::hidden_state) throw ConfigError("baselines: hidden_state is not a baseline feature set");
    }
  }

  const TracePack pack = load_pack(pack_path);
  SweepResult result = sweep(pack, grid_from(j, pack), cohorts, features, config);
  result.pack_path = pack_path;

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  const std::string stem = baselines ? "baselines" : "sweep";
  const auto json_path = (fs::path(out_dir) / (stem + ".json")).string();
  write_text_file(json_path, to_json(result).dump(2) + "\n");
  write_text_file((fs::path(out_dir) / (stem + ".csv")).string(), sweep_to_csv(result));
  out << "wrote " << result.rows.size() << " rows to " << json_path << '\n';
  return kOk;
}

int cmd_margins(const std::string& hidden_path, const std::string& baseline_path, const std::string& out_path,
                std::ostream& out) {
  const auto hidden = sweep_from_json(read_json_file(hidden_path));
  const auto baseline = sweep_from_json(read_json_file(baseline_path));
  const auto rows = margin_table(hidden, baseline);
  const auto csv = margins_to_csv(rows);
  if (out_path.empty()) {
    out << csv;
  } else {
    write_text_file(out_path, csv);
    Json doc;
    doc["format"] = "cotprobe.margins";
    doc["hidden"] = hidden_path;
    doc["baseline"] = baseline_path;
    doc["hidden_config"] = to_json(hidden.config);
    doc["baseline_config"] = to_json(baseline.config);
    doc["rows"] = to_json(rows);
    write_text_file(fs::path(out_path).replace_extension(".json").string(), doc.dump(2) + "\n");
    out << "wrote " << rows.size() << " margin rows to " << out_path << '\n';
  }
  return kOk;
}

int cmd_simulate(const std::string& config_path, const Overrides& ov, std::ostream& out) {
  const Json j = load_config(config_path);
  check_keys(j, {"train_pack", "eval_pack", "grid", "cohort", "lambda", "k_max", "split", "pca_fit", "tol",
                 "max_iter", "threshold", "threads", "direction", "thresholds", "output_dir", "save_probes"});
  const AnalysisConfig config = ov.apply(j);
  const std::string train_path = resolve(config_path, required_string(j, "train_pack"));
  const std::string eval_path = resolve(config_path, required_string(j, "eval_pack"));
  const std::string out_dir =
      ov.output_dir ? *ov.output_dir
                    : resolve(config_path, j.contains("output_dir") ? j.at("output_dir").get<std::string>() : ".");
  const auto direction =
      parse_exit_direction(j.contains("direction") ? j.at("direction").get<std::string>() : "halt_when_confident_correct");
  std::vector<double> thresholds = {0.5, 0.6, 0.7, 0.8, 0.9};
  if (j.contains("thresholds")) thresholds = j.at("thresholds").get<std::vector<double>>();
  const CohortFilter cohort = j.contains("cohort") ? cohort_from_json(j.at("cohort")) : CohortFilter{};

  const TracePack train = load_pack(train_path);
  const TracePack eval = load_pack(eval_path);
  if (train.hidden_dim != eval.hidden_dim) throw DataError("train and eval packs differ in hidden_dim");

  std::map<int, ProbeModel> probes;
  for (int t : grid_from(j, train)) {
    if (!eval.has_checkpoint(t)) throw ConfigError("t=" + std::to_string(t) + " missing from eval pack grid");
    probes.emplace(t, fit_probe(train, t, cohort, config, FeatureSet::hidden_state, train_path));
  }
  const auto reports = threshold_sweep(eval, probes, thresholds, direction);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  if (j.value("save_probes", false)) {
    const fs::path dir = fs::path(out_dir) / "probes";
    fs::create_directories(dir, ec);
    for (const auto& [t, p] : probes) save_probe(p, dir / ("probe_t" + std::to_string(t) + ".json"));
  }
  Json doc;
  doc["format"] = "cotprobe.exit_reports";
  doc["train_pack"] = train_path;
  doc["eval_pack"] = eval_path;
  doc["cohort"] = to_json(cohort);
  doc["config"] = to_json(config);
  doc["reports"] = Json::array();
  for (const auto& r : reports) doc["reports"].push_back(to_json(r));
  write_text_file((fs::path(out_dir) / "exit_reports.json").string(), doc.dump(2) + "\n");
  write_text_file((fs::path(out_dir) / "exit_reports.csv").string(), exit_reports_to_csv(reports));
  out << "simulated " << reports.size() << " thresholds over " << eval.examples.size() << " examples\n";
  return kOk;
}

int cmd_report(const std::string& sweep_path, const std::string& out_dir, std::ostream& out) {
  const auto s = sweep_from_json(read_json_file(sweep_path));
  const auto files = render_report(s, out_dir);
  out << summary_table(s);
  out << "wrote " << files.size() << " files to " << out_dir << '\n';
  return kOk;
}

void error_line(std::ostream& err, int code, const char* kind, const std::string& message) {
  Json e;
  e["error"] = {{"code", code}, {"kind", kind}, {"message", message}};
  err << e.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Chain-of-thought correctness probing toolkit"};
  app.require_subcommand(1);

  std::string pack_path, config_path, out_path, hidden_path, baseline_path, sweep_path;
  std::optional<std::uint64_t> synth_seed;
  Overrides sweep_ov, base_ov, sim_ov;
  std::function<int()> action;

  auto* validate = app.add_subcommand("validate", "Check a trace pack against every invariant");
  validate->add_option("pack", pack_path, "Pack directory")->required();
  validate->callback([&] { action = [&] { return cmd_validate(pack_path, out); }; });

  auto* synth = app.add_subcommand("synth", "Generate a planted-signal trace pack");
  synth->add_option("config", config_path, "Synth config (JSON)")->required();
  synth->add_option("-o,--output", out_path, "Output pack directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed (overrides config)");
  synth->callback([&] { action = [&] { return cmd_synth(config_path, out_path, synth_seed, out); }; });

  auto* sw = app.add_subcommand("sweep", "Hidden-state probe sweep over prefixes and cohorts");
  sw->add_option("config", config_path, "Sweep config (JSON)")->required();
  sweep_ov.add_to(sw);
  sw->callback([&] { action = [&] { return cmd_sweep(config_path, sweep_ov, false, out); }; });

  auto* base = app.add_subcommand("baselines", "Entropy/length baseline sweep");
  base->add_option("config", config_path, "Sweep config (JSON)")->required();
  base_ov.add_to(base);
  base->callback([&] { action = [&] { return cmd_sweep(config_path, base_ov, true, out); }; });

  auto* margins = app.add_subcommand("margins", "Per-t AUC margin of hidden-state probe over baselines");
  margins->add_option("hidden", hidden_path, "Hidden-state sweep JSON")->required();
  margins->add_option("baseline", baseline_path, "Baseline sweep JSON")->required();
  margins->add_option("-o,--output", out_path, "CSV output (a .json twin is written alongside)");
  margins->callback([&] { action = [&] { return cmd_margins(hidden_path, baseline_path, out_path, out); }; });

  auto* sim = app.add_subcommand("simulate", "Offline probe-gated early-exit replay");
  sim->add_option("config", config_path, "Simulation config (JSON)")->required();
  sim_ov.add_to(sim);
  sim->callback([&] { action = [&] { return cmd_simulate(config_path, sim_ov, out); }; });

  auto* rep = app.add_subcommand("report", "Render curves, survival charts and a summary table");
  rep->add_option("sweep", sweep_path, "Sweep JSON")->required();
  rep->add_option("-o,--output", out_path, "Output directory")->required();
  rep->callback([&] { action = [&] { return cmd_report(sweep_path, out_path, out); }; });

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    error_line(err, kUsage, "usage", e.what());
    return kUsage;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    error_line(err, kUsage, "config", e.what());
    return kUsage;
  } catch (const ValidationError& e) {
    error_line(err, kInvalidData, "validation", e.what());
    return kInvalidData;
  } catch (const DataError& e) {
    error_line(err, kInvalidData, "data", e.what());
    return kInvalidData;
  } catch (const nlohmann::json::exception& e) {
    error_line(err, kUsage, "config", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    error_line(err, kRuntime, "runtime", e.what());
    return kRuntime;
  }
}

}  // namespace cotprobe::cli
