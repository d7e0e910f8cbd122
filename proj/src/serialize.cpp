#include "cotprobe/serialize.hpp"

#include "cotprobe/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace cotprobe {

namespace {

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

Eigen::MatrixXd matrix_from(const Json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(Eigen::Index(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = j[i].get<std::vector<double>>();
    if (Eigen::Index(row.size()) != cols) throw DataError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(Eigen::Index(i), c) = row[std::size_t(c)];
  }
  return m;
}

std::string num(double x) { return Json(x).dump(); }

std::string opt_num(const std::optional<double>& x) { return x ? num(*x) : std::string(); }

Json opt_json(const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); }

std::optional<double> opt_from(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

Json to_json(const PcaModel<double>& pca) {
  Json j;
  j["mean"] = vector_json(pca.mean);
  j["components"] = matrix_json(pca.components);
  j["explained_variance"] = vector_json(pca.explained_variance);
  return j;
}

PcaModel<double> pca_from_json(const Json& j) {
  PcaModel<double> m;
  m.mean = vector_from(j.at("mean"));
  m.components = matrix_from(j.at("components"), m.mean.size());
  m.explained_variance = vector_from(j.at("explained_variance"));
  if (m.explained_variance.size() != m.components.rows()) throw DataError("pca: explained_variance length != k");
  return m;
}

Json to_json(const ProbeModel& p) {
  Json j;
  j["format"] = "cotprobe.probe";
  j["split"] = {{"train_fraction", p.split.train_fraction}, {"seed", p.split.seed}};
  j["lambda"] = p.lambda;
  j["tol"] = p.tol;
  j["feature_means"] = vector_json(p.feature_means);
  j["feature_scales"] = vector_json(p.feature_scales);
  j["weights"] = vector_json(p.weights);
  j["intercept"] = p.intercept;
  j["pca"] = p.pca ? to_json(*p.pca) : Json(nullptr);
  j["provenance"] = {{"pack_path", p.provenance.pack_path},
                     {"t", p.provenance.t},
                     {"cohort", p.provenance.cohort},
                     {"train_ids", p.provenance.train_ids}};
  return j;
}

ProbeModel probe_from_json(const Json& j) {
  ProbeModel p;
  p.split.train_fraction = j.at("split").at("train_fraction").get<double>();
  p.split.seed = j.at("split").at("seed").get<std::uint64_t>();
  p.lambda = j.at("lambda").get<double>();
  p.tol = j.at("tol").get<double>();
  p.feature_means = vector_from(j.at("feature_means"));
  p.feature_scales = vector_from(j.at("feature_scales"));
  p.weights = vector_from(j.at("weights"));
  p.intercept = j.at("intercept").get<double>();
  if (!j.at("pca").is_null()) p.pca = pca_from_json(j.at("pca"));
  const auto& prov = j.at("provenance");
  p.provenance.pack_path = prov.at("pack_path").get<std::string>();
  p.provenance.t = prov.at("t").get<int>();
  p.provenance.cohort = prov.at("cohort").get<std::string>();
  p.provenance.train_ids = prov.at("train_ids").get<std::vector<std::string>>();

  const auto k = p.weights.size();
  if (p.feature_means.size() != k || p.feature_scales.size() != k) throw DataError("probe: feature stats length != k");
  if (p.pca && p.pca->k() != k) throw DataError("probe: pca k does not match weight count");
  if ((p.feature_scales.array() <= 0.0).any()) throw DataError("probe: feature_scales must be positive");
  return p;
}

Json to_json(const CohortFilter& c) {
  Json j;
  j["difficulty"] = to_string(c.difficulty);
  j["min_reasoning_length"] = c.min_reasoning_length ? Json(*c.min_reasoning_length) : Json(nullptr);
  j["max_reasoning_length"] = c.max_reasoning_length ? Json(*c.max_reasoning_length) : Json(nullptr);
  return j;
}

CohortFilter cohort_from_json(const Json& j) {
  CohortFilter c;
  if (j.is_string()) return parse_cohort_label(j.get<std::string>());
  reject_unknown_keys(j, {"difficulty", "min_reasoning_length", "max_reasoning_length"}, "cohort");
  c.difficulty = parse_difficulty_filter(get_or<std::string>(j, "difficulty", "all"));
  if (j.contains("min_reasoning_length") && !j["min_reasoning_length"].is_null()) {
    c.min_reasoning_length = get_or<int>(j, "min_reasoning_length", 0);
  }
  if (j.contains("max_reasoning_length") && !j["max_reasoning_length"].is_null()) {
    c.max_reasoning_length = get_or<int>(j, "max_reasoning_length", 0);
  }
  validate_cohort(c);
  return c;
}

Json to_json(const AnalysisConfig& c) {
  Json j;
  j["lambda"] = c.lambda;
  j["k_max"] = c.k_max;
  j["split"] = {{"train_fraction", c.split.train_fraction}, {"seed", c.split.seed}};
  j["pca_fit"] = to_string(c.pca_fit);
  j["tol"] = c.tol;
  j["max_iter"] = c.max_iter;
  j["threshold"] = c.threshold;
  return j;
}

AnalysisConfig analysis_config_from_json(const Json& j, AnalysisConfig c) {
  c.lambda = get_or(j, "lambda", c.lambda);
  c.k_max = get_or<Eigen::Index>(j, "k_max", c.k_max);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    reject_unknown_keys(s, {"train_fraction", "seed"}, "split");
    c.split.train_fraction = get_or(s, "train_fraction", c.split.train_fraction);
    c.split.seed = get_or(s, "seed", c.split.seed);
  }
  if (j.contains("pca_fit")) c.pca_fit = parse_pca_fit_mode(j.at("pca_fit").get<std::string>());
  c.tol = get_or(j, "tol", c.tol);
  c.max_iter = get_or(j, "max_iter", c.max_iter);
  c.threshold = get_or(j, "threshold", c.threshold);
  c.threads = get_or(j, "threads", c.threads);
  if (!(c.lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (c.k_max < 1) throw ConfigError("k_max must be >= 1");
  if (!(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0)) {
    throw ConfigError("split.train_fraction must lie in (0,1)");
  }
  if (!(c.tol > 0.0) || c.max_iter < 1) throw ConfigError("tol must be positive and max_iter >= 1");
  return c;
}

Json to_json(const EvalReport& r) {
  Json j;
  j["n"] = r.n;
  j["class_prior"] = r.class_prior;
  j["accuracy"] = r.accuracy;
  j["roc_auc"] = opt_json(r.roc_auc);
  Json pts = Json::array();
  for (const auto& p : r.roc_points) pts.push_back({p.fpr, p.tpr});
  j["roc_points"] = std::move(pts);
  return j;
}

Json to_json(const CheckpointResult& r) {
  Json j;
  j["t"] = r.t;
  j["cohort"] = r.cohort.label();
  j["cohort_filter"] = to_json(r.cohort);
  j["feature_set"] = to_string(r.feature_set);
  j["status"] = r.ok() ? "ok" : "skipped";
  if (!r.ok()) j["skip_reason"] = r.skip_reason;
  j["n_survivors"] = r.n_survivors;
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["train_prior"] = r.train_prior;
  j["report"] = r.report ? to_json(*r.report) : Json(nullptr);
  return j;
}

Json to_json(const SweepResult& s) {
  Json j;
  j["format"] = "cotprobe.sweep";
  j["pack"] = s.pack_path;
  j["config"] = to_json(s.config);
  Json rows = Json::array();
  for (const auto& r : s.rows) rows.push_back(to_json(r));
  j["rows"] = std::move(rows);
  return j;
}

SweepResult sweep_from_json(const Json& j) {
  SweepResult s;
  try {
    s.pack_path = j.at("pack").get<std::string>();
    s.config = analysis_config_from_json(j.at("config"));
    for (const auto& row : j.at("rows")) {
      CheckpointResult r;
      r.t = row.at("t").get<int>();
      r.cohort = cohort_from_json(row.at("cohort_filter"));
      r.feature_set = parse_feature_set(row.at("feature_set").get<std::string>());
      r.n_survivors = row.at("n_survivors").get<std::size_t>();
      r.n_train = row.at("n_train").get<std::size_t>();
      r.n_test = row.at("n_test").get<std::size_t>();
      r.train_prior = row.at("train_prior").get<double>();
      if (row.contains("skip_reason")) r.skip_reason = row.at("skip_reason").get<std::string>();
      if (!row.at("report").is_null()) {
        const auto& rep = row.at("report");
        EvalReport e;
        e.n = rep.at("n").get<std::size_t>();
        e.class_prior = rep.at("class_prior").get<double>();
        e.accuracy = rep.at("accuracy").get<double>();
        e.roc_auc = opt_from(rep, "roc_auc");
        for (const auto& p : rep.at("roc_points")) e.roc_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        r.report = std::move(e);
      }
      s.rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sweep document: ") + e.what());
  }
  return s;
}

std::string sweep_to_csv(const SweepResult& s) {
  std::ostringstream out;
  out << "t,cohort,feature_set,n_train,n_test,train_prior,accuracy,roc_auc\n";
  for (const auto& r : s.rows) {
    out << r.t << ',' << r.cohort.label() << ',' << to_string(r.feature_set) << ',' << r.n_train << ',' << r.n_test
        << ',' << (r.ok() ? num(r.train_prior) : "") << ',' << (r.ok() ? num(r.report->accuracy) : "") << ','
        << (r.ok() ? opt_num(r.report->roc_auc) : "") << '\n';
  }
  return out.str();
}

Json to_json(const std::vector<MarginRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"t", r.t},
                   {"cohort", r.cohort},
                   {"auc_hidden", opt_json(r.auc_hidden)},
                   {"auc_baseline", opt_json(r.auc_baseline)},
                   {"margin", opt_json(r.margin)}});
  }
  return out;
}

std::string margins_to_csv(const std::vector<MarginRow>& rows) {
  std::ostringstream out;
  out << "t,cohort,auc_hidden,auc_baseline,margin\n";
  for (const auto& r : rows) {
    out << r.t << ',' << r.cohort << ',' << opt_num(r.auc_hidden) << ',' << opt_num(r.auc_baseline) << ','
        << opt_num(r.margin) << '\n';
  }
  return out.str();
}

namespace {

Json effect_json(const std::optional<BucketEffect>& e) {
  if (!e) return nullptr;
  return {{"prior", e->prior}, {"delta", e->delta}, {"capped_fraction", e->capped_fraction}};
}

std::optional<BucketEffect> effect_from(const Json& j, const char* key, BucketEffect fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const auto& e = j.at(key);
  reject_unknown_keys(e, {"prior", "delta", "capped_fraction"}, key);
  return BucketEffect{get_or(e, "prior", fallback.prior), get_or(e, "delta", fallback.delta),
                      get_or(e, "capped_fraction", fallback.capped_fraction)};
}

}  // namespace

Json to_json(const SynthConfig& c) {
  Json j;
  j["n_examples"] = c.n_examples;
  j["hidden_dim"] = c.hidden_dim;
  j["signal_strength"] = c.signal_strength;
  j["prior_correct"] = c.prior_correct;
  j["length_coupling"] = c.length_coupling == LengthCoupling::none ? "none" : "difficulty_coupled";
  j["easy_effect"] = effect_json(c.easy_effect);
  j["hard_effect"] = effect_json(c.hard_effect);
  j["easy_fraction"] = c.easy_fraction;
  j["difficulty_separation"] = c.difficulty_separation;
  j["capped_fraction"] = c.capped_fraction;
  j["checkpoint_correlation"] = c.checkpoint_correlation;
  j["entropy_label_effect"] = c.entropy_label_effect;
  j["prefix_grid"] = c.prefix_grid;
  j["pooling_window"] = c.pooling_window;
  j["seed"] = c.seed;
  if (c.direction_seed) j["direction_seed"] = *c.direction_seed;
  j["model_name"] = c.model_name;
  j["id_prefix"] = c.id_prefix;
  return j;
}

SynthConfig synth_config_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"n_examples", "hidden_dim", "signal_strength", "bayes_auc", "prior_correct", "length_coupling",
                       "easy_effect", "hard_effect", "easy_fraction", "difficulty_separation", "capped_fraction",
                       "checkpoint_correlation", "entropy_label_effect", "prefix_grid", "pooling_window", "seed",
                       "direction_seed", "model_name", "id_prefix"},
                      "synth config");
  SynthConfig c;
  c.n_examples = get_or(j, "n_examples", c.n_examples);
  c.hidden_dim = get_or(j, "hidden_dim", c.hidden_dim);
  if (j.contains("signal_strength") && j.contains("bayes_auc")) {
    throw ConfigError("synth config: give signal_strength or bayes_auc, not both");
  }
  c.signal_strength = get_or(j, "signal_strength", c.signal_strength);
  if (j.contains("bayes_auc")) c.signal_strength = delta_for_auc(get_or(j, "bayes_auc", 0.5));
  c.prior_correct = get_or(j, "prior_correct", c.prior_correct);
  const auto coupling = get_or<std::string>(j, "length_coupling", "none");
  if (coupling == "none") {
    c.length_coupling = LengthCoupling::none;
  } else if (coupling == "difficulty_coupled") {
    c.length_coupling = LengthCoupling::difficulty_coupled;
  } else {
    throw ConfigError("unknown length_coupling '" + coupling + "'");
  }
  c.easy_effect = effect_from(j, "easy_effect", default_easy_effect());
  c.hard_effect = effect_from(j, "hard_effect", default_hard_effect());
  c.easy_fraction = get_or(j, "easy_fraction", c.easy_fraction);
  c.difficulty_separation = get_or(j, "difficulty_separation", c.difficulty_separation);
  c.capped_fraction = get_or(j, "capped_fraction", c.capped_fraction);
  c.checkpoint_correlation = get_or(j, "checkpoint_correlation", c.checkpoint_correlation);
  c.entropy_label_effect = get_or(j, "entropy_label_effect", c.entropy_label_effect);
  c.prefix_grid = get_or(j, "prefix_grid", c.prefix_grid);
  c.pooling_window = get_or(j, "pooling_window", c.pooling_window);
  c.seed = get_or(j, "seed", c.seed);
  if (j.contains("direction_seed")) c.direction_seed = get_or<std::uint64_t>(j, "direction_seed", 0);
  c.model_name = get_or(j, "model_name", c.model_name);
  c.id_prefix = get_or(j, "id_prefix", c.id_prefix);
  validate_synth_config(c);
  return c;
}

Json to_json(const ExitReport& r) {
  Json j;
  j["direction"] = to_string(r.policy.direction);
  if (r.policy.thresholds.empty()) {
    j["threshold"] = opt_json(r.policy.global_threshold);
  } else {
    Json th = Json::object();
    for (const auto& [t, v] : r.policy.thresholds) th[std::to_string(t)] = v;
    j["thresholds"] = std::move(th);
  }
  j["n_examples"] = r.n_examples;
  j["mean_tokens_full"] = r.mean_tokens_full;
  j["mean_tokens_policy"] = r.mean_tokens_policy;
  j["savings_fraction"] = r.savings_fraction;
  j["n_exited"] = r.n_exited;
  j["decision_quality"] = opt_json(r.decision_quality);
  Json hist = Json::object();
  for (const auto& [t, n] : r.flagged_at_histogram) hist[std::to_string(t)] = n;
  j["flagged_at_histogram"] = std::move(hist);
  j["token_accounting"] = "checkpoint t charged on exit, reasoning_length otherwise; probe cost excluded";
  return j;
}

std::string exit_reports_to_csv(const std::vector<ExitReport>& reports) {
  std::ostringstream out;
  out << "direction,threshold,n_examples,n_exited,mean_tokens_full,mean_tokens_policy,savings_fraction,"
         "decision_quality\n";
  for (const auto& r : reports) {
    out << to_string(r.policy.direction) << ',' << opt_num(r.policy.global_threshold) << ',' << r.n_examples << ','
        << r.n_exited << ',' << num(r.mean_tokens_full) << ',' << num(r.mean_tokens_policy) << ','
        << num(r.savings_fraction) << ',' << opt_num(r.decision_quality) << '\n';
  }
  return out.str();
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace cotprobe
