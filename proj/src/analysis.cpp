#include "cotprobe/analysis.hpp"

#include "cotprobe/errors.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

namespace cotprobe {

std::string_view to_string(DifficultyFilter d) {
  switch (d) {
    case DifficultyFilter::all: return "all";
    case DifficultyFilter::easy: return "easy";
    case DifficultyFilter::hard: return "hard";
  }
  return "all";
}

std::string_view to_string(FeatureSet f) {
  switch (f) {
    case FeatureSet::hidden_state: return "hidden_state";
    case FeatureSet::entropy: return "entropy";
    case FeatureSet::length: return "length";
    case FeatureSet::entropy_length: return "entropy_length";
  }
  return "hidden_state";
}

std::string_view to_string(PcaFitMode m) { return m == PcaFitMode::train_only ? "train_only" : "all"; }

DifficultyFilter parse_difficulty_filter(std::string_view s) {
  if (s == "all") return DifficultyFilter::all;
  if (s == "easy") return DifficultyFilter::easy;
  if (s == "hard") return DifficultyFilter::hard;
  throw ConfigError("unknown difficulty filter '" + std::string(s) + "' (expected all|easy|hard)");
}

FeatureSet parse_feature_set(std::string_view s) {
  if (s == "hidden_state") return FeatureSet::hidden_state;
  if (s == "entropy") return FeatureSet::entropy;
  if (s == "length") return FeatureSet::length;
  if (s == "entropy_length") return FeatureSet::entropy_length;
  throw ConfigError("unknown feature set '" + std::string(s) + "'");
}

PcaFitMode parse_pca_fit_mode(std::string_view s) {
  if (s == "train_only") return PcaFitMode::train_only;
  if (s == "all") return PcaFitMode::all;
  throw ConfigError("unknown pca_fit mode '" + std::string(s) + "' (expected train_only|all)");
}

bool CohortFilter::admits(const ExampleTrace& ex) const {
  if (difficulty == DifficultyFilter::easy && ex.difficulty != Difficulty::easy) return false;
  if (difficulty == DifficultyFilter::hard && ex.difficulty != Difficulty::hard) return false;
  if (min_reasoning_length && ex.reasoning_length < *min_reasoning_length) return false;
  if (max_reasoning_length && ex.reasoning_length > *max_reasoning_length) return false;
  return true;
}

std::string CohortFilter::label() const {
  std::string s(to_string(difficulty));
  if (min_reasoning_length) s += ":len>=" + std::to_string(*min_reasoning_length);
  if (max_reasoning_length) s += ":len<=" + std::to_string(*max_reasoning_length);
  return s;
}

void validate_cohort(const CohortFilter& c) {
  if (c.min_reasoning_length && c.max_reasoning_length && *c.min_reasoning_length > *c.max_reasoning_length) {
    throw ConfigError("cohort " + c.label() + ": min_reasoning_length exceeds max_reasoning_length");
  }
}

CohortFilter parse_cohort_label(std::string_view label) {
  const auto bad = [&] { return ConfigError("malformed cohort label '" + std::string(label) + "'"); };
  CohortFilter c;
  const auto colon = label.find(':');
  c.difficulty = parse_difficulty_filter(label.substr(0, colon));
  std::string_view rest = colon == std::string_view::npos ? std::string_view{} : label.substr(colon + 1);
  while (!rest.empty()) {
    const auto next = rest.find(':');
    const std::string_view part = rest.substr(0, next);
    rest = next == std::string_view::npos ? std::string_view{} : rest.substr(next + 1);
    if (part.size() < 7 || part.substr(0, 3) != "len") throw bad();
    const std::string_view op = part.substr(3, 2);
    const std::string digits(part.substr(5));
    if (digits.empty() || digits.size() > 9 || digits.find_first_not_of("0123456789") != std::string::npos) throw bad();
    const int value = std::stoi(digits);
    if (op == ">=" && !c.min_reasoning_length) {
      c.min_reasoning_length = value;
    } else if (op == "<=" && !c.max_reasoning_length) {
      c.max_reasoning_length = value;
    } else {
      throw bad();
    }
  }
  validate_cohort(c);
  return c;
}

std::vector<std::size_t> cohort_members(const TracePack& pack, int t, const CohortFilter& cohort) {
  if (!pack.has_checkpoint(t)) throw ConfigError("checkpoint t=" + std::to_string(t) + " not in prefix_grid");
  validate_cohort(cohort);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pack.examples.size(); ++i) {
    const auto& ex = pack.examples[i];
    if (ex.reasoning_length >= t && cohort.admits(ex)) out.push_back(i);
  }
  return out;
}

Eigen::MatrixXd baseline_features(const TracePack& pack, int t, FeatureSet kind,
                                  const std::vector<std::size_t>& examples) {
  if (!pack.has_checkpoint(t)) throw ConfigError("checkpoint t=" + std::to_string(t) + " not in prefix_grid");
  if (kind == FeatureSet::hidden_state) throw ConfigError("hidden_state is not a baseline feature set");
  const Eigen::Index cols = kind == FeatureSet::entropy ? 2 : kind == FeatureSet::length ? 1 : 3;
  Eigen::MatrixXd F(static_cast<Eigen::Index>(examples.size()), cols);
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const auto& ex = pack.examples.at(examples[r]);
    const auto* c = ex.checkpoint(t);
    if (c == nullptr) throw DataError("example '" + ex.example_id + "' has no checkpoint t=" + std::to_string(t));
    const auto row = Eigen::Index(r);
    switch (kind) {
      case FeatureSet::entropy:
        F(row, 0) = c->mean_entropy;
        F(row, 1) = c->window_entropy;
        break;
      case FeatureSet::length:
        F(row, 0) = ex.reasoning_length;
        break;
      default:
        F(row, 0) = c->mean_entropy;
        F(row, 1) = c->window_entropy;
        F(row, 2) = ex.reasoning_length;
        break;
    }
  }
  return F;
}

Eigen::MatrixXd baseline_features(const TracePack& pack, int t, FeatureSet kind) {
  return baseline_features(pack, t, kind, cohort_members(pack, t, CohortFilter{}));
}

namespace {

Eigen::MatrixXd hidden_rows(const TracePack& pack, int t, const std::vector<std::size_t>& examples) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(examples.size()), pack.hidden_dim);
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const auto& ex = pack.examples[examples[r]];
    const auto* c = ex.checkpoint(t);
    if (c == nullptr) throw DataError("example '" + ex.example_id + "' has no checkpoint t=" + std::to_string(t));
    X.row(Eigen::Index(r)) = c->pooled_state.cast<double>().transpose();
  }
  return X;
}

Eigen::MatrixXd feature_rows(const TracePack& pack, int t, FeatureSet fs, const std::vector<std::size_t>& examples) {
  return fs == FeatureSet::hidden_state ? hidden_rows(pack, t, examples) : baseline_features(pack, t, fs, examples);
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(Eigen::Index(r)) = X.row(Eigen::Index(idx[r]));
  return out;
}

ProbeModel train_on(const Eigen::MatrixXd& X_train, const std::vector<bool>& y_train,
                    const std::optional<Eigen::MatrixXd>& pca_source, const AnalysisConfig& config) {
  TrainOptions opts{config.lambda, config.tol, config.max_iter};
  const auto cw = balanced_class_weights(y_train);
  if (!pca_source) {
    ProbeModel m = train_probe(X_train, y_train, cw, opts);
    m.split = config.split;
    return m;
  }
  auto pca = fit_pca(*pca_source, config.k_max);
  ProbeModel m = train_probe(project(pca, X_train), y_train, cw, opts);
  m.pca = std::move(pca);
  m.split = config.split;
  return m;
}

std::string class_counts(const std::vector<bool>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), true);
  return std::to_string(pos) + " correct, " + std::to_string(std::ptrdiff_t(labels.size()) - pos) + " incorrect";
}

}  // namespace

CheckpointResult evaluate_checkpoint(const TracePack& pack, int t, const CohortFilter& cohort,
                                     const AnalysisConfig& config, FeatureSet feature_set) {
  CheckpointResult r;
  r.t = t;
  r.cohort = cohort;
  r.feature_set = feature_set;

  const auto members = cohort_members(pack, t, cohort);
  r.n_survivors = members.size();
  std::vector<bool> labels;
  labels.reserve(members.size());
  for (auto i : members) labels.push_back(pack.examples[i].correct);

  const auto pos = std::count(labels.begin(), labels.end(), true);
  const auto neg = std::ptrdiff_t(labels.size()) - pos;
  if (pos < 2 || neg < 2) {
    r.skip_reason = "cohort too small: " + class_counts(labels);
    return r;
  }

  const auto split = stratified_split(labels, config.split);
  r.n_train = split.train.size();
  r.n_test = split.test.size();
  const auto y_train = gather(labels, split.train);
  const auto y_test = gather(labels, split.test);
  r.train_prior = class_prior(y_train);

  const Eigen::MatrixXd X = feature_rows(pack, t, feature_set, members);
  const Eigen::MatrixXd X_train = gather_rows(X, split.train);
  const Eigen::MatrixXd X_test = gather_rows(X, split.test);

  std::optional<Eigen::MatrixXd> pca_source;
  if (feature_set == FeatureSet::hidden_state) {
    pca_source = config.pca_fit == PcaFitMode::train_only ? X_train : X;
  }
  try {
    const ProbeModel probe = train_on(X_train, y_train, pca_source, config);
    r.report = evaluate_scores(predict_scores(probe, X_test), y_test, config.threshold);
  } catch (const NonConvergence& e) {
    r.skip_reason = e.what();
  }
  return r;
}

SweepResult sweep(const TracePack& pack, const std::vector<int>& grid, const std::vector<CohortFilter>& cohorts,
                  const std::vector<FeatureSet>& feature_sets, const AnalysisConfig& config) {
  for (int t : grid) {
    if (!pack.has_checkpoint(t)) throw ConfigError("sweep grid value t=" + std::to_string(t) + " not in prefix_grid");
  }
  for (const auto& c : cohorts) validate_cohort(c);

  using Task = std::tuple<int, const CohortFilter*, FeatureSet>;
  std::vector<Task> tasks;
  for (int t : grid) {
    for (const auto& c : cohorts) {
      for (auto fs : feature_sets) tasks.emplace_back(t, &c, fs);
    }
  }

  SweepResult out;
  out.config = config;
  out.rows.resize(tasks.size());

  const auto workers =
      static_cast<std::size_t>(std::clamp<long>(config.threads, 1, std::max<long>(1, long(tasks.size()))));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const auto& [t, c, fs] = tasks[i];
        out.rows[i] = evaluate_checkpoint(pack, t, *c, config, fs);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

ProbeModel fit_probe(const TracePack& pack, int t, const CohortFilter& cohort, const AnalysisConfig& config,
                     FeatureSet feature_set, std::string pack_path) {
  const auto members = cohort_members(pack, t, cohort);
  std::vector<bool> labels;
  for (auto i : members) labels.push_back(pack.examples[i].correct);
  const Eigen::MatrixXd X = feature_rows(pack, t, feature_set, members);
  std::optional<Eigen::MatrixXd> pca_source;
  if (feature_set == FeatureSet::hidden_state) pca_source = X;
  ProbeModel m = train_on(X, labels, pca_source, config);
  m.provenance.pack_path = std::move(pack_path);
  m.provenance.t = t;
  m.provenance.cohort = cohort.label();
  for (auto i : members) m.provenance.train_ids.push_back(pack.examples[i].example_id);
  return m;
}

std::vector<MarginRow> margin_table(const SweepResult& hidden, const SweepResult& baseline) {
  using Key = std::pair<int, std::string>;
  auto best = [](const SweepResult& s) {
    std::map<Key, std::optional<double>> m;
    for (const auto& r : s.rows) {
      auto& slot = m[{r.t, r.cohort.label()}];
      const auto auc = r.report ? r.report->roc_auc : std::nullopt;
      if (auc && (!slot || *auc > *slot)) slot = auc;
    }
    return m;
  };
  const auto h = best(hidden);
  const auto b = best(baseline);
  if (h.size() != b.size() || !std::equal(h.begin(), h.end(), b.begin(),
                                          [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw DataError("margin_table: sweeps cover different (t, cohort) grids");
  }
  std::vector<MarginRow> out;
  for (const auto& [key, auc_h] : h) {
    MarginRow row{key.first, key.second, auc_h, b.at(key), std::nullopt};
    if (row.auc_hidden && row.auc_baseline) row.margin = *row.auc_hidden - *row.auc_baseline;
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace cotprobe
