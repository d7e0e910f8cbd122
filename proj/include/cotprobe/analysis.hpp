#pragma once

#include "cotprobe/metrics.hpp"
#include "cotprobe/pca.hpp"
#include "cotprobe/probe.hpp"
#include "cotprobe/trace_store.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cotprobe {

enum class DifficultyFilter { all, easy, hard };
enum class FeatureSet { hidden_state, entropy, length, entropy_length };

std::string_view to_string(DifficultyFilter d);
std::string_view to_string(FeatureSet f);
std::string_view to_string(PcaFitMode m);
DifficultyFilter parse_difficulty_filter(std::string_view s);
FeatureSet parse_feature_set(std::string_view s);
PcaFitMode parse_pca_fit_mode(std::string_view s);

struct CohortFilter {
  DifficultyFilter difficulty = DifficultyFilter::all;
  std::optional<int> min_reasoning_length;
  std::optional<int> max_reasoning_length;

  bool admits(const ExampleTrace& ex) const;
  /// "all", "easy", "hard:len>=256", "all:len>=64:len<=256", ...
  std::string label() const;
  bool operator==(const CohortFilter&) const = default;
};

/// Throws ConfigError when both bounds are set and min > max.
void validate_cohort(const CohortFilter& c);

/// Inverse of CohortFilter::label().
CohortFilter parse_cohort_label(std::string_view label);

struct AnalysisConfig {
  double lambda = 1.0;
  Eigen::Index k_max = 128;
  SplitSpec split;
  PcaFitMode pca_fit = PcaFitMode::train_only;
  double tol = 1e-8;
  int max_iter = 500;
  double threshold = 0.5;
  int threads = 1;  // not part of the result; output is schedule-independent
};

struct CheckpointResult {
  int t = 0;
  CohortFilter cohort;
  FeatureSet feature_set = FeatureSet::hidden_state;
  std::size_t n_survivors = 0;  // cohort members with reasoning_length >= t
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double train_prior = 0.0;
  std::optional<EvalReport> report;  // absent for skipped rows
  std::string skip_reason;

  bool ok() const { return report.has_value(); }
};

struct SweepResult {
  AnalysisConfig config;
  std::string pack_path;
  std::vector<CheckpointResult> rows;
};

/// Indices of pack.examples that pass the cohort filter and survive to t.
std::vector<std::size_t> cohort_members(const TracePack& pack, int t, const CohortFilter& cohort);

/// Baseline feature rows for the given examples at checkpoint t:
/// entropy -> [mean_entropy, window_entropy], length -> [reasoning_length], entropy_length -> all three.
Eigen::MatrixXd baseline_features(const TracePack& pack, int t, FeatureSet kind,
                                  const std::vector<std::size_t>& examples);

/// Baseline features over every survivor at t.
Eigen::MatrixXd baseline_features(const TracePack& pack, int t, FeatureSet kind);

/// Survival + cohort filter, stratified split, PCA (hidden_state only), probe, held-out metrics.
/// A cohort with fewer than two members of a class yields a skipped row, not an exception.
CheckpointResult evaluate_checkpoint(const TracePack& pack, int t, const CohortFilter& cohort,
                                     const AnalysisConfig& config, FeatureSet feature_set = FeatureSet::hidden_state);

/// One row per (t, cohort, feature_set), in that nesting order.
SweepResult sweep(const TracePack& pack, const std::vector<int>& grid, const std::vector<CohortFilter>& cohorts,
                  const std::vector<FeatureSet>& feature_sets, const AnalysisConfig& config);

/// Probe trained on every cohort survivor at t (no held-out fold), with provenance recorded.
ProbeModel fit_probe(const TracePack& pack, int t, const CohortFilter& cohort, const AnalysisConfig& config,
                     FeatureSet feature_set = FeatureSet::hidden_state, std::string pack_path = {});

struct MarginRow {
  int t = 0;
  std::string cohort;
  std::optional<double> auc_hidden;
  std::optional<double> auc_baseline;
  std::optional<double> margin;
};

/// Best AUC per (t, cohort) on each side, differenced. Throws DataError if the (t, cohort) sets differ.
std::vector<MarginRow> margin_table(const SweepResult& hidden, const SweepResult& baseline);

}  // namespace cotprobe
