#pragma once

#include "cotprobe/pca.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cotprobe {

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

/// Per-class seeded shuffle; round(train_fraction * n_class) members of each class go to train,
/// clamped so both folds keep at least one member of each class.
/// Throws DataError if a class has fewer than 2 members.
Split stratified_split(const std::vector<bool>& labels, const SplitSpec& spec);

struct ClassWeights {
  double w_pos = 1.0;
  double w_neg = 1.0;

  double operator()(bool label) const { return label ? w_pos : w_neg; }
};

/// w_c = n / (2 n_c). Throws DataError when a class is absent.
ClassWeights balanced_class_weights(const std::vector<bool>& labels);

Eigen::VectorXd sample_weights(const std::vector<bool>& labels, const ClassWeights& cw);

struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;  // k weight entries followed by the intercept
};

/// Weighted logistic loss sum_i c_i log(1 + exp(-y_i (w.z_i + b))) + lambda/2 |w|^2, y in {-1, +1}.
/// The intercept is not penalized.
LossAndGradient loss_and_gradient(const Eigen::VectorXd& weights, double intercept, const Eigen::MatrixXd& Z,
                                  const std::vector<bool>& y, const Eigen::VectorXd& sample_weights, double lambda);

LossAndGradient loss_and_gradient(const Eigen::VectorXd& weights, double intercept, const Eigen::MatrixXd& Z,
                                  const std::vector<bool>& y, const ClassWeights& cw, double lambda);

struct LogisticFit {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};

/// Damped Newton iteration from zero until |grad|_inf <= tol.
/// Throws NonConvergence after max_iter iterations.
LogisticFit minimize_logistic(const Eigen::MatrixXd& Z, const std::vector<bool>& y,
                              const Eigen::VectorXd& sample_weights, double lambda, double tol, int max_iter);

struct TrainOptions {
  double lambda = 1.0;
  double tol = 1e-8;
  int max_iter = 500;
};

struct ProbeProvenance {
  std::string pack_path;
  int t = 0;
  std::string cohort = "all";
  std::vector<std::string> train_ids;
};

struct ProbeModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double lambda = 1.0;
  double tol = 1e-8;
  SplitSpec split;
  Eigen::VectorXd feature_means;
  Eigen::VectorXd feature_scales;
  std::optional<PcaModel<double>> pca;  // absent for probes on raw baseline features
  ProbeProvenance provenance;

  Eigen::Index input_dim() const { return pca ? pca->dim() : feature_means.size(); }
};

/// Standardizes Z on its own statistics, then fits the weighted logistic objective.
/// Throws DataError for single-class labels, NonConvergence on iteration exhaustion.
ProbeModel train_probe(const Eigen::MatrixXd& Z_train, const std::vector<bool>& y_train, const ClassWeights& cw,
                       const TrainOptions& opts = {});

/// Train-fold standardization statistics; zero-variance columns get scale 1.
void standardization_stats(const Eigen::MatrixXd& Z, Eigen::VectorXd& means, Eigen::VectorXd& scales);

/// Linear score w.standardize(project(x)) + b for each row.
Eigen::VectorXd decision_function(const ProbeModel& model, const Eigen::MatrixXd& X_raw);

/// Sigmoid of the decision function, strictly inside (0, 1).
Eigen::VectorXd predict_scores(const ProbeModel& model, const Eigen::MatrixXd& X_raw);

/// Single JSON document; see README for the layout.
void save_probe(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace cotprobe
