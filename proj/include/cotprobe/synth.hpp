#pragma once

#include "cotprobe/trace_store.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cotprobe {

enum class LengthCoupling { none, difficulty_coupled };

/// Per-bucket generator parameters used in difficulty_coupled mode.
struct BucketEffect {
  double prior = 0.5;            // P(correct)
  double delta = 1.0;            // class-mean separation
  double capped_fraction = 1.0;  // P(reasoning runs to the generation cap)
};

struct SynthConfig {
  std::size_t n_examples = 1000;
  int hidden_dim = 64;
  double signal_strength = 1.0;  // separation of class means along a random unit direction
  double prior_correct = 0.5;
  LengthCoupling length_coupling = LengthCoupling::none;
  std::optional<BucketEffect> easy_effect;  // difficulty_coupled defaults when absent
  std::optional<BucketEffect> hard_effect;
  double easy_fraction = 0.5;
  // Shift between bucket means along a second direction orthogonal to the signal (difficulty_coupled only).
  double difficulty_separation = 3.0;
  // P(length = cap) in mode none; other lengths are log-uniform below the cap.
  double capped_fraction = 1.0;
  // Share of each example's noise that is common to all of its checkpoints.
  double checkpoint_correlation = 0.8;
  // Log-scale shift of entropies between classes (correct items slightly lower entropy).
  double entropy_label_effect = 0.1;
  std::vector<int> prefix_grid = default_prefix_grid();
  int pooling_window = 4;
  std::uint64_t seed = 0;
  // When set, the signal and difficulty directions come from this seed instead of `seed`, so packs with
  // different sampling seeds share one population (e.g. a training pack and a disjoint evaluation pack).
  std::optional<std::uint64_t> direction_seed;
  std::string model_name = "synthetic";
  std::string id_prefix = "synth";  // ids are <id_prefix>-NNNNNN
};

BucketEffect default_easy_effect();
BucketEffect default_hard_effect();

/// Throws ConfigError listing the first violated constraint.
void validate_synth_config(const SynthConfig& config);

/// Planted-signal trace pack. Deterministic for a given config.
TracePack generate(const SynthConfig& config);

/// The unit vector u along which generate() separates the class means (mu_correct - mu_incorrect = delta * u).
Eigen::VectorXd signal_direction(const SynthConfig& config);

/// Standard normal CDF.
double normal_cdf(double x);

/// Phi(delta / sqrt(2)) for the global signal strength.
double bayes_auc(const SynthConfig& config);
double bayes_auc(double delta);

/// Separation whose Bayes AUC equals `auc` (0.5 <= auc < 1).
double delta_for_auc(double auc);

}  // namespace cotprobe
