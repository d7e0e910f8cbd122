#include "cotprobe/synth.hpp"

#include "cotprobe/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace cotprobe {

BucketEffect default_easy_effect() { return {0.85, 2.0, 0.2}; }
BucketEffect default_hard_effect() { return {0.3, 1.0, 0.9}; }

namespace {

void check_effect(const BucketEffect& e, const char* name) {
  if (!(e.prior > 0.0 && e.prior < 1.0)) throw ConfigError(std::string(name) + ".prior must lie in (0,1)");
  if (!(e.delta >= 0.0)) throw ConfigError(std::string(name) + ".delta must be >= 0");
  if (!(e.capped_fraction >= 0.0 && e.capped_fraction <= 1.0)) {
    throw ConfigError(std::string(name) + ".capped_fraction must lie in [0,1]");
  }
}

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(dim);
  do {
    for (int j = 0; j < dim; ++j) v[j] = normal(rng);
  } while (v.norm() == 0.0);
  return v.normalized();
}

}  // namespace

void validate_synth_config(const SynthConfig& c) {
  if (c.n_examples < 4) throw ConfigError("synth n_examples must be >= 4");
  if (c.hidden_dim < 2) throw ConfigError("synth hidden_dim must be >= 2");
  if (!(c.signal_strength >= 0.0)) throw ConfigError("synth signal_strength must be >= 0");
  if (!(c.prior_correct > 0.0 && c.prior_correct < 1.0)) throw ConfigError("synth prior_correct must lie in (0,1)");
  if (!(c.easy_fraction >= 0.0 && c.easy_fraction <= 1.0)) throw ConfigError("synth easy_fraction must lie in [0,1]");
  if (!(c.capped_fraction >= 0.0 && c.capped_fraction <= 1.0)) {
    throw ConfigError("synth capped_fraction must lie in [0,1]");
  }
  if (!(c.checkpoint_correlation >= 0.0 && c.checkpoint_correlation <= 1.0)) {
    throw ConfigError("synth checkpoint_correlation must lie in [0,1]");
  }
  if (!std::isfinite(c.difficulty_separation) || !std::isfinite(c.entropy_label_effect)) {
    throw ConfigError("synth separations must be finite");
  }
  if (c.pooling_window < 1) throw ConfigError("synth pooling_window must be >= 1");
  if (c.prefix_grid.empty()) throw ConfigError("synth prefix_grid must not be empty");
  for (std::size_t i = 1; i < c.prefix_grid.size(); ++i) {
    if (c.prefix_grid[i] <= c.prefix_grid[i - 1]) throw ConfigError("synth prefix_grid must be strictly increasing");
  }
  if (c.prefix_grid.front() < c.pooling_window) throw ConfigError("synth prefix_grid minimum below pooling_window");
  if (c.easy_effect) check_effect(*c.easy_effect, "easy_effect");
  if (c.hard_effect) check_effect(*c.hard_effect, "hard_effect");
}

TracePack generate(const SynthConfig& c) {
  validate_synth_config(c);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;

  std::mt19937_64 dir_rng(c.direction_seed.value_or(0));
  auto& dirs = c.direction_seed ? dir_rng : rng;
  const Eigen::VectorXd signal_dir = random_unit(dirs, c.hidden_dim);
  Eigen::VectorXd difficulty_dir = random_unit(dirs, c.hidden_dim);
  difficulty_dir -= difficulty_dir.dot(signal_dir) * signal_dir;
  difficulty_dir.normalize();

  const bool coupled = c.length_coupling == LengthCoupling::difficulty_coupled;
  const BucketEffect easy = c.easy_effect.value_or(default_easy_effect());
  const BucketEffect hard = c.hard_effect.value_or(default_hard_effect());
  const BucketEffect global{c.prior_correct, c.signal_strength, c.capped_fraction};

  const int cap = c.prefix_grid.back();
  const double log_lo = std::log(double(c.pooling_window));
  const double log_hi = std::log(double(cap));
  const double shared = std::sqrt(c.checkpoint_correlation);
  const double fresh = std::sqrt(1.0 - c.checkpoint_correlation);

  TracePack pack;
  pack.model_name = c.model_name;
  pack.hidden_dim = c.hidden_dim;
  pack.prefix_grid = c.prefix_grid;
  pack.pooling_window = c.pooling_window;
  pack.examples.reserve(c.n_examples);

  Eigen::VectorXd common(c.hidden_dim), state(c.hidden_dim);
  char id[24];
  for (std::size_t i = 0; i < c.n_examples; ++i) {
    ExampleTrace ex;
    std::snprintf(id, sizeof id, "-%06zu", i);
    ex.example_id = c.id_prefix + id;

    const bool is_easy = unif(rng) < c.easy_fraction;
    ex.difficulty = is_easy ? Difficulty::easy : Difficulty::hard;
    const bool upper_level = unif(rng) < 0.5;
    ex.raw_level = is_easy ? (upper_level ? 2 : 1) : (upper_level ? 5 : 4);

    const BucketEffect& eff = coupled ? (is_easy ? easy : hard) : global;
    ex.correct = unif(rng) < eff.prior;

    if (unif(rng) < eff.capped_fraction) {
      ex.reasoning_length = cap;
    } else {
      const double u = unif(rng);
      ex.reasoning_length = std::clamp(int(std::floor(std::exp(log_lo + u * (log_hi - log_lo)))), c.pooling_window,
                                       std::max(c.pooling_window, cap - 1));
    }

    Eigen::VectorXd mean = (ex.correct ? 0.5 : -0.5) * eff.delta * signal_dir;
    if (coupled) mean += (is_easy ? 0.5 : -0.5) * c.difficulty_separation * difficulty_dir;
    for (int j = 0; j < c.hidden_dim; ++j) common[j] = normal(rng);

    // Correct chains are slightly more confident (lower entropy).
    const double label_shift = (ex.correct ? -0.5 : 0.5) * c.entropy_label_effect;
    const double example_entropy = 0.25 * normal(rng);

    for (int t : c.prefix_grid) {
      if (t > ex.reasoning_length) break;
      for (int j = 0; j < c.hidden_dim; ++j) state[j] = mean[j] + shared * common[j] + fresh * normal(rng);
      CheckpointRecord rec;
      rec.t = t;
      rec.pooled_state = state.cast<float>();
      rec.mean_entropy = std::exp(label_shift + example_entropy + 0.1 * normal(rng));
      rec.window_entropy = std::exp(label_shift + example_entropy + 0.3 * normal(rng));
      ex.checkpoints.push_back(std::move(rec));
    }
    pack.examples.push_back(std::move(ex));
  }
  return pack;
}

Eigen::VectorXd signal_direction(const SynthConfig& c) {
  validate_synth_config(c);
  std::mt19937_64 rng(c.direction_seed.value_or(c.seed));  // same first draw as generate()
  return random_unit(rng, c.hidden_dim);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double bayes_auc(double delta) { return normal_cdf(delta / std::sqrt(2.0)); }

double bayes_auc(const SynthConfig& config) { return bayes_auc(config.signal_strength); }

double delta_for_auc(double auc) {
  if (!(auc >= 0.5 && auc < 1.0)) throw ConfigError("delta_for_auc needs 0.5 <= auc < 1");
  double lo = 0.0, hi = 1.0;
  while (bayes_auc(hi) < auc) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (bayes_auc(mid) < auc ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace cotprobe
