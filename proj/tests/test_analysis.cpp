#include "cotprobe/analysis.hpp"
#include "cotprobe/errors.hpp"
#include "cotprobe/serialize.hpp"
#include "cotprobe/synth.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace cotprobe;
using cotprobe::testing::make_example;
using cotprobe::testing::random_pack;

namespace {

TracePack planted(std::uint64_t seed, double auc, std::size_t n = 1200, int dim = 16) {
  SynthConfig c;
  c.n_examples = n;
  c.hidden_dim = dim;
  c.signal_strength = delta_for_auc(auc);
  c.prefix_grid = {4, 16, 64};
  c.seed = seed;
  return generate(c);
}

AnalysisConfig quick_config(std::uint64_t split_seed = 0) {
  AnalysisConfig a;
  a.k_max = 16;
  a.split.seed = split_seed;
  return a;
}

CheckpointResult row(int t, const std::string& cohort, std::optional<double> auc,
                     FeatureSet fs = FeatureSet::hidden_state) {
  CheckpointResult r;
  r.t = t;
  r.feature_set = fs;
  r.cohort.difficulty = parse_difficulty_filter(cohort);
  if (auc) {
    EvalReport e;
    e.roc_auc = auc;
    r.report = e;
  } else {
    r.skip_reason = "cohort too small";
  }
  return r;
}

}  // namespace

TEST_CASE("cohort filters and labels") {
  const auto easy_long = make_example("a", 1, true, 300, {4}, 1);
  const auto hard_short = make_example("b", 5, true, 20, {4}, 1);
  CohortFilter all;
  CHECK(all.admits(easy_long));
  CHECK(all.label() == "all");
  CohortFilter hard{DifficultyFilter::hard, 256, std::nullopt};
  CHECK(hard.label() == "hard:len>=256");
  CHECK_FALSE(hard.admits(easy_long));
  CHECK_FALSE(hard.admits(hard_short));
  CohortFilter window{DifficultyFilter::all, 64, 256};
  CHECK(window.label() == "all:len>=64:len<=256");
  CHECK_FALSE(window.admits(easy_long));
  CHECK_THROWS_AS(validate_cohort({DifficultyFilter::all, 10, 5}), ConfigError);
  for (const auto& c : {all, hard, window}) CHECK(parse_cohort_label(c.label()) == c);
  CHECK_THROWS_AS(parse_cohort_label("hard:len>256"), ConfigError);
  CHECK_THROWS_AS(parse_cohort_label("all:len>=1:len>=2"), ConfigError);
  CHECK_THROWS_AS(parse_cohort_label("all:len<=5:len>=9"), ConfigError);
  CHECK(parse_feature_set("entropy_length") == FeatureSet::entropy_length);
  CHECK_THROWS_AS(parse_feature_set("tokens"), ConfigError);
}

TEST_CASE("a one-checkpoint sweep yields one row") {
  std::mt19937_64 rng(1);
  const auto p = random_pack(rng, 80, 5, {4});
  const auto s = sweep(p, {4}, {CohortFilter{}}, {FeatureSet::hidden_state}, quick_config());
  REQUIRE(s.rows.size() == 1);
  CHECK(s.rows[0].t == 4);
  CHECK(s.rows[0].n_train + s.rows[0].n_test == s.rows[0].n_survivors);
  CHECK(s.rows[0].ok());
}

TEST_CASE("rows follow t, cohort, feature nesting") {
  std::mt19937_64 rng(2);
  const auto p = random_pack(rng, 200, 3, {4, 8});
  const std::vector<CohortFilter> cohorts{{DifficultyFilter::easy, {}, {}}, {DifficultyFilter::hard, {}, {}}};
  const auto s = sweep(p, {4, 8}, cohorts, {FeatureSet::hidden_state, FeatureSet::entropy}, quick_config());
  REQUIRE(s.rows.size() == 8);
  CHECK(s.rows[0].t == 4);
  CHECK(s.rows[0].cohort.difficulty == DifficultyFilter::easy);
  CHECK(s.rows[1].feature_set == FeatureSet::entropy);
  CHECK(s.rows[2].cohort.difficulty == DifficultyFilter::hard);
  CHECK(s.rows[4].t == 8);
  CHECK_THROWS_AS(sweep(p, {5}, cohorts, {FeatureSet::hidden_state}, quick_config()), ConfigError);
}

TEST_CASE("a cohort too small to split is skipped, not fatal") {
  TracePack p;
  p.model_name = "m";
  p.hidden_dim = 2;
  p.prefix_grid = {4};
  for (int i = 0; i < 10; ++i) p.examples.push_back(make_example("e" + std::to_string(i), 1, i != 0, 8, {4}, 2));
  const auto r = evaluate_checkpoint(p, 4, {}, quick_config());
  CHECK_FALSE(r.ok());
  CHECK(r.skip_reason.find("cohort too small") != std::string::npos);
  CHECK(r.n_survivors == 10);

  const auto s = sweep(p, {4}, {CohortFilter{}}, {FeatureSet::hidden_state}, quick_config());
  CHECK(to_json(s).dump().find("\"skipped\"") != std::string::npos);
}

TEST_CASE("non-convergence becomes a skipped row") {
  auto cfg = quick_config();
  cfg.max_iter = 1;
  cfg.tol = 1e-300;
  const auto r = evaluate_checkpoint(planted(3, 0.8, 200, 4), 4, {}, cfg);
  CHECK_FALSE(r.ok());
  CHECK_FALSE(r.skip_reason.empty());
}

TEST_CASE("no planted signal gives chance-level AUC") {
  const auto r = evaluate_checkpoint(planted(4, 0.5, 1000, 16), 4, {}, quick_config());
  REQUIRE(r.ok());
  CHECK(*r.report->roc_auc >= 0.4);
  CHECK(*r.report->roc_auc <= 0.6);
}

TEST_CASE("planted signal is recovered at every checkpoint") {
  const auto p = planted(5, 0.8, 3000, 16);
  for (int t : p.prefix_grid) {
    const auto r = evaluate_checkpoint(p, t, {}, quick_config());
    REQUIRE(r.ok());
    CHECK(std::abs(*r.report->roc_auc - 0.8) <= 0.06);
  }
}

TEST_CASE("baseline features are read from checkpoint metadata") {
  std::mt19937_64 rng(6);
  const auto p = random_pack(rng, 30, 2, {4, 8});
  const auto members = cohort_members(p, 8, {});
  const auto X = baseline_features(p, 8, FeatureSet::entropy_length, members);
  REQUIRE(X.rows() == Eigen::Index(members.size()));
  REQUIRE(X.cols() == 3);
  for (std::size_t r = 0; r < members.size(); ++r) {
    const auto& ex = p.examples[members[r]];
    CHECK(X(Eigen::Index(r), 0) == ex.checkpoint(8)->mean_entropy);
    CHECK(X(Eigen::Index(r), 1) == ex.checkpoint(8)->window_entropy);
    CHECK(X(Eigen::Index(r), 2) == double(ex.reasoning_length));
  }
  CHECK(baseline_features(p, 8, FeatureSet::entropy).cols() == 2);
  CHECK(baseline_features(p, 8, FeatureSet::length).cols() == 1);
  CHECK_THROWS_AS(baseline_features(p, 8, FeatureSet::hidden_state), ConfigError);
}

TEST_CASE("a constant length feature scores exactly chance") {
  // Every synthetic example runs to the cap, so reasoning_length carries no information.
  const auto r = evaluate_checkpoint(planted(7, 0.85, 600, 4), 16, {}, quick_config(), FeatureSet::length);
  REQUIRE(r.ok());
  CHECK(*r.report->roc_auc == 0.5);
}

TEST_CASE("parallel and serial sweeps agree exactly") {
  const auto p = planted(8, 0.75, 800, 8);
  const std::vector<CohortFilter> cohorts{{}, {DifficultyFilter::easy, {}, {}}, {DifficultyFilter::hard, {}, {}}};
  const std::vector<FeatureSet> fs{FeatureSet::hidden_state, FeatureSet::entropy, FeatureSet::length};
  auto serial_cfg = quick_config();
  auto parallel_cfg = serial_cfg;
  parallel_cfg.threads = 4;
  const auto a = sweep(p, p.prefix_grid, cohorts, fs, serial_cfg);
  const auto b = sweep(p, p.prefix_grid, cohorts, fs, parallel_cfg);
  // threads is not serialized, so the documents must match byte for byte.
  CHECK(to_json(a).dump() == to_json(b).dump());
}

TEST_CASE("split seed variability stays small") {
  const auto p = planted(9, 0.85, 1000, 64);
  std::vector<double> aucs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = quick_config(seed);
    cfg.k_max = 128;
    const auto r = evaluate_checkpoint(p, 16, {}, cfg);
    REQUIRE(r.ok());
    aucs.push_back(*r.report->roc_auc);
  }
  double mean = 0.0;
  for (double a : aucs) mean += a / 10.0;
  double var = 0.0;
  for (double a : aucs) var += (a - mean) * (a - mean) / 9.0;
  CHECK(std::sqrt(var) <= 0.03);
}

TEST_CASE("fit_probe records every cohort survivor as a training id") {
  const auto p = planted(10, 0.8, 300, 6);
  const auto probe = fit_probe(p, 16, {}, quick_config(), FeatureSet::hidden_state, "somewhere");
  CHECK(probe.provenance.t == 16);
  CHECK(probe.provenance.cohort == "all");
  CHECK(probe.provenance.train_ids.size() == cohort_members(p, 16, {}).size());
  CHECK(probe.pca.has_value());
  CHECK(probe.input_dim() == 6);
}

TEST_CASE("margin table") {
  SweepResult hidden, base;
  hidden.rows = {row(4, "all", 0.8), row(4, "hard", 0.7), row(8, "all", std::nullopt), row(8, "hard", 0.75)};
  base.rows = {row(4, "all", 0.6, FeatureSet::entropy), row(4, "all", 0.65, FeatureSet::length),
               row(4, "hard", 0.72, FeatureSet::entropy), row(8, "all", 0.6, FeatureSet::entropy),
               row(8, "hard", std::nullopt, FeatureSet::entropy)};
  const auto m = margin_table(hidden, base);
  REQUIRE(m.size() == 4);
  CHECK(m[0].t == 4);
  CHECK(m[0].cohort == "all");
  CHECK(*m[0].auc_baseline == 0.65);  // best baseline wins
  CHECK(*m[0].margin == doctest::Approx(0.15));
  CHECK(*m[1].margin == doctest::Approx(-0.02));
  CHECK_FALSE(m[2].margin.has_value());
  CHECK_FALSE(m[3].margin.has_value());

  const auto self = margin_table(hidden, hidden);
  for (const auto& r : self) {
    if (r.margin) CHECK(*r.margin == 0.0);
  }

  base.rows.pop_back();
  CHECK_THROWS_AS(margin_table(hidden, base), DataError);
}

TEST_CASE("hidden-state and baseline rows share split indices") {
  const auto p = planted(11, 0.8, 500, 8);
  const auto h = evaluate_checkpoint(p, 16, {}, quick_config(), FeatureSet::hidden_state);
  const auto b = evaluate_checkpoint(p, 16, {}, quick_config(), FeatureSet::entropy);
  CHECK(h.n_train == b.n_train);
  CHECK(h.train_prior == b.train_prior);
  CHECK(h.report->class_prior == b.report->class_prior);
}

TEST_CASE("planted signal beats the length baseline by a wide margin at every t") {
  const auto p = planted(12, 0.85, 2000, 32);
  const auto hidden = sweep(p, p.prefix_grid, {CohortFilter{}}, {FeatureSet::hidden_state}, quick_config());
  const auto length = sweep(p, p.prefix_grid, {CohortFilter{}}, {FeatureSet::length}, quick_config());
  for (const auto& r : margin_table(hidden, length)) {
    REQUIRE(r.margin.has_value());
    CHECK(*r.margin > 0.2);
  }
}
