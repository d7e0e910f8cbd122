#include "cotprobe/errors.hpp"
#include "cotprobe/probe.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

using namespace cotprobe;
using cotprobe::testing::TempDir;

namespace {

struct Problem {
  Eigen::MatrixXd Z;
  std::vector<bool> y;
};

// Two overlapping Gaussian blobs.
Problem blobs(std::mt19937_64& rng, int n, int k, double shift, double prior = 0.5) {
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(prior);
  Problem p{Eigen::MatrixXd(n, k), {}};
  for (int i = 0; i < n; ++i) {
    const bool label = coin(rng);
    p.y.push_back(label);
    for (int j = 0; j < k; ++j) p.Z(i, j) = normal(rng) + (label && j == 0 ? shift : 0.0);
  }
  return p;
}

double objective(const Eigen::VectorXd& w, double b, const Problem& p, const Eigen::VectorXd& c, double lambda) {
  return loss_and_gradient(w, b, p.Z, p.y, c, lambda).loss;
}

}  // namespace

TEST_CASE("balanced class weights") {
  std::vector<bool> y(100, false);
  std::fill(y.begin(), y.begin() + 90, true);
  const auto cw = balanced_class_weights(y);
  CHECK(cw.w_pos == doctest::Approx(100.0 / 180.0));
  CHECK(cw.w_neg == doctest::Approx(5.0));
  CHECK(cw.w_pos * 90 + cw.w_neg * 10 == doctest::Approx(100.0));

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = blobs(rng, 50 + trial, 2, 0.0, 0.2 + 0.03 * trial);
    const auto c = balanced_class_weights(p.y);
    const auto sw = sample_weights(p.y, c);
    CHECK(sw.sum() == doctest::Approx(double(p.y.size())));
    double pos_mass = 0.0;
    for (std::size_t i = 0; i < p.y.size(); ++i) pos_mass += p.y[i] ? sw[Eigen::Index(i)] : 0.0;
    CHECK(pos_mass == doctest::Approx(sw.sum() / 2.0));
  }
  CHECK_THROWS_AS(balanced_class_weights({true, true}), DataError);
}

TEST_CASE("loss at zero is n_eff log 2") {
  std::mt19937_64 rng(2);
  const auto p = blobs(rng, 37, 4, 1.0);
  const auto sw = sample_weights(p.y, balanced_class_weights(p.y));
  const auto lg = loss_and_gradient(Eigen::VectorXd::Zero(4), 0.0, p.Z, p.y, sw, 3.0);
  CHECK(lg.loss == doctest::Approx(sw.sum() * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = blobs(rng, 40, 5, 1.5);
    const auto c = sample_weights(p.y, balanced_class_weights(p.y));
    const double lambda = 0.1 + trial;
    Eigen::VectorXd w = Eigen::VectorXd::NullaryExpr(5, [&] { return normal(rng); });
    const double b = normal(rng);
    const auto lg = loss_and_gradient(w, b, p.Z, p.y, c, lambda);
    REQUIRE(lg.grad.size() == 6);
    for (int j = 0; j < 6; ++j) {
      double fd;
      if (j < 5) {
        Eigen::VectorXd wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        fd = (objective(wp, b, p, c, lambda) - objective(wm, b, p, c, lambda)) / (2 * h);
      } else {
        fd = (objective(w, b + h, p, c, lambda) - objective(w, b - h, p, c, lambda)) / (2 * h);
      }
      CHECK(std::abs(fd - lg.grad[j]) <= 1e-5 * std::max(1.0, std::abs(lg.grad[j])));
    }
  }
}

TEST_CASE("the objective is convex along chords") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  const auto p = blobs(rng, 60, 3, 1.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Ones(60);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd a = Eigen::VectorXd::NullaryExpr(3, [&] { return 3 * normal(rng); });
    Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(3, [&] { return 3 * normal(rng); });
    const double ba = normal(rng), bb = normal(rng);
    const double s = 0.3;
    const double mid = objective((1 - s) * a + s * b, (1 - s) * ba + s * bb, p, c, 0.5);
    const double chord = (1 - s) * objective(a, ba, p, c, 0.5) + s * objective(b, bb, p, c, 0.5);
    CHECK(mid <= chord + 1e-9 * std::abs(chord));
  }
}

TEST_CASE("solver converges and respects the weight-norm bound") {
  std::mt19937_64 rng(5);
  for (double lambda : {0.01, 1.0, 100.0}) {
    const auto p = blobs(rng, 200, 6, 1.0, 0.3);
    const auto c = sample_weights(p.y, balanced_class_weights(p.y));
    const auto fit = minimize_logistic(p.Z, p.y, c, lambda, 1e-8, 500);
    const auto lg = loss_and_gradient(fit.weights, fit.intercept, p.Z, p.y, c, lambda);
    CHECK(lg.grad.cwiseAbs().maxCoeff() <= 1e-8);
    const double l0 = c.sum() * std::log(2.0);
    CHECK(lg.loss <= l0);
    CHECK(fit.weights.norm() <= std::sqrt(2.0 * l0 / lambda));
  }
}

TEST_CASE("separable data reaches perfect training accuracy") {
  Eigen::MatrixXd Z(8, 2);
  Z << -3, 1, -2, -1, -1.5, 0.5, -1, 0, 1, 0, 1.5, -0.5, 2, 1, 3, -1;
  const std::vector<bool> y{false, false, false, false, true, true, true, true};
  const auto model = train_probe(Z, y, balanced_class_weights(y), {1e-3, 1e-8, 500});
  const auto scores = predict_scores(model, Z);
  for (int i = 0; i < 8; ++i) CHECK((scores[i] >= 0.5) == y[std::size_t(i)]);
}

TEST_CASE("class weights are equivalent to duplicating rows") {
  // Weights (1.5, 0.75) are 0.75 * (2, 1), and (2, 1) is exactly "every positive twice".
  // Scaling the whole objective by 0.75 moves the optimum only through lambda, so the
  // duplicated problem is solved with lambda / 0.75.
  std::mt19937_64 rng(6);
  const auto p = blobs(rng, 120, 4, 1.2, 0.35);
  const double lambda = 0.8;
  const ClassWeights cw{1.5, 0.75};
  const auto weighted = minimize_logistic(p.Z, p.y, sample_weights(p.y, cw), lambda, 1e-10, 500);

  Problem dup;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < p.y.size(); ++i) {
    const int copies = p.y[i] ? 2 : 1;
    for (int r = 0; r < copies; ++r) {
      rows.push_back(Eigen::Index(i));
      dup.y.push_back(p.y[i]);
    }
  }
  dup.Z = p.Z(rows, Eigen::all);
  const auto duplicated =
      minimize_logistic(dup.Z, dup.y, Eigen::VectorXd::Ones(Eigen::Index(rows.size())), lambda / 0.75, 1e-10, 500);

  CHECK((weighted.weights - duplicated.weights).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(weighted.intercept - duplicated.intercept) <= 1e-6);
}

TEST_CASE("balanced weights with twice as many positives equal duplicating each negative") {
  // n_pos = 2 n_neg gives weights (0.75, 1.5) = 0.75 * (1, 2).
  std::mt19937_64 rng(10);
  auto p = blobs(rng, 150, 5, 1.0);
  for (std::size_t i = 0; i < p.y.size(); ++i) p.y[i] = i < 100;
  const auto cw = balanced_class_weights(p.y);
  REQUIRE(cw.w_pos == doctest::Approx(0.75));
  REQUIRE(cw.w_neg == doctest::Approx(1.5));
  const double lambda = 1.0;
  const auto weighted = minimize_logistic(p.Z, p.y, sample_weights(p.y, cw), lambda, 1e-10, 500);

  std::vector<Eigen::Index> rows;
  std::vector<bool> y;
  for (std::size_t i = 0; i < p.y.size(); ++i) {
    for (int r = 0; r < (p.y[i] ? 1 : 2); ++r) {
      rows.push_back(Eigen::Index(i));
      y.push_back(p.y[i]);
    }
  }
  const Eigen::MatrixXd Zd = p.Z(rows, Eigen::all);
  const auto dup = minimize_logistic(Zd, y, Eigen::VectorXd::Ones(Eigen::Index(rows.size())), lambda / cw.w_pos,
                                     1e-10, 500);
  CHECK((weighted.weights - dup.weights).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(std::abs(weighted.intercept - dup.intercept) <= 1e-4);
}

TEST_CASE("single-class training labels are rejected") {
  const Eigen::MatrixXd Z = Eigen::MatrixXd::Random(5, 2);
  const std::vector<bool> y(5, true);
  CHECK_THROWS_AS(minimize_logistic(Z, y, Eigen::VectorXd::Ones(5), 1.0, 1e-8, 100), DataError);
  CHECK_THROWS_AS(train_probe(Z, y, ClassWeights{}), DataError);
}

TEST_CASE("iteration exhaustion raises NonConvergence") {
  std::mt19937_64 rng(7);
  const auto p = blobs(rng, 50, 3, 1.0);
  CHECK_THROWS_AS(minimize_logistic(p.Z, p.y, Eigen::VectorXd::Ones(50), 1.0, 1e-300, 2), NonConvergence);
}

TEST_CASE("standardization statistics") {
  Eigen::MatrixXd Z(4, 3);
  Z << 1, 5, 7, 2, 5, 7, 3, 5, 7, 4, 5, 7.0000000000001;
  Eigen::VectorXd m, s;
  standardization_stats(Z, m, s);
  CHECK(m[0] == doctest::Approx(2.5));
  CHECK(s[0] == doctest::Approx(std::sqrt(1.25)));
  CHECK(s[1] == 1.0);
  CHECK(s[2] == 1.0);  // below the relative floor
}

TEST_CASE("stratified split") {
  SUBCASE("five per class") {
    std::vector<bool> y{true, true, true, true, true, false, false, false, false, false};
    const auto s = stratified_split(y, {0.8, 3});
    CHECK(s.train.size() == 8);
    CHECK(s.test.size() == 2);
    int train_pos = 0;
    for (auto i : s.train) train_pos += y[i] ? 1 : 0;
    CHECK(train_pos == 4);
  }
  SUBCASE("deterministic in the seed, disjoint and exhaustive") {
    std::mt19937_64 rng(8);
    std::bernoulli_distribution coin(0.3);
    std::vector<bool> y(300);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = coin(rng);
    const auto a = stratified_split(y, {0.7, 11});
    const auto b = stratified_split(y, {0.7, 11});
    const auto c = stratified_split(y, {0.7, 12});
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.train != c.train);
    std::vector<int> seen(y.size(), 0);
    for (auto i : a.train) ++seen[i];
    for (auto i : a.test) ++seen[i];
    for (int v : seen) CHECK(v == 1);
  }
  SUBCASE("test prior stays within one example of the train prior") {
    std::vector<bool> y(1500, false);
    std::fill(y.begin(), y.begin() + 879, true);  // prior 0.586
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto s = stratified_split(y, {0.8, seed});
      double train_pos = 0.0, test_pos = 0.0;
      for (auto i : s.train) train_pos += y[i] ? 1.0 : 0.0;
      for (auto i : s.test) test_pos += y[i] ? 1.0 : 0.0;
      const double train_prior = train_pos / double(s.train.size());
      CHECK(std::abs(test_pos - train_prior * double(s.test.size())) <= 1.0);
    }
  }
  SUBCASE("tiny classes keep one member on each side") {
    std::vector<bool> y{true, true, false, false, false, false, false, false, false, false};
    const auto s = stratified_split(y, {0.95, 1});
    int test_pos = 0;
    for (auto i : s.test) test_pos += y[i] ? 1 : 0;
    CHECK(test_pos == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(stratified_split({true, false, false, false}, {0.8, 0}), DataError);
    CHECK_THROWS_AS(stratified_split({true, true, false, false}, {1.0, 0}), ConfigError);
  }
}

TEST_CASE("prediction properties") {
  ProbeModel m;
  m.weights = Eigen::VectorXd::Zero(3);
  m.feature_means = Eigen::VectorXd::Zero(3);
  m.feature_scales = Eigen::VectorXd::Ones(3);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Random(6, 3);
  CHECK((predict_scores(m, X).array() == 0.5).all());

  m.weights << 1.0, 0.0, 0.0;
  m.intercept = 0.2;
  Eigen::MatrixXd line(5, 3);
  for (int i = 0; i < 5; ++i) line.row(i) << double(i), 0.0, 0.0;
  const auto s = predict_scores(m, line);
  for (int i = 1; i < 5; ++i) CHECK(s[i] > s[i - 1]);

  m.weights << 1e6, 0.0, 0.0;
  const auto extreme = predict_scores(m, line * 1e3 - Eigen::MatrixXd::Constant(5, 3, 2e3));
  CHECK((extreme.array() > 0.0).all());
  CHECK((extreme.array() < 1.0).all());

  CHECK_THROWS_AS(predict_scores(m, Eigen::MatrixXd::Zero(2, 4)), DataError);
}

TEST_CASE("probe bundles round-trip bit-exactly") {
  std::mt19937_64 rng(9);
  const auto p = blobs(rng, 80, 10, 1.0);
  auto model = train_probe(p.Z.leftCols(4), p.y, balanced_class_weights(p.y));
  model.pca = fit_pca(p.Z, 4);
  model.provenance = {"/some/pack", 32, "hard", {"a", "b"}};
  model.split = {0.75, 99};

  TempDir dir("probe");
  save_probe(model, dir / "probe.json");
  const auto back = load_probe(dir / "probe.json");
  CHECK(back.weights == model.weights);
  CHECK(back.intercept == model.intercept);
  CHECK(back.feature_scales == model.feature_scales);
  REQUIRE(back.pca.has_value());
  CHECK(back.pca->components == model.pca->components);
  CHECK(back.provenance.train_ids == model.provenance.train_ids);
  CHECK(back.provenance.t == 32);
  CHECK(back.split.seed == 99);
  CHECK(predict_scores(back, p.Z) == predict_scores(model, p.Z));

  {
    std::ofstream(dir / "bad.json") << "{\"format\": \"something else\"}";
    CHECK_THROWS_AS(load_probe(dir / "bad.json"), DataError);
    CHECK_THROWS_AS(load_probe(dir / "absent.json"), IoError);
  }
}
