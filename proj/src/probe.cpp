#include "cotprobe/probe.hpp"

#include "cotprobe/errors.hpp"
#include "cotprobe/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace cotprobe {

Split stratified_split(const std::vector<bool>& labels, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.size() < 2 || neg.size() < 2) {
    throw DataError("stratified_split needs >= 2 members per class (got " + std::to_string(pos.size()) +
                    " positive, " + std::to_string(neg.size()) + " negative)");
  }

  std::mt19937_64 rng(spec.seed);
  Split s;
  for (auto* members : {&pos, &neg}) {
    std::shuffle(members->begin(), members->end(), rng);
    const auto n = static_cast<long>(members->size());
    const long n_train = std::clamp(std::lround(spec.train_fraction * static_cast<double>(n)), 1L, n - 1);
    s.train.insert(s.train.end(), members->begin(), members->begin() + n_train);
    s.test.insert(s.test.end(), members->begin() + n_train, members->end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

ClassWeights balanced_class_weights(const std::vector<bool>& labels) {
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), true));
  const double n = static_cast<double>(labels.size());
  const double n_neg = n - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw DataError("balanced_class_weights needs both classes present");
  return {n / (2.0 * n_pos), n / (2.0 * n_neg)};
}

Eigen::VectorXd sample_weights(const std::vector<bool>& labels, const ClassWeights& cw) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) w[Eigen::Index(i)] = cw(labels[i]);
  return w;
}

namespace {

// log(1 + exp(x))
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_problem(const Eigen::MatrixXd& Z, const std::vector<bool>& y, const Eigen::VectorXd& c) {
  if (static_cast<std::size_t>(Z.rows()) != y.size() || Z.rows() != c.size()) {
    throw DataError("logistic problem: row count mismatch between features, labels and weights");
  }
  if (!Z.allFinite() || !c.allFinite()) throw DataError("logistic problem: non-finite input");
}

Eigen::VectorXd signed_labels(const std::vector<bool>& y) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) s[Eigen::Index(i)] = y[i] ? 1.0 : -1.0;
  return s;
}

double objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& Z, const Eigen::VectorXd& ys,
                 const Eigen::VectorXd& c, double lambda) {
  const Eigen::VectorXd margin = (Z * w).array() + b;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) loss += c[i] * softplus(-ys[i] * margin[i]);
  return loss + 0.5 * lambda * w.squaredNorm();
}

LossAndGradient evaluate(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& Z, const Eigen::VectorXd& ys,
                         const Eigen::VectorXd& c, double lambda) {
  const Eigen::Index k = Z.cols();
  const Eigen::VectorXd margin = (Z * w).array() + b;
  Eigen::VectorXd resid(Z.rows());  // d loss_i / d margin_i
  double loss = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double m = -ys[i] * margin[i];
    loss += c[i] * softplus(m);
    resid[i] = -c[i] * ys[i] * sigmoid(m);
  }
  LossAndGradient out;
  out.loss = loss + 0.5 * lambda * w.squaredNorm();
  out.grad.resize(k + 1);
  out.grad.head(k) = Z.transpose() * resid + lambda * w;
  out.grad[k] = resid.sum();
  return out;
}

}  // namespace

LossAndGradient loss_and_gradient(const Eigen::VectorXd& weights, double intercept, const Eigen::MatrixXd& Z,
                                  const std::vector<bool>& y, const Eigen::VectorXd& sw, double lambda) {
  check_problem(Z, y, sw);
  if (weights.size() != Z.cols()) throw DataError("loss_and_gradient: weight length does not match feature count");
  return evaluate(weights, intercept, Z, signed_labels(y), sw, lambda);
}

LossAndGradient loss_and_gradient(const Eigen::VectorXd& weights, double intercept, const Eigen::MatrixXd& Z,
                                  const std::vector<bool>& y, const ClassWeights& cw, double lambda) {
  return loss_and_gradient(weights, intercept, Z, y, sample_weights(y, cw), lambda);
}

LogisticFit minimize_logistic(const Eigen::MatrixXd& Z, const std::vector<bool>& y, const Eigen::VectorXd& sw,
                              double lambda, double tol, int max_iter) {
  check_problem(Z, y, sw);
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (std::find(y.begin(), y.end(), true) == y.end() || std::find(y.begin(), y.end(), false) == y.end()) {
    throw DataError("logistic probe needs both classes in the training labels");
  }
  const Eigen::Index k = Z.cols();
  const Eigen::VectorXd ys = signed_labels(y);

  Eigen::MatrixXd Za(Z.rows(), k + 1);  // features with a ones column for the intercept
  Za.leftCols(k) = Z;
  Za.col(k).setOnes();

  LogisticFit fit;
  fit.weights = Eigen::VectorXd::Zero(k);
  fit.intercept = 0.0;
  auto cur = evaluate(fit.weights, fit.intercept, Z, ys, sw, lambda);

  for (int it = 0;; ++it) {
    fit.iterations = it;
    fit.grad_norm = cur.grad.lpNorm<Eigen::Infinity>();
    if (fit.grad_norm <= tol) return fit;
    if (it >= max_iter) throw NonConvergence(fit.grad_norm, it);

    const Eigen::VectorXd margin = (Z * fit.weights).array() + fit.intercept;
    Eigen::VectorXd curv(Z.rows());
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      const double p = sigmoid(margin[i]);
      curv[i] = sw[i] * p * (1.0 - p);
    }
    Eigen::MatrixXd H = Za.transpose() * curv.asDiagonal() * Za;
    H.diagonal().head(k).array() += lambda;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step = ldlt.solve(-cur.grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(cur.grad) >= 0.0) {
      // Saturated curvature; fall back to a ridge-shifted system.
      H.diagonal().array() += 1e-8 * std::max(1.0, H.diagonal().maxCoeff());
      step = H.ldlt().solve(-cur.grad);
      if (!step.allFinite() || step.dot(cur.grad) >= 0.0) step = -cur.grad;
    }

    const double slope = step.dot(cur.grad);
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(cur.loss));
    double s = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, s *= 0.5) {
      const Eigen::VectorXd w_new = fit.weights + s * step.head(k);
      const double b_new = fit.intercept + s * step[k];
      const double f_new = objective(w_new, b_new, Z, ys, sw, lambda);
      if (f_new <= cur.loss + 1e-4 * s * slope + slack) {
        fit.weights = w_new;
        fit.intercept = b_new;
        accepted = true;
        break;
      }
    }
    if (!accepted) throw NonConvergence(fit.grad_norm, it);
    cur = evaluate(fit.weights, fit.intercept, Z, ys, sw, lambda);
  }
}

void standardization_stats(const Eigen::MatrixXd& Z, Eigen::VectorXd& means, Eigen::VectorXd& scales) {
  const double n = static_cast<double>(std::max<Eigen::Index>(Z.rows(), 1));
  means = Z.colwise().sum().transpose() / n;
  scales.resize(Z.cols());
  const double floor = 1e-10 * std::max(1.0, Z.size() ? Z.cwiseAbs().maxCoeff() : 0.0);
  for (Eigen::Index j = 0; j < Z.cols(); ++j) {
    const double sd = std::sqrt((Z.col(j).array() - means[j]).square().sum() / n);
    scales[j] = sd > floor ? sd : 1.0;
  }
}

ProbeModel train_probe(const Eigen::MatrixXd& Z_train, const std::vector<bool>& y_train, const ClassWeights& cw,
                       const TrainOptions& opts) {
  if (!Z_train.allFinite()) throw DataError("train_probe: non-finite features");
  ProbeModel m;
  m.lambda = opts.lambda;
  m.tol = opts.tol;
  standardization_stats(Z_train, m.feature_means, m.feature_scales);
  const Eigen::MatrixXd S =
      (Z_train.rowwise() - m.feature_means.transpose()).array().rowwise() / m.feature_scales.transpose().array();
  const auto fit = minimize_logistic(S, y_train, sample_weights(y_train, cw), opts.lambda, opts.tol, opts.max_iter);
  m.weights = fit.weights;
  m.intercept = fit.intercept;
  return m;
}

Eigen::VectorXd decision_function(const ProbeModel& model, const Eigen::MatrixXd& X_raw) {
  if (X_raw.cols() != model.input_dim()) {
    throw DataError("predict: input has " + std::to_string(X_raw.cols()) + " columns, probe expects " +
                    std::to_string(model.input_dim()));
  }
  const Eigen::MatrixXd Z = model.pca ? project(*model.pca, X_raw) : X_raw;
  const Eigen::MatrixXd S =
      (Z.rowwise() - model.feature_means.transpose()).array().rowwise() / model.feature_scales.transpose().array();
  return (S * model.weights).array() + model.intercept;
}

Eigen::VectorXd predict_scores(const ProbeModel& model, const Eigen::MatrixXd& X_raw) {
  const Eigen::VectorXd margin = decision_function(model, X_raw);
  // Symmetric bounds so that 1 - score is also strictly inside (0, 1).
  const double hi = std::nextafter(1.0, 0.0);
  const double lo = 1.0 - hi;
  return margin.unaryExpr([&](double m) { return std::clamp(sigmoid(m), lo, hi); });
}

void save_probe(const ProbeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json(model).dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ProbeModel load_probe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open probe bundle '" + path.string() + "'");
  try {
    return probe_from_json(Json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("probe bundle '" + path.string() + "': " + e.what());
  }
}

}  // namespace cotprobe
