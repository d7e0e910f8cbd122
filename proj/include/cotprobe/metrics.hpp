#pragma once

#include "cotprobe/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cotprobe {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

struct EvalReport {
  std::size_t n = 0;
  double class_prior = 0.0;
  double accuracy = 0.0;
  std::optional<double> roc_auc;  // absent when a class is missing
  std::vector<RocPoint> roc_points;
};

namespace detail {

inline void check_lengths(std::size_t scores, std::size_t labels, const char* fn) {
  if (scores != labels) {
    throw DataError(std::string(fn) + ": " + std::to_string(scores) + " scores vs " + std::to_string(labels) +
                    " labels");
  }
}

template <typename Scalar>
std::vector<std::size_t> order_descending(std::span<const Scalar> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

template <typename Derived>
std::span<const typename Derived::Scalar> as_span(const Eigen::DenseBase<Derived>& v) {
  static_assert(Derived::IsVectorAtCompileTime, "scores must be a vector");
  return {v.derived().data(), static_cast<std::size_t>(v.size())};
}

}  // namespace detail

/// Fraction of positive labels. Throws DataError on empty input.
inline double class_prior(const std::vector<bool>& labels) {
  if (labels.empty()) throw DataError("class_prior of an empty label set");
  const auto pos = std::count(labels.begin(), labels.end(), true);
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

/// Mann-Whitney statistic: P(score_pos > score_neg) with ties counted 1/2.
/// Returns nullopt when either class is empty.
template <typename Scalar>
std::optional<double> roc_auc(std::span<const Scalar> scores, const std::vector<bool>& labels) {
  detail::check_lengths(scores.size(), labels.size(), "roc_auc");
  const auto order = detail::order_descending(scores);
  // Walk from the lowest score upward so negatives below each tie group are already counted.
  double u = 0.0;
  std::size_t neg_below = 0;
  std::size_t n_pos = 0;
  std::size_t i = order.size();
  while (i > 0) {
    std::size_t j = i;
    std::size_t pos_g = 0, neg_g = 0;
    while (j > 0 && scores[order[j - 1]] == scores[order[i - 1]]) {
      --j;
      labels[order[j]] ? ++pos_g : ++neg_g;
    }
    u += static_cast<double>(pos_g) * static_cast<double>(neg_below) +
         0.5 * static_cast<double>(pos_g) * static_cast<double>(neg_g);
    neg_below += neg_g;
    n_pos += pos_g;
    i = j;
  }
  const std::size_t n_neg = neg_below;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

template <typename Scalar>
std::optional<double> roc_auc(const std::vector<Scalar>& scores, const std::vector<bool>& labels) {
  return roc_auc(std::span<const Scalar>(scores), labels);
}

template <typename Derived>
std::optional<double> roc_auc(const Eigen::DenseBase<Derived>& scores, const std::vector<bool>& labels) {
  return roc_auc(detail::as_span(scores), labels);
}

/// Fraction of examples where (score >= threshold) agrees with the label.
template <typename Scalar>
double accuracy(std::span<const Scalar> scores, const std::vector<bool>& labels, double threshold) {
  detail::check_lengths(scores.size(), labels.size(), "accuracy");
  if (scores.empty()) throw DataError("accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if ((static_cast<double>(scores[i]) >= threshold) == labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(scores.size());
}

template <typename Scalar>
double accuracy(const std::vector<Scalar>& scores, const std::vector<bool>& labels, double threshold) {
  return accuracy(std::span<const Scalar>(scores), labels, threshold);
}

template <typename Derived>
double accuracy(const Eigen::DenseBase<Derived>& scores, const std::vector<bool>& labels, double threshold) {
  return accuracy(detail::as_span(scores), labels, threshold);
}

/// ROC curve with one vertex per distinct score, from (0,0) to (1,1).
template <typename Scalar>
std::vector<RocPoint> roc_points(std::span<const Scalar> scores, const std::vector<bool>& labels) {
  detail::check_lengths(scores.size(), labels.size(), "roc_points");
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("roc_points needs both classes present");

  const auto order = detail::order_descending(scores);
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      labels[order[j]] ? ++tp : ++fp;
      ++j;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return pts;
}

template <typename Scalar>
std::vector<RocPoint> roc_points(const std::vector<Scalar>& scores, const std::vector<bool>& labels) {
  return roc_points(std::span<const Scalar>(scores), labels);
}

template <typename Derived>
std::vector<RocPoint> roc_points(const Eigen::DenseBase<Derived>& scores, const std::vector<bool>& labels) {
  return roc_points(detail::as_span(scores), labels);
}

inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  }
  return area;
}

/// Accuracy at `threshold`, ROC-AUC, class prior and curve for one scored fold.
template <typename Derived>
EvalReport evaluate_scores(const Eigen::DenseBase<Derived>& scores, const std::vector<bool>& labels,
                           double threshold = 0.5) {
  EvalReport r;
  r.n = labels.size();
  r.class_prior = class_prior(labels);
  r.accuracy = accuracy(scores, labels, threshold);
  r.roc_auc = roc_auc(scores, labels);
  if (r.roc_auc) r.roc_points = roc_points(scores, labels);
  return r;
}

}  // namespace cotprobe
