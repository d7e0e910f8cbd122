#include "cotprobe/earlyexit.hpp"

#include "cotprobe/errors.hpp"

#include <limits>
#include <unordered_set>

namespace cotprobe {

std::string_view to_string(ExitDirection d) {
  return d == ExitDirection::halt_when_confident_correct ? "halt_when_confident_correct"
                                                         : "flag_when_confident_incorrect";
}

ExitDirection parse_exit_direction(std::string_view s) {
  if (s == "halt_when_confident_correct") return ExitDirection::halt_when_confident_correct;
  if (s == "flag_when_confident_incorrect") return ExitDirection::flag_when_confident_incorrect;
  throw ConfigError("unknown exit direction '" + std::string(s) + "'");
}

ExitPolicy ExitPolicy::global(double threshold, ExitDirection direction) {
  ExitPolicy p;
  p.global_threshold = threshold;
  p.direction = direction;
  return p;
}

void check_disjoint(const TracePack& pack, const std::map<int, ProbeModel>& probes) {
  std::unordered_set<std::string> ids;
  for (const auto& ex : pack.examples) ids.insert(ex.example_id);
  for (const auto& [t, probe] : probes) {
    for (const auto& id : probe.provenance.train_ids) {
      if (ids.count(id)) {
        throw ProvenanceError("probe for t=" + std::to_string(t) + " was trained on example '" + id +
                              "', which is also in the simulated pack");
      }
    }
  }
}

ExitReport simulate(const TracePack& pack, const std::map<int, ProbeModel>& probes, const ExitPolicy& policy) {
  std::map<int, double> thresholds = policy.thresholds;
  if (thresholds.empty()) {
    if (!policy.global_threshold) throw ConfigError("exit policy has no thresholds");
    for (const auto& [t, probe] : probes) thresholds[t] = *policy.global_threshold;
  }
  for (const auto& [t, thr] : thresholds) {
    if (!(thr >= 0.0 && thr <= 1.0)) throw ConfigError("exit threshold for t=" + std::to_string(t) + " outside [0,1]");
    if (!probes.count(t)) throw ConfigError("exit policy consults t=" + std::to_string(t) + " but no probe exists");
  }
  check_disjoint(pack, probes);

  // Score each consulted checkpoint in one batch per t.
  std::map<int, std::vector<double>> scores;  // t -> score per example (NaN if not surviving)
  for (const auto& [t, thr] : thresholds) {
    const auto slice = checkpoint_matrix(pack, t);
    auto& col = scores[t];
    col.assign(pack.examples.size(), std::numeric_limits<double>::quiet_NaN());
    if (slice.example_index.empty()) continue;
    const Eigen::VectorXd s = predict_scores(probes.at(t), slice.X);
    for (std::size_t r = 0; r < slice.example_index.size(); ++r) col[slice.example_index[r]] = s[Eigen::Index(r)];
  }

  ExitReport rep;
  rep.policy = policy;
  rep.n_examples = pack.examples.size();
  double full = 0.0, spent = 0.0;
  std::size_t quality_hits = 0;
  for (std::size_t i = 0; i < pack.examples.size(); ++i) {
    const auto& ex = pack.examples[i];
    full += ex.reasoning_length;
    bool exited = false;
    for (const auto& [t, thr] : thresholds) {
      if (t > ex.reasoning_length) break;
      const double score = scores[t][i];
      const double confidence =
          policy.direction == ExitDirection::halt_when_confident_correct ? score : 1.0 - score;
      if (confidence >= thr) {
        spent += t;
        ++rep.flagged_at_histogram[t];
        ++rep.n_exited;
        if ((score >= 0.5) == ex.correct) ++quality_hits;
        exited = true;
        break;
      }
    }
    if (!exited) spent += ex.reasoning_length;
  }
  if (rep.n_examples > 0) {
    rep.mean_tokens_full = full / double(rep.n_examples);
    rep.mean_tokens_policy = spent / double(rep.n_examples);
  }
  rep.savings_fraction = full > 0.0 ? 1.0 - spent / full : 0.0;
  if (rep.n_exited > 0) rep.decision_quality = double(quality_hits) / double(rep.n_exited);
  return rep;
}

std::vector<ExitReport> threshold_sweep(const TracePack& pack, const std::map<int, ProbeModel>& probes,
                                        const std::vector<double>& thresholds, ExitDirection direction) {
  std::vector<ExitReport> out;
  out.reserve(thresholds.size());
  for (double thr : thresholds) out.push_back(simulate(pack, probes, ExitPolicy::global(thr, direction)));
  return out;
}

}  // namespace cotprobe
