#pragma once

#include "cotprobe/probe.hpp"
#include "cotprobe/trace_store.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

namespace cotprobe {

enum class ExitDirection { halt_when_confident_correct, flag_when_confident_incorrect };

std::string_view to_string(ExitDirection d);
ExitDirection parse_exit_direction(std::string_view s);

/// A rollout exits at the first consulted checkpoint whose confidence reaches the threshold.
/// Confidence is the probe score for halt_when_confident_correct and 1 - score for
/// flag_when_confident_incorrect.
struct ExitPolicy {
  std::map<int, double> thresholds;  // per-t; consulted checkpoints are exactly these keys
  std::optional<double> global_threshold;  // used when `thresholds` is empty, for every probe t
  ExitDirection direction = ExitDirection::halt_when_confident_correct;

  static ExitPolicy global(double threshold, ExitDirection direction);
};

/// Tokens are charged as t on exit, otherwise reasoning_length; probe cost is not counted.
struct ExitReport {
  std::size_t n_examples = 0;
  double mean_tokens_full = 0.0;
  double mean_tokens_policy = 0.0;
  double savings_fraction = 0.0;
  std::map<int, std::size_t> flagged_at_histogram;
  std::size_t n_exited = 0;
  // Accuracy of (score >= 0.5) against the label over exited rollouts; absent when none exit.
  std::optional<double> decision_quality;
  ExitPolicy policy;
};

/// Throws ProvenanceError if any probe was trained on an example present in `pack`.
void check_disjoint(const TracePack& pack, const std::map<int, ProbeModel>& probes);

/// Replays every example through the policy. Throws ConfigError if the policy consults a t with
/// no probe or a threshold outside [0,1], ProvenanceError on train/eval overlap.
ExitReport simulate(const TracePack& pack, const std::map<int, ProbeModel>& probes, const ExitPolicy& policy);

/// One global-threshold report per entry of `thresholds`.
std::vector<ExitReport> threshold_sweep(const TracePack& pack, const std::map<int, ProbeModel>& probes,
                                        const std::vector<double>& thresholds, ExitDirection direction);

}  // namespace cotprobe
