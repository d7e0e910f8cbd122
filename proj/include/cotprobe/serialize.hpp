#pragma once

// JSON and CSV forms of probe bundles, sweep results, synth configs and exit reports.
// Doubles are written in shortest round-trip form, so a parse reproduces every bit.

#include "cotprobe/analysis.hpp"
#include "cotprobe/earlyexit.hpp"
#include "cotprobe/probe.hpp"
#include "cotprobe/synth.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace cotprobe {

using Json = nlohmann::ordered_json;

Json to_json(const PcaModel<double>& pca);
PcaModel<double> pca_from_json(const Json& j);

Json to_json(const ProbeModel& probe);
ProbeModel probe_from_json(const Json& j);

Json to_json(const CohortFilter& c);
CohortFilter cohort_from_json(const Json& j);

Json to_json(const AnalysisConfig& c);
AnalysisConfig analysis_config_from_json(const Json& j, AnalysisConfig defaults = {});

Json to_json(const EvalReport& r);
Json to_json(const CheckpointResult& r);
Json to_json(const SweepResult& s);
SweepResult sweep_from_json(const Json& j);

/// Header: t,cohort,feature_set,n_train,n_test,train_prior,accuracy,roc_auc
std::string sweep_to_csv(const SweepResult& s);

Json to_json(const std::vector<MarginRow>& rows);
std::string margins_to_csv(const std::vector<MarginRow>& rows);

Json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const Json& j);

Json to_json(const ExitReport& r);
std::string exit_reports_to_csv(const std::vector<ExitReport>& reports);

/// Reads a whole JSON file; DataError on parse failure, IoError if unreadable.
Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace cotprobe
