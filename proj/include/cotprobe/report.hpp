#pragma once

#include "cotprobe/analysis.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cotprobe {

/// Fixed-width text table of every sweep row.
std::string summary_table(const SweepResult& sweep);

/// Writes, per cohort, auc_<cohort>.svg and accuracy_<cohort>.svg (one line per feature set, t on
/// a categorical axis) and survival_<cohort>.svg (survivor counts per t), plus summary.txt.
/// Returns the written paths in creation order.
std::vector<std::filesystem::path> render_report(const SweepResult& sweep, const std::filesystem::path& out_dir);

}  // namespace cotprobe
