#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cotprobe {

inline constexpr int kSchemaVersion = 1;

enum class Difficulty { easy, hard };

std::string_view to_string(Difficulty d);
Difficulty parse_difficulty(std::string_view s);

/// Pooled final-layer state and entropy features at one prefix length.
struct CheckpointRecord {
  int t = 0;
  Eigen::VectorXf pooled_state;
  double mean_entropy = 0.0;    // nats, reasoning tokens 1..t
  double window_entropy = 0.0;  // nats, reasoning tokens t-3..t
};

struct ExampleTrace {
  std::string example_id;
  Difficulty difficulty = Difficulty::easy;
  int raw_level = 1;
  bool correct = false;
  int reasoning_length = 0;
  std::vector<CheckpointRecord> checkpoints;  // sorted by t

  const CheckpointRecord* checkpoint(int t) const;
};

inline std::vector<int> default_prefix_grid() { return {4, 8, 16, 32, 64, 128, 192, 256, 384, 512}; }

struct TracePack {
  int schema_version = kSchemaVersion;
  std::string model_name;
  int hidden_dim = 0;
  std::vector<int> prefix_grid = default_prefix_grid();
  int pooling_window = 4;
  std::vector<ExampleTrace> examples;

  bool has_checkpoint(int t) const;
};

/// Rows of one checkpoint after survival filtering, in example order.
struct CheckpointSlice {
  Eigen::MatrixXd X;
  std::vector<std::string> ids;
  std::vector<bool> labels;
  std::vector<std::size_t> example_index;  // position in pack.examples
};

/// Returns a human-readable line per violated invariant; empty iff the pack is well formed.
std::vector<std::string> validate_pack(const TracePack& pack);

/// Writes manifest.json, examples.jsonl and states_t{t}.bin into `dir` (created if absent).
/// Throws ValidationError for an invalid pack and IoError on filesystem failures.
void write_pack(const TracePack& pack, const std::filesystem::path& dir);

/// Loads and validates a pack. Malformed content raises DataError, never coerced.
TracePack load_pack(const std::filesystem::path& dir);

/// Examples with reasoning_length >= t. Throws ConfigError if t is not in the grid.
CheckpointSlice checkpoint_matrix(const TracePack& pack, int t);

/// Number of examples surviving to checkpoint t.
std::size_t survivor_count(const TracePack& pack, int t);

/// Concatenates packs with identical headers and disjoint ids.
TracePack merge_packs(const std::vector<TracePack>& packs);

/// Same header, only the examples whose ids are listed (in pack order).
TracePack select_examples(const TracePack& pack, const std::vector<std::string>& ids);

/// Field-for-field equality with bitwise float comparison.
bool packs_identical(const TracePack& a, const TracePack& b);

}  // namespace cotprobe
