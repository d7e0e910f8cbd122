#include "cotprobe/trace_store.hpp"

#include "cotprobe/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace cotprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Difficulty d) { return d == Difficulty::easy ? "easy" : "hard"; }

Difficulty parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "hard") return Difficulty::hard;
  throw DataError("unknown difficulty bucket '" + std::string(s) + "'");
}

const CheckpointRecord* ExampleTrace::checkpoint(int t) const {
  auto it = std::lower_bound(checkpoints.begin(), checkpoints.end(), t,
                             [](const CheckpointRecord& c, int v) { return c.t < v; });
  return (it != checkpoints.end() && it->t == t) ? &*it : nullptr;
}

bool TracePack::has_checkpoint(int t) const {
  return std::find(prefix_grid.begin(), prefix_grid.end(), t) != prefix_grid.end();
}

std::vector<std::string> validate_pack(const TracePack& pack) {
  std::vector<std::string> v;
  auto add = [&v](std::string s) { v.push_back(std::move(s)); };

  if (pack.hidden_dim <= 0) add("hidden_dim must be positive (got " + std::to_string(pack.hidden_dim) + ")");
  if (pack.pooling_window <= 0) add("pooling_window must be positive");
  if (pack.prefix_grid.empty()) add("prefix_grid is empty");
  for (std::size_t i = 1; i < pack.prefix_grid.size(); ++i) {
    if (pack.prefix_grid[i] <= pack.prefix_grid[i - 1]) {
      add("prefix_grid not strictly increasing at position " + std::to_string(i));
    }
  }
  if (!pack.prefix_grid.empty() && pack.prefix_grid.front() < pack.pooling_window) {
    add("prefix_grid minimum " + std::to_string(pack.prefix_grid.front()) + " is below pooling_window " +
        std::to_string(pack.pooling_window));
  }

  std::unordered_set<std::string> seen;
  for (const auto& ex : pack.examples) {
    const std::string who = "example '" + ex.example_id + "'";
    if (ex.example_id.empty()) add("example with empty example_id");
    if (!seen.insert(ex.example_id).second) add("duplicate example_id '" + ex.example_id + "'");

    if (ex.raw_level < 1 || ex.raw_level > 5) {
      add(who + ": raw_level " + std::to_string(ex.raw_level) + " outside 1..5");
    } else if (ex.raw_level == 3) {
      add(who + ": raw_level 3 has no difficulty bucket");
    } else {
      const Difficulty expected = ex.raw_level <= 2 ? Difficulty::easy : Difficulty::hard;
      if (expected != ex.difficulty) {
        add(who + ": difficulty_bucket " + std::string(to_string(ex.difficulty)) + " inconsistent with raw_level " +
            std::to_string(ex.raw_level));
      }
    }
    if (ex.reasoning_length <= 0) add(who + ": reasoning_length must be positive");

    int prev_t = 0;
    for (const auto& c : ex.checkpoints) {
      const std::string at = who + " t=" + std::to_string(c.t);
      if (c.t <= prev_t) add(at + ": checkpoint t values not strictly increasing");
      prev_t = c.t;
      if (!pack.has_checkpoint(c.t)) add(at + ": t not in prefix_grid");
      if (c.t > ex.reasoning_length) {
        add(at + ": checkpoint beyond reasoning_length " + std::to_string(ex.reasoning_length));
      }
      if (c.pooled_state.size() != pack.hidden_dim) {
        add(at + ": pooled_state length " + std::to_string(c.pooled_state.size()) + " != hidden_dim " +
            std::to_string(pack.hidden_dim));
      }
      if (!c.pooled_state.allFinite()) add(at + ": non-finite pooled_state entry");
      if (!std::isfinite(c.mean_entropy) || c.mean_entropy < 0.0) add(at + ": mean_entropy must be finite and >= 0");
      if (!std::isfinite(c.window_entropy) || c.window_entropy < 0.0) {
        add(at + ": window_entropy must be finite and >= 0");
      }
    }
    for (int t : pack.prefix_grid) {
      if (t <= ex.reasoning_length && ex.checkpoint(t) == nullptr) {
        add(who + " t=" + std::to_string(t) + ": surviving checkpoint missing");
      }
    }
  }
  return v;
}

namespace {

std::string states_file_name(int t) { return "states_t" + std::to_string(t) + ".bin"; }

void put_le32(char* out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) out[b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
}

float get_le32(const char* in) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing file '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
T required(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": bad value for '" + key + "': " + e.what());
  }
}

double entropy_value(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number()) throw DataError(where + ": '" + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace

void write_pack(const TracePack& pack, const fs::path& dir) {
  if (auto v = validate_pack(pack); !v.empty()) throw ValidationError(std::move(v));

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  ojson manifest;
  manifest["schema_version"] = pack.schema_version;
  manifest["model_name"] = pack.model_name;
  manifest["hidden_dim"] = pack.hidden_dim;
  manifest["prefix_grid"] = pack.prefix_grid;
  manifest["pooling_window"] = pack.pooling_window;
  manifest["n_examples"] = pack.examples.size();
  {
    auto out = open_out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed for manifest.json");
  }

  {
    auto out = open_out(dir / "examples.jsonl");
    for (const auto& ex : pack.examples) {
      ojson row;
      row["example_id"] = ex.example_id;
      row["raw_level"] = ex.raw_level;
      row["difficulty_bucket"] = to_string(ex.difficulty);
      row["correct"] = ex.correct;
      row["reasoning_length"] = ex.reasoning_length;
      ojson cps = ojson::array();
      for (const auto& c : ex.checkpoints) {
        cps.push_back({{"t", c.t}, {"mean_entropy", c.mean_entropy}, {"window_entropy", c.window_entropy}});
      }
      row["checkpoints"] = std::move(cps);
      out << row.dump() << '\n';
    }
    if (!out) throw IoError("write failed for examples.jsonl");
  }

  const auto dim = static_cast<std::size_t>(pack.hidden_dim);
  for (int t : pack.prefix_grid) {
    std::vector<char> buf;
    for (const auto& ex : pack.examples) {
      const auto* c = ex.checkpoint(t);
      if (c == nullptr) continue;
      const std::size_t off = buf.size();
      buf.resize(off + 4 * dim);
      for (std::size_t j = 0; j < dim; ++j) put_le32(buf.data() + off + 4 * j, c->pooled_state[Eigen::Index(j)]);
    }
    const fs::path p = dir / states_file_name(t);
    if (buf.empty()) {
      fs::remove(p, ec);
      continue;
    }
    auto out = open_out(p, std::ios::out | std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + p.string());
  }
}

TracePack load_pack(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("pack directory '" + dir.string() + "' does not exist");

  TracePack pack;
  std::size_t n_examples = 0;
  try {
    const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
    const std::string where = "manifest.json";
    pack.schema_version = required<int>(manifest, "schema_version", where);
    pack.model_name = required<std::string>(manifest, "model_name", where);
    pack.hidden_dim = required<int>(manifest, "hidden_dim", where);
    pack.prefix_grid = required<std::vector<int>>(manifest, "prefix_grid", where);
    pack.pooling_window = required<int>(manifest, "pooling_window", where);
    n_examples = required<std::size_t>(manifest, "n_examples", where);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("manifest.json: ") + e.what());
  }
  if (pack.schema_version != kSchemaVersion) {
    throw DataError("unsupported schema_version " + std::to_string(pack.schema_version));
  }
  if (pack.hidden_dim <= 0) throw DataError("manifest hidden_dim must be positive");

  std::istringstream lines(read_text(dir / "examples.jsonl"));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "examples.jsonl:" + std::to_string(lineno);
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": " + e.what());
    }
    ExampleTrace ex;
    ex.example_id = required<std::string>(row, "example_id", where);
    ex.raw_level = required<int>(row, "raw_level", where);
    ex.difficulty = parse_difficulty(required<std::string>(row, "difficulty_bucket", where));
    ex.correct = required<bool>(row, "correct", where);
    ex.reasoning_length = required<int>(row, "reasoning_length", where);
    if (!row.contains("checkpoints") || !row["checkpoints"].is_array()) {
      throw DataError(where + ": 'checkpoints' must be an array");
    }
    for (const auto& c : row["checkpoints"]) {
      CheckpointRecord rec;
      rec.t = required<int>(c, "t", where);
      rec.mean_entropy = entropy_value(c, "mean_entropy", where);
      rec.window_entropy = entropy_value(c, "window_entropy", where);
      ex.checkpoints.push_back(std::move(rec));
    }
    pack.examples.push_back(std::move(ex));
  }
  if (pack.examples.size() != n_examples) {
    throw DataError("manifest n_examples=" + std::to_string(n_examples) + " but examples.jsonl has " +
                    std::to_string(pack.examples.size()) + " rows");
  }

  const auto dim = static_cast<std::size_t>(pack.hidden_dim);
  for (int t : pack.prefix_grid) {
    std::vector<CheckpointRecord*> rows;
    for (auto& ex : pack.examples) {
      for (auto& c : ex.checkpoints) {
        if (c.t == t) rows.push_back(&c);
      }
    }
    const fs::path p = dir / states_file_name(t);
    const std::size_t expected = rows.size() * dim * 4;
    if (!fs::exists(p)) {
      if (rows.empty()) continue;
      throw DataError("missing file '" + p.string() + "'");
    }
    const std::string bytes = read_text(p);
    if (bytes.size() != expected) {
      throw DataError(states_file_name(t) + ": dimension mismatch, expected " + std::to_string(rows.size()) + " x " +
                      std::to_string(dim) + " float32 (" + std::to_string(expected) + " bytes), found " +
                      std::to_string(bytes.size()) + " bytes");
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Eigen::VectorXf v(static_cast<Eigen::Index>(dim));
      for (std::size_t j = 0; j < dim; ++j) {
        const float f = get_le32(bytes.data() + 4 * (r * dim + j));
        if (!std::isfinite(f)) {
          throw DataError(states_file_name(t) + ": non-finite value at row " + std::to_string(r) + " col " +
                          std::to_string(j));
        }
        v[Eigen::Index(j)] = f;
      }
      rows[r]->pooled_state = std::move(v);
    }
  }

  // Checkpoints whose t is outside the grid never received a vector; validate_pack reports them.
  if (auto v = validate_pack(pack); !v.empty()) throw ValidationError(std::move(v));
  return pack;
}

CheckpointSlice checkpoint_matrix(const TracePack& pack, int t) {
  if (!pack.has_checkpoint(t)) throw ConfigError("checkpoint t=" + std::to_string(t) + " not in prefix_grid");
  CheckpointSlice s;
  for (std::size_t i = 0; i < pack.examples.size(); ++i) {
    if (pack.examples[i].reasoning_length >= t) s.example_index.push_back(i);
  }
  s.X.resize(static_cast<Eigen::Index>(s.example_index.size()), pack.hidden_dim);
  for (std::size_t r = 0; r < s.example_index.size(); ++r) {
    const auto& ex = pack.examples[s.example_index[r]];
    const auto* c = ex.checkpoint(t);
    if (c == nullptr) throw DataError("example '" + ex.example_id + "' missing checkpoint t=" + std::to_string(t));
    s.X.row(Eigen::Index(r)) = c->pooled_state.cast<double>().transpose();
    s.ids.push_back(ex.example_id);
    s.labels.push_back(ex.correct);
  }
  return s;
}

std::size_t survivor_count(const TracePack& pack, int t) {
  return static_cast<std::size_t>(std::count_if(pack.examples.begin(), pack.examples.end(),
                                                [t](const ExampleTrace& ex) { return ex.reasoning_length >= t; }));
}

TracePack merge_packs(const std::vector<TracePack>& packs) {
  if (packs.empty()) throw ConfigError("merge_packs needs at least one pack");
  TracePack out = packs.front();
  out.examples.clear();
  std::set<std::string> ids;
  for (std::size_t i = 0; i < packs.size(); ++i) {
    const auto& p = packs[i];
    const std::string which = "pack " + std::to_string(i);
    if (p.schema_version != out.schema_version) throw DataError(which + ": schema_version mismatch");
    if (p.model_name != out.model_name) throw DataError(which + ": model_name mismatch");
    if (p.hidden_dim != out.hidden_dim) throw DataError(which + ": hidden_dim mismatch");
    if (p.prefix_grid != out.prefix_grid) throw DataError(which + ": prefix_grid mismatch");
    if (p.pooling_window != out.pooling_window) throw DataError(which + ": pooling_window mismatch");
    for (const auto& ex : p.examples) {
      if (!ids.insert(ex.example_id).second) throw DataError("example_id collision: '" + ex.example_id + "'");
      out.examples.push_back(ex);
    }
  }
  return out;
}

TracePack select_examples(const TracePack& pack, const std::vector<std::string>& ids) {
  const std::unordered_set<std::string> keep(ids.begin(), ids.end());
  TracePack out = pack;
  out.examples.clear();
  for (const auto& ex : pack.examples) {
    if (keep.count(ex.example_id)) out.examples.push_back(ex);
  }
  return out;
}

namespace {

bool same_bits(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return a.size() == b.size() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(float) * std::size_t(a.size())) == 0);
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

bool packs_identical(const TracePack& a, const TracePack& b) {
  if (a.schema_version != b.schema_version || a.model_name != b.model_name || a.hidden_dim != b.hidden_dim ||
      a.prefix_grid != b.prefix_grid || a.pooling_window != b.pooling_window ||
      a.examples.size() != b.examples.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    const auto& x = a.examples[i];
    const auto& y = b.examples[i];
    if (x.example_id != y.example_id || x.difficulty != y.difficulty || x.raw_level != y.raw_level ||
        x.correct != y.correct || x.reasoning_length != y.reasoning_length ||
        x.checkpoints.size() != y.checkpoints.size()) {
      return false;
    }
    for (std::size_t k = 0; k < x.checkpoints.size(); ++k) {
      const auto& c = x.checkpoints[k];
      const auto& d = y.checkpoints[k];
      if (c.t != d.t || !same_bits(c.pooled_state, d.pooled_state) || !same_bits(c.mean_entropy, d.mean_entropy) ||
          !same_bits(c.window_entropy, d.window_entropy)) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace cotprobe
