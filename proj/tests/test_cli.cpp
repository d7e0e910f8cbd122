#include "cotprobe/cli.hpp"
#include "cotprobe/serialize.hpp"
#include "cotprobe/trace_store.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace cotprobe;
using cotprobe::testing::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cotprobe");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

// Small planted pack; written once per test through the CLI itself.
void synth_pack(const TempDir& dir, const std::string& name, std::uint64_t seed, const std::string& prefix = "synth") {
  put(dir / (name + ".json"), R"({"n_examples": 400, "hidden_dim": 8, "bayes_auc": 0.8, "capped_fraction": 0.5,
       "prefix_grid": [4, 16, 64], "direction_seed": 42, "id_prefix": ")" + prefix + R"("})");
  const auto r = run_cli({"synth", (dir / (name + ".json")).string(), "-o", (dir / name).string(), "--seed",
                          std::to_string(seed)});
  REQUIRE(r.code == 0);
}

nlohmann::json error_of(const Outcome& r) { return nlohmann::json::parse(r.err).at("error"); }

}  // namespace

TEST_CASE("validate reports zero violations on a well-formed pack") {
  TempDir dir("cli_validate");
  synth_pack(dir, "pack", 1);
  const auto r = run_cli({"validate", (dir / "pack").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("0 violations") == 0);
  CHECK(std::filesystem::exists(dir / "pack" / "synth_config.json"));
}

TEST_CASE("validate exits 3 on a broken pack and names the problem") {
  TempDir dir("cli_broken");
  synth_pack(dir, "pack", 1);
  std::filesystem::resize_file(dir / "pack" / "states_t16.bin", 5);
  const auto r = run_cli({"validate", (dir / "pack").string()});
  CHECK(r.code == 3);
  CHECK(error_of(r).at("kind") == "data");
}

TEST_CASE("usage and config errors exit 2 with a JSON error line") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  const auto missing_arg = run_cli({"sweep"});
  CHECK(missing_arg.code == 2);
  CHECK(error_of(missing_arg).at("code") == 2);

  TempDir dir("cli_usage");
  put(dir / "bad.json", R"({"pack": "p", "unknown_key": 1})");
  const auto unknown = run_cli({"sweep", (dir / "bad.json").string()});
  CHECK(unknown.code == 2);
  CHECK(error_of(unknown).at("message").get<std::string>().find("unknown_key") != std::string::npos);

  CHECK(run_cli({"sweep", (dir / "absent.json").string()}).code == 2);
  put(dir / "synth.json", R"({"n_examples": 2})");
  CHECK(run_cli({"synth", (dir / "synth.json").string(), "-o", (dir / "x").string()}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("unwritable output is a runtime error") {
  TempDir dir("cli_io");
  synth_pack(dir, "pack", 1);
  put(dir / "blocker", "not a directory");
  put(dir / "sweep.json", R"({"pack": "pack", "grid": [4], "k_max": 4, "output_dir": "blocker/out"})");
  const auto r = run_cli({"sweep", (dir / "sweep.json").string()});
  CHECK(r.code == 4);
  CHECK(error_of(r).at("kind") == "runtime");
}

TEST_CASE("sweep output is byte-identical across runs and thread counts") {
  TempDir dir("cli_det");
  synth_pack(dir, "pack", 2);
  put(dir / "sweep.json", R"({"pack": "pack", "cohorts": ["all", "easy", "hard:len>=16"], "k_max": 8,
       "split": {"train_fraction": 0.8, "seed": 3}, "output_dir": "a"})");
  REQUIRE(run_cli({"sweep", (dir / "sweep.json").string()}).code == 0);
  REQUIRE(run_cli({"sweep", (dir / "sweep.json").string(), "--output-dir", (dir / "b").string(), "--threads", "3"})
              .code == 0);
  CHECK(slurp(dir / "a" / "sweep.json") == slurp(dir / "b" / "sweep.json"));
  CHECK(slurp(dir / "a" / "sweep.csv") == slurp(dir / "b" / "sweep.csv"));
  CHECK(slurp(dir / "a" / "sweep.csv").rfind("t,cohort,feature_set,n_train,n_test,train_prior,accuracy,roc_auc\n", 0) ==
        0);

  REQUIRE(run_cli({"sweep", (dir / "sweep.json").string(), "--output-dir", (dir / "c").string(), "--seed", "4"})
              .code == 0);
  CHECK(slurp(dir / "a" / "sweep.json") != slurp(dir / "c" / "sweep.json"));

  const auto doc = read_json_file((dir / "a" / "sweep.json").string());
  const auto back = sweep_from_json(doc);
  CHECK(back.rows.size() == 9);
  CHECK(to_json(back).dump() == doc.dump());
}

TEST_CASE("synth, sweep, baselines, margins and report chain together") {
  TempDir dir("cli_chain");
  synth_pack(dir, "pack", 5);
  put(dir / "sweep.json", R"({"pack": "pack", "k_max": 8, "output_dir": "out"})");
  REQUIRE(run_cli({"sweep", (dir / "sweep.json").string()}).code == 0);
  REQUIRE(run_cli({"baselines", (dir / "sweep.json").string()}).code == 0);
  CHECK(std::filesystem::exists(dir / "out" / "baselines.csv"));

  const auto m = run_cli({"margins", (dir / "out" / "sweep.json").string(), (dir / "out" / "baselines.json").string(),
                          "-o", (dir / "out" / "margins.csv").string()});
  REQUIRE(m.code == 0);
  const auto margins = read_json_file((dir / "out" / "margins.json").string());
  CHECK(margins.at("rows").size() == 3);
  for (const auto& row : margins.at("rows")) CHECK(row.at("margin").get<double>() > 0.0);

  const auto r = run_cli({"report", (dir / "out" / "sweep.json").string(), "-o", (dir / "report").string()});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "report" / "summary.txt"));
  CHECK(std::filesystem::exists(dir / "report" / "auc_all.svg"));
  CHECK(slurp(dir / "report" / "auc_all.svg").find("<svg") != std::string::npos);

  put(dir / "mismatch.json", R"({"pack": "pack", "grid": [4], "k_max": 8, "output_dir": "out2"})");
  REQUIRE(run_cli({"baselines", (dir / "mismatch.json").string()}).code == 0);
  CHECK(run_cli({"margins", (dir / "out" / "sweep.json").string(), (dir / "out2" / "baselines.json").string()}).code ==
        3);
}

TEST_CASE("simulate writes reports and refuses overlapping packs") {
  TempDir dir("cli_sim");
  synth_pack(dir, "train", 6, "train");
  synth_pack(dir, "eval", 7, "eval");
  put(dir / "sim.json", R"({"train_pack": "train", "eval_pack": "eval", "k_max": 8, "thresholds": [0.0, 0.7, 1.0],
       "save_probes": true, "output_dir": "sim"})");
  REQUIRE(run_cli({"simulate", (dir / "sim.json").string()}).code == 0);
  const auto doc = read_json_file((dir / "sim" / "exit_reports.json").string());
  REQUIRE(doc.at("reports").size() == 3);
  CHECK(doc.at("reports")[0].at("mean_tokens_policy").get<double>() == 4.0);
  CHECK(doc.at("reports")[2].at("savings_fraction").get<double>() == 0.0);
  CHECK(std::filesystem::exists(dir / "sim" / "probes" / "probe_t16.json"));

  put(dir / "leak.json", R"({"train_pack": "train", "eval_pack": "train", "k_max": 8, "output_dir": "leak"})");
  const auto leak = run_cli({"simulate", (dir / "leak.json").string()});
  CHECK(leak.code == 3);
  CHECK(error_of(leak).at("message").get<std::string>().find("trained on") != std::string::npos);
}

TEST_CASE("the installed binary runs") {
  TempDir dir("cli_bin");
  const std::string cmd = std::string(COTPROBE_CLI_PATH) + " validate " + (dir / "nothing").string() + " 2> " +
                          (dir / "err.txt").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 3);
  CHECK(slurp(dir / "err.txt").find("\"error\"") != std::string::npos);
}

TEST_CASE("planted-signal synth then sweep then report recovers the oracle AUC at t=4") {
  TempDir dir("cli_oracle");
  put(dir / "synth.json", R"({"n_examples": 2000, "hidden_dim": 64, "bayes_auc": 0.85, "seed": 1})");
  REQUIRE(run_cli({"synth", (dir / "synth.json").string(), "-o", (dir / "pack").string()}).code == 0);
  put(dir / "sweep.json", R"({"pack": "pack", "grid": [4, 8], "output_dir": "out"})");
  REQUIRE(run_cli({"sweep", (dir / "sweep.json").string()}).code == 0);
  const auto rep = run_cli({"report", (dir / "out" / "sweep.json").string(), "-o", (dir / "report").string()});
  REQUIRE(rep.code == 0);
  const double oracle = read_json_file((dir / "pack" / "synth_config.json").string()).at("bayes_auc").get<double>();
  const auto doc = read_json_file((dir / "out" / "sweep.json").string());
  const auto& first = doc.at("rows").at(0);
  REQUIRE(first.at("t") == 4);
  CHECK(std::abs(first.at("report").at("roc_auc").get<double>() - oracle) <= 0.02);
  CHECK(std::filesystem::exists(dir / "report" / "survival_all.svg"));
}
