#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

// End-to-end checks against the installed `hpt` binary. Every invocation runs
// in a scratch directory so relative paths in configs stay self-contained.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kCli = HPT_CLI_PATH;

struct Sandbox {
  fs::path dir;
  Sandbox() {
    dir = fs::temp_directory_path() /
          ("hpt_cli_" + std::to_string(static_cast<unsigned>(::getpid())) + "_" +
           std::to_string(counter()++));
    fs::create_directories(dir);
  }
  ~Sandbox() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

struct RunResult {
  int exit_code;
  std::string out;  // stdout + stderr

  bool contains(const std::string& needle) const { return out.find(needle) != std::string::npos; }
};

RunResult run_cli(const Sandbox& sb, const std::string& args) {
  const fs::path log = sb.dir / "cli_output.log";
  const std::string cmd =
      "cd '" + sb.dir.string() + "' && '" + kCli.string() + "' " + args + " > '" + log.string() +
      "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::ostringstream os;
  os << is.rdbuf();
  r.out = os.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

json slurp_json(const fs::path& p) { return json::parse(slurp(p)); }

// tiny but trainable: 2 classes, 12/6/6 samples, 4x4 frames, D=8 model
const std::string kGenArgs =
    "gen-data --data.classes 2 --data.train_per_class 6 --data.val_per_class 3 "
    "--data.test_per_class 3 --data.seq 4 --data.feat 4 --data.seed 7 --out data";
const std::string kModelArgs =
    "--model.classes 2 --model.dim 8 --model.heads 2 --model.blocks 1 --model.feat 4 "
    "--model.max_seq 4";
const std::string kTrainArgs =
    "train --data.dir data " + kModelArgs +
    " --method.kind hpt --method.bins 4 --train.batch_size 4 --train.max_epochs 3 "
    "--train.patience 2 --train.seed 11";

}  // namespace

TEST_CASE("cli: gen-data writes splits, manifest, resolved config") {
  Sandbox sb;
  const RunResult r = run_cli(sb, kGenArgs);
  CAPTURE(r.out);
  CHECK(r.exit_code == 0);
  for (const char* f : {"train.ptds", "val.ptds", "test.ptds", "manifest.json",
                        "resolved_config.json"}) {
    CHECK_MESSAGE(fs::exists(sb.dir / "data" / f), f);
  }
  const json manifest = slurp_json(sb.dir / "data" / "manifest.json");
  CHECK(manifest["generator"]["seed"].get<std::size_t>() == 7);
  CHECK(manifest["generator"]["shift_profile"].get<std::string>() == "none");
  CHECK(manifest["splits"]["train"].get<std::size_t>() == 12);

  // same seed, fresh directory: byte-identical datasets
  const RunResult r2 = run_cli(sb, kGenArgs + "2");
  CHECK(r2.exit_code == 0);
  CHECK(slurp(sb.dir / "data" / "train.ptds") == slurp(sb.dir / "data2" / "train.ptds"));

  // gain profile: train split unchanged, eval splits rescaled
  const RunResult r3 = run_cli(sb, kGenArgs + "3 --data.shift_profile gain");
  CHECK(r3.exit_code == 0);
  CHECK(slurp(sb.dir / "data" / "train.ptds") == slurp(sb.dir / "data3" / "train.ptds"));
  CHECK(slurp(sb.dir / "data" / "val.ptds") != slurp(sb.dir / "data3" / "val.ptds"));
  const json cfg3 = slurp_json(sb.dir / "data3" / "resolved_config.json");
  CHECK(cfg3["data"]["shift_profile"].get<std::string>() == "gain");

  const RunResult bad = run_cli(sb, kGenArgs + "4 --data.shift_profile tilt");
  CHECK(bad.exit_code == 1);
  CHECK(bad.contains("shift profile"));
}

TEST_CASE("cli: gen-data rejects data.dir") {
  Sandbox sb;
  const RunResult r = run_cli(sb, "gen-data --data.dir somewhere --out d");
  CHECK(r.exit_code == 1);
}

TEST_CASE("cli: train writes artifacts and reruns byte-identically from its manifest") {
  Sandbox sb;
  REQUIRE(run_cli(sb, kGenArgs).exit_code == 0);

  const RunResult r = run_cli(sb, kTrainArgs + " --out run1");
  CAPTURE(r.out);
  REQUIRE(r.exit_code == 0);
  for (const char* f : {"loss.csv", "report.json", "checkpoint.hpta", "resolved_config.json"}) {
    CHECK_MESSAGE(fs::exists(sb.dir / "run1" / f), f);
  }

  // the resolved config alone must reproduce the run exactly
  const RunResult r2 = run_cli(sb, "train --config run1/resolved_config.json --out run2");
  CAPTURE(r2.out);
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(sb.dir / "run1" / "loss.csv") == slurp(sb.dir / "run2" / "loss.csv"));

  // reports agree on every field except wall-clock time
  json rep1 = slurp_json(sb.dir / "run1" / "report.json");
  json rep2 = slurp_json(sb.dir / "run2" / "report.json");
  rep1.erase("wall_seconds");
  rep2.erase("wall_seconds");
  CHECK(rep1 == rep2);
}

TEST_CASE("cli: eval matches the training report exactly") {
  Sandbox sb;
  REQUIRE(run_cli(sb, kGenArgs).exit_code == 0);
  REQUIRE(run_cli(sb, kTrainArgs + " --out run").exit_code == 0);
  const json report = slurp_json(sb.dir / "run" / "report.json");

  const RunResult rv = run_cli(sb, "eval --checkpoint run/checkpoint.hpta --split val --out ev");
  CAPTURE(rv.out);
  CHECK(rv.exit_code == 0);
  const json ev = slurp_json(sb.dir / "ev" / "eval.json");
  CHECK(ev["loss"].get<double>() == report["best_val_loss"].get<double>());

  const RunResult rt = run_cli(sb, "eval --checkpoint run/checkpoint.hpta --split test --out et");
  CHECK(rt.exit_code == 0);
  const json et = slurp_json(sb.dir / "et" / "eval.json");
  CHECK(et["loss"].get<double>() == report["test_loss"].get<double>());
  CHECK(et["accuracy"].get<double>() == report["test_accuracy"].get<double>());

  CHECK(run_cli(sb, "eval --checkpoint run/checkpoint.hpta --split train --out etr").exit_code ==
        0);
  CHECK(run_cli(sb, "eval --checkpoint run/checkpoint.hpta --split bogus --out eb").exit_code ==
        1);
}

TEST_CASE("cli: io and validation failures use distinct exit codes") {
  Sandbox sb;
  REQUIRE(run_cli(sb, kGenArgs).exit_code == 0);

  SUBCASE("missing checkpoint is an io error") {
    const RunResult r = run_cli(sb, "eval --checkpoint nope.hpta --split val --out e");
    CHECK(r.exit_code == 2);
  }
  SUBCASE("corrupt checkpoint is an io/format error") {
    std::ofstream(sb.dir / "junk.hpta") << "JUNKJUNKJUNK";
    const RunResult r = run_cli(sb, "eval --checkpoint junk.hpta --split val --out e");
    CHECK(r.exit_code == 2);
  }
  SUBCASE("unknown config key is a validation error") {
    std::ofstream(sb.dir / "bad.json") << R"({"model": {"dims": 8}})";
    const RunResult r = run_cli(sb, "train --config bad.json --out t");
    CHECK(r.exit_code == 1);
    CHECK(r.contains("model.dims"));
  }
  SUBCASE("unknown nested generator key is a validation error") {
    std::ofstream(sb.dir / "bad.json") << R"({"data": {"classes": 2, "sigmas": 0.2}})";
    const RunResult r = run_cli(sb, "gen-data --config bad.json --out g");
    CHECK(r.exit_code == 1);
    CHECK(r.contains("data.sigmas"));
  }
  SUBCASE("malformed json is a validation error") {
    std::ofstream(sb.dir / "bad.json") << "not json";
    CHECK(run_cli(sb, "train --config bad.json --out t").exit_code == 1);
  }
  SUBCASE("model/data mismatch is a validation error") {
    const RunResult r = run_cli(sb, kTrainArgs + " --model.classes 3 --out t");
    CHECK(r.exit_code == 1);
    CHECK(r.contains("classes"));
  }
  SUBCASE("wrong flag value type is a validation error") {
    const RunResult r = run_cli(sb, kTrainArgs + " --train.lr banana --out t");
    CHECK(r.exit_code == 1);
  }
}

TEST_CASE("cli: unknown preset lists the available ones") {
  Sandbox sb;
  const RunResult r = run_cli(sb, "count-params --preset table9-none --out c");
  CHECK(r.exit_code == 1);
  CHECK(r.contains("table1-hpt16"));
  CHECK(r.contains("table3-ssf-all"));
}

TEST_CASE("cli: count-params reports the audit against reference budgets") {
  Sandbox sb;
  const RunResult r = run_cli(sb, "count-params --preset table1-hpt16 --out c");
  CAPTURE(r.out);
  CHECK(r.exit_code == 0);
  CHECK(r.contains("shared.hist"));
  CHECK(r.contains("(match)"));
  CHECK(r.contains("reference"));
  CHECK(r.contains("4-class"));
  CHECK(r.contains("5-class"));
  CHECK(fs::exists(sb.dir / "c" / "audit.csv"));

  // the toy grid has no published budget: audit still works, no reference line
  const RunResult r2 =
      run_cli(sb, "count-params " + kModelArgs + " --method.kind adapter --rate 2 --out c2");
  CHECK(r2.exit_code == 0);
  CHECK(r2.contains("(match)"));
  CHECK_FALSE(r2.contains("reference"));
}

TEST_CASE("cli: grad-check passes clean and fails under backward fault injection") {
  Sandbox sb;
  const RunResult ok = run_cli(sb, "grad-check --out g");
  CAPTURE(ok.out);
  CHECK(ok.exit_code == 0);
  for (const char* family : {"linear", "layer_norm", "mhsa", "ffn", "adapter", "lora", "ssf",
                             "hist_forward", "block", "model_loss"}) {
    CHECK_MESSAGE(ok.contains(family), family);
  }

  const RunResult bad = run_cli(sb, "grad-check --testhook-backward-fault --out g2");
  CAPTURE(bad.out);
  CHECK(bad.exit_code == 1);
  CHECK(bad.contains("FAIL"));
}

TEST_CASE("cli: similarity of a checkpoint with itself is 1.0 per block") {
  Sandbox sb;
  REQUIRE(run_cli(sb, kGenArgs).exit_code == 0);
  REQUIRE(run_cli(sb, kTrainArgs + " --out run").exit_code == 0);

  const RunResult r = run_cli(
      sb, "similarity --checkpoint-a run/checkpoint.hpta --checkpoint-b run/checkpoint.hpta "
          "--split val --out sim");
  CAPTURE(r.out);
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(sb.dir / "sim" / "similarity.csv");
  std::istringstream is(csv);
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "block,score");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const double v = std::stod(line.substr(line.find(',') + 1));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
    ++rows;
  }
  CHECK(rows == 1);
}

TEST_CASE("cli: similarity rejects checkpoints with different block counts") {
  Sandbox sb;
  REQUIRE(run_cli(sb, kGenArgs).exit_code == 0);
  REQUIRE(run_cli(sb, kTrainArgs + " --out run1").exit_code == 0);
  REQUIRE(run_cli(sb, kTrainArgs + " --model.blocks 2 --out run2").exit_code == 0);

  const RunResult r = run_cli(
      sb, "similarity --checkpoint-a run1/checkpoint.hpta --checkpoint-b run2/checkpoint.hpta "
          "--split val --out sim");
  CAPTURE(r.out);
  CHECK(r.exit_code == 2);
  CHECK(r.contains("block"));
}

TEST_CASE("cli: full fine-tuning defaults to the small learning rate") {
  Sandbox sb;
  REQUIRE(run_cli(sb, kGenArgs).exit_code == 0);

  const std::string base = "train --data.dir data " + kModelArgs +
                           " --train.batch_size 4 --train.max_epochs 1 --train.patience 1 "
                           "--train.seed 11";
  REQUIRE(run_cli(sb, base + " --method.kind full_finetune --out f1").exit_code == 0);
  CHECK(slurp_json(sb.dir / "f1" / "resolved_config.json")["train"]["lr"].get<double>() == 1e-5);

  REQUIRE(run_cli(sb, base + " --method.kind hpt --method.bins 4 --out h1").exit_code == 0);
  CHECK(slurp_json(sb.dir / "h1" / "resolved_config.json")["train"]["lr"].get<double>() == 1e-3);

  REQUIRE(
      run_cli(sb, base + " --method.kind full_finetune --train.lr 0.5 --out f2").exit_code == 0);
  CHECK(slurp_json(sb.dir / "f2" / "resolved_config.json")["train"]["lr"].get<double>() == 0.5);
}

TEST_CASE("cli: flags override config file values") {
  Sandbox sb;
  REQUIRE(run_cli(sb, kGenArgs).exit_code == 0);
  REQUIRE(run_cli(sb, kTrainArgs + " --out run1").exit_code == 0);

  const RunResult r =
      run_cli(sb, "train --config run1/resolved_config.json --train.seed 12 --bins 2 --out run2");
  CAPTURE(r.out);
  REQUIRE(r.exit_code == 0);
  const json resolved = slurp_json(sb.dir / "run2" / "resolved_config.json");
  CHECK(resolved["train"]["seed"].get<std::size_t>() == 12);
  CHECK(resolved["method"]["bins"].get<std::size_t>() == 2);
  CHECK(resolved["model"]["dim"].get<std::size_t>() == 8);  // untouched key survives
}

TEST_CASE("cli: HPT_OUT_ROOT supplies the default output root") {
  Sandbox sb;
  const fs::path log = sb.dir / "cli_output.log";
  const std::string cmd = "cd '" + sb.dir.string() + "' && HPT_OUT_ROOT=alt '" + kCli.string() +
                          "' gen-data --data.classes 2 --data.train_per_class 2 "
                          "--data.val_per_class 1 --data.test_per_class 1 --data.seq 2 "
                          "--data.feat 2 > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(sb.dir / "alt" / "gen-data" / "train.ptds"));
}
