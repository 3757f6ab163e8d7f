#include "birads/checkpoint.hpp"
#include "birads/training.hpp"

#include "support.hpp"

#include "doctest.h"

#include <json.hpp>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

using namespace birads;
using birads::testing::TempDir;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

RunResult run(const TempDir& dir, const std::string& args) {
  const auto out = dir.path() / "stdout.txt", err = dir.path() / "stderr.txt";
  const std::string cmd = std::string(BIRADS_CLI_PATH) + " " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

void write_tiny_config(const std::filesystem::path& path) {
  TrainConfig c;
  c.model = ModelConfig::miniature(2);
  c.preprocess.target_size = 16;
  c.ablation.augment = false;
  c.ablation.pretrain = false;
  c.initial_lr = 1e-3;
  c.reduced_lr = 1e-4;
  c.max_epochs = 1;
  std::ofstream(path) << train_config_to_json(c);
}

}  // namespace

TEST_CASE("help exits cleanly and bad usage exits 1") {
  TempDir dir("cli_usage");
  CHECK(run(dir, "--help").code == 0);
  CHECK(run(dir, "").code == 1);
  CHECK(run(dir, "generate --count 0 --seed 1 --out " + q(dir.path() / "g")).code == 1);
  CHECK(run(dir, "generate --count 5 --seed 1 --out " + q(dir.path() / "g") + " --height 32").code == 1);
  CHECK(run(dir, "frobnicate").code == 1);
  CHECK(run(dir, "train --manifest m.csv --config c.json --out o --folds 3 --split 0.2").code == 1);
}

TEST_CASE("generate is deterministic") {
  TempDir dir("cli_generate");
  REQUIRE(run(dir, "generate --count 12 --seed 4 --out " + q(dir.path() / "a")).code == 0);
  REQUIRE(run(dir, "generate --count 12 --seed 4 --out " + q(dir.path() / "b")).code == 0);
  CHECK(slurp(dir.path() / "a" / "manifest.csv") == slurp(dir.path() / "b" / "manifest.csv"));
  CHECK(load_manifest(dir.path() / "a" / "manifest.csv").size() == 12);
  CHECK(std::filesystem::exists(dir.path() / "a" / "run.json"));
}

TEST_CASE("missing manifest is a data error naming the path") {
  TempDir dir("cli_missing");
  write_tiny_config(dir.path() / "c.json");
  const auto missing = dir.path() / "nowhere" / "manifest.csv";
  const auto r = run(dir, "train --manifest " + q(missing) + " --config " + q(dir.path() / "c.json") + " --out " +
                              q(dir.path() / "o") + " --folds 2");
  CHECK(r.code == 2);
  CHECK(r.err.find(missing.string()) != std::string::npos);
}

TEST_CASE("unknown config key is a data error") {
  TempDir dir("cli_config");
  REQUIRE(run(dir, "generate --count 10 --seed 1 --out " + q(dir.path() / "d")).code == 0);
  std::ofstream(dir.path() / "c.json") << "{\"batch_sise\": 4}";
  const auto r = run(dir, "train --manifest " + q(dir.path() / "d" / "manifest.csv") + " --config " +
                              q(dir.path() / "c.json") + " --out " + q(dir.path() / "o") + " --folds 2");
  CHECK(r.code == 2);
  CHECK(r.err.find("batch_sise") != std::string::npos);
}

TEST_CASE("cross-validated training writes the fixed layout") {
  TempDir dir("cli_train");
  REQUIRE(run(dir, "generate --count 20 --seed 2 --out " + q(dir.path() / "d")).code == 0);
  write_tiny_config(dir.path() / "c.json");
  const auto manifest = q(dir.path() / "d" / "manifest.csv");
  const auto out = dir.path() / "o";
  const auto r = run(dir, "train --manifest " + manifest + " --config " + q(dir.path() / "c.json") + " --out " + q(out) +
                              " --folds 2");
  INFO(r.err);
  REQUIRE(r.code == 0);
  for (const char* sub : {"checkpoints", "logs", "metrics", "reports"}) CHECK(std::filesystem::is_directory(out / sub));
  CHECK(std::filesystem::exists(out / "checkpoints" / "fold_0" / "weights.bin"));
  CHECK(std::filesystem::exists(out / "checkpoints" / "fold_1" / "config.json"));
  CHECK(std::filesystem::exists(out / "logs" / "fold_1.ndjson"));
  CHECK(std::filesystem::exists(out / "fold_plan.json"));
  const auto csv = slurp(out / "metrics" / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("\nmean,") != std::string::npos);

  const auto checkpoint = q(out / "checkpoints" / "fold_0");
  const auto ev = run(dir, "evaluate --checkpoint " + checkpoint + " --manifest " + manifest + " --out " + q(dir.path() / "e"));
  CHECK(ev.code == 0);
  CHECK(nlohmann::json::parse(ev.out)["count"] == 20);

  const auto pr = run(dir, "predict --checkpoint " + checkpoint + " --manifest " + manifest + " --out " + q(dir.path() / "p"));
  CHECK(pr.code == 0);
  const auto predictions = slurp(dir.path() / "p" / "reports" / "predictions.csv");
  CHECK(std::count(predictions.begin(), predictions.end(), '\n') == 21);

  const auto image = q(dir.path() / "d" / "images" / "phantom_00003.png");
  const auto rep = run(dir, "report --checkpoint " + checkpoint + " --image " + image + " --bbox 10,10,60,50 --figure " +
                                q(dir.path() / "fig.png"));
  CHECK(rep.code == 0);
  const auto j = nlohmann::json::parse(rep.out);
  CHECK(j.contains("birads_category"));
  CHECK(std::filesystem::exists(dir.path() / "fig.png"));

  const auto outside = run(dir, "report --checkpoint " + checkpoint + " --image " + image + " --bbox 0,0,500,500");
  CHECK(outside.code == 2);
  CHECK(outside.err.find("outside") != std::string::npos);
  CHECK(run(dir, "report --checkpoint " + checkpoint + " --image " + image + " --bbox 1,2,3").code == 1);
  CHECK(run(dir, "report --checkpoint " + q(dir.path() / "none") + " --image " + image + " --bbox 1,2,3,4").code == 2);
}

TEST_CASE("holdout split training writes a final checkpoint") {
  TempDir dir("cli_split");
  REQUIRE(run(dir, "generate --count 12 --seed 3 --out " + q(dir.path() / "d")).code == 0);
  write_tiny_config(dir.path() / "c.json");
  const auto out = dir.path() / "o";
  const auto r = run(dir, "train --manifest " + q(dir.path() / "d" / "manifest.csv") + " --config " +
                              q(dir.path() / "c.json") + " --out " + q(out) + " --split 0.25");
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(load_checkpoint(out / "checkpoints" / "final").preprocess.target_size == 16);
  CHECK(std::filesystem::exists(out / "logs" / "train.ndjson"));
}
