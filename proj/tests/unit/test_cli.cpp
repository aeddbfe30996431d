#include <doctest.h>

#include <sstream>

#include "json.hpp"
#include "pgasr/cli.hpp"
#include "pgasr/datasets.hpp"
#include "pgasr/tensor_io.hpp"
#include "test_util.hpp"

using namespace pgasr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Small enough for a unit test.
const char* kTinyConfig =
    "model.embed_dim = 4\n"
    "model.st_blocks = 1\n"
    "model.chebyshev_order = 2\n"
    "model.temporal_kernel = 2\n"
    "train.max_epochs = 2\n"
    "train.mc_passes = 3\n"
    "train.batch_size = 16\n"
    "train.patience_pretrain = 1\n"
    "train.patience_retrain = 1\n";

fs::path prepare_tiny(const fs::path& root, const std::string& corruption) {
  const auto dir = root / ("bundle_" + corruption);
  const auto r = invoke({"prepare", "--synthetic", "--h", "2", "--w", "2", "--steps", "124", "--window", "4",
                         "--corruption", corruption, "--seed", "7", "--out", dir.string()});
  REQUIRE(r.code == cli::kExitOk);
  return dir;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(invoke({"--help"}).code == cli::kExitOk);
  CHECK(invoke({"train", "--help"}).code == cli::kExitOk);
  CHECK(invoke({"--bogus"}).code == cli::kExitUsage);
  CHECK(invoke({}).code == cli::kExitUsage);
  CHECK(invoke({"train", "--alpha", "x", "--out", "/tmp/none"}).code == cli::kExitUsage);
  CHECK(invoke({"train", "--set", "train.nope=1"}).code == cli::kExitUsage);
  CHECK(invoke({"prepare", "--out", "/tmp/none"}).code == cli::kExitUsage);
}

TEST_CASE("missing manifest exits 2 without output") {
  const auto root = testutil::scratch_dir("cli_missing");
  fs::create_directories(root / "empty");
  const auto r = invoke({"train", "--data", (root / "empty").string(), "--out", (root / "run").string()});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.out.empty());
  CHECK_FALSE(r.err.empty());
  CHECK_FALSE(fs::exists(root / "run"));
}

TEST_CASE("prepare writes a bundle with the requested corruption") {
  const auto root = testutil::scratch_dir("cli_prepare");
  const auto dir = prepare_tiny(root, "0.3");
  const auto bundle = data::load_bundle(dir);
  CHECK(bundle.graph.height() == 2);
  CHECK(bundle.window == 4);
  const std::string csv = io::read_text(dir / "corrupted_ids.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  std::size_t flagged = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.ends_with(",1")) ++flagged;
  }
  CHECK(rows == bundle.train.size());
  CHECK(flagged == static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(rows))));
  CHECK(fs::exists(dir / "config.txt"));
}

TEST_CASE("train writes a run directory and repeats exactly") {
  const auto root = testutil::scratch_dir("cli_train");
  const auto data = prepare_tiny(root, "0.3");
  io::write_text(root / "tiny.cfg", kTinyConfig);
  auto train = [&](const std::string& out) {
    return invoke({"train", "--config", (root / "tiny.cfg").string(), "--data", data.string(), "--out",
                   (root / out).string(), "--method", "pgasr", "--alpha", "0.8", "--beta", "0.9", "--d", "2", "--seed",
                   "1"});
  };
  const auto a = train("a");
  REQUIRE(a.code == cli::kExitOk);
  CHECK(a.out.find("test MAE") != std::string::npos);
  CHECK(fs::exists(root / "a" / "weight_table.csv"));
  CHECK(fs::exists(root / "a" / "report.json"));

  // Flags beat the config file, which beats defaults; the snapshot records it.
  const std::string snap = io::read_text(root / "a" / "config.txt");
  CHECK(snap.find("train.max_epochs = 2\n") != std::string::npos);
  CHECK(snap.find("train.alpha = 0.80000000000000004\n") != std::string::npos);
  CHECK(snap.find("seed = 1\n") != std::string::npos);

  const auto b = train("b");
  REQUIRE(b.code == cli::kExitOk);
  auto payload = [](const fs::path& p) {
    auto j = nlohmann::json::parse(io::read_text(p));
    j.erase("timings");
    return j.dump();
  };
  CHECK(payload(root / "a" / "report.json") == payload(root / "b" / "report.json"));
  CHECK(io::read_text(root / "a" / "weight_table.csv") == io::read_text(root / "b" / "weight_table.csv"));

  const auto con = invoke({"train", "--config", (root / "tiny.cfg").string(), "--data", data.string(), "--out",
                           (root / "con").string(), "--method", "pn_con", "--seed", "1"});
  CHECK(con.code == cli::kExitOk);
  CHECK_FALSE(fs::exists(root / "con" / "weight_table.csv"));
}

TEST_CASE("noise experiment writes one row per method, level and seed") {
  const auto root = testutil::scratch_dir("cli_noise");
  const auto data = prepare_tiny(root, "0");
  io::write_text(root / "tiny.cfg", kTinyConfig);
  const auto r = invoke({"experiment", "noise", "--config", (root / "tiny.cfg").string(), "--data", data.string(),
                         "--out", (root / "noise").string(), "--levels", "0.1,0.5", "--seeds", "2", "--set",
                         "train.max_epochs=1"});
  REQUIRE(r.code == cli::kExitOk);
  const std::string csv = io::read_text(root / "noise" / "fig3_noise.csv");
  CHECK(count_lines(csv) == 1 + 2 * 2 * 2);
  const auto report = nlohmann::json::parse(io::read_text(root / "noise" / "report.json"));
  CHECK(report["failed_cells"] == 0);
  CHECK(io::read_text(root / "noise" / "config.txt").find("train.max_epochs = 1\n") != std::string::npos);
}
