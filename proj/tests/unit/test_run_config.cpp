#include <doctest.h>

#include <set>

#include "pgasr/error.hpp"
#include "pgasr/run_config.hpp"
#include "pgasr/tensor_io.hpp"
#include "test_util.hpp"

using namespace pgasr;
using namespace pgasr::cli;

TEST_CASE("settings parse into typed fields") {
  RunConfig c;
  apply_setting(c, "train.alpha", "0.25");
  apply_setting(c, " train.folds ", " 3 ");
  apply_setting(c, "method", "pn_con");
  apply_setting(c, "model.dropout", "0.2");
  apply_setting(c, "synthetic.corrupt_inputs_only", "yes");
  apply_setting(c, "experiment.levels", "0.1,0.2");
  apply_setting(c, "train.consistency_target", "label");
  apply_setting(c, "seed", "17");
  CHECK(c.train.alpha == 0.25);
  CHECK(c.train.folds == 3);
  CHECK(c.method == "pn_con");
  CHECK(c.model.dropout_rate == doctest::Approx(0.2));
  CHECK(c.synthetic.corrupt_inputs_only);
  CHECK(c.levels == std::vector<double>{0.1, 0.2});
  CHECK(c.train.consistency_target == reweight::ConsistencyTarget::label);
  CHECK(c.seed_list() == std::vector<std::uint64_t>{17, 18, 19, 20});
}

TEST_CASE("bad keys and values are config errors") {
  RunConfig c;
  CHECK_THROWS_AS(apply_setting(c, "train.alpah", "1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "train.alpha", "x"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "train.folds", "2.5"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "train.folds", ""), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "method", "gasr"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "synthetic.corrupt_inputs_only", "maybe"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "experiment.levels", "0.1,,0.3"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.alpha 0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(" = 3\n"), ConfigError);
  CHECK_THROWS_AS(read_config_file("/nonexistent/pgasr.cfg"), ConfigError);
}

TEST_CASE("validation rejects inconsistent configurations") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  RunConfig a = c;
  a.n_seeds = 0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  RunConfig b = c;
  b.levels = {0.1, 1.5};
  CHECK_THROWS_AS(b.validate(), ConfigError);
  RunConfig d = c;
  d.sweep_folds = {1, 2};
  CHECK_THROWS_AS(d.validate(), ConfigError);
  RunConfig e = c;
  e.model.dropout_rate = 1.0F;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  RunConfig f = c;
  f.jobs = 0;
  CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("config text skips comments and keeps order") {
  const auto kv = parse_config_text("# header\n\ntrain.alpha = 0.5\n  train.beta=0.7  \r\n# end\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"train.alpha", "0.5"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"train.beta", "0.7"});
}

TEST_CASE("snapshot round trips every key") {
  RunConfig c;
  apply_setting(c, "train.alpha", "0.3");
  apply_setting(c, "experiment.folds", "2,4");
  apply_setting(c, "synthetic.neighborhood", "four");
  apply_setting(c, "out", "/tmp/x");
  const std::string text = snapshot(c);
  RunConfig back;
  for (const auto& [k, v] : parse_config_text(text)) apply_setting(back, k, v);
  CHECK(snapshot(back) == text);

  const auto keys = known_keys();
  CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == keys.size());
  CHECK(effective_settings(c).size() == keys.size());
}

TEST_CASE("later sources override earlier ones") {
  const auto dir = testutil::scratch_dir("cfg_precedence");
  io::write_text(dir / "a.cfg", "train.alpha = 0.5\ntrain.beta = 0.6\n");
  RunConfig c;
  const double default_folds = c.train.folds;
  for (const auto& [k, v] : read_config_file(dir / "a.cfg")) apply_setting(c, k, v);
  apply_setting(c, "train.beta", "0.9");
  CHECK(c.train.alpha == 0.5);
  CHECK(c.train.beta == 0.9);
  CHECK(c.train.folds == default_folds);
}
