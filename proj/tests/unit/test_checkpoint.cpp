#include <doctest.h>

#include <cstring>
#include <fstream>

#include "pgasr/checkpoint.hpp"
#include "pgasr/error.hpp"
#include "pgasr/model.hpp"
#include "test_util.hpp"

using namespace pgasr;
using namespace pgasr::model;

namespace {

ModelConfig config() {
  ModelConfig cfg;
  cfg.embed_dim = 6;
  cfg.n_st_blocks = 2;
  cfg.chebyshev_order = 3;
  cfg.temporal_kernel = 2;
  cfg.dropout_rate = 0.15F;
  cfg.variant = Variant::pn_con;
  cfg.integrator_steps = 3;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  const PhysicsGuidedNetwork net(config(), 6, 5, 42);
  const auto dir = testutil::scratch_dir("ckpt");
  const CheckpointMeta meta{"pretrain_fold_1", 1, 17, 0.1234567890123456789};
  save_checkpoint(dir / "a.ckpt", net.state(), meta);
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt");

  CHECK(ck.meta.phase == meta.phase);
  CHECK(ck.meta.fold_index == 1);
  CHECK(ck.meta.epoch == 17);
  CHECK(ck.meta.validation_score == meta.validation_score);
  CHECK(ck.state.nodes == 6);
  CHECK(ck.state.window == 5);
  CHECK(ck.state.config.to_json() == config().to_json());
  const auto& a = net.state().params.entries();
  const auto& b = ck.state.params.entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.shape() == b[i].second.shape());
    CHECK(std::memcmp(a[i].second.data().data(), b[i].second.data().data(), a[i].second.numel() * sizeof(float)) == 0);
  }
  // The reloaded state builds a network that predicts identically.
  const PhysicsGuidedNetwork again(ck.state);
  const auto ctx = GraphContext::from(graph::scaled_laplacian(graph::UrbanGraph::grid(2, 3), 3));
  std::mt19937_64 rng(1);
  const auto x = testutil::random_tensor({2, 5, 6, 2}, rng, false);
  CHECK(std::ranges::equal(net.forward(x, ctx).data(), again.forward(x, ctx).data()));

  // Saving the reloaded state reproduces the file bytes.
  save_checkpoint(dir / "b.ckpt", ck.state, ck.meta);
  std::ifstream fa(dir / "a.ckpt", std::ios::binary);
  std::ifstream fb(dir / "b.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {});
  const std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST_CASE("damaged checkpoints are rejected") {
  const PhysicsGuidedNetwork net(config(), 6, 5, 1);
  const auto dir = testutil::scratch_dir("ckpt_bad");
  save_checkpoint(dir / "good.ckpt", net.state(), {"retrain", -1, 3, 1.0});

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), LoadError);

  std::ifstream in(dir / "good.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  std::ofstream(dir / "trunc.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), LoadError);

  std::string wrong = bytes;
  wrong[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary).write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), LoadError);

  std::string version = bytes;
  version[8] = 9;
  std::ofstream(dir / "ver.ckpt", std::ios::binary).write(version.data(), static_cast<std::streamsize>(version.size()));
  CHECK_THROWS_AS(load_checkpoint(dir / "ver.ckpt"), LoadError);
}
