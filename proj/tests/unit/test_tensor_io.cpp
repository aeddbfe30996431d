#include "doctest.h"
#include "npz_writer.hpp"
#include "pgasr/error.hpp"
#include "pgasr/tensor_io.hpp"
#include "test_util.hpp"

using namespace pgasr;

TEST_CASE("raw float32 round trip and size check") {
  const auto dir = testutil::scratch_dir("tensor_io_raw");
  const std::vector<float> v{1.5F, -2.0F, 3.25F};
  io::write_f32(dir / "a.bin", v);
  CHECK(io::read_f32(dir / "a.bin", 3) == v);
  CHECK_THROWS_AS(io::read_f32(dir / "a.bin", 4), LoadError);
  CHECK_THROWS_AS(io::read_f32(dir / "missing.bin", 1), LoadError);
}

TEST_CASE("text round trip") {
  const auto dir = testutil::scratch_dir("tensor_io_text");
  io::write_text(dir / "t.txt", "hello\nworld\n");
  CHECK(io::read_text(dir / "t.txt") == "hello\nworld\n");
}

TEST_CASE("npy parsing of float32 and float64") {
  const auto a = testutil::make_npy<float>({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto pa = io::parse_npy(a, "a");
  CHECK(pa.shape == std::vector<std::size_t>{2, 3});
  CHECK(pa.data[5] == 6.0F);
  const auto b = testutil::make_npy<double>({4}, {0.5, 1.5, 2.5, 3.5});
  const auto pb = io::parse_npy(b, "b");
  CHECK(pb.shape == std::vector<std::size_t>{4});
  CHECK(pb.data[3] == 3.5F);
}

TEST_CASE("npy rejects malformed payloads") {
  testutil::Bytes junk{'n', 'o', 'p', 'e', 0, 0, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(io::parse_npy(junk, "junk"), LoadError);
  auto truncated = testutil::make_npy<float>({2, 3}, {1, 2, 3, 4, 5, 6});
  truncated.resize(truncated.size() - 4);
  CHECK_THROWS_AS(io::parse_npy(truncated, "short"), LoadError);
}

TEST_CASE("npz archives, stored and deflated") {
  const auto dir = testutil::scratch_dir("tensor_io_npz");
  std::vector<float> x(2 * 3 * 4);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i) * 0.5F;
  for (bool compress : {false, true}) {
    const auto path = dir / (compress ? "c.npz" : "s.npz");
    testutil::write_zip(path,
                        {{"x.npy", testutil::make_npy<float>({2, 3, 4}, x)},
                         {"y.npy", testutil::make_npy<double>({2}, {7.0, 8.0})}},
                        compress);
    const auto arrays = io::read_npz(path);
    REQUIRE(arrays.size() == 2);
    CHECK(arrays.at("x").shape == std::vector<std::size_t>{2, 3, 4});
    CHECK(arrays.at("x").data == x);
    CHECK(arrays.at("y").data[1] == 8.0F);
  }
  io::write_text(dir / "bad.npz", "not a zip at all");
  CHECK_THROWS_AS(io::read_npz(dir / "bad.npz"), LoadError);
  CHECK_THROWS_AS(io::read_npz(dir / "absent.npz"), LoadError);
}
