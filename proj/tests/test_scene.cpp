#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "iadc/masks.hpp"
#include "iadc/scene.hpp"

using namespace iadc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("iadc_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("generate_scene is deterministic in its seed") {
  const Sample a = generate_scene(7, 64, 128, 4);
  const Sample b = generate_scene(7, 64, 128, 4);
  CHECK(same_values(a.rgb, b.rgb));
  CHECK(same_values(a.depth_gt, b.depth_gt));
  REQUIRE(a.instances.size() == b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) CHECK(same_values(a.instances[i], b.instances[i]));
  CHECK(a.scene_id == b.scene_id);
  const Sample c = generate_scene(8, 64, 128, 4);
  CHECK_FALSE(same_values(a.depth_gt, c.depth_gt));
}

TEST_CASE("generated samples satisfy the sample invariants") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Sample s = generate_scene(seed, 64, 128, 1 + seed % 8);
    CHECK(s.rgb.shape() == Shape{3, 64, 128});
    CHECK(s.depth_gt.shape() == Shape{1, 64, 128});
    std::size_t valid = 0;
    for (float d : s.depth_gt.data()) {
      CHECK(d >= 0.0f);
      valid += d > 0.0f;
    }
    CHECK(valid >= s.depth_gt.size() * 3 / 10);
    for (float v : s.rgb.data()) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK(s.instances.size() >= 1);
    CHECK(s.instances.size() <= 1 + seed % 8);
    for (const auto& m : s.instances) {
      CHECK(m.shape() == Shape{1, 64, 128});
      std::size_t on = 0;
      for (float v : m.data()) {
        CHECK((v == 0.0f || v == 1.0f));
        on += v == 1.0f;
      }
      CHECK(on > 0);
    }
  }
}

TEST_CASE("single object gives one mask equal to the foreground") {
  const Sample s = generate_scene(3, 64, 128, 1);
  REQUIRE(s.instances.size() == 1);
  const Tensor<float> merged = merge_masks(s.instances, 64, 128);
  CHECK(same_values(merged, s.instances[0]));
}

TEST_CASE("instance masks are pairwise disjoint") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Sample s = generate_scene(seed, 64, 128, 12);
    for (std::size_t i = 0; i < s.instances.size(); ++i)
      for (std::size_t j = i + 1; j < s.instances.size(); ++j) {
        std::size_t both = 0;
        for (std::size_t p = 0; p < s.instances[i].size(); ++p)
          both += s.instances[i].data()[p] > 0.5f && s.instances[j].data()[p] > 0.5f;
        CHECK(both == 0);
      }
  }
}

TEST_CASE("generate_scene rejects invalid arguments") {
  CHECK_THROWS(generate_scene(0, 16, 128, 2));
  CHECK_THROWS(generate_scene(0, 64, 128, 0));
  CHECK_THROWS(generate_scene(0, 64, 128, kMaxObjects + 1));
}

TEST_CASE("sparsify keeps values and respects validity") {
  const Sample s = generate_scene(11, 64, 128, 4);
  const SparseInput sp = sparsify(s, 0.3, 5);
  for (std::size_t i = 0; i < s.depth_gt.size(); ++i) {
    const float v = sp.validity.data()[i];
    CHECK((v == 0.0f || v == 1.0f));
    CHECK(sp.depth_sparse.data()[i] == s.depth_gt.data()[i] * v);
    if (s.depth_gt.data()[i] == 0.0f) CHECK(v == 0.0f);
  }
  const SparseInput again = sparsify(s, 0.3, 5);
  CHECK(same_values(sp.validity, again.validity));
}

TEST_CASE("sparsify degenerate keep probabilities are exact") {
  const Sample s = generate_scene(12, 64, 128, 3);
  const SparseInput none = sparsify(s, 0.0, 1);
  for (std::size_t i = 0; i < s.depth_gt.size(); ++i) {
    CHECK(none.validity.data()[i] == 0.0f);
    CHECK(none.depth_sparse.data()[i] == 0.0f);
  }
  const SparseInput all = sparsify(s, 1.0, 1);
  for (std::size_t i = 0; i < s.depth_gt.size(); ++i) {
    CHECK(all.validity.data()[i] == (s.depth_gt.data()[i] > 0.0f ? 1.0f : 0.0f));
    CHECK(all.depth_sparse.data()[i] == s.depth_gt.data()[i]);
  }
  CHECK_THROWS(sparsify(s, -0.1, 1));
  CHECK_THROWS(sparsify(s, 1.5, 1));
}

TEST_CASE("sparsify kept fraction lies in the binomial band") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample s = generate_scene(seed, 256, 512, 6);
    std::size_t valid = 0;
    for (float d : s.depth_gt.data()) valid += d > 0.0f;
    const SparseInput sp = sparsify(s, 0.05, seed);
    std::size_t kept = 0;
    for (float v : sp.validity.data()) kept += v > 0.0f;
    const double n = static_cast<double>(valid), sigma = std::sqrt(n * 0.05 * 0.95);
    CHECK(std::abs(static_cast<double>(kept) - 0.05 * n) <= 5.0 * sigma);
  }
}

TEST_CASE("depth quantization saturates and rounds") {
  CHECK(depth_to_centimeters(6553.5) == 65535);
  CHECK(depth_to_centimeters(1e6) == 65535);
  CHECK(depth_to_centimeters(0.0) == 0);
  CHECK(depth_to_centimeters(1.234) == 123);
  CHECK(depth_to_centimeters(1.235) == 124);
}

TEST_CASE("sample directories round-trip") {
  const fs::path dir = scratch_dir("roundtrip");
  const Sample s = generate_scene(21, 64, 128, 5);
  write_sample(s, dir);
  const Sample r = read_sample(dir);
  CHECK(r.scene_id == s.scene_id);
  CHECK(r.condition == s.condition);
  REQUIRE(r.instances.size() == s.instances.size());
  for (std::size_t i = 0; i < s.instances.size(); ++i) CHECK(same_values(r.instances[i], s.instances[i]));
  double worst = 0.0;
  for (std::size_t i = 0; i < s.depth_gt.size(); ++i)
    worst = std::max(worst, std::abs(double(r.depth_gt.data()[i]) - double(s.depth_gt.data()[i])));
  CHECK(worst <= 0.005 + 1e-5);
  double rgb_worst = 0.0;
  for (std::size_t i = 0; i < s.rgb.size(); ++i)
    rgb_worst = std::max(rgb_worst, std::abs(double(r.rgb.data()[i]) - double(s.rgb.data()[i])));
  CHECK(rgb_worst <= 0.5 / 255.0 + 1e-6);
  fs::remove_all(dir);
}

TEST_CASE("malformed sample files name the file and field") {
  const fs::path dir = scratch_dir("malformed");
  write_sample(generate_scene(2, 64, 128, 2), dir);
  {
    std::ofstream(dir / "depth.pgm", std::ios::binary) << "P5\n128 64\n70000\n";
  }
  try {
    read_sample(dir);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("depth.pgm") != std::string::npos);
    CHECK(msg.find("maxval") != std::string::npos);
  }
  write_sample(generate_scene(2, 64, 128, 2), dir);
  write_mask_pgm(dir / "inst_000.pgm", Tensor<float>({1, 32, 32}, 1.0f));
  CHECK_THROWS_AS(read_sample(dir), FormatError);
  fs::remove_all(dir);
}
