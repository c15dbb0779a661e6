#include <doctest.h>

#include <cmath>

#include "iadc/gradcheck.hpp"
#include "iadc/loss.hpp"
#include "iadc/model.hpp"
#include "test_util.hpp"

using namespace iadc;
using iadc::testing::random_tensor;

namespace {

template <typename T>
double grad_norm(const Tensor<T>& t) {
  double s = 0.0;
  for (T g : t.grad()) s += double(g) * double(g);
  return std::sqrt(s);
}

Tensor<double> weighted_sum(const Tensor<double>& y, unsigned seed) {
  return sum(mul(y, random_tensor(y.shape(), seed, -1.0, 1.0)));
}

Tensor<float> to_float(const Tensor<double>& t) { return tensor_cast<float>(t); }

}  // namespace

// ---------------------------------------------------------------- U-Net

TEST_CASE("stack_input orders and scales the five channels") {
  const auto rgb = random_tensor({1, 3, 64, 128}, 1, 0.0, 1.0);
  const auto depth = random_tensor({1, 1, 64, 128}, 2, 0.0, 80.0);
  const auto valid = random_tensor({1, 1, 64, 128}, 3, 0.0, 1.0);
  const auto x = stack_input(rgb, depth, valid, 80.0);
  CHECK(x.shape() == Shape{1, 5, 64, 128});
  const auto back_rgb = slice_channels(x, 0, 3), back_depth = slice_channels(x, 3, 1), back_valid = slice_channels(x, 4, 1);
  for (std::size_t i = 0; i < rgb.size(); ++i) CHECK(back_rgb.data()[i] == rgb.data()[i]);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    CHECK(back_depth.data()[i] * 80.0 == doctest::Approx(depth.data()[i]).epsilon(1e-14));
    CHECK(back_valid.data()[i] == valid.data()[i]);
  }
  const auto zeros = stack_input(rgb, Tensor<double>({1, 1, 64, 128}), Tensor<double>({1, 1, 64, 128}), 80.0);
  for (std::size_t c = 3; c < 5; ++c)
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 128; ++j) CHECK(zeros.at(0, c, i, j) == 0.0);
  CHECK_THROWS_AS(stack_input(rgb, Tensor<double>({1, 1, 32, 128}), valid, 80.0), ShapeError);
}

TEST_CASE("U-Net output shapes follow the input") {
  Rng rng(1);
  UNetParams<float> p = UNetParams<float>::make(UNetConfig{}, rng);
  NoGradScope<float> no_grad;
  const auto out = unet_forward(to_float(random_tensor({1, 5, 64, 128}, 4, 0.0, 1.0)), p, NormMode::train);
  CHECK(out.f_depth.shape() == Shape{1, 8, 64, 128});
  CHECK(out.d_init.shape() == Shape{1, 1, 64, 128});
  const auto big = unet_forward(to_float(random_tensor({2, 5, 256, 512}, 5, 0.0, 1.0)), p, NormMode::train);
  CHECK(big.d_init.shape() == Shape{2, 1, 256, 512});
  for (float v : big.d_init.data()) REQUIRE(std::isfinite(v));
}

TEST_CASE("U-Net rejects extents not divisible by 16") {
  Rng rng(1);
  UNetParams<double> p = UNetParams<double>::make(UNetConfig{}, rng);
  try {
    unet_forward(Tensor<double>({1, 5, 40, 64}), p, NormMode::train);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("divisible by 16") != std::string::npos);
  }
}

TEST_CASE("U-Net parameter count matches the closed form") {
  Rng rng(2);
  UNetParams<float> p = UNetParams<float>::make(UNetConfig{}, rng);
  std::size_t n = 0;
  p.visit_params("u", [&](const std::string&, Tensor<float>& t) { n += t.size(); });
  CHECK(n == unet_parameter_count(UNetConfig{}));
  CHECK(n == 437377);  // hand-summed for the (8, 16, 32, 64, 128) plan
  UNetConfig narrow;
  narrow.enc_channels = {4, 8, 8, 16, 16};
  Rng rng2(2);
  UNetParams<float> q = UNetParams<float>::make(narrow, rng2);
  n = 0;
  q.visit_params("u", [&](const std::string&, Tensor<float>& t) { n += t.size(); });
  CHECK(n == unet_parameter_count(narrow));
}

TEST_CASE("U-Net forward is deterministic and bounded at initialization") {
  Rng rng(3);
  UNetParams<float> p = UNetParams<float>::make(UNetConfig{}, rng);
  const auto x = to_float(random_tensor({2, 5, 64, 128}, 6, 0.0, 1.0));
  NoGradScope<float> no_grad;
  const auto a = unet_forward(x, p, NormMode::train).d_init;
  const auto b = unet_forward(x, p, NormMode::train).d_init;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.data()[i] == b.data()[i]);
    CHECK(std::abs(a.data()[i]) < 80.0f * 20.0f);
  }
}

TEST_CASE("every U-Net parameter receives gradient from a loss on D_init") {
  Rng rng(4);
  UNetParams<double> p = UNetParams<double>::make(UNetConfig{}, rng);
  const auto x = random_tensor({2, 5, 32, 64}, 7, 0.0, 1.0);
  const auto gt = random_tensor({2, 1, 32, 64}, 8, 2.0, 60.0);
  GradTape<double> tape;
  {
    TapeScope<double> scope(tape);
    const auto out = unet_forward(x, p, NormMode::train);
    backward(tape, masked_weighted_l1(out.d_init, gt, Tensor<double>(gt.shape()), 3.0));
  }
  CHECK(tape.empty());
  std::size_t count = 0;
  p.visit_params("unet", [&](const std::string& name, Tensor<double>& t) {
    INFO(name);
    CHECK(grad_norm(t) > 0.0);
    ++count;
  });
  CHECK(count == 5 * 6 + 4 * 4 + 2);
}

// ---------------------------------------------------------- attention

TEST_CASE("attention rows are distributions at the default working grid") {
  AttentionConfig cfg;
  Rng rng(5);
  const auto params = AttentionParams<double>::make(cfg, rng);
  for (unsigned trial = 0; trial < 5; ++trial) {
    const auto m = random_tensor({1, 1, 64, 128}, 10 + trial, 0.0, 1.0);
    const auto f = random_tensor({1, 8, 64, 128}, 20 + trial, -2.0, 2.0);
    NoGradScope<double> no_grad;
    const auto out = cross_attention(m, f, params);
    REQUIRE(out.attention.shape() == Shape{1, 512, 512});
    CHECK(out.features.shape() == Shape{1, 8, 64, 128});
    for (std::size_t r = 0; r < 512; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 512; ++c) {
        const double a = out.attention.data()[r * 512 + c];
        CHECK(a >= 0.0);
        s += a;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("single-location attention returns the value exactly") {
  AttentionConfig cfg;
  cfg.work_h = cfg.work_w = 1;
  Rng rng(6);
  const auto params = AttentionParams<double>::make(cfg, rng);
  const auto out = attention_core(random_tensor({2, 1, 1, 1}, 1), random_tensor({2, 8, 1, 1}, 2), params);
  CHECK(out.attention.shape() == Shape{2, 1, 1});
  for (double a : out.attention.data()) CHECK(a == 1.0);
  for (std::size_t i = 0; i < out.values.size(); ++i) CHECK(out.attended.data()[i] == out.values.data()[i]);
}

TEST_CASE("uniform mask and constant features give spatially constant F_att") {
  AttentionConfig cfg;
  Rng rng(7);
  const auto params = AttentionParams<double>::make(cfg, rng);
  std::vector<double> f(8 * 32 * 64);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 32 * 64; ++i) f[c * 32 * 64 + i] = 0.3 * double(c) - 0.7;
  const auto out = cross_attention(Tensor<double>({1, 1, 32, 64}, 1.0), Tensor<double>({1, 8, 32, 64}, f), params);
  for (std::size_t c = 0; c < 8; ++c) {
    const double ref = out.features.at(0, c, 0, 0);
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 64; ++j) CHECK(std::abs(out.features.at(0, c, i, j) - ref) < 1e-12);
  }
}

TEST_CASE("permuting locations permutes attention rows and columns") {
  AttentionConfig cfg;
  cfg.work_h = cfg.work_w = 2;
  Rng rng(8);
  const auto params = AttentionParams<double>::make(cfg, rng);
  const auto m = random_tensor({1, 1, 2, 2}, 31, 0.0, 1.0);
  const auto f = random_tensor({1, 8, 2, 2}, 32);
  const std::size_t perm[4] = {2, 0, 3, 1};  // new location k holds old location perm[k]
  std::vector<double> pm(4), pf(32);
  for (std::size_t k = 0; k < 4; ++k) {
    pm[k] = m.data()[perm[k]];
    for (std::size_t c = 0; c < 8; ++c) pf[c * 4 + k] = f.data()[c * 4 + perm[k]];
  }
  const auto a = attention_core(m, f, params).attention;
  const auto b = attention_core(Tensor<double>({1, 1, 2, 2}, pm), Tensor<double>({1, 8, 2, 2}, pf), params).attention;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(b.data()[i * 4 + j] == doctest::Approx(a.data()[perm[i] * 4 + perm[j]]).epsilon(1e-12));
}

TEST_CASE("cross_attention gradient matches finite differences on a 4x8 grid") {
  AttentionConfig cfg;
  cfg.depth_channels = 4;
  cfg.embed_dim = 8;
  cfg.work_h = 4;
  cfg.work_w = 8;
  Rng rng(9);
  auto params = AttentionParams<double>::make(cfg, rng);
  const auto m = random_tensor({2, 1, 8, 16}, 40, 0.0, 1.0);
  const auto f = random_tensor({2, 4, 8, 16}, 41);
  auto through_features = [&](const Tensor<double>& x) { return weighted_sum(cross_attention(m, x, params).features, 5); };
  auto through_mask = [&](const Tensor<double>& x) { return weighted_sum(cross_attention(x, f, params).features, 5); };
  CHECK(finite_difference_check(through_features, f).max_rel_error < 1e-3);
  CHECK(finite_difference_check(through_mask, m).max_rel_error < 1e-3);
  std::vector<Tensor<double>> tensors;
  std::vector<ParamCoordinate> coords;
  params.visit_params("attn", [&](const std::string&, Tensor<double>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({tensors.size(), i});
    tensors.push_back(t);
  });
  auto loss = [&] { return weighted_sum(cross_attention(m, f, params).features, 5); };
  CHECK(finite_difference_check(loss, tensors, coords).max_rel_error < 1e-3);
}

TEST_CASE("cross_attention rejects mismatched extents") {
  Rng rng(10);
  const auto params = AttentionParams<double>::make(AttentionConfig{}, rng);
  CHECK_THROWS_AS(cross_attention(Tensor<double>({1, 1, 32, 64}), Tensor<double>({1, 8, 32, 32}), params), ShapeError);
  CHECK_THROWS_AS(cross_attention(Tensor<double>({1, 1, 32, 64}), Tensor<double>({1, 4, 32, 64}), params), ShapeError);
}

TEST_CASE("fusion widens to C_f, is non-negative and feeds both branches") {
  Rng rng(11);
  auto fusion = FusionParams<float>::make(FusionConfig{8, 128}, rng);
  {
    NoGradScope<float> no_grad;
    const auto out = fuse_features(to_float(random_tensor({1, 8, 64, 128}, 1)), to_float(random_tensor({1, 8, 64, 128}, 2)),
                                   fusion, NormMode::train);
    CHECK(out.shape() == Shape{1, 128, 64, 128});
    for (float v : out.data()) CHECK(v >= 0.0f);
  }
  Rng rng2(12);
  auto fd = FusionParams<double>::make(FusionConfig{4, 16}, rng2);
  auto a = random_tensor({2, 4, 8, 8}, 3), b = random_tensor({2, 4, 8, 8}, 4);
  a.set_requires_grad();
  b.set_requires_grad();
  GradTape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(tape, weighted_sum(fuse_features(a, b, fd, NormMode::train), 9));
  }
  CHECK(grad_norm(a) > 0.0);
  CHECK(grad_norm(b) > 0.0);
  CHECK_THROWS_AS(fuse_features(a, random_tensor({2, 4, 8, 4}, 5), fd, NormMode::train), ShapeError);
}

// --------------------------------------------------------------- head

TEST_CASE("zero SE weights gate every channel by one half") {
  HeadConfig cfg;
  Rng rng(13);
  auto head = HeadParams<double>::make(cfg, rng);
  for (auto* w : {&head.w1, &head.w2}) std::fill(w->mutable_data().begin(), w->mutable_data().end(), 0.0);
  const auto x = random_tensor({2, 128, 4, 4}, 14);
  const auto ca = channel_attention(x, head);
  for (double s : ca.gate.data()) CHECK(s == 0.5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ca.output.data()[i] == 0.5 * x.data()[i]);
}

TEST_CASE("SE gate lies in (0, 1) and depends only on channel means") {
  HeadConfig cfg;
  cfg.in_channels = 32;
  cfg.reduction = 4;
  Rng rng(15);
  auto head = HeadParams<double>::make(cfg, rng);
  const auto x = random_tensor({1, 32, 4, 6}, 16, -3.0, 3.0);
  const auto s = channel_attention(x, head).gate;
  for (double v : s.data()) CHECK((v > 0.0 && v < 1.0));

  // Reversing the pixel order of every channel preserves channel means.
  std::vector<double> flipped(x.size());
  for (std::size_t c = 0; c < 32; ++c)
    for (std::size_t i = 0; i < 24; ++i) flipped[c * 24 + i] = x.data()[c * 24 + 23 - i];
  const auto s2 = channel_attention(Tensor<double>(x.shape(), flipped), head).gate;
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s2.data()[i] == doctest::Approx(s.data()[i]).epsilon(1e-14));

  // A different map with the same channel means.
  std::vector<double> other(x.size());
  for (std::size_t c = 0; c < 32; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 24; ++i) mean += x.data()[c * 24 + i] / 24.0;
    for (std::size_t i = 0; i < 24; ++i) other[c * 24 + i] = mean + (i % 2 ? 1.5 : -1.5);
  }
  const auto s3 = channel_attention(Tensor<double>(x.shape(), other), head).gate;
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s3.data()[i] == doctest::Approx(s.data()[i]).epsilon(1e-12));
}

TEST_CASE("SE weight gradients match finite differences") {
  HeadConfig cfg;
  cfg.in_channels = 16;
  cfg.reduction = 4;
  Rng rng(17);
  auto head = HeadParams<double>::make(cfg, rng);
  const auto x = random_tensor({2, 16, 3, 5}, 18);
  auto loss = [&] { return sum(channel_attention(x, head).output); };
  std::vector<ParamCoordinate> coords;
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < 64; ++i) coords.push_back({t, i});
  CHECK(finite_difference_check(loss, {head.w1, head.w2}, coords).max_rel_error < 1e-4);
}

TEST_CASE("head preserves extents and outputs one channel") {
  HeadConfig cfg;
  Rng rng(19);
  auto head = HeadParams<float>::make(cfg, rng);
  NoGradScope<float> no_grad;
  const auto d = head_forward(to_float(random_tensor({1, 128, 64, 128}, 20, 0.0, 1.0)), head, NormMode::train);
  CHECK(d.shape() == Shape{1, 1, 64, 128});

  HeadConfig slim;
  slim.in_channels = 16;
  slim.reduction = 4;
  slim.mid_channels = 4;
  Rng rng2(21);
  auto small = HeadParams<float>::make(slim, rng2);
  const auto big = head_forward(to_float(random_tensor({1, 16, 256, 512}, 22, 0.0, 1.0)), small, NormMode::train);
  CHECK(big.shape() == Shape{1, 1, 256, 512});
  for (float v : big.data()) REQUIRE(std::isfinite(v));
  CHECK_THROWS_AS(head_forward(Tensor<float>({1, 8, 4, 4}), small, NormMode::train), ShapeError);
  HeadConfig bad;
  bad.in_channels = 100;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("every head parameter receives gradient from the masked loss") {
  HeadConfig cfg;
  cfg.in_channels = 32;
  cfg.reduction = 8;
  cfg.mid_channels = 16;
  Rng rng(23);
  auto head = HeadParams<double>::make(cfg, rng);
  const auto x = random_tensor({2, 32, 8, 8}, 24, 0.0, 1.0);
  const auto gt = random_tensor({2, 1, 8, 8}, 25, 2.0, 50.0);
  const auto mask = random_tensor({2, 1, 8, 8}, 26, 0.0, 1.0);
  GradTape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(tape, masked_weighted_l1(head_forward(x, head, NormMode::train), gt, mask, 3.0));
  }
  head.visit_params("head", [&](const std::string& name, Tensor<double>& t) {
    INFO(name);
    CHECK(grad_norm(t) > 0.0);
  });
}

// -------------------------------------------------------------- model

TEST_CASE("full model wires every stage") {
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  CHECK(model.parameter_count() == 437377 + 832 + 2304 + 76481);
  const Shape plane{1, 1, 64, 128};
  ModelInput<float> in{to_float(random_tensor({1, 3, 64, 128}, 1, 0.0, 1.0)), Tensor<float>(plane),
                       Tensor<float>(plane), Tensor<float>(plane)};
  NoGradScope<float> no_grad;
  const auto out = model.forward(in, NormMode::train);
  CHECK(out.d_init.shape() == plane);
  CHECK(out.d_final.shape() == plane);
  CHECK(out.f_att.shape() == Shape{1, 8, 64, 128});
  CHECK(out.f_fused.shape() == Shape{1, 128, 64, 128});
  CHECK(out.attention.shape() == Shape{1, 512, 512});

  cfg.attention_enabled = false;
  Model<float> ablated(cfg, 1);
  const auto z = ablated.forward(in, NormMode::train);
  for (float v : z.f_att.data()) CHECK(v == 0.0f);
}
