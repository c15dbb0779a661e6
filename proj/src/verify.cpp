#include "iadc/verify.hpp"

#include <algorithm>
#include <functional>

#include "iadc/gradcheck.hpp"
#include "iadc/loss.hpp"

namespace iadc {
namespace {

using D = Tensor<double>;

D random_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return D(shape, std::move(v));
}

// Fixed random weights make every output coordinate contribute generically.
D weighted_sum(const D& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_uniform(y.shape(), rng, -1.0, 1.0)));
}

class OpAudit {
 public:
  explicit OpAudit(std::uint64_t seed) : rng_(seed) {}

  D draw(const Shape& shape, double lo = -1.0, double hi = 1.0) { return random_uniform(shape, rng_, lo, hi); }

  // Checks d/d(inputs[k]) of weighted_sum(op(inputs)) for every k.
  void check(const std::string& op, const std::vector<D>& inputs, const std::function<D(const std::vector<D>&)>& fn) {
    OpGradReport& r = report(op);
    r.shapes.push_back(shape_to_string(inputs.front().shape()));
    const std::uint64_t wseed = rng_.bits();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto f = [&](const D& x) {
        std::vector<D> args = inputs;
        args[k] = x;
        return weighted_sum(fn(args), wseed);
      };
      r.max_rel_error = std::max(r.max_rel_error, finite_difference_check(f, inputs[k]).max_rel_error);
    }
  }

  std::vector<OpGradReport> take() { return std::move(reports_); }

 private:
  OpGradReport& report(const std::string& op) {
    for (auto& r : reports_)
      if (r.op == op) return r;
    reports_.push_back({op, {}, 0.0});
    return reports_.back();
  }

  Rng rng_;
  std::vector<OpGradReport> reports_;
};

}  // namespace

std::vector<OpGradReport> check_op_gradients(std::uint64_t seed) {
  OpAudit a(seed);
  const std::vector<Shape> shapes{{5}, {2, 3}, {2, 3, 2, 4}};
  for (const auto& s : shapes) {
    a.check("relu", {a.draw(s)}, [](const auto& v) { return relu(v[0]); });
    a.check("sigmoid", {a.draw(s, -3, 3)}, [](const auto& v) { return sigmoid(v[0]); });
    a.check("abs", {a.draw(s)}, [](const auto& v) { return abs(v[0]); });
    a.check("square", {a.draw(s)}, [](const auto& v) { return square(v[0]); });
    a.check("scale", {a.draw(s)}, [](const auto& v) { return scale(v[0], 2.5); });
    a.check("sum", {a.draw(s)}, [](const auto& v) { return scale(sum(v[0]), 0.7); });
    a.check("mean", {a.draw(s)}, [](const auto& v) { return scale(mean(v[0]), 0.7); });
  }
  // Broadcasting pairs: equal shapes, a stretched column, a stretched row.
  const std::vector<std::pair<Shape, Shape>> pairs{{{2, 3}, {2, 3}}, {{3, 1}, {1, 4}}, {{2, 3, 2, 2}, {1, 3, 1, 1}}};
  for (const auto& [sa, sb] : pairs) {
    a.check("add", {a.draw(sa), a.draw(sb)}, [](const auto& v) { return add(v[0], v[1]); });
    a.check("sub", {a.draw(sa), a.draw(sb)}, [](const auto& v) { return sub(v[0], v[1]); });
    a.check("mul", {a.draw(sa), a.draw(sb)}, [](const auto& v) { return mul(v[0], v[1]); });
    a.check("div", {a.draw(sa), a.draw(sb, 0.5, 2.0)}, [](const auto& v) { return div(v[0], v[1]); });
  }
  for (const auto& s : std::vector<Shape>{{2, 6}, {3, 2, 2}, {2, 3, 2, 2}})
    a.check("reshape", {a.draw(s)}, [](const auto& v) { return reshape(v[0], {shape_numel(v[0].shape())}); });
  for (const auto& s : std::vector<Shape>{{2, 3}, {4, 1}, {2, 3, 5}})
    a.check("transpose", {a.draw(s)}, [](const auto& v) { return transpose(v[0]); });
  for (const auto& [sa, sb] : std::vector<std::pair<Shape, Shape>>{{{3, 4}, {4, 2}}, {{1, 5}, {5, 3}}, {{2, 3, 4}, {2, 4, 2}}})
    a.check("matmul", {a.draw(sa), a.draw(sb)}, [](const auto& v) { return matmul(v[0], v[1]); });

  struct ConvCase {
    Shape x, w;
    std::size_t stride, pad;
  };
  for (const auto& c : std::vector<ConvCase>{{{1, 2, 4, 4}, {3, 2, 3, 3}, 1, 1},
                                             {{2, 3, 5, 4}, {2, 3, 1, 1}, 1, 0},
                                             {{1, 2, 7, 7}, {2, 2, 3, 3}, 2, 0}})
    a.check("conv2d", {a.draw(c.x), a.draw(c.w), a.draw({c.w[0]})},
            [s = c.stride, p = c.pad](const auto& v) { return conv2d(v[0], v[1], v[2], s, p); });
  for (const auto& [sx, sw] : std::vector<std::pair<Shape, Shape>>{
           {{1, 2, 2, 3}, {2, 3, 2, 2}}, {{2, 1, 3, 3}, {1, 2, 2, 2}}, {{1, 3, 2, 2}, {3, 1, 2, 2}}})
    a.check("conv_transpose2d", {a.draw(sx), a.draw(sw)}, [](const auto& v) { return conv_transpose2d(v[0], v[1], 2); });
  for (const auto& s : std::vector<Shape>{{1, 1, 2, 2}, {2, 3, 4, 4}, {1, 2, 6, 8}})
    a.check("maxpool2", {a.draw(s)}, [](const auto& v) { return maxpool2(v[0]); });
  for (const auto& s : std::vector<Shape>{{3, 3}, {2, 5}, {2, 4, 4}})
    a.check("softmax_rows", {a.draw(s, -2, 2)}, [](const auto& v) { return softmax_rows(v[0]); });
  for (const auto& s : std::vector<Shape>{{2, 3, 2, 2}, {4, 1, 3, 3}, {1, 2, 4, 5}}) {
    const std::size_t c = s[1];
    a.check("batchnorm2d", {a.draw(s), a.draw({c}, 0.5, 1.5), a.draw({c})}, [c](const auto& v) {
      BatchNormState<double> state(c);
      return batchnorm2d(v[0], v[1], v[2], state, NormMode::train);
    });
  }
  for (const auto& [sa, sb] : std::vector<std::pair<Shape, Shape>>{
           {{1, 2, 2, 2}, {1, 1, 2, 2}}, {{2, 3, 3, 2}, {2, 2, 3, 2}}, {{1, 1, 4, 4}, {1, 3, 4, 4}}})
    a.check("concat_channels", {a.draw(sa), a.draw(sb)}, [](const auto& v) { return concat_channels(v[0], v[1]); });
  for (const auto& s : std::vector<Shape>{{1, 3, 2, 2}, {2, 4, 3, 3}, {1, 5, 2, 4}})
    a.check("slice_channels", {a.draw(s)}, [](const auto& v) { return slice_channels(v[0], 1, 2); });
  struct Resize {
    Shape x;
    std::size_t h, w;
  };
  for (const auto& r : std::vector<Resize>{{{1, 1, 2, 3}, 4, 6}, {{2, 2, 8, 8}, 3, 5}, {{1, 3, 4, 4}, 4, 4}}) {
    a.check("interpolate_bilinear", {a.draw(r.x)},
            [h = r.h, w = r.w](const auto& v) { return interpolate(v[0], h, w, InterpMode::bilinear); });
    a.check("interpolate_nearest", {a.draw(r.x)},
            [h = r.h, w = r.w](const auto& v) { return interpolate(v[0], h, w, InterpMode::nearest); });
  }
  for (const auto& s : std::vector<Shape>{{1, 1, 2, 2}, {2, 3, 4, 5}, {3, 2, 1, 6}})
    a.check("global_avg_pool", {a.draw(s)}, [](const auto& v) { return global_avg_pool(v[0]); });
  return a.take();
}

ModelConfig micro_model_config() {
  ModelConfig c;
  c.enc_channels = {4, 8, 8, 16, 16};
  c.attn_dim = 8;
  c.attn_height = 4;
  c.attn_width = 8;
  c.fusion_channels = 16;
  c.se_reduction = 4;
  c.head_mid_channels = 8;
  return c;
}

PipelineGradReport check_pipeline_gradient(std::uint64_t seed, std::size_t coordinates) {
  constexpr std::size_t kBatch = 2, kH = 16, kW = 32;
  Model<double> model(micro_model_config(), seed);
  Rng rng(mix_seed(seed, 99));
  // Initialization zeroes every bias, which makes background queries attend
  // uniformly and F_att spatially constant; batch norm then cancels some
  // parameters exactly. A generic point keeps every gradient informative.
  model.visit_params([&](const std::string& name, Tensor<double>& t) {
    const bool gamma = name.ends_with(".gamma");
    if (!gamma && !name.ends_with(".bias") && !name.ends_with(".beta")) return;
    for (auto& v : t.mutable_data()) v = gamma ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
  });

  const Shape plane{kBatch, 1, kH, kW};
  const std::size_t n = shape_numel(plane);
  std::vector<double> gt(n), sparse(n), valid(n), mask(n), soft(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = (i / kW) % kH, col = i % kW;
    gt[i] = row < 3 ? 0.0 : rng.uniform(4.0, 60.0);  // a band of invalid "sky"
    valid[i] = gt[i] > 0.0 && rng.uniform() < 0.3 ? 1.0 : 0.0;
    sparse[i] = valid[i] * gt[i];
    mask[i] = (row >= 6 && row < 12 && col >= 8 + 4 * (i / (kH * kW)) && col < 20) ? 1.0 : 0.0;
    soft[i] = std::clamp(mask[i] + rng.uniform(-0.3, 0.3), 0.0, 1.0);
  }
  ModelInput<double> input{random_uniform({kBatch, 3, kH, kW}, rng, 0.0, 1.0), D(plane, sparse), D(plane, valid),
                           D(plane, soft)};
  const D gt_t(plane, gt), fg(plane, mask);
  const LossWeights weights;
  auto loss_fn = [&] {
    ModelOutput<double> out = model.forward(input, NormMode::train);
    return total_loss(out.d_init, out.d_final, gt_t, input.m_seg, fg, weights).total;
  };

  auto named = model.named_params();
  std::vector<Tensor<double>> params;
  std::vector<ParamCoordinate> coords;
  for (std::size_t t = 0; t < named.size(); ++t) {
    params.push_back(named[t].second);
    coords.push_back({t, rng.index(named[t].second.size())});
  }
  while (coords.size() < coordinates) {
    const std::size_t t = rng.index(named.size());
    coords.push_back({t, rng.index(named[t].second.size())});
  }
  const GradCheckResult r = finite_difference_check(loss_fn, params, coords);
  PipelineGradReport out;
  out.max_rel_error = r.max_rel_error;
  out.worst_param = named[coords[r.worst_index].tensor].first + "[" + std::to_string(coords[r.worst_index].index) + "]";
  out.coordinates = r.checked;
  out.tensors = named.size();
  return out;
}

}  // namespace iadc
