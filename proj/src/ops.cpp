#include "iadc/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace iadc {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op) {
  check_finite(values, op);
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (GradTape<T>::active() == nullptr) return false;
  for (const auto* t : inputs)
    if (t != nullptr && t->requires_grad()) return true;
  return false;
}

// Marks `out` as taped and records its backward closure.
template <typename T, typename Fn>
void record(const char* op, Tensor<T>& out, Fn&& fn) {
  auto& s = *out.storage();
  s.requires_grad = true;
  s.leaf = false;
  GradTape<T>::active()->record(op, out.storage(), std::forward<Fn>(fn));
}

// Gradient buffer of an input, or nullptr when it does not need one.
template <typename T>
T* grad_sink(const StoragePtr<T>& s) {
  if (!s->requires_grad) return nullptr;
  s->ensure_grad();
  return s->grad.data();
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(rank) +
                     " tensor, got " + shape_to_string(s));
}

// ---- broadcasting -----------------------------------------------------------

struct BroadcastPlan {
  std::array<std::size_t, 4> ext{1, 1, 1, 1};
  std::array<std::size_t, 4> stride_a{0, 0, 0, 0};
  std::array<std::size_t, 4> stride_b{0, 0, 0, 0};
  Shape out;
};

std::array<std::size_t, 4> padded(const Shape& s) {
  std::array<std::size_t, 4> p{1, 1, 1, 1};
  for (std::size_t i = 0; i < s.size(); ++i) p[4 - s.size() + i] = s[i];
  return p;
}

std::array<std::size_t, 4> strides_of(const std::array<std::size_t, 4>& e) {
  return {e[1] * e[2] * e[3], e[2] * e[3], e[3], 1};
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  const auto pa = padded(a);
  const auto pb = padded(b);
  const auto sa = strides_of(pa);
  const auto sb = strides_of(pb);
  for (std::size_t i = 0; i < 4; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      throw ShapeError("shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                       " are not broadcast-compatible");
    plan.ext[i] = std::max(pa[i], pb[i]);
    plan.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    plan.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  const std::size_t rank = std::max(a.size(), b.size());
  for (std::size_t i = 4 - rank; i < 4; ++i) plan.out.push_back(plan.ext[i]);
  return plan;
}

template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < p.ext[0]; ++i0)
    for (std::size_t i1 = 0; i1 < p.ext[1]; ++i1)
      for (std::size_t i2 = 0; i2 < p.ext[2]; ++i2) {
        std::size_t ia = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
        std::size_t ib = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
        for (std::size_t i3 = 0; i3 < p.ext[3]; ++i3, ++o)
          fn(o, ia + i3 * p.stride_a[3], ib + i3 * p.stride_b[3]);
      }
}

// ---- im2col -----------------------------------------------------------------

struct ConvGeometry {
  std::size_t channels, in_h, in_w, k, stride, pad, out_h, out_w;
};

// Columns for output rows [row0, row1) into `col` (channels·k·k × rows·out_w).
template <typename T>
void im2col(const T* img, const ConvGeometry& g, std::size_t row0, std::size_t row1, T* col) {
  const std::size_t ncols = (row1 - row0) * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* dst = col + ((c * g.k + ki) * g.k + kj) * ncols;
        const T* plane = img + c * g.in_h * g.in_w;
        for (std::size_t oy = row0; oy < row1; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T(0));
            dst += g.out_w;
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            *dst++ = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::size_t row0, std::size_t row1, T* img) {
  const std::size_t ncols = (row1 - row0) * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* src = col + ((c * g.k + ki) * g.k + kj) * ncols;
        T* plane = img + c * g.in_h * g.in_w;
        for (std::size_t oy = row0; oy < row1; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            src += g.out_w;
            continue;
          }
          T* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox, ++src) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) dst[ix] += *src;
          }
        }
      }
}

// Output rows per im2col tile, keeping the column buffer near 4M elements.
std::size_t tile_rows(const ConvGeometry& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 22;
  const std::size_t per_row = g.channels * g.k * g.k * g.out_w;
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_row, 1), 1, g.out_h);
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

// ---- elementwise ------------------------------------------------------------

UnaryKind parse_unary_kind(std::string_view name) {
  if (name == "relu") return UnaryKind::relu;
  if (name == "sigmoid") return UnaryKind::sigmoid;
  if (name == "abs") return UnaryKind::abs;
  if (name == "square") return UnaryKind::square;
  if (name == "neg") return UnaryKind::neg;
  throw std::invalid_argument("unknown unary op kind '" + std::string(name) + "'");
}

BinaryKind parse_binary_kind(std::string_view name) {
  if (name == "add") return BinaryKind::add;
  if (name == "sub") return BinaryKind::sub;
  if (name == "mul") return BinaryKind::mul;
  if (name == "div") return BinaryKind::div;
  throw std::invalid_argument("unknown binary op kind '" + std::string(name) + "'");
}

template <typename T>
Tensor<T> unary(UnaryKind kind, const Tensor<T>& x) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  const char* name = "unary";
  switch (kind) {
    case UnaryKind::relu:
      name = "relu";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case UnaryKind::sigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < in.size(); ++i) {
        // Split by sign so exp never overflows.
        if (in[i] >= T(0)) {
          out[i] = T(1) / (T(1) + std::exp(-in[i]));
        } else {
          const T e = std::exp(in[i]);
          out[i] = e / (T(1) + e);
        }
      }
      break;
    case UnaryKind::abs:
      name = "abs";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::abs(in[i]);
      break;
    case UnaryKind::square:
      name = "square";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * in[i];
      break;
    case UnaryKind::neg:
      name = "neg";
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = -in[i];
      break;
  }
  Tensor<T> y = make_result(x.shape(), std::move(out), name);
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record(name, y, [xs, ys, kind] {
      auto yst = ys.lock();
      T* gx = grad_sink(xs);
      if (gx == nullptr) return;
      const auto& gy = yst->grad;
      const auto& xv = xs->data;
      const auto& yv = yst->data;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        T d = T(0);
        switch (kind) {
          case UnaryKind::relu: d = xv[i] > T(0) ? T(1) : T(0); break;
          case UnaryKind::sigmoid: d = yv[i] * (T(1) - yv[i]); break;
          case UnaryKind::abs: d = xv[i] > T(0) ? T(1) : (xv[i] < T(0) ? T(-1) : T(0)); break;
          case UnaryKind::square: d = T(2) * xv[i]; break;
          case UnaryKind::neg: d = T(-1); break;
        }
        gx[i] += gy[i] * d;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(shape_numel(plan.out));
  const char* name = "binary";
  switch (kind) {
    case BinaryKind::add:
      name = "add";
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] + bv[j]; });
      break;
    case BinaryKind::sub:
      name = "sub";
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] - bv[j]; });
      break;
    case BinaryKind::mul:
      name = "mul";
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] * bv[j]; });
      break;
    case BinaryKind::div:
      name = "div";
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] / bv[j]; });
      break;
  }
  Tensor<T> y = make_result(plan.out, std::move(out), name);
  if (wants_grad<T>({&a, &b})) {
    StoragePtr<T> as = a.storage();
    StoragePtr<T> bs = b.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record(name, y, [as, bs, ys, plan, kind] {
      const auto& gy = ys.lock()->grad;
      T* ga = grad_sink(as);
      T* gb = grad_sink(bs);
      const auto& av = as->data;
      const auto& bv = bs->data;
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
        const T g = gy[o];
        switch (kind) {
          case BinaryKind::add:
            if (ga) ga[i] += g;
            if (gb) gb[j] += g;
            break;
          case BinaryKind::sub:
            if (ga) ga[i] += g;
            if (gb) gb[j] -= g;
            break;
          case BinaryKind::mul:
            if (ga) ga[i] += g * bv[j];
            if (gb) gb[j] += g * av[i];
            break;
          case BinaryKind::div:
            if (ga) ga[i] += g / bv[j];
            if (gb) gb[j] -= g * av[i] / (bv[j] * bv[j]);
            break;
        }
      });
    });
  }
  return y;
}

template <typename T>
Tensor<T> elementwise(std::string_view kind, const Tensor<T>& a,
                      const std::optional<std::type_identity_t<Tensor<T>>>& b) {
  if (kind == "add" || kind == "sub" || kind == "mul" || kind == "div") {
    if (!b) throw std::invalid_argument("binary op '" + std::string(kind) + "' needs two operands");
    return binary(parse_binary_kind(kind), a, *b);
  }
  const UnaryKind u = parse_unary_kind(kind);
  if (b) throw std::invalid_argument("unary op '" + std::string(kind) + "' takes one operand");
  return unary(u, a);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  Tensor<T> y = make_result(x.shape(), std::move(out), "scale");
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("scale", y, [xs, ys, factor] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  // Extended accumulation keeps the rounding of large reductions near one ulp.
  long double acc = 0.0L;
  for (const T v : x.data()) acc += static_cast<long double>(v);
  Tensor<T> y = make_result(Shape{1}, std::vector<T>{static_cast<T>(acc)}, "sum");
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("sum", y, [xs, ys] {
      const T g = ys.lock()->grad[0];
      T* gx = grad_sink(xs);
      for (std::size_t i = 0; i < xs->data.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("cannot reshape " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
  std::vector<T> values(x.data().begin(), x.data().end());
  Tensor<T> y(std::move(shape), std::move(values));
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("reshape", y, [xs, ys] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3)
    throw ShapeError("transpose expects rank 2 or 3, got " + shape_to_string(x.shape()));
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t rows = x.dim(x.rank() - 2);
  const std::size_t cols = x.dim(x.rank() - 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<T> out(x.size());
  const T* in = x.ptr();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[b * rows * cols + c * rows + r] = in[b * rows * cols + r * cols + c];
  Tensor<T> y(std::move(shape), std::move(out));
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("transpose", y, [xs, ys, batch, rows, cols] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            gx[b * rows * cols + r * cols + c] += gy[b * rows * cols + c * rows + r];
    });
  }
  return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3))
    throw ShapeError("matmul expects two rank-2 or two rank-3 tensors, got " +
                     shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  const bool batched = a.rank() == 3;
  const std::size_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch)
    throw ShapeError("matmul batch mismatch: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  const std::size_t n = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t m = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k)
    throw ShapeError("matmul inner extents differ: " + shape_to_string(a.shape()) + " · " +
                     shape_to_string(b.shape()));
  std::vector<T> out(batch * n * m);
  for (std::size_t i = 0; i < batch; ++i) {
    MapConstMat<T> am(a.ptr() + i * n * k, n, k);
    MapConstMat<T> bm(b.ptr() + i * k * m, k, m);
    MapMat<T> cm(out.data() + i * n * m, n, m);
    cm.noalias() = am * bm;
  }
  Shape shape = batched ? Shape{batch, n, m} : Shape{n, m};
  Tensor<T> y = make_result(std::move(shape), std::move(out), "matmul");
  if (wants_grad<T>({&a, &b})) {
    StoragePtr<T> as = a.storage();
    StoragePtr<T> bs = b.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("matmul", y, [as, bs, ys, batch, n, k, m] {
      const auto& gy = ys.lock()->grad;
      T* ga = grad_sink(as);
      T* gb = grad_sink(bs);
      for (std::size_t i = 0; i < batch; ++i) {
        MapConstMat<T> gm(gy.data() + i * n * m, n, m);
        if (ga) {
          MapMat<T> gam(ga + i * n * k, n, k);
          gam.noalias() += gm * MapConstMat<T>(bs->data.data() + i * k * m, k, m).transpose();
        }
        if (gb) {
          MapMat<T> gbm(gb + i * k * m, k, m);
          gbm.noalias() += MapConstMat<T>(as->data.data() + i * n * k, n, k).transpose() * gm;
        }
      }
    });
  }
  return y;
}

// ---- convolution ------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<std::type_identity_t<Tensor<T>>>& bias,
                 std::size_t stride, std::size_t padding) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw ShapeError("conv2d weight " + shape_to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)) + " input channels, input has " + std::to_string(cin));
  if (weight.dim(3) != k) throw ShapeError("conv2d kernel must be square, got " + shape_to_string(weight.shape()));
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw ShapeError("conv2d bias must have shape (" + std::to_string(cout) + ")");
  if (h + 2 * padding < k || w + 2 * padding < k || (h + 2 * padding - k) % stride != 0 ||
      (w + 2 * padding - k) % stride != 0)
    throw ShapeError("conv2d output extent is not an integer for input " + shape_to_string(x.shape()) +
                     ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(padding));

  const ConvGeometry g{cin, h, w, k, stride, padding, (h + 2 * padding - k) / stride + 1,
                       (w + 2 * padding - k) / stride + 1};
  const std::size_t ckk = cin * k * k;
  const std::size_t opix = g.out_h * g.out_w;
  const std::size_t rows_per_tile = tile_rows(g);

  std::vector<T> out(batch * cout * opix);
  MapConstMat<T> wm(weight.ptr(), cout, ckk);
  std::vector<T> col;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* img = x.ptr() + b * cin * h * w;
    MapMat<T> om(out.data() + b * cout * opix, cout, opix);
    if (is_pointwise(g)) {
      om.noalias() = wm * MapConstMat<T>(img, cin, opix);
    } else {
      for (std::size_t r0 = 0; r0 < g.out_h; r0 += rows_per_tile) {
        const std::size_t r1 = std::min(g.out_h, r0 + rows_per_tile);
        const std::size_t ncols = (r1 - r0) * g.out_w;
        col.resize(ckk * ncols);
        im2col(img, g, r0, r1, col.data());
        om.middleCols(r0 * g.out_w, ncols).noalias() = wm * MapConstMat<T>(col.data(), ckk, ncols);
      }
    }
    if (bias) {
      const T* bv = bias->ptr();
      for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += bv[c];
    }
  }

  Tensor<T> y = make_result(Shape{batch, cout, g.out_h, g.out_w}, std::move(out), "conv2d");
  const Tensor<T>* bias_ptr = bias ? &*bias : nullptr;
  if (wants_grad<T>({&x, &weight, bias_ptr})) {
    StoragePtr<T> xs = x.storage();
    StoragePtr<T> ws = weight.storage();
    StoragePtr<T> bs = bias ? bias->storage() : nullptr;
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("conv2d", y, [xs, ws, bs, ys, g, batch, cout, ckk, opix, rows_per_tile] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      T* gw = grad_sink(ws);
      T* gb = bs ? grad_sink(bs) : nullptr;
      MapConstMat<T> wm(ws->data.data(), cout, ckk);
      std::vector<T> col;
      std::vector<T> dcol;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* img = xs->data.data() + b * g.channels * g.in_h * g.in_w;
        MapConstMat<T> gom(gy.data() + b * cout * opix, cout, opix);
        if (gb) {
          // Plain loop: Eigen's vectorized reduction rounds differently with the buffer's alignment.
          for (std::size_t c = 0; c < cout; ++c) {
            const T* row = gy.data() + (b * cout + c) * opix;
            long double acc = 0.0L;
            for (std::size_t i = 0; i < opix; ++i) acc += row[i];
            gb[c] += static_cast<T>(acc);
          }
        }
        if (is_pointwise(g)) {
          MapConstMat<T> xm(img, g.channels, opix);
          if (gw) MapMat<T>(gw, cout, ckk).noalias() += gom * xm.transpose();
          if (gx)
            MapMat<T>(gx + b * g.channels * opix, g.channels, opix).noalias() += wm.transpose() * gom;
          continue;
        }
        for (std::size_t r0 = 0; r0 < g.out_h; r0 += rows_per_tile) {
          const std::size_t r1 = std::min(g.out_h, r0 + rows_per_tile);
          const std::size_t ncols = (r1 - r0) * g.out_w;
          const auto gblock = gom.middleCols(r0 * g.out_w, ncols);
          if (gw) {
            col.resize(ckk * ncols);
            im2col(img, g, r0, r1, col.data());
            MapMat<T>(gw, cout, ckk).noalias() +=
                gblock * MapConstMat<T>(col.data(), ckk, ncols).transpose();
          }
          if (gx) {
            dcol.resize(ckk * ncols);
            MapMat<T>(dcol.data(), ckk, ncols).noalias() = wm.transpose() * gblock;
            col2im_add(dcol.data(), g, r0, r1, gx + b * g.channels * g.in_h * g.in_w);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride) {
  require_rank(x.shape(), 4, "conv_transpose2d input");
  require_rank(weight.shape(), 4, "conv_transpose2d weight");
  if (stride == 0) throw ShapeError("conv_transpose2d stride must be positive");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (weight.dim(0) != cin)
    throw ShapeError("conv_transpose2d weight " + shape_to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(0)) + " input channels, input has " + std::to_string(cin));
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(3) != k)
    throw ShapeError("conv_transpose2d kernel must be square, got " + shape_to_string(weight.shape()));

  // Geometry of the conv2d whose input-gradient this op is: that conv reads
  // the (cout, oh, ow) image produced here and writes the (h, w) grid of x.
  const std::size_t oh = (h - 1) * stride + k;
  const std::size_t ow = (w - 1) * stride + k;
  const ConvGeometry g{cout, oh, ow, k, stride, 0, h, w};
  const std::size_t ckk = cout * k * k;
  const std::size_t ipix = h * w;

  std::vector<T> out(batch * cout * oh * ow, T(0));
  MapConstMat<T> wm(weight.ptr(), cin, ckk);
  std::vector<T> col(ckk * ipix);
  for (std::size_t b = 0; b < batch; ++b) {
    MapMat<T>(col.data(), ckk, ipix).noalias() =
        wm.transpose() * MapConstMat<T>(x.ptr() + b * cin * ipix, cin, ipix);
    col2im_add(col.data(), g, 0, h, out.data() + b * cout * oh * ow);
  }
  Tensor<T> y = make_result(Shape{batch, cout, oh, ow}, std::move(out), "conv_transpose2d");
  if (wants_grad<T>({&x, &weight})) {
    StoragePtr<T> xs = x.storage();
    StoragePtr<T> ws = weight.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("conv_transpose2d", y, [xs, ws, ys, g, batch, cin, ckk, ipix] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      T* gw = grad_sink(ws);
      MapConstMat<T> wm(ws->data.data(), cin, ckk);
      std::vector<T> dcol(ckk * ipix);
      for (std::size_t b = 0; b < batch; ++b) {
        im2col(gy.data() + b * g.channels * g.in_h * g.in_w, g, 0, g.out_h, dcol.data());
        MapConstMat<T> dm(dcol.data(), ckk, ipix);
        if (gx) MapMat<T>(gx + b * cin * ipix, cin, ipix).noalias() += wm * dm;
        if (gw)
          MapMat<T>(gw, cin, ckk).noalias() +=
              MapConstMat<T>(xs->data.data() + b * cin * ipix, cin, ipix) * dm.transpose();
      }
    });
  }
  return y;
}

// ---- pooling / normalization ------------------------------------------------

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "maxpool2");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2 needs even spatial extents, got " + shape_to_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const T* in = x.ptr();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t base = p * h * w + 2 * i * w + 2 * j;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (std::size_t c = 1; c < 4; ++c)
          if (in[cand[c]] > in[best]) best = cand[c];  // strict: first occurrence wins ties
        const std::size_t o = (p * oh + i) * ow + j;
        out[o] = in[best];
        argmax[o] = best;
      }
  Tensor<T> y = make_result(Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), "maxpool2");
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("maxpool2", y, [xs, ys, argmax = std::move(argmax)] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  std::vector<T> out(x.size());
  const T* in = x.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = in + r * cols;
    T* dst = out.data() + r * cols;
    const T mx = *std::max_element(src, src + cols);
    T total = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - mx);
      total += dst[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  Tensor<T> y = make_result(x.shape(), std::move(out), "softmax_rows");
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("softmax_rows", y, [xs, ys, rows, cols] {
      auto yst = ys.lock();
      const auto& gy = yst->grad;
      const auto& yv = yst->data;
      T* gx = grad_sink(xs);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t off = r * cols;
        T dot = T(0);
        for (std::size_t c = 0; c < cols; ++c) dot += gy[off + c] * yv[off + c];
        for (std::size_t c = 0; c < cols; ++c) gx[off + c] += yv[off + c] * (gy[off + c] - dot);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, NormMode mode) {
  require_rank(x.shape(), 4, "batchnorm2d");
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != channels || beta.size() != channels || state.running_mean.size() != channels ||
      state.running_var.size() != channels)
    throw ShapeError("batchnorm2d parameters do not match " + std::to_string(channels) + " channels");
  const std::size_t count = batch * hw;

  std::vector<T> mean_c(channels), invstd_c(channels);
  const T* in = x.ptr();
  if (mode == NormMode::train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      long double s = 0.0L;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = in + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = static_cast<double>(s / static_cast<long double>(count));
      long double sq = 0.0L;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = in + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double ss = static_cast<double>(sq);
      const double var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      mean_c[c] = static_cast<T>(mu);
      invstd_c[c] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
      rm[c] = static_cast<T>((1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * mu);
      rv[c] = static_cast<T>((1.0 - kBatchNormMomentum) * rv[c] + kBatchNormMomentum * unbiased);
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      mean_c[c] = rm[c];
      invstd_c[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + kBatchNormEps));
    }
  }

  std::vector<T> out(x.size());
  const T* gv = gamma.ptr();
  const T* bv = beta.ptr();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * hw;
      const T a = gv[c] * invstd_c[c];
      const T shift = bv[c] - a * mean_c[c];
      for (std::size_t i = 0; i < hw; ++i) out[off + i] = a * in[off + i] + shift;
    }

  Tensor<T> y = make_result(x.shape(), std::move(out), "batchnorm2d");
  if (wants_grad<T>({&x, &gamma, &beta})) {
    StoragePtr<T> xs = x.storage();
    StoragePtr<T> gs = gamma.storage();
    StoragePtr<T> bs = beta.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    const bool train = mode == NormMode::train;
    record("batchnorm2d", y,
           [xs, gs, bs, ys, mean_c = std::move(mean_c), invstd_c = std::move(invstd_c), batch, channels,
            hw, count, train] {
             const auto& gy = ys.lock()->grad;
             const auto& xv = xs->data;
             const auto& gam = gs->data;
             T* gx = grad_sink(xs);
             T* gg = grad_sink(gs);
             T* gb = grad_sink(bs);
             for (std::size_t c = 0; c < channels; ++c) {
               double sum_dy = 0.0, sum_dy_xhat = 0.0;
               for (std::size_t b = 0; b < batch; ++b) {
                 const std::size_t off = (b * channels + c) * hw;
                 for (std::size_t i = 0; i < hw; ++i) {
                   const double xhat = (xv[off + i] - mean_c[c]) * invstd_c[c];
                   sum_dy += gy[off + i];
                   sum_dy_xhat += gy[off + i] * xhat;
                 }
               }
               if (gg) gg[c] += static_cast<T>(sum_dy_xhat);
               if (gb) gb[c] += static_cast<T>(sum_dy);
               if (!gx) continue;
               const double g_inv = static_cast<double>(gam[c]) * invstd_c[c];
               const double n = static_cast<double>(count);
               for (std::size_t b = 0; b < batch; ++b) {
                 const std::size_t off = (b * channels + c) * hw;
                 for (std::size_t i = 0; i < hw; ++i) {
                   if (train) {
                     const double xhat = (xv[off + i] - mean_c[c]) * invstd_c[c];
                     gx[off + i] += static_cast<T>(g_inv * (gy[off + i] - sum_dy / n - xhat * sum_dy_xhat / n));
                   } else {
                     gx[off + i] += static_cast<T>(g_inv * gy[off + i]);
                   }
                 }
               }
             }
           });
  }
  return y;
}

// ---- layout -----------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 4, "concat_channels");
  require_rank(b.shape(), 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels needs equal batch and spatial extents, got " +
                     shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(batch * (ca + cb) * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.ptr() + n * ca * hw, ca * hw, out.data() + n * (ca + cb) * hw);
    std::copy_n(b.ptr() + n * cb * hw, cb * hw, out.data() + n * (ca + cb) * hw + ca * hw);
  }
  Tensor<T> y(Shape{batch, ca + cb, a.dim(2), a.dim(3)}, std::move(out));
  if (wants_grad<T>({&a, &b})) {
    StoragePtr<T> as = a.storage();
    StoragePtr<T> bs = b.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("concat_channels", y, [as, bs, ys, batch, ca, cb, hw] {
      const auto& gy = ys.lock()->grad;
      T* ga = grad_sink(as);
      T* gb = grad_sink(bs);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = gy.data() + n * (ca + cb) * hw;
        if (ga)
          for (std::size_t i = 0; i < ca * hw; ++i) ga[n * ca * hw + i] += src[i];
        if (gb)
          for (std::size_t i = 0; i < cb * hw; ++i) gb[n * cb * hw + i] += src[ca * hw + i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank(x.shape(), 4, "slice_channels");
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (count == 0 || begin + count > channels)
    throw ShapeError("slice_channels [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_to_string(x.shape()));
  std::vector<T> out(batch * count * hw);
  for (std::size_t n = 0; n < batch; ++n)
    std::copy_n(x.ptr() + (n * channels + begin) * hw, count * hw, out.data() + n * count * hw);
  Tensor<T> y(Shape{batch, count, x.dim(2), x.dim(3)}, std::move(out));
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("slice_channels", y, [xs, ys, batch, channels, begin, count, hw] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < count * hw; ++i) gx[(n * channels + begin) * hw + i] += gy[n * count * hw + i];
    });
  }
  return y;
}

namespace {

// One output coordinate's two source taps along an axis.
struct Taps {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Taps> axis_taps(std::size_t in, std::size_t out, InterpMode mode) {
  std::vector<Taps> taps(out);
  for (std::size_t d = 0; d < out; ++d) {
    if (mode == InterpMode::nearest) {
      const std::size_t s = std::min(d * in / out, in - 1);
      taps[d] = {s, s, 1.0, 0.0};
      continue;
    }
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 < in - 1 ? i0 + 1 : i0;
    const double l1 = src - static_cast<double>(i0);
    taps[d] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x, std::size_t out_h, std::size_t out_w, InterpMode mode) {
  require_rank(x.shape(), 4, "interpolate");
  if (out_h == 0 || out_w == 0) throw ShapeError("interpolate target extents must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = axis_taps(h, out_h, mode);
  const auto tx = axis_taps(w, out_w, mode);
  std::vector<T> out(planes * out_h * out_w);
  const T* in = x.ptr();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in + p * h * w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Taps& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Taps& b = tx[j];
        const double v = a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                         a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
        dst[i * out_w + j] = static_cast<T>(v);
      }
    }
  }
  const char* name = mode == InterpMode::nearest ? "interpolate_nearest" : "interpolate_bilinear";
  Tensor<T> y = make_result(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), name);
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record(name, y, [xs, ys, ty, tx, planes, h, w, out_h, out_w] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      for (std::size_t p = 0; p < planes; ++p) {
        T* dst = gx + p * h * w;
        const T* g = gy.data() + p * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i) {
          const Taps& a = ty[i];
          for (std::size_t j = 0; j < out_w; ++j) {
            const Taps& b = tx[j];
            const double v = g[i * out_w + j];
            dst[a.i0 * w + b.i0] += static_cast<T>(v * a.w0 * b.w0);
            dst[a.i0 * w + b.i1] += static_cast<T>(v * a.w0 * b.w1);
            dst[a.i1 * w + b.i0] += static_cast<T>(v * a.w1 * b.w0);
            dst[a.i1 * w + b.i1] += static_cast<T>(v * a.w1 * b.w1);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(batch * channels);
  for (std::size_t p = 0; p < batch * channels; ++p) {
    long double s = 0.0L;
    const T* src = x.ptr() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) s += src[i];
    out[p] = static_cast<T>(s / static_cast<long double>(hw));
  }
  Tensor<T> y = make_result(Shape{batch, channels}, std::move(out), "global_avg_pool");
  if (wants_grad<T>({&x})) {
    StoragePtr<T> xs = x.storage();
    std::weak_ptr<TensorStorage<T>> ys = y.storage();
    record("global_avg_pool", y, [xs, ys, hw] {
      const auto& gy = ys.lock()->grad;
      T* gx = grad_sink(xs);
      const T inv = T(1) / static_cast<T>(hw);
      for (std::size_t p = 0; p < gy.size(); ++p)
        for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += gy[p] * inv;
    });
  }
  return y;
}

#define IADC_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> unary(UnaryKind, const Tensor<T>&);                                               \
  template Tensor<T> binary(BinaryKind, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> elementwise(std::string_view, const Tensor<T>&, const std::optional<Tensor<T>>&); \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template Tensor<T> sum(const Tensor<T>&);                                                            \
  template Tensor<T> mean(const Tensor<T>&);                                                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                 \
  template Tensor<T> transpose(const Tensor<T>&);                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&,       \
                            std::size_t, std::size_t);                                                 \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, std::size_t);                \
  template Tensor<T> maxpool2(const Tensor<T>&);                                                       \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                   \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                 BatchNormState<T>&, NormMode);                                        \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> interpolate(const Tensor<T>&, std::size_t, std::size_t, InterpMode);              \
  template Tensor<T> global_avg_pool(const Tensor<T>&);

IADC_INSTANTIATE_OPS(float)
IADC_INSTANTIATE_OPS(double)

#undef IADC_INSTANTIATE_OPS

}  // namespace iadc
