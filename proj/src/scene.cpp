#include "iadc/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "iadc/rng.hpp"

namespace iadc {

namespace {

constexpr double kNearDepth = 4.0;   // bottom image row
constexpr double kFarDepth = 70.0;   // horizon row
constexpr std::size_t kPlacementRetries = 24;
constexpr std::size_t kMinVisiblePixels = 6;

struct Object {
  bool ellipse;
  long top, bottom, left, right;  // inclusive
  double depth_center;
  double slope;  // meters per column
  std::array<double, 3> color;

  double depth_at(long col) const {
    const double cx = 0.5 * static_cast<double>(left + right);
    return depth_center + slope * (static_cast<double>(col) - cx);
  }

  bool covers(long row, long col) const {
    if (row < top || row > bottom || col < left || col > right) return false;
    if (!ellipse) return true;
    const double cy = 0.5 * static_cast<double>(top + bottom);
    const double cx = 0.5 * static_cast<double>(left + right);
    const double ry = 0.5 * static_cast<double>(bottom - top + 1);
    const double rx = 0.5 * static_cast<double>(right - left + 1);
    const double dy = (static_cast<double>(row) - cy) / ry;
    const double dx = (static_cast<double>(col) - cx) / rx;
    return dx * dx + dy * dy <= 1.0;
  }
};

// Perspective-style ground: inverse depth interpolates linearly in the row.
double ground_depth(std::size_t row, std::size_t horizon, std::size_t height) {
  const double t = static_cast<double>(row - horizon) / static_cast<double>(height - 1 - horizon);
  return 1.0 / ((1.0 - t) / kFarDepth + t / kNearDepth);
}

double shade(double depth) { return 1.0 - 0.55 * std::min(depth, 80.0) / 80.0; }

const std::array<std::array<double, 3>, 8> kPalette{{{0.85, 0.20, 0.15},
                                                      {0.15, 0.55, 0.85},
                                                      {0.95, 0.75, 0.10},
                                                      {0.20, 0.70, 0.30},
                                                      {0.65, 0.30, 0.75},
                                                      {0.95, 0.50, 0.20},
                                                      {0.10, 0.75, 0.70},
                                                      {0.80, 0.80, 0.85}}};

// Pixel ownership by depth order: returns owner index per pixel (-1 = none).
std::vector<int> resolve_owners(const std::vector<Object>& objects, std::size_t h, std::size_t w) {
  std::vector<int> owner(h * w, -1);
  std::vector<double> zbuf(h * w, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const Object& o = objects[k];
    for (long r = std::max(0L, o.top); r <= std::min(static_cast<long>(h) - 1, o.bottom); ++r)
      for (long c = std::max(0L, o.left); c <= std::min(static_cast<long>(w) - 1, o.right); ++c) {
        if (!o.covers(r, c)) continue;
        const double d = o.depth_at(c);
        const std::size_t p = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
        if (d < zbuf[p]) {  // strict: earlier object keeps exact ties
          zbuf[p] = d;
          owner[p] = static_cast<int>(k);
        }
      }
  }
  return owner;
}

std::vector<std::size_t> visible_counts(const std::vector<int>& owner, std::size_t n) {
  std::vector<std::size_t> counts(n, 0);
  for (int o : owner)
    if (o >= 0) ++counts[static_cast<std::size_t>(o)];
  return counts;
}

std::string scene_name(std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05llu", static_cast<unsigned long long>(seed));
  return buf;
}

}  // namespace

Sample generate_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t n_objects) {
  if (n_objects < 1 || n_objects > kMaxObjects)
    throw std::invalid_argument("generate_scene: n_objects must be in [1, 32], got " + std::to_string(n_objects));
  if (height < kMinSceneExtent || width < kMinSceneExtent)
    throw std::invalid_argument("generate_scene: height and width must be >= 32");

  Rng rng(mix_seed(seed, 0x5ce4e));
  const auto h = static_cast<long>(height);
  const auto w = static_cast<long>(width);
  const std::size_t horizon = static_cast<std::size_t>(std::lround(static_cast<double>(height) * rng.uniform(0.22, 0.34)));

  std::vector<Object> placed;
  for (std::size_t k = 0; k < n_objects; ++k) {
    for (std::size_t attempt = 0; attempt < kPlacementRetries; ++attempt) {
      Object o{};
      o.ellipse = rng.uniform() < 0.5;
      const long base = static_cast<long>(horizon) + 2 + static_cast<long>(rng.index(height - horizon - 2));
      const double base_depth = ground_depth(static_cast<std::size_t>(base), horizon, height);
      const double size_m = rng.uniform(1.0, 2.6);
      const long obj_h = std::clamp<long>(std::lround(static_cast<double>(height) * size_m / (0.5 * base_depth)), 3,
                                          static_cast<long>(0.6 * static_cast<double>(height)));
      const long obj_w = std::clamp<long>(std::lround(static_cast<double>(obj_h) * rng.uniform(0.6, 2.2)), 3, w / 2);
      o.bottom = base;
      o.top = base - obj_h + 1;
      o.left = static_cast<long>(rng.index(static_cast<std::uint64_t>(w - obj_w + 1)));
      o.right = o.left + obj_w - 1;
      // Stand slightly in front of the ground at the base row.
      o.depth_center = std::max(1.0, base_depth - rng.uniform(0.0, 0.6));
      o.slope = rng.uniform() < 0.5 ? 0.0 : rng.uniform(-0.03, 0.03) * o.depth_center / static_cast<double>(obj_w);
      const auto& base_color = kPalette[rng.index(kPalette.size())];
      for (std::size_t c = 0; c < 3; ++c) o.color[c] = std::clamp(base_color[c] + rng.uniform(-0.08, 0.08), 0.0, 1.0);

      placed.push_back(o);
      const auto counts = visible_counts(resolve_owners(placed, height, width), placed.size());
      if (std::all_of(counts.begin(), counts.end(), [](std::size_t n) { return n >= kMinVisiblePixels; })) break;
      placed.pop_back();
    }
  }

  const auto owner = resolve_owners(placed, height, width);
  const std::size_t hw = height * width;
  std::vector<float> depth(hw, 0.0f);
  std::vector<float> rgb(3 * hw, 0.0f);
  std::vector<std::vector<float>> masks(placed.size(), std::vector<float>(hw, 0.0f));
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c);
      std::array<double, 3> color{};
      double d = 0.0;
      if (owner[p] >= 0) {
        const Object& o = placed[static_cast<std::size_t>(owner[p])];
        d = o.depth_at(c);
        masks[static_cast<std::size_t>(owner[p])][p] = 1.0f;
        for (std::size_t i = 0; i < 3; ++i) color[i] = o.color[i] * shade(d);
      } else if (static_cast<std::size_t>(r) >= horizon) {
        d = ground_depth(static_cast<std::size_t>(r), horizon, height);
        const bool stripe = (static_cast<long>(std::floor(4.0 * std::log(d))) % 2) == 0;
        const double g = (stripe ? 0.46 : 0.40) * shade(d);
        color = {g, g * 0.97, g * 0.93};
      } else {
        const double t = static_cast<double>(r) / static_cast<double>(std::max<std::size_t>(horizon, 1));
        color = {0.40 + 0.35 * t, 0.60 + 0.25 * t, 0.95};
      }
      depth[p] = static_cast<float>(d);
      for (std::size_t i = 0; i < 3; ++i) rgb[i * hw + p] = static_cast<float>(std::clamp(color[i], 0.0, 1.0));
    }

  Sample s;
  s.rgb = Tensor<float>({3, height, width}, std::move(rgb));
  s.depth_gt = Tensor<float>({1, height, width}, std::move(depth));
  for (auto& m : masks) s.instances.emplace_back(Shape{1, height, width}, std::move(m));
  s.scene_id = scene_name(seed);
  s.condition = "clone";
  return s;
}

SparseInput sparsify(const Sample& sample, double keep_prob, std::uint64_t seed) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0))
    throw std::invalid_argument("sparsify: keep_prob must lie in [0, 1]");
  Rng rng(mix_seed(seed, 0x5a4e5e));
  const auto gt = sample.depth_gt.data();
  std::vector<float> sparse(gt.size(), 0.0f), valid(gt.size(), 0.0f);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] <= 0.0f) continue;
    if (rng.uniform() < keep_prob) {
      sparse[i] = gt[i];
      valid[i] = 1.0f;
    }
  }
  return {Tensor<float>(sample.depth_gt.shape(), std::move(sparse)),
          Tensor<float>(sample.depth_gt.shape(), std::move(valid))};
}

std::uint16_t depth_to_centimeters(double meters) {
  if (!(meters > 0.0)) return 0;
  const double cm = std::round(meters * 100.0);
  return cm >= 65535.0 ? std::uint16_t{65535} : static_cast<std::uint16_t>(cm);
}

namespace {

std::pair<std::size_t, std::size_t> plane_extents(const Tensor<float>& t) {
  if (t.rank() < 2) throw ShapeError("image tensor needs at least 2 axes, got " + shape_to_string(t.shape()));
  const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  if (t.size() != h * w) throw ShapeError("expected a single-channel image, got " + shape_to_string(t.shape()));
  return {h, w};
}

}  // namespace

void write_depth_pgm(const std::filesystem::path& path, const Tensor<float>& depth_m) {
  const auto [h, w] = plane_extents(depth_m);
  PnmImage img{w, h, 1, 65535, {}};
  img.samples.reserve(h * w);
  for (float d : depth_m.data()) img.samples.push_back(depth_to_centimeters(d));
  write_pnm(path, img);
}

Tensor<float> read_depth_pgm(const std::filesystem::path& path) {
  const PnmImage img = read_pnm(path);
  if (img.channels != 1) throw FormatError(path.string() + ": depth must be a P5 image");
  if (img.maxval <= 255) throw FormatError(path.string() + ": header field 'maxval' must be 16-bit for depth");
  std::vector<float> v(img.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.samples[i] / 100.0);
  return Tensor<float>({1, img.height, img.width}, std::move(v));
}

void write_mask_pgm(const std::filesystem::path& path, const Tensor<float>& mask) {
  const auto [h, w] = plane_extents(mask);
  PnmImage img{w, h, 1, 255, {}};
  img.samples.reserve(h * w);
  for (float m : mask.data()) {
    if (m != 0.0f && m != 1.0f) throw std::invalid_argument(path.string() + ": mask values must be 0 or 1");
    img.samples.push_back(m == 1.0f ? 255 : 0);
  }
  write_pnm(path, img);
}

Tensor<float> read_mask_pgm(const std::filesystem::path& path) {
  const PnmImage img = read_pnm(path);
  if (img.channels != 1) throw FormatError(path.string() + ": mask must be a P5 image");
  std::vector<float> v(img.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto s = img.samples[i];
    if (s != 0 && s != img.maxval)
      throw FormatError(path.string() + ": mask sample " + std::to_string(s) + " is not binary (0 or maxval)");
    v[i] = s == 0 ? 0.0f : 1.0f;
  }
  return Tensor<float>({1, img.height, img.width}, std::move(v));
}

namespace {

std::string instance_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "inst_%03zu.pgm", i);
  return buf;
}

}  // namespace

void write_sample(const Sample& sample, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError(dir.string() + ": cannot create directory: " + ec.message());
  const std::size_t h = sample.height(), w = sample.width();

  PnmImage rgb{w, h, 3, 255, {}};
  rgb.samples.resize(3 * h * w);
  const auto src = sample.rgb.data();
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      rgb.samples[3 * p + c] =
          static_cast<std::uint16_t>(std::lround(std::clamp(src[c * h * w + p], 0.0f, 1.0f) * 255.0f));
  write_pnm(dir / "rgb.ppm", rgb);
  write_depth_pgm(dir / "depth.pgm", sample.depth_gt);
  for (std::size_t i = 0; i < sample.instances.size(); ++i) write_mask_pgm(dir / instance_file(i), sample.instances[i]);

  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError((dir / "manifest.txt").string() + ": cannot open for writing");
  manifest << "scene=" << sample.scene_id << '\n'
           << "condition=" << sample.condition << '\n'
           << "rgb=rgb.ppm\n"
           << "depth=depth.pgm\n"
           << "instances=" << sample.instances.size() << '\n';
}

Sample read_sample(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(manifest_path.string() + ": cannot open for reading");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(manifest_path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"scene", "condition", "rgb", "depth", "instances"})
    if (!kv.count(key)) throw FormatError(manifest_path.string() + ": missing field '" + key + "'");

  Sample s;
  s.scene_id = kv["scene"];
  s.condition = kv["condition"];
  const PnmImage rgb = read_pnm(dir / kv["rgb"]);
  if (rgb.channels != 3) throw FormatError((dir / kv["rgb"]).string() + ": rgb must be a P6 image");
  s.depth_gt = read_depth_pgm(dir / kv["depth"]);
  const std::size_t h = s.depth_gt.dim(1), w = s.depth_gt.dim(2);
  if (rgb.height != h || rgb.width != w)
    throw FormatError((dir / kv["rgb"]).string() + ": field 'width'/'height' (" + std::to_string(rgb.width) + "x" +
                      std::to_string(rgb.height) + ") does not match depth (" + std::to_string(w) + "x" +
                      std::to_string(h) + ")");
  std::vector<float> planar(3 * h * w);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      planar[c * h * w + p] = static_cast<float>(rgb.samples[3 * p + c]) / static_cast<float>(rgb.maxval);
  s.rgb = Tensor<float>({3, h, w}, std::move(planar));

  std::size_t count = 0;
  try {
    count = std::stoul(kv["instances"]);
  } catch (const std::exception&) {
    throw FormatError(manifest_path.string() + ": field 'instances' is not a count");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto path = dir / instance_file(i);
    Tensor<float> m = read_mask_pgm(path);
    if (m.dim(1) != h || m.dim(2) != w)
      throw FormatError(path.string() + ": field 'width'/'height' does not match depth extents");
    s.instances.push_back(std::move(m));
  }
  return s;
}

}  // namespace iadc
