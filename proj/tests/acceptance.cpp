// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "iadc/train.hpp"
#include "iadc/verify.hpp"

namespace fs = std::filesystem;
using namespace iadc;

namespace {

struct Verdict {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> read_manifest(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);)
    if (const auto eq = line.find(" = "); eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  return kv;
}

// history.csv rows as numbers: step, loss, val_mae, val_rmse, val_init_mae.
std::vector<std::vector<double>> read_history(const fs::path& p) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<double> r;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) r.push_back(std::stod(c));
    rows.push_back(r);
  }
  return rows;
}

// ------------------------------------------------------------ criteria

Verdict gradient_suite() {
  const auto ops = check_op_gradients();
  double worst = 0.0;
  std::string worst_op;
  std::size_t failed = 0, min_shapes = 99;
  for (const auto& r : ops) {
    if (!r.passed()) ++failed;
    min_shapes = std::min(min_shapes, r.shapes.size());
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_op = r.op;
  }
  const auto pipe = check_pipeline_gradient();
  const auto micro = micro_model_config();
  const bool micro_ok = micro.enc_channels.front() == 4 && micro.attn_dim == 8 && micro.fusion_channels == 16;
  return {failed == 0 && pipe.passed() && micro_ok,
          fmt("%zu ops, %zu failing, >=%zu shapes each, worst %.2e (%s) < 1e-5; pipeline %.2e over %zu coords < 1e-3",
              ops.size(), failed, min_shapes, worst, worst_op.c_str(), pipe.max_rel_error, pipe.coordinates)};
}

Verdict metric_oracle() {
  const Metrics hand = evaluate<double>(std::vector<double>{1, 3, 9}, std::vector<double>{2, 1, 0});
  bool ok = hand.n_valid == 2 && std::abs(hand.mae - 1.5) < 1e-12 && std::abs(hand.rmse - std::sqrt(2.5)) < 1e-12;
  std::mt19937_64 gen(13);
  std::uniform_real_distribution<double> depth(0.0, 80.0);
  std::bernoulli_distribution hole(0.25);
  double worst = 0.0;
  bool ordered = true;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> pred(64 * 128), gt(64 * 128);
    for (auto& p : pred) p = depth(gen);
    for (auto& g : gt) g = hole(gen) ? 0.0 : depth(gen);
    double a = 0.0, s = 0.0, n = 0.0;
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 128; ++j) {
        const std::size_t k = i * 128 + j;
        if (gt[k] > 0.0) a += std::abs(pred[k] - gt[k]), s += (pred[k] - gt[k]) * (pred[k] - gt[k]), n += 1.0;
      }
    const Metrics m = evaluate<double>(pred, gt);
    worst = std::max({worst, std::abs(m.mae - a / n), std::abs(m.rmse - std::sqrt(s / n))});
    ordered = ordered && m.rmse >= m.mae && double(m.n_valid) == n;
  }
  ok = ok && worst < 1e-9 && ordered;
  return {ok, fmt("hand case (%.6g, %.6g); 100 random 64x128 instances max deviation %.2e < 1e-9; rmse >= mae on all",
                  hand.mae, hand.rmse, worst)};
}

Verdict attention_normalization() {
  AttentionConfig cfg;
  Rng rng(21);
  const auto params = AttentionParams<double>::make(cfg, rng);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0), m01(0.0, 1.0);
  double worst = 0.0;
  std::size_t rows = 0;
  NoGradScope<double> no_grad;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> m(64 * 128), f(8 * 64 * 128);
    for (auto& v : m) v = m01(gen);
    for (auto& v : f) v = u(gen);
    const auto out = cross_attention(Tensor<double>({1, 1, 64, 128}, m), Tensor<double>({1, 8, 64, 128}, f), params);
    const std::size_t n = out.attention.dim(1);
    for (std::size_t r = 0; r < n; ++r, ++rows) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += out.attention.data()[r * n + c];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  AttentionConfig single = cfg;
  single.work_h = single.work_w = 1;
  Rng rng1(22);
  const auto p1 = AttentionParams<double>::make(single, rng1);
  const auto one = attention_core(Tensor<double>({1, 1, 1, 1}, 0.7), Tensor<double>({1, 8, 1, 1}, 0.3), p1);
  const bool exact = std::equal(one.attended.data().begin(), one.attended.data().end(), one.values.data().begin());
  return {rows == 20 * 512 && worst <= 1e-6 && exact,
          fmt("%zu rows over 20 inputs at 16x32, max |sum-1| = %.2e <= 1e-6; single location returns V %s", rows, worst,
              exact ? "exactly" : "INEXACTLY")};
}

Verdict mask_algebra() {
  std::mt19937_64 gen(77);
  bool ok = true;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + t % 8, h = 16 + t % 9, w = 24 + t % 5;
    std::bernoulli_distribution on(0.15 + 0.05 * (t % 5));
    std::vector<Tensor<float>> masks;
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<float> v(h * w);
      for (auto& e : v) e = on(gen) ? 1.0f : 0.0f;
      masks.emplace_back(Shape{1, h, w}, std::move(v));
    }
    const auto merged = merge_masks(masks, h, w);
    for (std::size_t p = 0; p < h * w; ++p) {
      bool any = false;
      for (const auto& m : masks) any = any || m.data()[p] != 0.0f;
      ok = ok && merged.data()[p] == (any ? 1.0f : 0.0f);
    }
    auto doubled = masks;
    doubled.insert(doubled.end(), masks.begin(), masks.end());
    const auto twice = merge_masks(doubled, h, w);
    const auto again = merge_masks({merged}, h, w);
    auto shuffled = masks;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    const auto reordered = merge_masks(shuffled, h, w);
    for (std::size_t p = 0; p < h * w; ++p)
      ok = ok && twice.data()[p] == merged.data()[p] && again.data()[p] == merged.data()[p] &&
           reordered.data()[p] == merged.data()[p];
  }
  const auto empty = merge_masks({}, 9, 11);
  const bool zero = std::all_of(empty.data().begin(), empty.data().end(), [](float v) { return v == 0.0f; });
  return {ok && zero, "100 random sets equal the per-pixel OR; idempotent and order-invariant; empty set gives zeros"};
}

Verdict sparsifier_statistics() {
  bool ok = true;
  double lo_seen = 1.0, hi_seen = 0.0;
  std::size_t total_valid = 0, total_kept = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample s = generate_scene(1000 + seed, 256, 512, 8);
    const SparseInput sp = sparsify(s, 0.05, seed);
    std::size_t valid = 0, kept = 0;
    for (std::size_t i = 0; i < s.depth_gt.size(); ++i) {
      valid += s.depth_gt.data()[i] > 0.0f;
      kept += sp.validity.data()[i] > 0.0f;
    }
    const double n = double(valid), sigma = std::sqrt(0.05 * 0.95 / n);
    const double frac = double(kept) / n;
    ok = ok && std::abs(frac - 0.05) <= 5.0 * sigma;
    lo_seen = std::min(lo_seen, frac);
    hi_seen = std::max(hi_seen, frac);
    total_valid += valid;
    total_kept += kept;
    const SparseInput none = sparsify(s, 0.0, seed), all = sparsify(s, 1.0, seed);
    for (std::size_t i = 0; i < s.depth_gt.size(); ++i) {
      const float d = s.depth_gt.data()[i];
      ok = ok && none.validity.data()[i] == 0.0f && none.depth_sparse.data()[i] == 0.0f;
      ok = ok && all.validity.data()[i] == (d > 0.0f ? 1.0f : 0.0f) && all.depth_sparse.data()[i] == d;
    }
  }
  return {ok, fmt("kept fraction per scene in [%.4f, %.4f] (pooled %.4f over %zu valid pixels), each inside its +-5 sigma "
                  "band; keep_prob 0 and 1 exact",
                  lo_seen, hi_seen, double(total_kept) / double(total_valid), total_valid)};
}

Verdict full_scale_smoke() {
  const ModelConfig cfg;
  Model<float> model(cfg, 3);
  std::vector<Sample> samples;
  std::vector<SparseInput> sparse;
  for (std::uint64_t i = 0; i < 4; ++i) samples.push_back(generate_scene(500 + i, 256, 512, 6));
  std::vector<const Sample*> ptrs;
  for (std::uint64_t i = 0; i < 4; ++i) {
    ptrs.push_back(&samples[i]);
    sparse.push_back(sparsify(samples[i], 0.05, i));
  }
  Batch<float> batch = assemble_batch<float>(ptrs, sparse, MaskProvider{}, InterpMode::nearest);
  double loss = 0.0;
  {
    GradTape<float> tape;
    TapeScope<float> scope(tape);
    const auto out = model.forward(batch.input, NormMode::train);
    const auto terms =
        total_loss(out.d_init, out.d_final, batch.gt, batch.input.m_seg, batch.gt_foreground, LossWeights{});
    loss = terms.total.item();
    backward(tape, terms.total);
  }
  std::size_t tensors = 0, missing = 0, nonfinite = 0, values = 0;
  model.visit_params([&](const std::string&, Tensor<float>& t) {
    ++tensors;
    values += t.size();
    if (!t.has_grad()) return void(++missing);
    for (float g : t.grad()) nonfinite += !std::isfinite(g);
  });
  return {std::isfinite(loss) && missing == 0 && nonfinite == 0,
          fmt("batch 4 at 256x512, %zu parameters in %zu tensors: loss %.4f, %zu missing and %zu non-finite gradients",
              values, tensors, loss, missing, nonfinite)};
}

// Desk-scale runs shared by the overfit, determinism and ablation criteria.
struct DeskRuns {
  fs::path data, a, b, zero;
  double seconds_a = 0.0;
  bool ok = false;
  std::string error;
};

DeskRuns desk_runs(const fs::path& work) {
  DeskRuns r;
  r.data = work / "data";
  std::ostringstream sink, err;
  if (cli::run({"gen-data", "--out", r.data.string(), "--count", "4", "--seed", "100", "--size", "64x128", "--objects",
                "4"},
               sink, err) != 0) {
    r.error = err.str();
    return r;
  }
  // Every sample trains (80/20 would hold one out); metrics are taken on the training set.
  std::ofstream(r.data / "split.txt") << "train scene_00100\ntrain scene_00101\ntrain scene_00102\ntrain scene_00103\n";
  std::ofstream(work / "overfit.cfg") << "val_on_train = true\n";
  std::ofstream(work / "ablation.cfg") << "val_on_train = true\nattention = zero\n";
  auto train = [&](const fs::path& out, const char* config) {
    std::cerr << "  training " << out.filename().string() << " ...\n";
    const auto t0 = std::chrono::steady_clock::now();
    const int code = cli::run({"train", "--config", (work / config).string(), "--preset", "desk", "--data",
                               r.data.string(), "--out", out.string()},
                              sink, err);
    return std::pair{code, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  };
  r.a = work / "run_a";
  r.b = work / "run_b";
  r.zero = work / "run_zero_attention";
  const auto [ca, ta] = train(r.a, "overfit.cfg");
  r.seconds_a = ta;
  const auto [cb, tb] = train(r.b, "overfit.cfg");
  const auto [cz, tz] = train(r.zero, "ablation.cfg");
  std::cerr << fmt("  desk runs took %.0f s, %.0f s, %.0f s\n", ta, tb, tz);
  r.ok = ca == 0 && cb == 0 && cz == 0;
  if (!r.ok) r.error = err.str();
  return r;
}

Verdict overfit(const DeskRuns& runs) {
  if (!runs.ok) return {false, "desk training failed: " + runs.error};
  const auto h = read_history(runs.a / "history.csv");
  const auto m = read_manifest(runs.a / "manifest.txt");
  const double first = h.front()[1], last = h.back()[1];
  const double mae = std::stod(m.at("final_val_mae")), init_mae = std::stod(m.at("final_val_init_mae"));
  const bool ok = h.back()[0] == 500 && last < 0.1 * first && mae < init_mae && runs.seconds_a < 15 * 60;
  return {ok, fmt("4 samples 64x128, 500 steps: loss %.4g -> %.4g (%.1f%% of initial, < 10%%); train MAE final %.4f m < "
                  "init %.4f m; %.0f s (< 900 s)",
                  first, last, 100.0 * last / first, mae, init_mae, runs.seconds_a)};
}

Verdict determinism(const DeskRuns& runs) {
  if (!runs.ok) return {false, "desk training failed: " + runs.error};
  const bool hist = slurp(runs.a / "history.csv") == slurp(runs.b / "history.csv");
  const bool ckpt = slurp(runs.a / "checkpoint.bin") == slurp(runs.b / "checkpoint.bin");
  const bool manifest = slurp(runs.a / "manifest.txt") == slurp(runs.b / "manifest.txt");
  return {hist && ckpt && manifest,
          fmt("two seed-0 desk runs: history.csv %s, checkpoint.bin (%zu bytes) %s, manifest %s",
              hist ? "identical" : "DIFFERENT", static_cast<std::size_t>(fs::file_size(runs.a / "checkpoint.bin")),
              ckpt ? "identical" : "DIFFERENT", manifest ? "identical" : "DIFFERENT")};
}

Verdict ablation(const DeskRuns& runs) {
  if (!runs.ok) return {false, "desk training failed: " + runs.error};
  const auto with = read_manifest(runs.a / "manifest.txt");
  const auto without = read_manifest(runs.zero / "manifest.txt");
  const bool logged = with.count("refinement_margin") && without.count("refinement_margin") &&
                      without.at("attention") == "zero" && with.at("attention") == "on";
  if (!logged) return {false, "refinement margin missing from the manifests"};
  const double m_on = std::stod(with.at("refinement_margin")), m_off = std::stod(without.at("refinement_margin"));
  return {true, fmt("report only: margin (init MAE - final MAE) %.4f m with attention, %.4f m with zero attention -> %s",
                    m_on, m_off, m_off < m_on ? "shrinks" : "does not shrink")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "iadc_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::istringstream list(argv[++i]);
      for (std::string n; std::getline(list, n, ',');) only.insert(std::stoi(n));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };
  fs::remove_all(work);
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0 = no runtime bound
    std::function<Verdict()> check;
  };
  DeskRuns runs;
  bool have_runs = false;
  auto desk = [&]() -> const DeskRuns& {
    if (!have_runs) runs = desk_runs(work), have_runs = true;
    return runs;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient suite", 120, gradient_suite},
      {2, "metric oracle", 10, metric_oracle},
      {3, "attention normalization", 10, attention_normalization},
      {4, "mask algebra", 5, mask_algebra},
      {5, "sparsifier statistics", 10, sparsifier_statistics},
      {6, "overfit experiment", 0, [&] { return overfit(desk()); }},
      {7, "full-scale shape smoke", 300, full_scale_smoke},
      {8, "determinism", 0, [&] { return determinism(desk()); }},
      {9, "ablation sanity", 0, [&] { return ablation(desk()); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    std::cerr << "criterion " << c.id << " (" << c.name << ") ...\n";
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.1f s", s);
    if (c.limit_s > 0) {
      timing += fmt(", limit %.0f s", c.limit_s);
      if (s >= c.limit_s) v.passed = false;
    }
    failures += !v.passed;
    std::cout << (v.passed ? "[PASS]" : "[FAIL]") << " criterion " << c.id << " " << c.name << ": " << v.detail << " ("
              << timing << ")" << std::endl;
  }
  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : fmt("%d CRITERIA FAILED", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
