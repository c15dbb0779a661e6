#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "colormap.hpp"
#include "iadc/train.hpp"
#include "iadc/verify.hpp"

namespace iadc::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void announce(std::ostream& out, const fs::path& path) { out << "wrote " << path.string() << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path.string() + ": cannot open for writing");
  f << text;
  if (!f) throw FormatError(path.string() + ": write failed");
}

std::string join(const std::vector<std::string>& names) {
  std::string s;
  for (const auto& n : names) s += (s.empty() ? "" : ",") + n;
  return s;
}

// Lines of an existing history file up to and including `last_step`.
std::vector<std::string> history_prefix(const fs::path& path, std::uint64_t last_step) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line) || line != history_csv_header()) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) > last_step) break;
    rows.push_back(line);
  }
  return rows;
}

std::vector<std::string> sorted_entries(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

MaskProvider masks_for(const RunConfig& cfg, const fs::path& root) {
  return MaskProvider(cfg.mask_source, cfg.mask_pattern, root);
}

}  // namespace

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  std::size_t h = 0, w = 0;
  try {
    std::size_t used_h = 0, used_w = 0;
    if (x == std::string::npos) throw std::invalid_argument(text);
    h = std::stoul(text.substr(0, x), &used_h);
    w = std::stoul(text.substr(x + 1), &used_w);
    if (used_h != x || used_w != text.size() - x - 1) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    throw ConfigError("size must look like HxW (e.g. 64x128), got '" + text + "'");
  }
  if (h < kMinSceneExtent || w < kMinSceneExtent)
    throw ConfigError("size " + text + " is below the minimum scene extent " + std::to_string(kMinSceneExtent));
  return {h, w};
}

std::size_t train_split_count(std::size_t count) { return std::max<std::size_t>(1, count * 4 / 5); }

std::uint64_t evaluation_sparsity_seed(std::uint64_t run_seed, const fs::path& split_file, const std::string& name) {
  std::ifstream in(split_file);
  std::string which, listed;
  std::size_t train_index = 0, val_index = 0;
  while (in >> which >> listed) {
    const bool training = which == "train";
    std::size_t& index = training ? train_index : val_index;
    if (listed == name) return sample_sparsity_seed(run_seed, index, training);
    ++index;
  }
  return sample_sparsity_seed(run_seed, 0, false);
}

int gen_data(const GenDataOptions& opt, std::ostream& out) {
  if (opt.count == 0) throw ConfigError("--count must be at least 1");
  if (opt.objects == 0 || opt.objects > kMaxObjects)
    throw ConfigError("--objects must be in 1.." + std::to_string(kMaxObjects));
  fs::create_directories(opt.out);
  const std::size_t n_train = train_split_count(opt.count);
  std::ostringstream split;
  for (std::size_t i = 0; i < opt.count; ++i) {
    const Sample s = generate_scene(opt.seed + i, opt.height, opt.width, opt.objects);
    const fs::path dir = opt.out / s.scene_id;
    write_sample(s, dir);
    for (const auto& name : sorted_entries(dir)) announce(out, dir / name);
    split << (i < n_train ? "train " : "val ") << s.scene_id << '\n';
  }
  write_text(opt.out / "split.txt", split.str());
  announce(out, opt.out / "split.txt");
  out << n_train << " train / " << opt.count - n_train << " val samples\n";
  return kSuccess;
}

int train(const TrainOptions& opt, std::ostream& out) {
  RunConfig cfg = opt.config ? RunConfig::load(*opt.config) : RunConfig{};
  if (opt.preset) cfg.apply_preset(*opt.preset);
  cfg.validate();
  Dataset ds = load_dataset(opt.data);
  Trainer trainer(cfg, ds.train, ds.val, masks_for(cfg, opt.data));

  std::vector<std::string> rows;
  if (opt.resume) {
    trainer.restore(read_checkpoint(*opt.resume));
    rows = history_prefix(opt.out / "history.csv", trainer.step());
    out << "resumed at step " << trainer.step() << '\n';
  }
  const char* unit = units_name(cfg.units);
  const auto history = trainer.run([&](const HistoryRow& r) {
    out << "step " << r.step << " loss " << fmt(r.loss) << " val_mae " << fmt(r.val_mae) << ' ' << unit << " val_rmse "
        << fmt(r.val_rmse) << ' ' << unit << " init_mae " << fmt(r.val_init_mae) << ' ' << unit << '\n';
  });
  for (const auto& r : history) rows.push_back(history_csv_row(r));

  fs::create_directories(opt.out);
  const fs::path ckpt_path = opt.out / "checkpoint.bin";
  write_checkpoint(ckpt_path, trainer.checkpoint());
  announce(out, ckpt_path);

  std::string csv = history_csv_header() + '\n';
  for (const auto& r : rows) csv += r + '\n';
  write_text(opt.out / "history.csv", csv);
  announce(out, opt.out / "history.csv");

  const ValidationSummary v = trainer.validate();
  const double k = units_per_meter(cfg.units);
  const bool on_train = cfg.val_on_train || ds.val.empty();
  std::ostringstream m;
  m << "# run manifest\n"
    << "seed = " << cfg.seed << '\n'
    << "units = " << unit << '\n'
    << "steps_completed = " << trainer.step() << '\n'
    << "train_samples = " << join(ds.train_names) << '\n'
    << "val_samples = " << join(ds.val_names) << '\n'
    << "metrics_split = " << (on_train ? "train" : "val") << '\n'
    << "attention = " << (cfg.model.attention_enabled ? "on" : "zero") << '\n'
    << "final_loss = " << (history.empty() ? std::string("n/a") : fmt(history.back().loss)) << '\n'
    << "final_val_mae = " << fmt(v.final_depth.mae * k) << '\n'
    << "final_val_rmse = " << fmt(v.final_depth.rmse * k) << '\n'
    << "final_val_init_mae = " << fmt(v.init_depth.mae * k) << '\n'
    << "final_val_init_rmse = " << fmt(v.init_depth.rmse * k) << '\n'
    << "refinement_margin = " << fmt((v.init_depth.mae - v.final_depth.mae) * k) << '\n';
  std::istringstream config_lines(cfg.to_text());
  for (std::string line; std::getline(config_lines, line);)
    if (!line.empty()) m << "config." << line << '\n';
  write_text(opt.out / "manifest.txt", m.str());
  announce(out, opt.out / "manifest.txt");
  return kSuccess;
}

int eval(const EvalOptions& opt, std::ostream& out) {
  if (opt.split != "val" && opt.split != "train") throw ConfigError("--split must be 'val' or 'train'");
  LoadedModel lm = load_model(opt.checkpoint);
  const RunConfig& cfg = lm.config;
  Dataset ds = load_dataset(opt.data);
  const bool training = opt.split == "train";
  const auto& samples = training ? ds.train : ds.val;
  const auto& names = training ? ds.train_names : ds.val_names;
  if (samples.empty()) throw ConfigError("split '" + opt.split + "' of " + opt.data.string() + " has no samples");
  for (const Sample& s : samples)
    if (s.height() != cfg.height || s.width() != cfg.width)
      throw ShapeError("sample " + s.scene_id + " is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                       " but the checkpoint was trained at " + std::to_string(cfg.height) + "x" +
                       std::to_string(cfg.width));

  const MaskProvider masks = masks_for(cfg, opt.data);
  const double k = units_per_meter(cfg.units);
  const std::string unit = units_name(cfg.units);
  MetricsAccumulator final_acc, init_acc;
  std::ostringstream report;
  report << "sample,n_valid,mae_" << unit << ",rmse_" << unit << ",init_mae_" << unit << ",init_rmse_" << unit << '\n';
  auto line = [&](const std::string& name, const Metrics& f, const Metrics& i) {
    report << name << ',' << f.n_valid << ',' << fmt(f.mae * k) << ',' << fmt(f.rmse * k) << ',' << fmt(i.mae * k) << ','
           << fmt(i.rmse * k) << '\n';
    out << name << "  n_valid " << f.n_valid << "  mae " << fmt(f.mae * k) << "  rmse " << fmt(f.rmse * k) << "  init_mae "
        << fmt(i.mae * k) << ' ' << unit << '\n';
  };
  for (std::size_t idx = 0; idx < samples.size(); ++idx) {
    const Sample& s = samples[idx];
    Metrics f, i;
    if (opt.oracle_gt) {
      f = i = evaluate<float>(s.depth_gt.data(), s.depth_gt.data());
    } else {
      const InferenceResult r = infer(lm.model, s, cfg.keep_prob, sample_sparsity_seed(cfg.seed, idx, training), masks,
                                      cfg.mask_resize);
      f = r.metrics;
      i = r.init_metrics;
    }
    final_acc.add(f);
    init_acc.add(i);
    line(names[idx], f, i);
  }
  line("aggregate", final_acc.result(), init_acc.result());

  const fs::path report_path = opt.report ? *opt.report : opt.checkpoint.parent_path() / ("eval_" + opt.split + ".csv");
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  write_text(report_path, report.str());
  announce(out, report_path);
  return kSuccess;
}

int infer(const InferOptions& opt, std::ostream& out) {
  LoadedModel lm = load_model(opt.checkpoint);
  const RunConfig& cfg = lm.config;
  const Sample s = read_sample(opt.sample);
  if (s.height() != cfg.height || s.width() != cfg.width)
    throw ShapeError("sample is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                     " but the checkpoint was trained at " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  const fs::path sample_dir = fs::absolute(opt.sample).lexically_normal();
  const fs::path data_root = (sample_dir.has_filename() ? sample_dir : sample_dir.parent_path()).parent_path();
  const std::string name = (sample_dir.has_filename() ? sample_dir : sample_dir.parent_path()).filename().string();
  const std::uint64_t seed =
      opt.sparsity_seed ? *opt.sparsity_seed : evaluation_sparsity_seed(cfg.seed, data_root / "split.txt", name);
  const double keep = opt.keep_prob ? *opt.keep_prob : cfg.keep_prob;
  const InferenceResult r = infer(lm.model, s, keep, seed, masks_for(cfg, data_root), cfg.mask_resize);

  fs::create_directories(opt.out);
  const DepthColormap& cmap = DepthColormap::builtin();
  const std::pair<const char*, PnmImage> panels[] = {
      {"panel_a_rgb.ppm", rgb_image(s.rgb)},
      {"panel_b_gt_depth.ppm", colorize_depth(s.depth_gt, cmap)},
      {"panel_c_init_depth.ppm", colorize_depth(r.d_init, cmap)},
      {"panel_d_sparse_depth.ppm", colorize_depth(r.sparse.depth_sparse, cmap)},
      {"panel_e_instance_mask.ppm", mask_image(r.m_seg)},
      {"panel_f_final_depth.ppm", colorize_depth(r.d_final, cmap)},
  };
  for (const auto& [file, image] : panels) {
    write_pnm(opt.out / file, image);
    announce(out, opt.out / file);
  }
  write_depth_pgm(opt.out / "d_init.pgm", r.d_init);
  announce(out, opt.out / "d_init.pgm");
  write_depth_pgm(opt.out / "d_final.pgm", r.d_final);
  announce(out, opt.out / "d_final.pgm");

  const double k = units_per_meter(cfg.units);
  const char* unit = units_name(cfg.units);
  out << "n_valid " << r.metrics.n_valid << "  mae " << fmt(r.metrics.mae * k) << "  rmse " << fmt(r.metrics.rmse * k)
      << "  init_mae " << fmt(r.init_metrics.mae * k) << "  init_rmse " << fmt(r.init_metrics.rmse * k) << ' ' << unit
      << '\n';
  return kSuccess;
}

int gradcheck(const std::string& scope, std::ostream& out) {
  if (scope != "op" && scope != "pipeline" && scope != "all")
    throw ConfigError("--scope must be op, pipeline or all");
  bool ok = true;
  if (scope != "pipeline") {
    out << "op gradients (tolerance " << fmt(kOpGradTolerance) << ")\n";
    for (const auto& r : check_op_gradients()) {
      std::string shapes;
      for (const auto& s : r.shapes) shapes += (shapes.empty() ? "" : " ") + s;
      char buf[96];
      std::snprintf(buf, sizeof buf, "  %-22s %-5s max_rel_error %.3e  ", r.op.c_str(), r.passed() ? "PASS" : "FAIL",
                    r.max_rel_error);
      out << buf << shapes << '\n';
      ok = ok && r.passed();
    }
  }
  if (scope != "op") {
    const PipelineGradReport p = check_pipeline_gradient();
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "pipeline micro-model %-5s max_rel_error %.3e over %zu coordinates in %zu tensors (worst %s, "
                  "tolerance %g)\n",
                  p.passed() ? "PASS" : "FAIL", p.max_rel_error, p.coordinates, p.tensors, p.worst_param.c_str(),
                  kPipelineGradTolerance);
    out << buf;
    ok = ok && p.passed();
  }
  return ok ? kSuccess : kVerificationFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instance-aware sparse-to-dense depth completion", "iadc"};
  app.require_subcommand(1);

  GenDataOptions gen;
  std::string size = "256x512";
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate procedural samples and an 80/20 split");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Seed of the first sample (sample i uses seed + i)")->capture_default_str();
  gen_cmd->add_option("--size", size, "Resolution HxW")->capture_default_str();
  gen_cmd->add_option("--objects", gen.objects, "Objects per scene (1.." + std::to_string(kMaxObjects) + ")")
      ->capture_default_str();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train and write checkpoint, manifest and history");
  train_cmd->add_option("--config", tr.config, "key = value run configuration")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Dataset directory with split.txt")->required();
  train_cmd->add_option("--out", tr.out, "Run output directory")->required();
  train_cmd->add_option("--preset", tr.preset, "Named preset applied after the config file (desk)");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory with split.txt")->required();
  eval_cmd->add_option("--split", ev.split, "val or train")->capture_default_str();
  eval_cmd->add_flag("--oracle-gt", ev.oracle_gt, "Score the ground truth itself (pipeline self-test)");
  eval_cmd->add_option("--report", ev.report, "Report CSV path (default: next to the checkpoint)");

  InferOptions inf;
  auto* infer_cmd = app.add_subcommand("infer", "Render the six-panel strip and raw depth outputs for one sample");
  infer_cmd->add_option("--checkpoint", inf.checkpoint)->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--sample", inf.sample, "Sample directory")->required()->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--out", inf.out, "Output directory")->required();
  infer_cmd->add_option("--keep-prob", inf.keep_prob, "Override the configured keep probability");
  infer_cmd->add_option("--sparsity-seed", inf.sparsity_seed, "Override the sparsification seed");

  std::string scope = "all";
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference audit of ops and the micro pipeline");
  grad_cmd->add_option("--scope", scope, "op, pipeline or all")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (gen_cmd->parsed()) {
      std::tie(gen.height, gen.width) = parse_size(size);
      return gen_data(gen, out);
    }
    if (train_cmd->parsed()) return train(tr, out);
    if (eval_cmd->parsed()) return eval(ev, out);
    if (infer_cmd->parsed()) return infer(inf, out);
    return gradcheck(scope, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kVerificationFailure;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kVerificationFailure;
  }
}

}  // namespace iadc::cli
