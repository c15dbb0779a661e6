#include "iadc/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace iadc {

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto split_path = dir / "split.txt";
  std::ifstream in(split_path);
  if (!in) throw std::runtime_error("missing split file " + split_path.string());
  Dataset ds;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    std::istringstream ls(line);
    std::string which, name;
    if (!(ls >> which)) continue;
    if (!(ls >> name) || (which != "train" && which != "val"))
      throw FormatError(split_path.string() + ":" + std::to_string(lineno) + ": expected 'train NAME' or 'val NAME'");
    Sample s = read_sample(dir / name);
    if (which == "train") {
      ds.train.push_back(std::move(s));
      ds.train_names.push_back(name);
    } else {
      ds.val.push_back(std::move(s));
      ds.val_names.push_back(name);
    }
  }
  if (ds.train.empty() && ds.val.empty()) throw FormatError(split_path.string() + ": lists no samples");
  return ds;
}

template <typename T>
Batch<T> assemble_batch(const std::vector<const Sample*>& samples, const std::vector<SparseInput>& sparse,
                        const MaskProvider& masks, InterpMode mask_resize) {
  if (samples.empty() || samples.size() != sparse.size())
    throw std::invalid_argument("assemble_batch needs one sparse input per sample");
  const std::size_t b = samples.size(), h = samples.front()->height(), w = samples.front()->width(), plane = h * w;
  std::vector<T> rgb(b * 3 * plane), ds(b * plane), val(b * plane), mseg(b * plane), gt(b * plane), fg(b * plane);
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = *samples[i];
    if (s.height() != h || s.width() != w)
      throw ShapeError("batch mixes resolutions " + std::to_string(h) + "x" + std::to_string(w) + " and " +
                       std::to_string(s.height()) + "x" + std::to_string(s.width()));
    const Tensor<float> m = resize_mask(merge_masks(masks.instances(s), h, w), h, w, mask_resize);
    const Tensor<float> f = merge_masks(s.instances, h, w);
    std::copy(s.rgb.data().begin(), s.rgb.data().end(), rgb.begin() + static_cast<std::ptrdiff_t>(i * 3 * plane));
    const auto off = static_cast<std::ptrdiff_t>(i * plane);
    std::copy(sparse[i].depth_sparse.data().begin(), sparse[i].depth_sparse.data().end(), ds.begin() + off);
    std::copy(sparse[i].validity.data().begin(), sparse[i].validity.data().end(), val.begin() + off);
    std::copy(m.data().begin(), m.data().end(), mseg.begin() + off);
    std::copy(s.depth_gt.data().begin(), s.depth_gt.data().end(), gt.begin() + off);
    std::copy(f.data().begin(), f.data().end(), fg.begin() + off);
  }
  const Shape one{b, 1, h, w};
  Batch<T> out;
  out.input.rgb = Tensor<T>({b, 3, h, w}, std::move(rgb));
  out.input.depth_sparse = Tensor<T>(one, std::move(ds));
  out.input.validity = Tensor<T>(one, std::move(val));
  out.input.m_seg = Tensor<T>(one, std::move(mseg));
  out.gt = Tensor<T>(one, std::move(gt));
  out.gt_foreground = Tensor<T>(one, std::move(fg));
  return out;
}

std::string history_csv_header() { return "step,loss,val_mae,val_rmse,val_init_mae"; }

std::string history_csv_row(const HistoryRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(r.step), r.loss, r.val_mae,
                r.val_rmse, r.val_init_mae);
  return buf;
}

std::uint64_t sample_sparsity_seed(std::uint64_t run_seed, std::size_t index, bool training) {
  return mix_seed(mix_seed(run_seed, training ? 0x5eed : 0x7a1), index);
}

Trainer::Trainer(RunConfig config, std::vector<Sample> train, std::vector<Sample> val, MaskProvider masks)
    : config_(std::move(config)), train_(std::move(train)), val_(std::move(val)), masks_(std::move(masks)) {
  config_.validate();
  if (train_.empty()) throw std::invalid_argument("training needs at least one sample");
  for (const auto* split : {&train_, &val_})
    for (const Sample& s : *split)
      if (s.height() != config_.height || s.width() != config_.width)
        throw ShapeError("sample " + s.scene_id + " is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                         " but the run is configured for " + std::to_string(config_.height) + "x" +
                         std::to_string(config_.width));
  model_ = Model<float>(config_.model, config_.seed);
  AdamHyper hyper;
  hyper.learning_rate = config_.learning_rate;
  adam_ = Adam<float>(model_.named_params(), hyper);
}

std::uint64_t Trainer::total_steps() const {
  if (config_.steps > 0) return config_.steps;
  const std::uint64_t per_epoch = (train_.size() + config_.batch_size - 1) / config_.batch_size;
  return per_epoch * config_.epochs;
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
  const std::size_t n = train_.size(), b = std::min(config_.batch_size, n);
  const std::uint64_t per_epoch = (n + b - 1) / b;
  const std::uint64_t epoch = step / per_epoch, slot = step % per_epoch;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(config_.seed, 0x0d0e + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const std::size_t begin = slot * b, end = std::min(n, begin + b);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

SparseInput Trainer::sparse_for(std::size_t index, bool training) const {
  const Sample& s = training ? train_[index] : val_[index];
  std::uint64_t seed = sample_sparsity_seed(config_.seed, index, training);
  if (training && config_.resample_sparsity) seed = mix_seed(seed, step_);
  return sparsify(s, config_.keep_prob, seed);
}

LossTerms<float> Trainer::train_step() {
  const auto idx = batch_indices(step_);
  std::vector<const Sample*> samples;
  std::vector<SparseInput> sparse;
  for (auto i : idx) {
    samples.push_back(&train_[i]);
    sparse.push_back(sparse_for(i, true));
  }
  const Batch<float> batch = assemble_batch<float>(samples, sparse, masks_, config_.mask_resize);
  GradTape<float> tape;
  LossTerms<float> terms;
  try {
    TapeScope<float> scope(tape);
    ModelOutput<float> out = model_.forward(batch.input, NormMode::train);
    terms = total_loss(out.d_init, out.d_final, batch.gt, batch.input.m_seg, batch.gt_foreground, config_.loss_weights,
                       config_.loss);
    adam_.zero_grad();
    backward(tape, terms.total);
  } catch (const NumericError& e) {
    throw NumericError("training aborted at step " + std::to_string(step_ + 1) + ": " + e.what());
  }
  adam_.step();
  ++step_;
  return terms;
}

ValidationSummary Trainer::validate() {
  const bool use_train = config_.val_on_train || val_.empty();
  const auto& split = use_train ? train_ : val_;
  MetricsAccumulator final_acc, init_acc;
  NoGradScope<float> no_grad;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const SparseInput sparse = sparsify(split[i], config_.keep_prob, sample_sparsity_seed(config_.seed, i, use_train));
    const Batch<float> batch = assemble_batch<float>({&split[i]}, {sparse}, masks_, config_.mask_resize);
    ModelOutput<float> out = model_.forward(batch.input, NormMode::eval);
    final_acc.add(evaluate(out.d_final, batch.gt));
    init_acc.add(evaluate(out.d_init, batch.gt));
  }
  return {final_acc.result(), init_acc.result()};
}

std::vector<HistoryRow> Trainer::run(const std::function<void(const HistoryRow&)>& on_log) {
  std::vector<HistoryRow> rows;
  const std::uint64_t total = total_steps();
  while (step_ < total) {
    const double loss = train_step().total.item();
    if (step_ == 1 || step_ % config_.log_every == 0 || step_ == total) {
      const ValidationSummary v = validate();
      const double k = units_per_meter(config_.units);
      HistoryRow row{step_, loss, v.final_depth.mae * k, v.final_depth.rmse * k, v.init_depth.mae * k};
      rows.push_back(row);
      if (on_log) on_log(row);
    }
  }
  return rows;
}

Checkpoint Trainer::checkpoint() {
  Checkpoint ckpt;
  ckpt.value_bytes = 4;
  ckpt.step = step_;
  ckpt.config_text = config_.to_text();
  auto add = [&](const std::string& name, Tensor<float>& t) { ckpt.entries.push_back(make_entry(name, t)); };
  model_.visit_params(add);
  model_.visit_buffers(add);
  for (auto& [name, t] : adam_.first_moments()) add("adam.m." + name, t);
  for (auto& [name, t] : adam_.second_moments()) add("adam.v." + name, t);
  return ckpt;
}

void restore_model(const Checkpoint& ckpt, Model<float>& model) {
  auto take = [&](const std::string& name, Tensor<float>& t) { restore_entry(ckpt, name, t); };
  model.visit_params(take);
  model.visit_buffers(take);
}

void Trainer::restore(const Checkpoint& ckpt) {
  const RunConfig stored = RunConfig::from_text(ckpt.config_text, "checkpoint config");
  if (stored.model.unet().enc_channels != config_.model.enc_channels || !(stored.height == config_.height) ||
      !(stored.width == config_.width))
    throw FormatError("checkpoint architecture or resolution differs from the run configuration");
  restore_model(ckpt, model_);
  for (auto& [name, t] : adam_.first_moments()) restore_entry(ckpt, "adam.m." + name, t);
  for (auto& [name, t] : adam_.second_moments()) restore_entry(ckpt, "adam.v." + name, t);
  step_ = ckpt.step;
  adam_.set_steps_taken(ckpt.step);
}

LoadedModel load_model(const std::filesystem::path& checkpoint_path) {
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  LoadedModel out{RunConfig::from_text(ckpt.config_text, checkpoint_path.string() + " (embedded config)"), {}, ckpt.step};
  out.model = Model<float>(out.config.model, out.config.seed);
  restore_model(ckpt, out.model);
  return out;
}

InferenceResult infer(Model<float>& model, const Sample& sample, double keep_prob, std::uint64_t seed,
                      const MaskProvider& masks, InterpMode mask_resize) {
  InferenceResult r;
  r.sparse = sparsify(sample, keep_prob, seed);
  const Batch<float> batch = assemble_batch<float>({&sample}, {r.sparse}, masks, mask_resize);
  NoGradScope<float> no_grad;
  ModelOutput<float> out = model.forward(batch.input, NormMode::eval);
  r.d_init = out.d_init;
  r.d_final = out.d_final;
  r.m_seg = batch.input.m_seg;
  r.metrics = evaluate(out.d_final, batch.gt);
  r.init_metrics = evaluate(out.d_init, batch.gt);
  return r;
}

template Batch<float> assemble_batch(const std::vector<const Sample*>&, const std::vector<SparseInput>&,
                                     const MaskProvider&, InterpMode);
template Batch<double> assemble_batch(const std::vector<const Sample*>&, const std::vector<SparseInput>&,
                                      const MaskProvider&, InterpMode);

}  // namespace iadc
