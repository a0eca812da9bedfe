// SPDX-License-Identifier: Apache-2.0

#include "avse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "avse/checkpoint.hpp"
#include "avse/error.hpp"
#include "avse/io.hpp"
#include "avse/metrics.hpp"
#include "avse/ops.hpp"
#include "avse/optim.hpp"
#include "avse/synth.hpp"

namespace avse {

Crop draw_crop(std::size_t samples, std::size_t segment_len, std::size_t spf, Rng& rng) {
  if (segment_len % spf != 0)
    throw ConfigError("segment_len " + std::to_string(segment_len) + " is not a multiple of the " +
                      std::to_string(spf) + "-sample visual frame");
  if (samples < segment_len)
    throw ConfigError("utterance of " + std::to_string(samples) + " samples is shorter than segment_len " +
                      std::to_string(segment_len));
  Crop c;
  const std::size_t max_k0 = (samples - segment_len) / spf;
  c.frame_start = static_cast<std::size_t>(rng.below(max_k0 + 1));
  c.sample_start = c.frame_start * spf;
  c.frames = segment_len / spf + 1;
  return c;
}

void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& curve) {
  os << "epoch,train_loss,val_loss,val_sisdr,lr\n";
  for (const auto& r : curve)
    os << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.val_loss) << ','
       << format_number(r.val_sisdr) << ',' << format_number(r.lr) << '\n';
}

namespace {

std::size_t samples_per_frame(const ModelConfig& cfg) {
  const double spf = kSampleRate / cfg.fps;
  if (std::abs(spf - std::round(spf)) > 1e-9) throw ConfigError("fps must divide the sample rate");
  return static_cast<std::size_t>(std::llround(spf));
}

void check_visual(const Utterance& u, const ModelConfig& cfg) {
  if (u.visual.mode != VisualStream::Mode::kFeatures)
    throw UsageError(u.entry.utt + ": training needs feature-mode visual input");
  if (u.visual.dim != cfg.visual_dim)
    throw DimensionError(u.entry.utt + ": visual d_v " + std::to_string(u.visual.dim) + ", model expects " +
                         std::to_string(cfg.visual_dim));
  const std::size_t want = visual_frame_count(u.noisy.size(), cfg.fps, kSampleRate);
  if (u.visual.count != want)
    throw AlignmentError(u.entry.utt + ": " + std::to_string(u.visual.count) + " visual frames for " +
                         std::to_string(u.noisy.size()) + " samples, expected " + std::to_string(want));
}

template <typename T>
Tensor<T> wave_tensor(const Waveform& w) {
  return Tensor<T>({1, w.size()}, std::vector<T>(w.samples.begin(), w.samples.end()));
}

// Training-state <-> checkpoint arrays.
template <typename T>
Checkpoint snapshot(const AvseModel<T>& model, const TrainConfig& cfg, const RmsProp& opt,
                    const PlateauScheduler& sched, std::size_t epoch, const TrainResult& res) {
  Checkpoint c = model_checkpoint(model, cfg);
  const auto ps = model.trainable_parameters();
  for (std::size_t i = 0; i < opt.square_avg.size(); ++i)
    c.arrays.push_back({"opt/" + ps[i].name, ps[i].tensor.shape(), opt.square_avg[i]});
  c.put_scalar("meta/steps", static_cast<double>(opt.steps));
  c.put_scalar("meta/epoch", static_cast<double>(epoch));
  c.put_scalar("meta/lr", sched.lr);
  c.put_scalar("meta/sched_best", sched.best);
  c.put_scalar("meta/sched_bad", static_cast<double>(sched.bad_epochs));
  c.put_scalar("meta/sched_reductions", static_cast<double>(sched.reductions));
  c.put_scalar("meta/best_val", res.best_val_loss);
  c.put_scalar("meta/best_epoch", static_cast<double>(res.best_epoch));
  if (!res.curve.empty()) {
    NamedArray curve{"meta/curve", {res.curve.size(), 5}, {}};
    for (const auto& r : res.curve)
      curve.values.insert(curve.values.end(),
                          {static_cast<double>(r.epoch), r.train_loss, r.val_loss, r.val_sisdr, r.lr});
    c.arrays.push_back(std::move(curve));
  }
  std::size_t saved = 0;
  for (const auto& a : c.with_prefix("w/")) saved += a.values.size();
  if (saved != model.param_count())
    throw TrainingError("checkpoint holds " + std::to_string(saved) + " weights, model counts " +
                        std::to_string(model.param_count()));
  return c;
}

template <typename T>
std::size_t restore(const Checkpoint& c, AvseModel<T>& model, RmsProp& opt, PlateauScheduler& sched,
                    TrainResult& res) {
  if (fingerprint(c.model) != fingerprint(model.config()))
    throw FormatError("resume: checkpoint was written for a different model config");
  model.import_state(c.with_prefix("w/"));
  const auto ps = model.trainable_parameters();
  opt.square_avg.clear();
  for (const auto& p : ps) {
    const auto& a = c.at("opt/" + p.name);
    if (a.values.size() != p.tensor.numel()) throw FormatError("resume: optimizer state size for '" + p.name + "'");
    opt.square_avg.push_back(a.values);
  }
  opt.steps = static_cast<std::uint64_t>(c.scalar("meta/steps"));
  sched.lr = c.scalar("meta/lr");
  sched.best = c.scalar("meta/sched_best");
  sched.bad_epochs = static_cast<std::size_t>(c.scalar("meta/sched_bad"));
  sched.reductions = static_cast<std::size_t>(c.scalar("meta/sched_reductions"));
  res.best_val_loss = c.scalar("meta/best_val");
  res.best_epoch = static_cast<std::size_t>(c.scalar("meta/best_epoch"));
  res.curve.clear();
  if (const auto* curve = c.find("meta/curve"))
    for (std::size_t i = 0; i < curve->shape[0]; ++i) {
      const double* v = curve->values.data() + i * 5;
      res.curve.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4]});
    }
  return static_cast<std::size_t>(c.scalar("meta/epoch"));
}

void write_text_atomic(const std::filesystem::path& p, const std::string& s) {
  write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace

template <typename T>
ValidationScore validate(const AvseModel<T>& model, const std::vector<Utterance>& items) {
  NoGradGuard guard;
  ValidationScore s;
  if (items.empty()) return s;
  for (const auto& u : items) {
    check_visual(u, model.config());
    auto vis = visual_tensor<T>(u.visual);
    auto clean = wave_tensor<T>(u.clean);
    auto est = model.forward(wave_tensor<T>(u.noisy), vis);
    s.loss += static_cast<double>(si_sdr_loss(clean, est).item());
    std::vector<double> e(est.data().begin(), est.data().end());
    s.sisdr += si_sdr_capped(u.clean.samples, e);
    s.noisy_sisdr += si_sdr_capped(u.clean.samples, u.noisy.samples);
  }
  const double n = static_cast<double>(items.size());
  s.loss /= n;
  s.sisdr /= n;
  s.noisy_sisdr /= n;
  return s;
}

template <typename T>
TrainResult train(AvseModel<T>& model, const std::vector<Utterance>& train_set, const std::vector<Utterance>& val_set,
                  const TrainConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  for (const auto& u : train_set) check_visual(u, mc);
  for (const auto& u : val_set) check_visual(u, mc);
  const std::size_t spf = samples_per_frame(mc);

  RmsProp rms;
  rms.alpha = cfg.rms_alpha;
  rms.eps = cfg.rms_eps;
  PlateauScheduler sched;
  sched.factor = cfg.plateau_factor;
  sched.patience = cfg.plateau_patience;
  sched.threshold = cfg.plateau_threshold;
  sched.lr = cfg.lr;
  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();

  std::size_t start_epoch = 1;
  const bool files = !opt.out_dir.empty();
  if (files) std::filesystem::create_directories(opt.out_dir);
  if (files && opt.resume && std::filesystem::exists(opt.out_dir / "last.ckpt")) {
    start_epoch = restore(load_checkpoint(opt.out_dir / "last.ckpt"), model, rms, sched, res) + 1;
    if (opt.log) *opt.log << "resuming at epoch " << start_epoch << "\n";
  }
  const std::size_t last_epoch = opt.stop_after ? std::min(opt.stop_after, cfg.epochs) : cfg.epochs;
  const auto params = model.trainable_parameters();

  for (std::size_t epoch = start_epoch; epoch <= last_epoch; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::derive(cfg.seed, {0xE90C, epoch});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    const double lr = sched.lr;
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch, ++steps) {
      const std::size_t B = std::min(cfg.batch, order.size() - b0);
      const std::uint64_t step_seed = Rng::derive(cfg.seed, {0x57E9, epoch, steps}).next_u64();
      Rng crop_rng(step_seed);
      const std::size_t seg = cfg.segment_len;
      std::vector<T> noisy(B * seg), clean(B * seg);
      const std::size_t nf = seg / spf + 1;
      std::vector<T> vis(B * nf * mc.visual_dim);
      std::ostringstream batch_ids;
      for (std::size_t i = 0; i < B; ++i) {
        const Utterance& u = train_set[order[b0 + i]];
        batch_ids << (i ? " " : "") << u.entry.utt;
        const Crop c = draw_crop(u.noisy.size(), seg, spf, crop_rng);
        std::copy_n(u.noisy.samples.begin() + static_cast<std::ptrdiff_t>(c.sample_start), seg,
                    noisy.begin() + static_cast<std::ptrdiff_t>(i * seg));
        std::copy_n(u.clean.samples.begin() + static_cast<std::ptrdiff_t>(c.sample_start), seg,
                    clean.begin() + static_cast<std::ptrdiff_t>(i * seg));
        std::copy_n(u.visual.values.begin() + static_cast<std::ptrdiff_t>(c.frame_start * mc.visual_dim),
                    nf * mc.visual_dim, vis.begin() + static_cast<std::ptrdiff_t>(i * nf * mc.visual_dim));
      }
      Rng drop_rng(step_seed ^ 0xD50Fu);
      ForwardMode mode{true, mc.dropout, &drop_rng};
      auto est = model.forward(Tensor<T>({B, seg}, std::move(noisy)),
                               Tensor<T>({B, nf, mc.visual_dim}, std::move(vis)), mode);
      auto loss = si_sdr_loss(Tensor<T>({B, seg}, std::move(clean)), est);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " step " << steps << " (batch seed " << step_seed
            << ", items " << batch_ids.str() << ")";
        throw TrainingError(msg.str());
      }
      for (const auto& p : params) p.tensor.node()->grad.clear();
      backward(loss);
      rms.step(params, lr);
      loss_sum += lv;
    }
    for (const auto& p : params) p.tensor.node()->grad.clear();

    const auto v = validate(model, val_set);
    CurveRow row{epoch, loss_sum / static_cast<double>(steps), v.loss, v.sisdr, lr};
    res.curve.push_back(row);
    sched.step(val_set.empty() ? row.train_loss : v.loss);
    const double monitored = val_set.empty() ? row.train_loss : v.loss;
    const bool is_best = monitored < res.best_val_loss;
    if (is_best) {
      res.best_val_loss = monitored;
      res.best_epoch = epoch;
    }
    if (opt.log)
      *opt.log << "epoch " << epoch << " train_loss " << format_number(row.train_loss) << " val_loss "
               << format_number(row.val_loss) << " val_sisdr " << format_number(row.val_sisdr) << " (noisy "
               << format_number(v.noisy_sisdr) << ") lr " << format_number(lr) << std::endl;
    if (files) {
      const Checkpoint ck = snapshot(model, cfg, rms, sched, epoch, res);
      if (is_best) save_checkpoint(opt.out_dir / "best.ckpt", ck);
      save_checkpoint(opt.out_dir / "last.ckpt", ck);
      std::ostringstream csv;
      write_curve_csv(csv, res.curve);
      write_text_atomic(opt.out_dir / "loss_curve.csv", csv.str());
    }
  }
  return res;
}

template ValidationScore validate(const AvseModel<float>&, const std::vector<Utterance>&);
template ValidationScore validate(const AvseModel<double>&, const std::vector<Utterance>&);
template TrainResult train(AvseModel<float>&, const std::vector<Utterance>&, const std::vector<Utterance>&,
                           const TrainConfig&, const TrainOptions&);
template TrainResult train(AvseModel<double>&, const std::vector<Utterance>&, const std::vector<Utterance>&,
                           const TrainConfig&, const TrainOptions&);

}  // namespace avse
