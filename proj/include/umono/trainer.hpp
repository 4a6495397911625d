#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "umono/checkpoint.hpp"
#include "umono/config.hpp"
#include "umono/dataset.hpp"
#include "umono/model.hpp"
#include "umono/objective.hpp"

namespace umono {

// ---------------------------------------------------------------------------
// one-cycle learning-rate schedule

struct OneCycleSchedule {
  double max_lr = 1e-4;
  std::int64_t total_steps = 1;
  double warmup_frac = 0.3;
  double floor_div = 100.0;  // floor lr = max_lr / floor_div
  bool poly = false;
  double poly_exp = 1.0;

  std::int64_t warmup_end() const {
    return static_cast<std::int64_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
  }

  // step in [0, total_steps]; continuous, floor at both ends, peak at the
  // warmup boundary.
  double lr_at(std::int64_t step) const {
    const double floor_lr = max_lr / floor_div;
    const std::int64_t warm = warmup_end();
    if (step <= 0 && warm > 0) return floor_lr;
    double frac;
    if (step <= warm) {
      frac = warm > 0 ? static_cast<double>(step) / static_cast<double>(warm) : 1.0;
      if (poly) return floor_lr + (max_lr - floor_lr) * std::pow(frac, poly_exp);
      return floor_lr + (max_lr - floor_lr) * 0.5 * (1.0 - std::cos(M_PI * frac));
    }
    const std::int64_t span = total_steps - warm;
    frac = span > 0 ? static_cast<double>(step - warm) / static_cast<double>(span) : 1.0;
    if (poly) return floor_lr + (max_lr - floor_lr) * std::pow(1.0 - frac, poly_exp);
    return floor_lr + (max_lr - floor_lr) * 0.5 * (1.0 + std::cos(M_PI * frac));
  }

  static OneCycleSchedule from_config(const RunConfig& cfg, std::int64_t total_steps) {
    OneCycleSchedule s;
    s.max_lr = cfg.optim_lr;
    s.total_steps = std::max<std::int64_t>(1, total_steps);
    s.warmup_frac = cfg.sched_warmup_frac;
    s.floor_div = cfg.sched_floor_div;
    s.poly = cfg.sched_kind == "poly";
    s.poly_exp = cfg.sched_poly_exp;
    return s;
  }
};

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay

template <typename S>
struct AdamOptions {
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  S weight_decay = S(1e-2);

  static AdamOptions from_config(const RunConfig& cfg) {
    AdamOptions o;
    o.beta1 = static_cast<S>(cfg.optim_beta1);
    o.beta2 = static_cast<S>(cfg.optim_beta2);
    o.eps = static_cast<S>(cfg.optim_eps);
    o.weight_decay = static_cast<S>(cfg.optim_weight_decay);
    return o;
  }
};

template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m, v;  // aligned with the trainable parameter list
  std::int64_t t = 0;
};

// One bias-corrected update. Weight decay is decoupled and applied to the
// parameter before the moment update.
template <typename S>
void adam_step(const std::vector<Tensor<S>*>& params, const std::vector<Tensor<S>>& grads,
               AdamState<S>& st, const AdamOptions<S>& o, S lr) {
  if (grads.size() != params.size())
    throw NumericError("adam_step: got " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(params.size()) + " parameters");
  if (st.m.empty()) {
    for (auto* p : params) {
      st.m.push_back(Tensor<S>::zeros(p->shape));
      st.v.push_back(Tensor<S>::zeros(p->shape));
    }
  }
  st.t += 1;
  const S bc1 = S(1) - std::pow(o.beta1, static_cast<S>(st.t));
  const S bc2 = S(1) - std::pow(o.beta2, static_cast<S>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& p = *params[i];
    const Tensor<S>& g = grads[i];
    if (!p.same_shape(g))
      throw NumericError("adam_step: gradient shape " + shape_str(g.shape) +
                         " does not match parameter " + shape_str(p.shape));
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      p.data[k] -= lr * o.weight_decay * p.data[k];
      st.m[i].data[k] = o.beta1 * st.m[i].data[k] + (S(1) - o.beta1) * g.data[k];
      st.v[i].data[k] = o.beta2 * st.v[i].data[k] + (S(1) - o.beta2) * g.data[k] * g.data[k];
      const S mhat = st.m[i].data[k] / bc1;
      const S vhat = st.v[i].data[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

// Global L2-norm clip across all gradients; returns the pre-clip norm.
template <typename S>
double clip_gradients(std::vector<Tensor<S>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (S v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& g : grads)
      for (auto& v : g.data) v *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// batching

template <typename S>
Tensor<S> batch_stack(const std::vector<const Tensor<S>*>& parts) {
  std::vector<int> shape = parts[0]->shape;
  shape.insert(shape.begin(), static_cast<int>(parts.size()));
  Tensor<S> out(shape);
  const std::int64_t n = parts[0]->numel();
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i]->data.begin(), parts[i]->data.end(),
              out.data.begin() + static_cast<std::int64_t>(i) * n);
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

template <typename S>
void save_checkpoint(const std::string& path, ParamStore<S>& params, const AdamState<S>* adam,
                     const std::vector<std::uint64_t>& counters = {},
                     const std::vector<std::uint64_t>& rng_state = {},
                     const std::string& config_text = "") {
  CheckpointWriter w;
  for (const auto& e : params.entries()) w.add_tensor(e.name, *e.tensor);
  if (adam) {
    if (!adam->m.empty()) {
      std::size_t i = 0;
      for (const auto& e : params.entries()) {
        if (!e.trainable) continue;
        w.add_tensor("adam.m." + e.name, adam->m[i]);
        w.add_tensor("adam.v." + e.name, adam->v[i]);
        ++i;
      }
    }
    w.add_u64s("trainer.adam_t", {static_cast<std::uint64_t>(adam->t)});
  }
  if (!counters.empty()) w.add_u64s("trainer.counters", counters);
  if (!rng_state.empty()) w.add_u64s("trainer.rng", rng_state);
  if (!config_text.empty()) w.add_text("config", config_text);
  w.save(path);
}

template <typename S>
void restore_params(const CheckpointData& data, ParamStore<S>& params) {
  for (auto& e : params.entries()) {
    Tensor<S> t = data.tensor<S>(e.name);
    if (t.shape != e.tensor->shape)
      throw ParseError("checkpoint: record " + e.name + " has shape " + shape_str(t.shape) +
                       " but the model expects " + shape_str(e.tensor->shape));
    e.tensor->data = std::move(t.data);
  }
}

template <typename S>
bool restore_adam(const CheckpointData& data, ParamStore<S>& params, AdamState<S>& st) {
  if (!data.has("trainer.adam_t")) return false;
  st.m.clear();
  st.v.clear();
  st.t = static_cast<std::int64_t>(data.u64s("trainer.adam_t")[0]);
  if (st.t == 0) return true;  // optimizer never stepped; moments not materialized
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    st.m.push_back(data.tensor<S>("adam.m." + e.name));
    st.v.push_back(data.tensor<S>("adam.v." + e.name));
  }
  return true;
}

// ---------------------------------------------------------------------------
// training loop

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  std::vector<double> lr_trace;  // lr used at each optimizer step
  std::int64_t steps_run = 0;
  double wall_seconds = 0;
  MetricsReport final_metrics;
  bool has_final_metrics = false;
};

namespace trainer_detail {

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace trainer_detail

// Deterministic given (config, seed): fixed init stream, fixed shuffle
// stream, single-threaded math. Emits ckpt_final.umck plus per-epoch
// checkpoints when train.ckpt_every > 0, and appends one record per epoch to
// train_log.txt (content is deterministic; no timestamps).
//
// A non-finite loss aborts with NumericError; checkpoints already on disk
// are left in place.
template <typename S>
TrainReport train(UMonoModel<S>& model, const std::vector<RgbdSample<S>>& data,
                  const RunConfig& cfg, const std::string& resume_path = "") {
  if (data.empty()) throw DataError("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  const std::string out_dir = cfg.train_out;
  std::filesystem::create_directories(out_dir);

  const int n = static_cast<int>(data.size());
  const int bs = std::min(cfg.train_batch_size, n);
  const std::int64_t steps_per_epoch = (n + bs - 1) / bs;
  std::int64_t total_steps, total_epochs;
  if (cfg.train_steps > 0) {
    total_steps = cfg.train_steps;
    total_epochs = (total_steps + steps_per_epoch - 1) / steps_per_epoch;
  } else {
    total_epochs = cfg.train_epochs;
    total_steps = total_epochs * steps_per_epoch;
  }
  const OneCycleSchedule sched = OneCycleSchedule::from_config(cfg, total_steps);
  const AdamOptions<S> opts = AdamOptions<S>::from_config(cfg);
  const LossConfig<S> loss_cfg = cfg.loss_config<S>();

  AdamState<S> adam;
  Rng shuffle_rng(cfg.seed ^ 0x51afe17b00c5ull);
  std::int64_t global_step = 0;
  std::int64_t start_epoch = 0;

  if (resume_path.empty()) {
    model.init_params(cfg.seed);
    std::ofstream(out_dir + "/train_log.txt", std::ios::trunc);  // fresh log
  } else {
    CheckpointData ckpt = CheckpointData::load(resume_path);
    restore_params(ckpt, model.params());
    if (!restore_adam(ckpt, model.params(), adam))
      throw ParseError(resume_path + ": checkpoint has no optimizer state, cannot resume");
    const auto counters = ckpt.u64s("trainer.counters");
    global_step = static_cast<std::int64_t>(counters[0]);
    start_epoch = static_cast<std::int64_t>(counters[1]);
    const auto rs = ckpt.u64s("trainer.rng");
    shuffle_rng.set_state({rs[0], rs[1], rs[2], rs[3]});
  }

  std::vector<Tensor<S>*> trainable;
  for (auto& e : model.params().entries())
    if (e.trainable) trainable.push_back(e.tensor);

  TrainReport report;
  std::ofstream log(out_dir + "/train_log.txt", std::ios::app);

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  auto save_state = [&](const std::string& path, std::int64_t epoch_next) {
    const auto rs = shuffle_rng.state();
    save_checkpoint(path, model.params(), &adam,
                    {static_cast<std::uint64_t>(global_step),
                     static_cast<std::uint64_t>(epoch_next)},
                    {rs[0], rs[1], rs[2], rs[3]}, cfg.serialize());
  };

  for (std::int64_t epoch = start_epoch; epoch < total_epochs && global_step < total_steps;
       ++epoch) {
    // shuffle from the identity order so an epoch's batches depend only on
    // the rng state, not on earlier epochs' orders (resume equivalence)
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    shuffle_rng.shuffle(order);
    double epoch_loss_sum = 0;
    std::int64_t epoch_steps = 0;
    double last_lr = 0;

    for (int batch_start = 0; batch_start < n && global_step < total_steps; batch_start += bs) {
      const int batch_n = std::min(bs, n - batch_start);
      std::vector<const Tensor<S>*> rgbs, depths, trans;
      for (int i = 0; i < batch_n; ++i) {
        const auto& s = data[static_cast<std::size_t>(order[static_cast<std::size_t>(batch_start + i)])];
        rgbs.push_back(&s.rgb);
        depths.push_back(&s.depth);
        trans.push_back(&s.transmission.t);
      }
      Tensor<S> rgb = batch_stack(rgbs);
      Tensor<S> gt = batch_stack(depths);
      Tensor<S> t = batch_stack(trans);
      Tensor<S> mask = valid_mask(gt, loss_cfg.valid_eps);

      Graph<S> g;
      Tensor<S> pred = model.forward(&g, rgb, t, NormMode::train);
      Tensor<S> loss = umono_loss(pred, gt, mask, loss_cfg);
      const double loss_v = static_cast<double>(loss.data[0]);
      if (!std::isfinite(loss_v))
        throw NumericError("train: non-finite loss at step " + std::to_string(global_step + 1) +
                           "; last-good checkpoints retained in " + out_dir);
      g.backward(loss);

      std::vector<Tensor<S>> grads;
      grads.reserve(trainable.size());
      for (auto* p : trainable) grads.push_back(g.grad(*p));
      clip_gradients(grads, cfg.optim_clip_norm);

      const double lr = sched.lr_at(global_step + 1);
      adam_step(trainable, grads, adam, opts, static_cast<S>(lr));
      ++global_step;
      ++epoch_steps;
      epoch_loss_sum += loss_v;
      last_lr = lr;
      report.step_loss.push_back(loss_v);
      report.lr_trace.push_back(lr);
    }

    const double mean_loss = epoch_loss_sum / static_cast<double>(std::max<std::int64_t>(1, epoch_steps));
    report.epoch_loss.push_back(mean_loss);
    log << "epoch=" << (epoch + 1) << " steps=" << global_step
        << " loss=" << trainer_detail::fmt_g(mean_loss)
        << " lr=" << trainer_detail::fmt_g(last_lr) << "\n";
    log.flush();

    if (cfg.train_ckpt_every > 0 && (epoch + 1) % cfg.train_ckpt_every == 0)
      save_state(out_dir + "/ckpt_epoch_" + std::to_string(epoch + 1) + ".umck", epoch + 1);
  }

  report.steps_run = global_step;
  save_state(out_dir + "/ckpt_final.umck", total_epochs);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// Eval-mode forward over a split, metrics pixel-weighted across images.
template <typename S>
MetricsReport evaluate(UMonoModel<S>& model, const std::vector<RgbdSample<S>>& data,
                       const RunConfig& cfg) {
  if (data.empty()) throw DataError("evaluate: empty split");
  MetricsAccumulator acc(cfg.metric_convention());
  const S eps = static_cast<S>(cfg.loss_valid_eps);
  for (const auto& s : data) {
    Tensor<S> rgb = batch_stack<S>({&s.rgb});
    Tensor<S> t = batch_stack<S>({&s.transmission.t});
    Tensor<S> pred = model.forward(nullptr, rgb, t, NormMode::eval);
    Tensor<S> gt = batch_stack<S>({&s.depth});
    acc.add(pred, gt, valid_mask(gt, eps));
  }
  return acc.finalize();
}

}  // namespace umono
