#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "umono/decoder.hpp"
#include "umono/encoder.hpp"
#include "umono/objective.hpp"

namespace umono {

// Flat key=value run configuration with section-prefixed keys. Unknown keys
// are fatal. Defaults reproduce the reference training settings.
struct RunConfig {
  int precision = 32;  // 32 | 64
  std::uint64_t seed = 42;

  std::array<int, 4> encoder_depths{3, 4, 6, 3};
  std::array<int, 4> encoder_channels{64, 128, 256, 512};
  std::array<int, 4> encoder_heads{1, 2, 4, 8};
  std::array<int, 4> encoder_reduction{8, 4, 2, 1};
  std::string encoder_ablation = "full";  // full | w_cnn | w_transformer | wo_lgff

  std::array<int, 4> decoder_widths{256, 128, 64, 32};
  int decoder_heads = 1;
  std::string decoder_guidance = "udia";  // udia | none | hef | mtm
  std::string decoder_norm = "layer";     // layer | batch

  double loss_lambda = 0.2;
  double loss_mu = 0.8;
  double loss_alpha = 10.0;
  double loss_beta = 0.85;
  bool loss_l1 = false;
  double loss_valid_eps = 1e-3;

  std::string metrics_convention = "gt";  // gt | pred

  double optim_lr = 1e-4;
  double optim_beta1 = 0.9;
  double optim_beta2 = 0.999;
  double optim_eps = 1e-8;
  double optim_weight_decay = 1e-2;
  double optim_clip_norm = 10.0;

  std::string sched_kind = "cos";  // cos | poly
  double sched_warmup_frac = 0.3;
  double sched_floor_div = 100.0;
  double sched_poly_exp = 1.0;

  int train_batch_size = 8;
  int train_epochs = 10;
  int train_steps = 0;  // overrides epochs when > 0
  std::string train_data;
  std::string train_val_data;
  std::string train_out = "out";
  int train_ckpt_every = 0;  // per-epoch checkpoint interval; 0 = final only

  int physics_patch_radius = 7;
  double physics_t_min = 0.05;

  EncoderConfig encoder_config() const {
    EncoderConfig c;
    c.depths = encoder_depths;
    c.channels = encoder_channels;
    c.heads = encoder_heads;
    c.reduction = encoder_reduction;
    if (encoder_ablation == "full")
      c.ablation = EncoderAblation::full;
    else if (encoder_ablation == "w_cnn")
      c.ablation = EncoderAblation::cnn_only;
    else if (encoder_ablation == "w_transformer")
      c.ablation = EncoderAblation::transformer_only;
    else if (encoder_ablation == "wo_lgff")
      c.ablation = EncoderAblation::fuse_add;
    else
      throw ConfigError("encoder.ablation: unknown value '" + encoder_ablation + "'");
    c.validate();
    return c;
  }

  DecoderConfig decoder_config() const {
    DecoderConfig c;
    c.widths = decoder_widths;
    c.heads = decoder_heads;
    if (decoder_guidance == "udia")
      c.guidance = GuidanceMode::udia;
    else if (decoder_guidance == "none")
      c.guidance = GuidanceMode::none;
    else if (decoder_guidance == "hef")
      c.guidance = GuidanceMode::hef;
    else if (decoder_guidance == "mtm")
      c.guidance = GuidanceMode::mtm;
    else
      throw ConfigError("decoder.guidance: unknown value '" + decoder_guidance + "'");
    if (decoder_norm == "layer")
      c.norm = NormKind::layer;
    else if (decoder_norm == "batch")
      c.norm = NormKind::batch;
    else
      throw ConfigError("decoder.norm: unknown value '" + decoder_norm + "'");
    c.validate(encoder_config());
    return c;
  }

  template <typename S>
  LossConfig<S> loss_config() const {
    LossConfig<S> c;
    c.lambda = static_cast<S>(loss_lambda);
    c.mu = static_cast<S>(loss_mu);
    c.alpha = static_cast<S>(loss_alpha);
    c.beta = static_cast<S>(loss_beta);
    c.l1 = loss_l1;
    c.valid_eps = static_cast<S>(loss_valid_eps);
    return c;
  }

  MetricConvention metric_convention() const {
    if (metrics_convention == "gt") return MetricConvention::ground_truth;
    if (metrics_convention == "pred") return MetricConvention::predicted;
    throw ConfigError("metrics.convention: unknown value '" + metrics_convention + "'");
  }

  void validate() const {
    if (precision != 32 && precision != 64)
      throw ConfigError("precision: must be 32 or 64");
    encoder_config();
    decoder_config();
    metric_convention();
    if (loss_lambda < 0 || loss_mu < 0) throw ConfigError("loss: lambda/mu must be nonnegative");
    if (loss_beta < 0 || loss_beta > 1) throw ConfigError("loss.beta: must be in [0,1]");
    if (train_batch_size < 1) throw ConfigError("train.batch_size: must be positive");
    if (train_epochs < 0 || train_steps < 0)
      throw ConfigError("train: epochs/steps must be nonnegative");
    if (physics_patch_radius < 0) throw ConfigError("physics.patch_radius: must be nonnegative");
    if (physics_t_min <= 0 || physics_t_min >= 1)
      throw ConfigError("physics.t_min: must be in (0,1)");
    if (sched_warmup_frac < 0 || sched_warmup_frac > 1)
      throw ConfigError("sched.warmup_frac: must be in [0,1]");
    if (sched_kind != "cos" && sched_kind != "poly")
      throw ConfigError("sched.kind: must be cos or poly");
  }

  std::string serialize() const;
  static RunConfig parse_text(const std::string& text);
  static RunConfig parse_file(const std::string& path);
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

inline std::array<int, 4> parse_int4(const std::string& key, const std::string& v) {
  std::array<int, 4> out{};
  std::stringstream ss(v);
  std::string tok;
  int i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= 4) throw ConfigError(key + ": expected 4 comma-separated integers, got '" + v + "'");
    try {
      out[static_cast<std::size_t>(i++)] = std::stoi(trim(tok));
    } catch (const std::exception&) {
      throw ConfigError(key + ": bad integer '" + tok + "'");
    }
  }
  if (i != 4) throw ConfigError(key + ": expected 4 comma-separated integers, got '" + v + "'");
  return out;
}

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": bad integer '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": bad number '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": bad boolean '" + v + "'");
}

inline std::string fmt_int4(const std::array<int, 4>& a) {
  std::ostringstream os;
  os << a[0] << ',' << a[1] << ',' << a[2] << ',' << a[3];
  return os.str();
}

inline std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace detail

inline std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "precision=" << precision << "\n";
  os << "seed=" << seed << "\n";
  os << "encoder.depths=" << detail::fmt_int4(encoder_depths) << "\n";
  os << "encoder.channels=" << detail::fmt_int4(encoder_channels) << "\n";
  os << "encoder.heads=" << detail::fmt_int4(encoder_heads) << "\n";
  os << "encoder.reduction=" << detail::fmt_int4(encoder_reduction) << "\n";
  os << "encoder.ablation=" << encoder_ablation << "\n";
  os << "decoder.widths=" << detail::fmt_int4(decoder_widths) << "\n";
  os << "decoder.heads=" << decoder_heads << "\n";
  os << "decoder.guidance=" << decoder_guidance << "\n";
  os << "decoder.norm=" << decoder_norm << "\n";
  os << "loss.lambda=" << detail::fmt_double(loss_lambda) << "\n";
  os << "loss.mu=" << detail::fmt_double(loss_mu) << "\n";
  os << "loss.alpha=" << detail::fmt_double(loss_alpha) << "\n";
  os << "loss.beta=" << detail::fmt_double(loss_beta) << "\n";
  os << "loss.l1=" << (loss_l1 ? "true" : "false") << "\n";
  os << "loss.valid_eps=" << detail::fmt_double(loss_valid_eps) << "\n";
  os << "metrics.convention=" << metrics_convention << "\n";
  os << "optim.lr=" << detail::fmt_double(optim_lr) << "\n";
  os << "optim.beta1=" << detail::fmt_double(optim_beta1) << "\n";
  os << "optim.beta2=" << detail::fmt_double(optim_beta2) << "\n";
  os << "optim.eps=" << detail::fmt_double(optim_eps) << "\n";
  os << "optim.weight_decay=" << detail::fmt_double(optim_weight_decay) << "\n";
  os << "optim.clip_norm=" << detail::fmt_double(optim_clip_norm) << "\n";
  os << "sched.kind=" << sched_kind << "\n";
  os << "sched.warmup_frac=" << detail::fmt_double(sched_warmup_frac) << "\n";
  os << "sched.floor_div=" << detail::fmt_double(sched_floor_div) << "\n";
  os << "sched.poly_exp=" << detail::fmt_double(sched_poly_exp) << "\n";
  os << "train.batch_size=" << train_batch_size << "\n";
  os << "train.epochs=" << train_epochs << "\n";
  os << "train.steps=" << train_steps << "\n";
  os << "train.data=" << train_data << "\n";
  os << "train.val_data=" << train_val_data << "\n";
  os << "train.out=" << train_out << "\n";
  os << "train.ckpt_every=" << train_ckpt_every << "\n";
  os << "physics.patch_radius=" << physics_patch_radius << "\n";
  os << "physics.t_min=" << detail::fmt_double(physics_t_min) << "\n";
  return os.str();
}

inline RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig c;
  std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters;
  auto set_i = [](int& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_int(k, v); };
  };
  auto set_d = [](double& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_double(k, v); };
  };
  auto set_b = [](bool& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_bool(k, v); };
  };
  auto set_s = [](std::string& dst) {
    return [&dst](const std::string&, const std::string& v) { dst = v; };
  };
  auto set_i4 = [](std::array<int, 4>& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_int4(k, v); };
  };
  setters["precision"] = set_i(c.precision);
  setters["seed"] = [&c](const std::string& k, const std::string& v) {
    try {
      c.seed = std::stoull(v);
    } catch (const std::exception&) {
      throw ConfigError(k + ": bad integer '" + v + "'");
    }
  };
  setters["encoder.depths"] = set_i4(c.encoder_depths);
  setters["encoder.channels"] = set_i4(c.encoder_channels);
  setters["encoder.heads"] = set_i4(c.encoder_heads);
  setters["encoder.reduction"] = set_i4(c.encoder_reduction);
  setters["encoder.ablation"] = set_s(c.encoder_ablation);
  setters["decoder.widths"] = set_i4(c.decoder_widths);
  setters["decoder.heads"] = set_i(c.decoder_heads);
  setters["decoder.guidance"] = set_s(c.decoder_guidance);
  setters["decoder.norm"] = set_s(c.decoder_norm);
  setters["loss.lambda"] = set_d(c.loss_lambda);
  setters["loss.mu"] = set_d(c.loss_mu);
  setters["loss.alpha"] = set_d(c.loss_alpha);
  setters["loss.beta"] = set_d(c.loss_beta);
  setters["loss.l1"] = set_b(c.loss_l1);
  setters["loss.valid_eps"] = set_d(c.loss_valid_eps);
  setters["metrics.convention"] = set_s(c.metrics_convention);
  setters["optim.lr"] = set_d(c.optim_lr);
  setters["optim.beta1"] = set_d(c.optim_beta1);
  setters["optim.beta2"] = set_d(c.optim_beta2);
  setters["optim.eps"] = set_d(c.optim_eps);
  setters["optim.weight_decay"] = set_d(c.optim_weight_decay);
  setters["optim.clip_norm"] = set_d(c.optim_clip_norm);
  setters["sched.kind"] = set_s(c.sched_kind);
  setters["sched.warmup_frac"] = set_d(c.sched_warmup_frac);
  setters["sched.floor_div"] = set_d(c.sched_floor_div);
  setters["sched.poly_exp"] = set_d(c.sched_poly_exp);
  setters["train.batch_size"] = set_i(c.train_batch_size);
  setters["train.epochs"] = set_i(c.train_epochs);
  setters["train.steps"] = set_i(c.train_steps);
  setters["train.data"] = set_s(c.train_data);
  setters["train.val_data"] = set_s(c.train_val_data);
  setters["train.out"] = set_s(c.train_out);
  setters["train.ckpt_every"] = set_i(c.train_ckpt_every);
  setters["physics.patch_radius"] = set_i(c.physics_patch_radius);
  setters["physics.t_min"] = set_d(c.physics_t_min);

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  c.validate();
  return c;
}

inline RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse_text(os.str());
}

}  // namespace umono
