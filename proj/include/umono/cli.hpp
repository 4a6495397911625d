#pragma once

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "umono/config.hpp"
#include "umono/dataset.hpp"
#include "umono/gradcheck_suite.hpp"
#include "umono/model.hpp"
#include "umono/trainer.hpp"

namespace umono {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

namespace cli_detail {

inline std::array<double, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<double, 3> out{};
  std::stringstream ss(v);
  std::string tok;
  int i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= 3) throw ConfigError(key + ": expected three comma-separated numbers, got '" + v + "'");
    out[static_cast<std::size_t>(i++)] = detail::parse_double(key, tok);
  }
  if (i != 3) throw ConfigError(key + ": expected three comma-separated numbers, got '" + v + "'");
  return out;
}

inline std::pair<int, int> parse_size(const std::string& v) {
  const auto x = v.find('x');
  if (x == std::string::npos)
    throw ConfigError("--size: expected HxW (e.g. 64x64), got '" + v + "'");
  return {detail::parse_int("--size", v.substr(0, x)), detail::parse_int("--size", v.substr(x + 1))};
}

struct SynthArgs {
  std::string out;
  int count = 8;
  std::string size = "64x64";
  std::uint64_t seed = 1;
  std::string beta = "0.6,0.9,1.1";
  std::string ambient = "0.18,0.45,0.55";
  std::string kind = "mixed";
};

// Synthetic dataset on disk: RGB PPM + 16-bit depth PGM per sample plus a
// manifest. Deterministic bytes per seed.
inline int run_synth(const SynthArgs& a) {
  const auto [h, w] = parse_size(a.size);
  const auto beta = parse_triple("--beta", a.beta);
  const auto ambient = parse_triple("--ambient", a.ambient);
  FormationParams<double> fp;
  for (int c = 0; c < 3; ++c) {
    fp.beta[static_cast<std::size_t>(c)] = beta[static_cast<std::size_t>(c)];
    fp.ambient[static_cast<std::size_t>(c)] = ambient[static_cast<std::size_t>(c)];
  }
  fp.validate();
  std::vector<SceneKind> kinds;
  if (a.kind == "ramp") kinds = {SceneKind::ramp};
  else if (a.kind == "boxes") kinds = {SceneKind::boxes};
  else if (a.kind == "spheres") kinds = {SceneKind::spheres};
  else if (a.kind == "constant") kinds = {SceneKind::constant};
  else if (a.kind == "mixed") kinds = {SceneKind::ramp, SceneKind::boxes, SceneKind::spheres};
  else throw ConfigError("--kind: unknown scene kind '" + a.kind + "'");

  std::filesystem::create_directories(a.out);
  std::ofstream manifest(a.out + "/manifest.txt", std::ios::trunc);
  for (int i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    const auto kind = kinds[static_cast<std::size_t>(i) % kinds.size()];
    auto scene = generate_scene<double>(a.seed + static_cast<std::uint64_t>(i), h, w, kind);
    Tensor<double> img = synthesize_underwater(scene, fp);
    write_ppm(a.out + "/" + name + ".ppm", img);
    write_pgm(a.out + "/" + name + ".pgm", scene.depth);
    manifest << name << " " << name << ".ppm " << name << ".pgm\n";
  }
  std::cout << "wrote " << a.count << " samples to " << a.out << "\n";
  return kExitOk;
}

template <typename S>
int run_train(const RunConfig& cfg, const std::string& resume) {
  if (cfg.train_data.empty()) throw ConfigError("train.data: no dataset manifest configured");
  auto data = load_dataset<S>(cfg.train_data, cfg.physics_patch_radius,
                              static_cast<S>(cfg.physics_t_min));
  UMonoModel<S> model(cfg.encoder_config(), cfg.decoder_config());
  TrainReport report = train(model, data, cfg, resume);
  std::cout << "steps=" << report.steps_run;
  if (!report.epoch_loss.empty()) std::cout << " final_loss=" << report.epoch_loss.back();
  std::cout << " wall_s=" << report.wall_seconds << "\n";
  if (!cfg.train_val_data.empty()) {
    auto val = load_dataset<S>(cfg.train_val_data, cfg.physics_patch_radius,
                               static_cast<S>(cfg.physics_t_min));
    std::cout << evaluate(model, val, cfg).to_text();
  }
  return kExitOk;
}

template <typename S>
int run_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path) {
  UMonoModel<S> model(cfg.encoder_config(), cfg.decoder_config());
  CheckpointData ckpt = CheckpointData::load(ckpt_path);
  restore_params(ckpt, model.params());
  auto data = load_dataset<S>(data_path, cfg.physics_patch_radius,
                              static_cast<S>(cfg.physics_t_min));
  std::cout << evaluate(model, data, cfg).to_text();
  return kExitOk;
}

template <typename S>
int run_infer(const RunConfig& cfg, const CheckpointData& ckpt, const std::string& rgb_path,
              const std::string& out_path, const std::string& transmission_path) {
  UMonoModel<S> model(cfg.encoder_config(), cfg.decoder_config());
  restore_params(ckpt, model.params());
  Tensor<S> rgb = read_ppm<S>(rgb_path);
  if (rgb.dim(1) % 32 != 0 || rgb.dim(2) % 32 != 0)
    throw DataError("infer: image extents " + shape_str(rgb.shape) +
                    " must be divisible by 32");
  const auto ambient = estimate_ambient(rgb);
  auto tmap = estimate_transmission_udcp(rgb, cfg.physics_patch_radius, ambient,
                                         static_cast<S>(cfg.physics_t_min));
  Tensor<S> rgb_b = batch_stack<S>({&rgb});
  Tensor<S> t_b = batch_stack<S>({&tmap.t});
  Tensor<S> pred = model.forward(nullptr, rgb_b, t_b, NormMode::eval);
  Tensor<S> depth = Tensor<S>::from({1, rgb.dim(1), rgb.dim(2)}, std::move(pred.data));
  write_pgm(out_path, depth);
  if (!transmission_path.empty()) write_pgm(transmission_path, tmap.t);
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

template <typename S>
int run_gradcheck(const std::string& scope, std::uint64_t seed, int trials) {
  std::vector<GradCheckResult> results;
  auto append = [&](std::vector<GradCheckResult> r) {
    results.insert(results.end(), r.begin(), r.end());
  };
  if (scope == "layer") append(gradcheck_layers<S>(trials, seed));
  else if (scope == "encoder") append(gradcheck_encoder<S>(trials, seed));
  else if (scope == "decoder") append(gradcheck_decoder<S>(trials, seed));
  else if (scope == "full") append(gradcheck_full<S>(std::min(trials, 3), seed));
  else if (scope == "all") {
    append(gradcheck_layers<S>(trials, seed));
    append(gradcheck_encoder<S>(trials, seed));
    append(gradcheck_decoder<S>(trials, seed));
    append(gradcheck_full<S>(std::min(trials, 3), seed));
  } else {
    throw ConfigError("--scope: expected layer|encoder|decoder|full|all, got '" + scope + "'");
  }
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s %-24s max_rel_err=%.3e tol=%.0e trials=%d\n", r.pass() ? "PASS" : "FAIL",
                r.name.c_str(), r.max_err, r.tol, r.trials);
    ok = ok && r.pass();
  }
  if (!ok) throw NumericError("gradcheck: at least one check exceeded its tolerance");
  return kExitOk;
}

}  // namespace cli_detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"underwater monocular depth estimation toolkit"};
  app.require_subcommand(1);

  cli_detail::SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic RGB-D dataset");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--count", synth.count, "number of samples");
  synth_cmd->add_option("--size", synth.size, "image size HxW");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--beta", synth.beta, "attenuation per channel r,g,b");
  synth_cmd->add_option("--ambient", synth.ambient, "ambient light r,g,b");
  synth_cmd->add_option("--kind", synth.kind, "scene kind: ramp|boxes|spheres|constant|mixed");

  std::string train_config, train_resume;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", train_config, "config file")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");

  std::string eval_config, eval_ckpt, eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--config", eval_config, "config file")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();

  std::string infer_ckpt, infer_rgb, infer_out, infer_t;
  auto* infer_cmd = app.add_subcommand("infer", "predict a depth map for one image");
  infer_cmd->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--rgb", infer_rgb, "input PPM image")->required();
  infer_cmd->add_option("--out", infer_out, "output depth PGM")->required();
  infer_cmd->add_option("--transmission", infer_t, "also write the UDCP transmission map here");

  std::string gc_scope = "all";
  int gc_precision = 64;
  int gc_trials = 20;
  std::uint64_t gc_seed = 7;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--scope", gc_scope, "layer|encoder|decoder|full|all");
  gc_cmd->add_option("--precision", gc_precision, "32 or 64");
  gc_cmd->add_option("--trials", gc_trials, "random trials per check");
  gc_cmd->add_option("--seed", gc_seed, "rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*synth_cmd) return cli_detail::run_synth(synth);
    if (*train_cmd) {
      RunConfig cfg = RunConfig::parse_file(train_config);
      return cfg.precision == 64 ? cli_detail::run_train<double>(cfg, train_resume)
                                 : cli_detail::run_train<float>(cfg, train_resume);
    }
    if (*eval_cmd) {
      RunConfig cfg = RunConfig::parse_file(eval_config);
      return cfg.precision == 64 ? cli_detail::run_eval<double>(cfg, eval_ckpt, eval_data)
                                 : cli_detail::run_eval<float>(cfg, eval_ckpt, eval_data);
    }
    if (*infer_cmd) {
      CheckpointData ckpt = CheckpointData::load(infer_ckpt);
      if (!ckpt.has("config"))
        throw ParseError(infer_ckpt + ": checkpoint carries no embedded config");
      RunConfig cfg = RunConfig::parse_text(ckpt.text("config"));
      return cfg.precision == 64
                 ? cli_detail::run_infer<double>(cfg, ckpt, infer_rgb, infer_out, infer_t)
                 : cli_detail::run_infer<float>(cfg, ckpt, infer_rgb, infer_out, infer_t);
    }
    if (*gc_cmd) {
      if (gc_precision != 32 && gc_precision != 64)
        throw ConfigError("--precision: must be 32 or 64");
      return gc_precision == 64 ? cli_detail::run_gradcheck<double>(gc_scope, gc_seed, gc_trials)
                                : cli_detail::run_gradcheck<float>(gc_scope, gc_seed, gc_trials);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}

}  // namespace umono
