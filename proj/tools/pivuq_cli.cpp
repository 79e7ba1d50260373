// pivuq: synthetic PIV data, cross-correlation flow estimation, ensemble and
// network uncertainty, and the coverage / Spearman / sparsification metrics.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pivuq/harness.hpp"

namespace fs = std::filesystem;
using namespace pivuq;

namespace {

// Copies a flag into a config under `key` when the user actually passed it.
template <typename T>
void override_key(KeyValueConfig& cfg, const CLI::Option* opt, const std::string& key, const T& value) {
  if (opt->count() == 0) return;
  if constexpr (std::is_same_v<T, std::string>) {
    cfg.set(key, value);
  } else {
    std::ostringstream s;
    s.precision(17);
    s << value;
    cfg.set(key, s.str());
  }
}

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

struct EstimatorFlags {
  int window = 32;
  double overlap = 0.5;
  std::string peak_fit = "gaussian3";
  std::string correlation = "fft";
  CLI::Option* o_window = nullptr;
  CLI::Option* o_overlap = nullptr;
  CLI::Option* o_peak = nullptr;
  CLI::Option* o_corr = nullptr;

  void attach(CLI::App* app) {
    o_window = app->add_option("--window", window, "Interrogation window size (px, even)");
    o_overlap = app->add_option("--overlap", overlap, "Window overlap fraction [0, 0.75]");
    o_peak = app->add_option("--peak-fit", peak_fit, "gaussian3 | parabolic3");
    o_corr = app->add_option("--correlation", correlation, "fft | direct");
  }

  EstimatorConfig resolve(KeyValueConfig cfg) const {
    override_key(cfg, o_window, "window_size", window);
    override_key(cfg, o_overlap, "overlap", overlap);
    override_key(cfg, o_peak, "peak_fit", peak_fit);
    override_key(cfg, o_corr, "correlation", correlation);
    return estimator_from_config(cfg);
  }
};

ImagePair load_pair(const std::string& a, const std::string& b) { return ImagePair(read_pgm(a), read_pgm(b)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty quantification toolkit for cross-correlation PIV"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // generate ------------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Render a synthetic particle image pair with ground truth");
  std::string gen_config, gen_out, flow_kind = "uniform";
  double u0 = 0, v0 = 0, omega = 0, rate = 0, circulation = 0, core_radius = 8, cx = 0, cy = 0, max_disp = 10;
  int width = 128, height = 128;
  double density = 0.03, diameter = 2.5, peak = 220, noise_var = 0, blur_sigma = 0;
  std::uint64_t seed = 0, noise_seed = 0;
  gen->add_option("--config", gen_config, "Scene config (key = value)");
  auto* o_flow = gen->add_option("--flow", flow_kind, "uniform | solid_rotation | shear | lamb_oseen");
  auto* o_u0 = gen->add_option("--u0", u0, "Uniform flow u (px/frame)");
  auto* o_v0 = gen->add_option("--v0", v0, "Uniform flow v (px/frame)");
  auto* o_omega = gen->add_option("--omega", omega, "Rotation rate (rad/frame)");
  auto* o_rate = gen->add_option("--rate", rate, "Shear rate (1/frame)");
  auto* o_circ = gen->add_option("--circulation", circulation, "Vortex circulation (px^2/frame)");
  auto* o_core = gen->add_option("--core-radius", core_radius, "Vortex core radius (px)");
  auto* o_cx = gen->add_option("--cx", cx, "Flow center x (px)");
  auto* o_cy = gen->add_option("--cy", cy, "Flow center y (px)");
  auto* o_maxd = gen->add_option("--max-displacement", max_disp, "Declared displacement bound (px, <= 10)");
  auto* o_w = gen->add_option("--width", width, "Image width (px)");
  auto* o_h = gen->add_option("--height", height, "Image height (px)");
  auto* o_dens = gen->add_option("--density", density, "Particles per pixel");
  auto* o_diam = gen->add_option("--diameter", diameter, "Particle diameter (px)");
  auto* o_peak = gen->add_option("--peak", peak, "Particle peak intensity");
  auto* o_seed = gen->add_option("--seed", seed, "Particle placement seed");
  gen->add_option("--noise-var", noise_var, "Additive Gaussian noise variance (intensity^2)");
  gen->add_option("--blur-sigma", blur_sigma, "Gaussian blur sigma (px)");
  gen->add_option("--noise-seed", noise_seed, "Noise seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // estimate ------------------------------------------------------------------
  auto* est = app.add_subcommand("estimate", "Cross-correlation flow estimate of an image pair");
  std::string est_a, est_b, est_config, est_out;
  EstimatorFlags est_flags;
  est->add_option("--a", est_a, "Frame A (PGM)")->required();
  est->add_option("--b", est_b, "Frame B (PGM)")->required();
  est->add_option("--config", est_config, "Estimator config (key = value)");
  est_flags.attach(est);
  est->add_option("--out", est_out, "Output .flo")->required();

  // uq ------------------------------------------------------------------------
  auto* uq = app.add_subcommand("uq", "Flow plus per-pixel uncertainty (mm | mt | unn)");
  std::string uq_method, uq_a, uq_b, uq_config, uq_angles = "0,90,180,270", uq_model, uq_out;
  double uq_scale = 10.0;
  EstimatorFlags uq_flags;
  uq->add_option("--method", uq_method, "mm | mt | unn")->required();
  uq->add_option("--a", uq_a, "Frame A (PGM)")->required();
  uq->add_option("--b", uq_b, "Frame B (PGM)")->required();
  uq->add_option("--config", uq_config, "Base estimator config (key = value)");
  uq_flags.attach(uq);
  uq->add_option("--angles", uq_angles, "Rotation angles for mt, comma separated");
  uq->add_option("--model", uq_model, "UNN weights for unn");
  uq->add_option("--flow-scale", uq_scale, "Flow normalization used by the network (px)");
  uq->add_option("--out", uq_out, "Output directory (flows/<method>.flo, unc/<method>.unc)")->required();

  // train-unn -------------------------------------------------------------------
  auto* tr = app.add_subcommand("train-unn", "Train the uncertainty network on synthetic scenes");
  std::string tr_config, tr_out, tr_history;
  int tr_scenes = 24, tr_size = 128;
  TrainConfig tcfg;
  tcfg.steps = 1500;
  tcfg.learning_rate = 3e-3;
  tcfg.crop_size = 32;
  EstimatorFlags tr_flags;
  tr->add_option("--config", tr_config, "Estimator config (key = value)");
  tr_flags.attach(tr);
  tr->add_option("--scenes", tr_scenes, "Number of training scenes");
  tr->add_option("--size", tr_size, "Scene size (px)");
  tr->add_option("--steps", tcfg.steps, "Optimizer steps");
  tr->add_option("--batch", tcfg.batch, "Crops per step");
  tr->add_option("--lr", tcfg.learning_rate, "Learning rate");
  tr->add_option("--crop", tcfg.crop_size, "Crop size (px)");
  tr->add_option("--flow-scale", tcfg.flow_scale, "Flow normalization (px)");
  tr->add_option("--seed", tcfg.seed, "Seed for scenes, initialization and sampling");
  tr->add_option("--history", tr_history, "Write the loss history as CSV");
  tr->add_option("--out", tr_out, "Output model file")->required();

  // evaluate ------------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "Coverage, Spearman CC and sparsification AUC");
  std::string ev_pred, ev_gt, ev_unc, ev_out, ev_curve, ev_svg;
  double ev_k = 2.0;
  int ev_bins = 50;
  ev->add_option("--pred", ev_pred, "Predicted flow (.flo)")->required();
  ev->add_option("--gt", ev_gt, "Ground truth flow (.flo)")->required();
  ev->add_option("--unc", ev_unc, "Uncertainty (.unc)")->required();
  ev->add_option("--k", ev_k, "Coverage multiplier");
  ev->add_option("--bins", ev_bins, "Sparsification fractions");
  ev->add_option("--out", ev_out, "Write the JSON report here instead of stdout");
  ev->add_option("--curve", ev_curve, "Write the sparsification curve as CSV");
  ev->add_option("--svg", ev_svg, "Write the sparsification plot as SVG");

  // report --------------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Run the degradation matrix and write comparison tables");
  std::string rep_config, rep_out, rep_methods = "mm,mt", rep_noise = "0,5,10", rep_blur = "0,2.5,5", rep_model;
  int rep_scenes = 10, rep_size = 128;
  std::uint64_t rep_seed = 0;
  double rep_scale = 10.0;
  bool rep_rotating = false, rep_no_fields = false;
  EstimatorFlags rep_flags;
  rep->add_option("--config", rep_config, "Experiment config (key = value)");
  auto* o_rscenes = rep->add_option("--scenes", rep_scenes, "Number of synthetic scenes");
  auto* o_rsize = rep->add_option("--size", rep_size, "Scene size (px)");
  auto* o_rmethods = rep->add_option("--methods", rep_methods, "Comma-separated subset of mm,mt,unn");
  auto* o_rnoise = rep->add_option("--noise", rep_noise, "Noise variances (empty to skip the axis)");
  auto* o_rblur = rep->add_option("--blur", rep_blur, "Blur sigmas (empty to skip the axis)");
  auto* o_rseed = rep->add_option("--seed", rep_seed, "Experiment seed");
  auto* o_rmodel = rep->add_option("--model", rep_model, "UNN weights (required for unn)");
  auto* o_rscale = rep->add_option("--flow-scale", rep_scale, "Flow normalization for unn (px)");
  auto* o_rrot = rep->add_flag("--rotating", rep_rotating, "Append the rotating-flow scene");
  rep->add_flag("--no-fields", rep_no_fields, "Skip per-cell .pgm/.flo/.unc output");
  rep_flags.attach(rep);
  rep->add_option("--out", rep_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error:usage:" << e.what() << "\n";
    return 1;
  }

  try {
    if (*gen) {
      KeyValueConfig cfg = load_config(gen_config);
      override_key(cfg, o_flow, "flow", flow_kind);
      override_key(cfg, o_u0, "u0", u0);
      override_key(cfg, o_v0, "v0", v0);
      override_key(cfg, o_omega, "omega", omega);
      override_key(cfg, o_rate, "rate", rate);
      override_key(cfg, o_circ, "circulation", circulation);
      override_key(cfg, o_core, "core_radius", core_radius);
      override_key(cfg, o_cx, "cx", cx);
      override_key(cfg, o_cy, "cy", cy);
      override_key(cfg, o_maxd, "max_displacement", max_disp);
      override_key(cfg, o_w, "width", width);
      override_key(cfg, o_h, "height", height);
      override_key(cfg, o_dens, "particle_density", density);
      override_key(cfg, o_diam, "particle_diameter", diameter);
      override_key(cfg, o_peak, "peak_intensity", peak);
      override_key(cfg, o_seed, "seed", seed);
      const SceneSpec scene = scene_from_config(cfg);
      const AnalyticFlow flow = flow_from_config(cfg, scene);
      const DegradationSpec deg{noise_var, blur_sigma, noise_seed};
      deg.validate();

      auto g = generate_pair(scene, flow);
      const ImagePair pair = degrade(g.pair, deg);
      const fs::path out(gen_out);
      fs::create_directories(out / "pairs");
      fs::create_directories(out / "flows");
      write_pgm(pair.frame_a, out / "pairs" / "frame_a.pgm");
      write_pgm(pair.frame_b, out / "pairs" / "frame_b.pgm");
      write_flo(g.ground_truth, out / "flows" / "gt.flo");
      std::ofstream(out / "scene.cfg") << to_config(scene, flow).dump();
      return 0;
    }

    if (*est) {
      const EstimatorConfig cfg = est_flags.resolve(load_config(est_config));
      const FlowField flow = estimate(load_pair(est_a, est_b), cfg);
      ensure_parent(est_out);
      write_flo(flow, est_out);
      return 0;
    }

    if (*uq) {
      const Method method = parse_method(uq_method);
      const EstimatorConfig base = uq_flags.resolve(load_config(uq_config));
      const ImagePair pair = load_pair(uq_a, uq_b);
      FlowField flow;
      UncertaintyField unc;
      if (method == Method::mm) {
        auto r = mm_estimate(pair, default_mm_configs());
        flow = std::move(r.mean_flow);
        unc = std::move(r.uncertainty);
      } else if (method == Method::mt) {
        const auto angles = parse_angles(uq_angles);
        auto r = mt_estimate(pair, base, angles);
        flow = std::move(r.mean_flow);
        unc = std::move(r.uncertainty);
      } else {
        if (uq_model.empty()) throw ParameterError("--model is required for --method unn");
        const UnnModel model = UnnModel::load(uq_model);
        flow = estimate(pair, base);
        unc = forward(model, pair, flow, uq_scale);
      }
      const fs::path out(uq_out);
      fs::create_directories(out / "flows");
      fs::create_directories(out / "unc");
      write_flo(flow, out / "flows" / (uq_method + ".flo"));
      write_unc(unc, out / "unc" / (uq_method + ".unc"));
      return 0;
    }

    if (*tr) {
      const EstimatorConfig base = tr_flags.resolve(load_config(tr_config));
      const auto dataset = build_training_set(tr_scenes, tcfg.seed, tr_size, base);
      const TrainResult result = train(dataset, tcfg);
      ensure_parent(tr_out);
      result.model.save(tr_out);
      if (!tr_history.empty()) {
        ensure_parent(tr_history);
        std::ofstream h(tr_history);
        h << "step,loss\n";
        char line[64];
        for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
          std::snprintf(line, sizeof line, "%zu,%.9g\n", i, result.loss_history[i]);
          h << line;
        }
      }
      std::fprintf(stderr, "trained %d steps, final minibatch loss %.4f\n", tcfg.steps,
                   result.loss_history.empty() ? 0.0 : result.loss_history.back());
      return 0;
    }

    if (*ev) {
      const FlowField pred = read_flo(ev_pred);
      const FlowField gt = read_flo(ev_gt);
      const UncertaintyField unc = read_unc(ev_unc);
      const Evaluation result = evaluate(pred, gt, unc, ev_k, ev_bins);
      const std::string json = to_json(result.report) + "\n";
      if (ev_out.empty()) {
        std::cout << json;
      } else {
        ensure_parent(ev_out);
        std::ofstream(ev_out) << json;
      }
      if (!ev_curve.empty()) {
        ensure_parent(ev_curve);
        write_curve_csv(result.curve, ev_curve);
      }
      if (!ev_svg.empty()) {
        ensure_parent(ev_svg);
        write_sparsification_svg(result.curve, fs::path(ev_pred).stem().string(), ev_svg);
      }
      return 0;
    }

    if (*rep) {
      KeyValueConfig cfg = load_config(rep_config);
      override_key(cfg, o_rscenes, "scenes", rep_scenes);
      override_key(cfg, o_rsize, "size", rep_size);
      override_key(cfg, o_rmethods, "methods", rep_methods);
      override_key(cfg, o_rnoise, "noise_vars", rep_noise);
      override_key(cfg, o_rblur, "blur_sigmas", rep_blur);
      override_key(cfg, o_rseed, "seed", rep_seed);
      override_key(cfg, o_rmodel, "model", rep_model);
      override_key(cfg, o_rscale, "flow_scale", rep_scale);
      if (o_rrot->count()) cfg.set("rotating", "true");

      ExperimentSpec spec;
      spec.seed = cfg.get_u64("seed", 0);
      const int size = cfg.get_int("size", 128);
      spec.scenes = default_scenes(cfg.get_int("scenes", 10), spec.seed, size);
      if (cfg.get_string("rotating", "false") == "true") spec.scenes.push_back(rotating_scene(spec.seed, size));
      spec.methods = parse_methods(cfg.get_string("methods", "mm,mt"));
      spec.noise_vars = cfg.get_doubles("noise_vars", {0.0, 5.0, 10.0});
      spec.blur_sigmas = cfg.get_doubles("blur_sigmas", {0.0, 2.5, 5.0});
      spec.unn_model = cfg.get_string("model", "");
      spec.flow_scale = cfg.get_double("flow_scale", 10.0);
      spec.k_sigma = cfg.get_double("k_sigma", 2.0);
      spec.bins = cfg.get_int("bins", 50);
      spec.base_estimator = rep_flags.resolve(cfg);
      spec.write_fields = !rep_no_fields;
      spec.output_dir = rep_out;

      const RunRecord record = run_matrix(spec);
      if (!record.noise_table.empty()) std::cout << "# noise\n" << table_csv(record.noise_table);
      if (!record.blur_table.empty()) std::cout << "# blur\n" << table_csv(record.blur_table);
      if (!record.clean_table.empty()) std::cout << "# clean\n" << table_csv(record.clean_table);
      int failed = 0;
      for (const auto& c : record.cells) failed += c.ok ? 0 : 1;
      if (failed > 0) std::fprintf(stderr, "%d of %zu cells failed, see reports/run.json\n", failed, record.cells.size());
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error:" << e.category() << ":" << e.what() << "\n";
    return e.is_validation() ? 1 : 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error:io:" << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error:internal:" << e.what() << "\n";
    return 2;
  }
  return 0;
}
