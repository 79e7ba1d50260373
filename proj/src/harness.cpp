#include "pivuq/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "pivuq/parallel.hpp"
#include "pivuq/rng.hpp"

namespace pivuq {

namespace fs = std::filesystem;

// ---- key-value (de)serialization ------------------------------------------

namespace {

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

SceneSpec scene_from_config(const KeyValueConfig& cfg, SceneSpec base) {
  base.width = cfg.get_int("width", base.width);
  base.height = cfg.get_int("height", base.height);
  base.particle_density = cfg.get_double("particle_density", base.particle_density);
  base.particle_diameter = cfg.get_double("particle_diameter", base.particle_diameter);
  base.peak_intensity = cfg.get_double("peak_intensity", base.peak_intensity);
  base.seed = cfg.get_u64("seed", base.seed);
  return base;
}

AnalyticFlow flow_from_config(const KeyValueConfig& cfg, const SceneSpec& scene) {
  const FlowKind kind = parse_flow_kind(cfg.get_string("flow", "uniform"));
  const double cx = cfg.get_double("cx", (scene.width - 1) / 2.0);
  const double cy = cfg.get_double("cy", (scene.height - 1) / 2.0);
  AnalyticFlow f;
  switch (kind) {
    case FlowKind::uniform:
      f = AnalyticFlow::uniform(cfg.get_double("u0", 0.0), cfg.get_double("v0", 0.0));
      break;
    case FlowKind::solid_rotation:
      f = AnalyticFlow::solid_rotation(cfg.get_double("omega", 0.0), cx, cy);
      break;
    case FlowKind::shear:
      f = AnalyticFlow::shear(cfg.get_double("rate", 0.0), cy);
      break;
    case FlowKind::lamb_oseen:
      f = AnalyticFlow::lamb_oseen(cfg.get_double("circulation", 0.0), cfg.get_double("core_radius", 8.0), cx, cy);
      break;
  }
  f.max_displacement = cfg.get_double("max_displacement", f.max_displacement);
  f.validate();
  return f;
}

EstimatorConfig estimator_from_config(const KeyValueConfig& cfg, EstimatorConfig base) {
  base.window_size = cfg.get_int("window_size", base.window_size);
  base.overlap = cfg.get_double("overlap", base.overlap);
  if (auto v = cfg.get("peak_fit")) base.peak_fit = parse_peak_fit(*v);
  if (auto v = cfg.get("correlation")) base.correlation = parse_correlation_mode(*v);
  base.instance_id = cfg.get_int("instance_id", base.instance_id);
  base.validate();
  return base;
}

KeyValueConfig to_config(const SceneSpec& scene, const AnalyticFlow& flow) {
  KeyValueConfig c;
  c.set("width", std::to_string(scene.width));
  c.set("height", std::to_string(scene.height));
  c.set("particle_density", fmt_double(scene.particle_density));
  c.set("particle_diameter", fmt_double(scene.particle_diameter));
  c.set("peak_intensity", fmt_double(scene.peak_intensity));
  c.set("seed", std::to_string(scene.seed));
  c.set("flow", to_string(flow.kind));
  c.set("max_displacement", fmt_double(flow.max_displacement));
  switch (flow.kind) {
    case FlowKind::uniform:
      c.set("u0", fmt_double(flow.u0));
      c.set("v0", fmt_double(flow.v0));
      break;
    case FlowKind::solid_rotation:
      c.set("omega", fmt_double(flow.omega));
      c.set("cx", fmt_double(flow.cx));
      c.set("cy", fmt_double(flow.cy));
      break;
    case FlowKind::shear:
      c.set("rate", fmt_double(flow.rate));
      c.set("cy", fmt_double(flow.cy));
      break;
    case FlowKind::lamb_oseen:
      c.set("circulation", fmt_double(flow.circulation));
      c.set("core_radius", fmt_double(flow.core_radius));
      c.set("cx", fmt_double(flow.cx));
      c.set("cy", fmt_double(flow.cy));
      break;
  }
  return c;
}

KeyValueConfig to_config(const EstimatorConfig& cfg) {
  KeyValueConfig c;
  c.set("window_size", std::to_string(cfg.window_size));
  c.set("overlap", fmt_double(cfg.overlap));
  c.set("peak_fit", to_string(cfg.peak_fit));
  c.set("correlation", to_string(cfg.correlation));
  c.set("instance_id", std::to_string(cfg.instance_id));
  return c;
}

// ---- scenes ----------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::mm: return "mm";
    case Method::mt: return "mt";
    case Method::unn: return "unn";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "mm") return Method::mm;
  if (name == "mt") return Method::mt;
  if (name == "unn") return Method::unn;
  throw ParameterError("unknown method '" + name + "'");
}

std::vector<Method> parse_methods(const std::string& csv) {
  std::vector<Method> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    out.push_back(parse_method(first == std::string::npos ? "" : item.substr(first, last - first + 1)));
  }
  if (out.empty()) throw ParameterError("method list is empty");
  return out;
}

namespace {

// Largest speed of a Lamb-Oseen vortex is 0.6381 * circulation / (2 pi r_c).
constexpr double kLambOseenPeak = 0.638;

double half_diagonal(int size) { return std::sqrt(2.0) * (size - 1) / 2.0; }

AnalyticFlow random_flow(FlowKind kind, Rng& rng, int size) {
  const double c = (size - 1) / 2.0;
  switch (kind) {
    case FlowKind::uniform: {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double mag = rng.uniform(1.0, 6.0);
      return AnalyticFlow::uniform(mag * std::cos(angle), mag * std::sin(angle));
    }
    case FlowKind::solid_rotation: {
      const double edge = rng.uniform(4.0, 8.0);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      return AnalyticFlow::solid_rotation(sign * edge / half_diagonal(size), c + rng.uniform(-8, 8),
                                          c + rng.uniform(-8, 8));
    }
    case FlowKind::shear: {
      const double edge = rng.uniform(3.0, 7.0);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      return AnalyticFlow::shear(sign * edge / (c + 8.0), c + rng.uniform(-8, 8));
    }
    case FlowKind::lamb_oseen: {
      const double core = rng.uniform(0.06, 0.12) * size;
      const double peak = rng.uniform(3.0, 7.0);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const double circulation = sign * peak * 2.0 * std::numbers::pi * core / kLambOseenPeak;
      return AnalyticFlow::lamb_oseen(circulation, core, c + rng.uniform(-10, 10), c + rng.uniform(-10, 10));
    }
  }
  return {};
}

}  // namespace

std::vector<SceneEntry> default_scenes(int count, std::uint64_t seed, int size) {
  if (count <= 0) throw ParameterError("scene count must be positive");
  static constexpr FlowKind kCycle[] = {FlowKind::uniform, FlowKind::solid_rotation, FlowKind::shear,
                                        FlowKind::lamb_oseen};
  Rng rng(mix_seed(seed, 100));
  std::vector<SceneEntry> out;
  for (int i = 0; i < count; ++i) {
    SceneEntry e;
    e.scene.width = size;
    e.scene.height = size;
    e.scene.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    e.flow = random_flow(kCycle[i % 4], rng, size);
    char id[64];
    std::snprintf(id, sizeof id, "s%02d_%s", i, to_string(e.flow.kind).c_str());
    e.id = id;
    out.push_back(e);
  }
  return out;
}

SceneEntry rotating_scene(std::uint64_t seed, int size) {
  SceneEntry e;
  e.id = "rotating";
  e.scene.width = size;
  e.scene.height = size;
  e.scene.seed = seed;
  const double c = (size - 1) / 2.0;
  e.flow = AnalyticFlow::solid_rotation(8.0 / half_diagonal(size), c, c);
  return e;
}

std::vector<TrainSample> build_training_set(int count, std::uint64_t seed, int size,
                                            const EstimatorConfig& estimator) {
  if (count <= 0) throw ParameterError("training set size must be positive");
  static constexpr FlowKind kKinds[] = {FlowKind::uniform, FlowKind::solid_rotation, FlowKind::shear};
  Rng rng(mix_seed(seed, 200));
  std::vector<TrainSample> out;
  for (int i = 0; i < count; ++i) {
    SceneSpec scene;
    scene.width = size;
    scene.height = size;
    scene.seed = mix_seed(seed, 300 + static_cast<std::uint64_t>(i));
    const AnalyticFlow flow = random_flow(kKinds[i % 3], rng, size);
    auto gen = generate_pair(scene, flow);
    FlowField pred = estimate(gen.pair, estimator);
    out.push_back({std::move(gen.pair), std::move(pred), std::move(gen.ground_truth)});
  }
  return out;
}

// ---- run matrix --------------------------------------------------------------

void ExperimentSpec::validate() const {
  if (scenes.empty()) throw ParameterError("experiment needs at least one scene");
  if (methods.empty()) throw ParameterError("experiment needs at least one method");
  for (double v : noise_vars) DegradationSpec{v, 0.0, 0}.validate();
  for (double s : blur_sigmas) DegradationSpec{0.0, s, 0}.validate();
  for (const auto& e : scenes) {
    e.scene.validate();
    e.flow.validate();
  }
  base_estimator.validate();
  for (const auto& c : mm_configs) c.validate();
  for (Method m : methods) {
    if (m == Method::unn && unn_model.empty()) throw ParameterError("method unn needs a model file");
    if (m == Method::mm && mm_configs.size() < 2) throw ParameterError("mm needs at least two configs");
    if (m == Method::mt && mt_angles.size() < 2) throw ParameterError("mt needs at least two angles");
  }
  if (!(k_sigma > 0.0)) throw ParameterError("k_sigma must be positive");
}

std::string ExperimentSpec::canonical() const {
  std::ostringstream s;
  s << "seed=" << seed << ";k=" << fmt_double(k_sigma) << ";bins=" << bins << ";scale=" << fmt_double(flow_scale)
    << ";";
  for (const auto& e : scenes) s << "scene[" << e.id << "]{" << to_config(e.scene, e.flow).dump() << "}";
  for (Method m : methods) s << "method=" << to_string(m) << ";";
  for (double v : noise_vars) s << "noise=" << fmt_double(v) << ";";
  for (double v : blur_sigmas) s << "blur=" << fmt_double(v) << ";";
  s << "base{" << to_config(base_estimator).dump() << "}";
  for (const auto& c : mm_configs) s << "mm{" << to_config(c).dump() << "}";
  for (auto a : mt_angles) s << "angle=" << static_cast<int>(a) << ";";
  s << "model=" << unn_model.generic_string();
  return s.str();
}

std::string format_level(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", level);
  return buf;
}

std::string table_csv(const std::vector<TableRow>& rows) {
  std::string out = std::string(kTableHeader) + "\n";
  char line[256];
  for (const auto& r : rows) {
    if (r.scenes == 0) {
      std::snprintf(line, sizeof line, "%s,%s,nan,nan,nan,nan,nan\n", to_string(r.method).c_str(),
                    format_level(r.level).c_str());
    } else {
      std::snprintf(line, sizeof line, "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", to_string(r.method).c_str(),
                    format_level(r.level).c_str(), r.mean.coverage, r.mean.cc, r.mean.auc, r.mean.mean_sigma,
                    r.mean.mean_epe);
    }
    out += line;
  }
  return out;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct AxisLevel {
  std::string axis;
  double level;
  DegradationSpec degradation;
};

std::vector<AxisLevel> axis_levels(const ExperimentSpec& spec) {
  std::vector<AxisLevel> out;
  for (double v : spec.noise_vars) out.push_back({"noise", v, {v, 0.0, 0}});
  for (double s : spec.blur_sigmas) out.push_back({"blur", s, {0.0, s, 0}});
  if (out.empty()) out.push_back({"clean", 0.0, {}});
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

std::vector<TableRow> build_table(const std::vector<CellRecord>& cells, const ExperimentSpec& spec,
                                  const std::string& axis, const std::vector<double>& levels) {
  std::vector<TableRow> rows;
  for (Method m : spec.methods) {
    for (double level : levels) {
      TableRow row{m, level, {}, 0};
      row.mean.k_sigma = spec.k_sigma;
      for (const auto& c : cells) {
        if (!c.ok || c.method != m || c.axis != axis || c.level != level) continue;
        row.mean.coverage += c.report.coverage;
        row.mean.coverage_u += c.report.coverage_u;
        row.mean.coverage_v += c.report.coverage_v;
        row.mean.cc += c.report.cc;
        row.mean.auc += c.report.auc;
        row.mean.oracle_auc += c.report.oracle_auc;
        row.mean.mean_sigma += c.report.mean_sigma;
        row.mean.mean_epe += c.report.mean_epe;
        row.mean.n_points += c.report.n_points;
        ++row.scenes;
      }
      if (row.scenes > 0) {
        const double n = row.scenes;
        for (double* f : {&row.mean.coverage, &row.mean.coverage_u, &row.mean.coverage_v, &row.mean.cc,
                          &row.mean.auc, &row.mean.oracle_auc, &row.mean.mean_sigma, &row.mean.mean_epe}) {
          *f /= n;
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace

RunRecord run_matrix(const ExperimentSpec& spec) {
  spec.validate();
  RunRecord record;
  {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(spec.canonical())));
    record.spec_hash = hex;
  }

  const bool emit = !spec.output_dir.empty();
  if (emit) {
    for (const char* sub : {"pairs", "flows", "unc", "reports", "reports/curves"}) {
      fs::create_directories(spec.output_dir / sub);
    }
  }

  UnnModel model;
  bool has_unn = false;
  for (Method m : spec.methods) has_unn = has_unn || m == Method::unn;
  if (has_unn) model = UnnModel::load(spec.unn_model);

  // Clean pairs and ground truth, once per scene.
  std::vector<GeneratedPair> generated(spec.scenes.size());
  std::vector<std::string> scene_errors(spec.scenes.size());
  for (std::size_t s = 0; s < spec.scenes.size(); ++s) {
    try {
      generated[s] = generate_pair(spec.scenes[s].scene, spec.scenes[s].flow);
      if (emit) {
        fs::create_directories(spec.output_dir / "flows" / spec.scenes[s].id);
        write_flo(generated[s].ground_truth, spec.output_dir / "flows" / spec.scenes[s].id / "gt.flo");
      }
    } catch (const Error& e) {
      scene_errors[s] = e.category() + ": " + e.what();
    }
  }

  const auto levels = axis_levels(spec);
  const std::size_t per_scene = levels.size();
  const std::size_t job_count = spec.scenes.size() * per_scene;
  std::vector<std::vector<CellRecord>> job_cells(job_count);

  parallel_for(job_count, [&](std::size_t j) {
    const std::size_t s = j / per_scene;
    const std::size_t l = j % per_scene;
    const auto& entry = spec.scenes[s];
    const auto& lv = levels[l];
    const std::string tag = lv.axis + "-" + format_level(lv.level);
    auto& out = job_cells[j];

    auto fail_all = [&](const std::string& msg) {
      for (Method m : spec.methods) {
        CellRecord c;
        c.scene_id = entry.id;
        c.method = m;
        c.axis = lv.axis;
        c.level = lv.level;
        c.error = msg;
        out.push_back(std::move(c));
      }
    };
    if (!scene_errors[s].empty()) {
      fail_all(scene_errors[s]);
      return;
    }

    DegradationSpec deg = lv.degradation;
    deg.noise_seed = mix_seed(spec.seed, 1000 + s);
    ImagePair pair;
    try {
      pair = degrade(generated[s].pair, deg);
      if (emit) {
        const fs::path dir = spec.output_dir / "pairs" / entry.id;
        fs::create_directories(dir);
        write_pgm(pair.frame_a, dir / (tag + "_a.pgm"));
        write_pgm(pair.frame_b, dir / (tag + "_b.pgm"));
      }
    } catch (const Error& e) {
      fail_all(e.category() + ": " + e.what());
      return;
    }
    const FlowField& gt = generated[s].ground_truth;

    for (Method m : spec.methods) {
      CellRecord c;
      c.scene_id = entry.id;
      c.method = m;
      c.axis = lv.axis;
      c.level = lv.level;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        FlowField flow;
        UncertaintyField unc;
        switch (m) {
          case Method::mm: {
            auto r = mm_estimate(pair, spec.mm_configs);
            flow = std::move(r.mean_flow);
            unc = std::move(r.uncertainty);
            break;
          }
          case Method::mt: {
            auto r = mt_estimate(pair, spec.base_estimator, spec.mt_angles);
            flow = std::move(r.mean_flow);
            unc = std::move(r.uncertainty);
            break;
          }
          case Method::unn: {
            flow = estimate(pair, spec.base_estimator);
            unc = forward(model, pair, flow, spec.flow_scale);
            break;
          }
        }
        auto ev = evaluate(flow, gt, unc, spec.k_sigma, spec.bins);
        c.report = ev.report;
        c.curve = std::move(ev.curve);
        c.ok = true;
        if (emit) {
          const std::string stem = tag + "_" + to_string(m);
          const fs::path fdir = spec.output_dir / "flows" / entry.id;
          const fs::path udir = spec.output_dir / "unc" / entry.id;
          fs::create_directories(fdir);
          fs::create_directories(udir);
          write_flo(flow, fdir / (stem + ".flo"));
          write_unc(unc, udir / (stem + ".unc"));
          const fs::path curve = spec.output_dir / "reports" / "curves" / (entry.id + "_" + stem + ".csv");
          write_curve_csv(c.curve, curve);
          c.artifacts = {fdir / (stem + ".flo"), udir / (stem + ".unc"), curve};
        }
      } catch (const Error& e) {
        c.ok = false;
        c.error = e.category() + ": " + e.what();
      }
      c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.push_back(std::move(c));
    }
  });

  // Deterministic merge ordered by (scene, method, level).
  for (std::size_t s = 0; s < spec.scenes.size(); ++s) {
    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
      for (std::size_t l = 0; l < per_scene; ++l) record.cells.push_back(job_cells[s * per_scene + l][mi]);
    }
  }

  if (!spec.noise_vars.empty()) record.noise_table = build_table(record.cells, spec, "noise", spec.noise_vars);
  if (!spec.blur_sigmas.empty()) record.blur_table = build_table(record.cells, spec, "blur", spec.blur_sigmas);
  if (spec.noise_vars.empty() && spec.blur_sigmas.empty()) {
    record.clean_table = build_table(record.cells, spec, "clean", {0.0});
  }

  if (emit) {
    const fs::path rep = spec.output_dir / "reports";
    auto emit_table = [&](const std::vector<TableRow>& rows, const std::string& name) {
      if (rows.empty()) return;
      write_text(rep / name, table_csv(rows));
      record.artifacts.push_back(rep / name);
    };
    emit_table(record.noise_table, "noise_table.csv");
    emit_table(record.blur_table, "blur_table.csv");
    emit_table(record.clean_table, "clean_table.csv");

    std::string cells_csv =
        "scene,axis,level,method,ok,coverage,coverage_u,coverage_v,cc,auc,oracle_auc,mean_sigma,mean_epe\n";
    char line[512];
    for (const auto& c : record.cells) {
      std::snprintf(line, sizeof line, "%s,%s,%s,%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    c.scene_id.c_str(), c.axis.c_str(), format_level(c.level).c_str(), to_string(c.method).c_str(),
                    c.ok ? 1 : 0, c.report.coverage, c.report.coverage_u, c.report.coverage_v, c.report.cc,
                    c.report.auc, c.report.oracle_auc, c.report.mean_sigma, c.report.mean_epe);
      cells_csv += line;
    }
    write_text(rep / "cells.csv", cells_csv);
    record.artifacts.push_back(rep / "cells.csv");

    // One sparsification plot per scene for the first degradation level,
    // every method against the oracle.
    const auto& first = levels.front();
    for (const auto& entry : spec.scenes) {
      std::vector<CurveSeries> series;
      const SparsificationCurve* oracle = nullptr;
      for (const auto& c : record.cells) {
        if (c.scene_id != entry.id || c.axis != first.axis || c.level != first.level || !c.ok) continue;
        series.push_back({to_string(c.method), c.curve.fractions, c.curve.normalized_error});
        oracle = &c.curve;
      }
      if (!oracle) continue;
      series.push_back({"oracle", oracle->fractions, oracle->oracle_error});
      const fs::path svg = rep / ("sparsification_" + entry.id + ".svg");
      write_text(svg, sparsification_svg(series, entry.id + " (" + first.axis + " " + format_level(first.level) + ")"));
      record.artifacts.push_back(svg);
    }

    nlohmann::ordered_json j;
    j["spec_hash"] = record.spec_hash;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : record.cells) {
      nlohmann::ordered_json jc;
      jc["scene"] = c.scene_id;
      jc["method"] = to_string(c.method);
      jc["axis"] = c.axis;
      jc["level"] = c.level;
      jc["ok"] = c.ok;
      if (!c.ok) jc["error"] = c.error;
      jc["seconds"] = c.seconds;
      std::vector<std::string> paths;
      for (const auto& p : c.artifacts) paths.push_back(p.generic_string());
      jc["artifacts"] = paths;
      j["cells"].push_back(jc);
    }
    write_text(rep / "run.json", j.dump(2) + "\n");
    record.artifacts.push_back(rep / "run.json");
  }
  return record;
}

}  // namespace pivuq
