#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pivuq/kvconfig.hpp"
#include "pivuq/metrics.hpp"
#include "pivuq/synthgen.hpp"
#include "pivuq/unn.hpp"
#include "pivuq/uqensemble.hpp"

namespace pivuq {

// ---- key-value (de)serialization ------------------------------------------

SceneSpec scene_from_config(const KeyValueConfig& cfg, SceneSpec base = {});
AnalyticFlow flow_from_config(const KeyValueConfig& cfg, const SceneSpec& scene);
EstimatorConfig estimator_from_config(const KeyValueConfig& cfg, EstimatorConfig base = {});
KeyValueConfig to_config(const SceneSpec& scene, const AnalyticFlow& flow);
KeyValueConfig to_config(const EstimatorConfig& cfg);

// ---- experiments -----------------------------------------------------------

enum class Method { mm, mt, unn };
std::string to_string(Method m);
Method parse_method(const std::string& name);
std::vector<Method> parse_methods(const std::string& csv);

struct SceneEntry {
  std::string id;
  SceneSpec scene;
  AnalyticFlow flow;
};

/// Mixed analytic flows (uniform, rotation, shear, Lamb-Oseen vortex) with
/// seeded parameters, all within an 8 px displacement.
std::vector<SceneEntry> default_scenes(int count, std::uint64_t seed, int size = 128);

/// Solid-body rotation about the frame center with ~8 px displacement at the corners.
SceneEntry rotating_scene(std::uint64_t seed, int size = 128);

/// UNN training pairs: synthetic scenes (no Lamb-Oseen vortices) with
/// cross-correlation predictions as the network's flow input.
std::vector<TrainSample> build_training_set(int count, std::uint64_t seed, int size,
                                            const EstimatorConfig& estimator);

struct ExperimentSpec {
  std::vector<SceneEntry> scenes;
  std::vector<Method> methods{Method::mm, Method::mt};
  std::vector<double> noise_vars{0.0, 5.0, 10.0};
  std::vector<double> blur_sigmas{0.0, 2.5, 5.0};
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;

  EstimatorConfig base_estimator{};
  std::vector<EstimatorConfig> mm_configs = default_mm_configs();
  std::vector<RotationAngle> mt_angles = default_mt_angles();
  std::filesystem::path unn_model;
  double flow_scale = 10.0;

  double k_sigma = 2.0;
  int bins = 50;
  bool write_fields = true;

  void validate() const;
  std::string canonical() const;
};

struct CellRecord {
  std::string scene_id;
  Method method = Method::mm;
  std::string axis;  // "noise", "blur" or "clean"
  double level = 0.0;
  bool ok = false;
  std::string error;
  MetricsReport report;
  SparsificationCurve curve;
  double seconds = 0.0;
  std::vector<std::filesystem::path> artifacts;
};

struct TableRow {
  Method method;
  double level;
  MetricsReport mean;  // averaged over scenes whose cell succeeded
  int scenes = 0;
};

struct RunRecord {
  std::string spec_hash;
  std::vector<CellRecord> cells;
  std::vector<TableRow> noise_table;
  std::vector<TableRow> blur_table;
  std::vector<TableRow> clean_table;
  std::vector<std::filesystem::path> artifacts;
};

/// Runs every (scene x degradation x method) cell. Failed cells are recorded
/// and skipped. With a non-empty output_dir, writes
///   pairs/<scene>/  flows/<scene>/  unc/<scene>/  reports/
/// where reports/ holds one `<axis>_table.csv` per degradation axis, per-cell
/// metrics, sparsification curves and SVG plots.
RunRecord run_matrix(const ExperimentSpec& spec);

/// Header of the per-axis tables.
inline constexpr const char* kTableHeader = "method,level,coverage,cc,auc,mean_sigma,mean_epe";

std::string table_csv(const std::vector<TableRow>& rows);
std::string format_level(double level);

}  // namespace pivuq
