#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pivuq/flowdata.hpp"

namespace pivuq {

/// Fraction of (pixel, component) pairs with |e| < k * sigma, u and v pooled.
double coverage(const ErrorField& err, const UncertaintyField& unc, double k = 2.0);

struct ComponentCoverage {
  double u;
  double v;
};
ComponentCoverage coverage_per_component(const ErrorField& err, const UncertaintyField& unc, double k = 2.0);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rho as the Pearson correlation of average ranks.
/// Throws DegenerateInputError if either side has zero rank variance.
double spearman_cc(std::span<const double> err_mag, std::span<const double> unc_score);

/// Per-pixel score used to rank pixels for sparsification: sigma_u * sigma_v.
Grid<double> uncertainty_score(const UncertaintyField& unc);

struct SparsificationCurve {
  std::vector<double> fractions;         // ascending, last is 1
  std::vector<double> normalized_error;  // mean kept epe / mean epe
  std::vector<double> oracle_error;      // same, ranking by epe itself
  int bins() const noexcept { return static_cast<int>(fractions.size()); }
};

/// Keeps the ceil(f N) lowest-scoring pixels for f in {1/K, ..., 1}. Ties keep
/// pixel order.
SparsificationCurve sparsification(std::span<const double> epe, std::span<const double> unc_score,
                                   int bins = 50);

/// Trapezoidal area under a normalized-error series, extended flat from its
/// first point down to f = 0. Lower is better.
double auc(std::span<const double> fractions, std::span<const double> values);
double auc(const SparsificationCurve& curve);
double oracle_auc(const SparsificationCurve& curve);

struct MetricsReport {
  double coverage = 0.0;
  double coverage_u = 0.0;
  double coverage_v = 0.0;
  double cc = 0.0;
  double auc = 0.0;
  double oracle_auc = 0.0;
  long long n_points = 0;
  double k_sigma = 2.0;
  double mean_sigma = 0.0;
  double mean_epe = 0.0;
};

struct Evaluation {
  MetricsReport report;
  SparsificationCurve curve;
};

/// All three criteria for one (prediction, ground truth, uncertainty) triple.
Evaluation evaluate(const FlowField& pred, const FlowField& gt, const UncertaintyField& unc,
                    double k = 2.0, int bins = 50);
Evaluation evaluate(const ErrorField& err, const UncertaintyField& unc, double k = 2.0, int bins = 50);

std::string to_json(const MetricsReport& report);
void write_curve_csv(const SparsificationCurve& curve, const std::filesystem::path& path);

struct CurveSeries {
  std::string label;
  std::vector<double> fractions;
  std::vector<double> values;
};

/// Standalone SVG with one polyline per series plus axes.
std::string sparsification_svg(std::span<const CurveSeries> series, const std::string& title);
void write_sparsification_svg(const SparsificationCurve& curve, const std::string& title,
                              const std::filesystem::path& path);

}  // namespace pivuq
