#pragma once

#include <span>
#include <string>
#include <vector>

#include "pivuq/pivcc.hpp"

namespace pivuq {

/// Lower bound applied when an ensemble spread is turned into an UncertaintyField.
inline constexpr double kSigmaFloor = 1e-6;

struct EnsembleResult {
  FlowField mean_flow;
  UncertaintyField uncertainty;
  std::vector<FlowField> member_flows;
};

/// Per-pixel mean and Bessel-corrected sample standard deviation, before any floor.
struct EnsembleStatistics {
  FlowField mean;
  Grid<double> std_u;
  Grid<double> std_v;
};

EnsembleStatistics ensemble_statistics(std::span<const FlowField> members);

/// Aggregates member flows (at least two) into an EnsembleResult.
EnsembleResult aggregate(std::vector<FlowField> members);

/// Counterclockwise rotation acting on the image grid.
enum class RotationAngle { deg0 = 0, deg90 = 90, deg180 = 180, deg270 = 270 };

RotationAngle rotation_from_degrees(int degrees);
int quarter_turns(RotationAngle angle) noexcept;
RotationAngle compose(RotationAngle a, RotationAngle b) noexcept;
std::vector<RotationAngle> default_mt_angles();
std::vector<RotationAngle> parse_angles(const std::string& csv);

ImagePair rotate_pair(const ImagePair& pair, RotationAngle angle);

/// Maps a flow measured on the rotated grid back onto the original grid and
/// rotates each vector by -angle. Exact inverse of rotating the scene.
FlowField rotate_flow_back(const FlowField& flow, RotationAngle angle);

/// Multiple-model ensemble. Members that fail to estimate are dropped.
EnsembleResult mm_estimate(const ImagePair& pair, std::span<const FlowEstimator* const> estimators);
EnsembleResult mm_estimate(const ImagePair& pair, std::span<const EstimatorConfig> configs);

/// Multiple-transform ensemble: rotate, estimate, rotate back, aggregate.
EnsembleResult mt_estimate(const ImagePair& pair, const FlowEstimator& estimator,
                           std::span<const RotationAngle> angles);
EnsembleResult mt_estimate(const ImagePair& pair, const EstimatorConfig& cfg,
                           std::span<const RotationAngle> angles);

}  // namespace pivuq
