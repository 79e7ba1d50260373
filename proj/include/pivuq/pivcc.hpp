#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pivuq/flowdata.hpp"

namespace pivuq {

enum class PeakFit { gaussian3, parabolic3 };
enum class CorrelationMode { direct, fft };

std::string to_string(PeakFit fit);
std::string to_string(CorrelationMode mode);
PeakFit parse_peak_fit(const std::string& name);
CorrelationMode parse_correlation_mode(const std::string& name);

struct EstimatorConfig {
  int window_size = 32;  // even, >= 8
  double overlap = 0.5;  // in [0, 0.75]
  PeakFit peak_fit = PeakFit::gaussian3;
  CorrelationMode correlation = CorrelationMode::fft;
  int instance_id = 0;

  /// Checks the config on its own and against an image size.
  void validate() const;
  void validate(int width, int height) const;

  int step() const;
};

/// Four configurations used as the "models" of the multiple-model ensemble.
std::vector<EstimatorConfig> default_mm_configs();

/// Zero-normalized cross-correlation of an NxN frame-A window against every
/// NxN frame-B window displaced by (sx, sy) in [-N/2, N/2)^2. Each displaced
/// B window is normalized by its own mean and energy, so a pure translation
/// scores exactly 1 at the true integer shift.
/// Entry (row, col) holds the score for shift (col - N/2, row - N/2).
struct CorrelationMap {
  int size = 0;
  Grid<double> scores;
  int peak_x = 0;  // integer peak, map indices
  int peak_y = 0;
  double peak_value = 0.0;
};

/// `search_b` is the 2N x 2N frame-B region whose top-left corner sits at
/// (-N/2, -N/2) relative to the A window. A map with size 0 is returned when
/// the A window has zero variance.
CorrelationMap correlate_direct(const Image& window_a, const Image& search_b);
CorrelationMap correlate_fft(const Image& window_a, const Image& search_b);

/// Averages the A-over-B map with the B-over-A map at the mirrored shift, so
/// swapping the frames exactly negates the peak. The row and column of shift
/// -N/2 have no mirror and keep the forward score. A degenerate forward map
/// stays degenerate; a degenerate backward map leaves the forward map as is.
CorrelationMap symmetrize(const CorrelationMap& forward, const CorrelationMap& backward);

/// Three-point offset along one axis: samples at -1, 0, +1 around the peak.
/// gaussian3 falls back to parabolic3 when any sample is nonpositive.
double subpixel_offset(double c_minus, double c_zero, double c_plus, PeakFit fit);

struct SubpixelPeak {
  double dx = 0.0;  // displacement in px, including the integer part
  double dy = 0.0;
  bool refined = false;  // false when the integer peak sits on the map border
};

SubpixelPeak subpixel_peak(const CorrelationMap& map, PeakFit fit);

/// Window-level vectors before densification.
struct WindowGrid {
  std::vector<double> centers_x;  // pixel coordinates of window centers
  std::vector<double> centers_y;
  Grid<double> u;
  Grid<double> v;
  Grid<unsigned char> valid;     // 0 where the window had zero variance
  Grid<unsigned char> interior;  // 1 where the window lies fully inside the image
};

WindowGrid estimate_windows(const ImagePair& pair, const EstimatorConfig& cfg);

/// Dense per-pixel flow, bilinearly interpolated from the window grid.
FlowField estimate(const ImagePair& pair, const EstimatorConfig& cfg);

FlowField densify(const WindowGrid& grid, int width, int height);

/// Anything that maps an image pair to a dense flow.
class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;
  virtual FlowField estimate(const ImagePair& pair) const = 0;
  virtual std::string name() const = 0;
};

class CrossCorrelationEstimator final : public FlowEstimator {
 public:
  explicit CrossCorrelationEstimator(EstimatorConfig cfg) : cfg_(cfg) { cfg_.validate(); }
  FlowField estimate(const ImagePair& pair) const override { return pivuq::estimate(pair, cfg_); }
  std::string name() const override;
  const EstimatorConfig& config() const noexcept { return cfg_; }

 private:
  EstimatorConfig cfg_;
};

}  // namespace pivuq
