#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pivuq/flowdata.hpp"

namespace pivuq {

struct SceneSpec {
  int width = 128;
  int height = 128;
  double particle_density = 0.03;  // particles per pixel
  double particle_diameter = 2.5;  // px, e^-2 diameter of the imaged blob
  double peak_intensity = 220.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class FlowKind { uniform, solid_rotation, shear, lamb_oseen };

std::string to_string(FlowKind kind);
FlowKind parse_flow_kind(const std::string& name);

/// Closed-form displacement field evaluable anywhere in the plane.
///
/// Coordinates are pixel centers: pixel (row, col) sits at (x, y) = (col, row).
/// A field may carry a quarter-turn orientation, in which case it describes the
/// same physical flow seen in an image rotated counterclockwise by that many
/// quarter turns; `source_width`/`source_height` give the unrotated frame size.
struct AnalyticFlow {
  FlowKind kind = FlowKind::uniform;
  double u0 = 0.0;           // uniform
  double v0 = 0.0;           // uniform
  double omega = 0.0;        // solid_rotation, rad/frame
  double rate = 0.0;         // shear, du/dy per frame
  double circulation = 0.0;  // lamb_oseen, px^2/frame
  double core_radius = 8.0;  // lamb_oseen, px
  double cx = 0.0;           // center (rotation, shear, vortex)
  double cy = 0.0;
  double max_displacement = 10.0;  // declared bound, must be <= 10

  int quarter_turns = 0;
  int source_width = 0;
  int source_height = 0;

  static AnalyticFlow uniform(double u0, double v0);
  static AnalyticFlow solid_rotation(double omega, double cx, double cy);
  static AnalyticFlow shear(double rate, double cy);
  static AnalyticFlow lamb_oseen(double circulation, double core_radius, double cx, double cy);

  /// (u, v) at a point of the (possibly rotated) frame.
  std::pair<double, double> evaluate(double x, double y) const;

  /// The same flow seen in an image rotated by `turns` more quarter turns.
  /// `width`/`height` are the dimensions of the frame this field currently lives in.
  AnalyticFlow rotated(int turns, int width, int height) const;

  void validate() const;
};

struct DegradationSpec {
  double noise_var = 0.0;   // intensity^2 on the 0-255 scale
  double blur_sigma = 0.0;  // px
  std::uint64_t noise_seed = 0;

  void validate() const;
};

struct Particle {
  double x;
  double y;
};

/// Seeded particle positions covering the frame plus a margin wide enough that
/// displaced particles enter the field of view.
std::vector<Particle> sample_particles(const SceneSpec& scene, double margin);

/// Renders Gaussian blobs, summed in particle order and clamped to [0, 255].
Image render_particles(const std::vector<Particle>& particles, const SceneSpec& scene);

/// Moves every particle by the flow evaluated at its position.
std::vector<Particle> advect(const std::vector<Particle>& particles, const AnalyticFlow& flow);

/// The flow sampled at every pixel center.
FlowField sample_flow(const AnalyticFlow& flow, int width, int height);

struct GeneratedPair {
  ImagePair pair;
  FlowField ground_truth;
};

GeneratedPair generate_pair(const SceneSpec& scene, const AnalyticFlow& flow);

Image add_noise(const Image& img, const DegradationSpec& spec);
Image add_blur(const Image& img, const DegradationSpec& spec);

/// Normalized 1-D Gaussian taps of radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Noise then blur, applied to both frames (frame B uses an independent noise stream).
ImagePair degrade(const ImagePair& pair, const DegradationSpec& spec);

}  // namespace pivuq
