#pragma once

#include <filesystem>
#include <utility>

#include "pivuq/grid.hpp"

namespace pivuq {

/// Dense displacement field (u, v) in pixels per frame. Row-major, y down.
struct FlowField {
  Grid<double> u;
  Grid<double> v;

  FlowField() = default;
  FlowField(int width, int height) : u(width, height), v(width, height) {}
  /// Throws DimensionError on mismatched shapes, ParameterError on non-finite values.
  FlowField(Grid<double> u_, Grid<double> v_);

  int width() const noexcept { return u.width(); }
  int height() const noexcept { return u.height(); }
  bool same_shape(const FlowField& o) const noexcept { return u.same_shape(o.u); }

  void validate() const;

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Per-component standard deviations. Strictly positive and finite everywhere.
struct UncertaintyField {
  Grid<double> sigma_u;
  Grid<double> sigma_v;

  UncertaintyField() = default;
  UncertaintyField(Grid<double> su, Grid<double> sv);

  /// Builds a field from raw spreads that may contain zeros by applying `floor`.
  static UncertaintyField with_floor(Grid<double> su, Grid<double> sv, double floor);

  int width() const noexcept { return sigma_u.width(); }
  int height() const noexcept { return sigma_u.height(); }

  void validate() const;

  friend bool operator==(const UncertaintyField&, const UncertaintyField&) = default;
};

/// Two co-registered grayscale frames. Intensities are clamped to [0, 255].
struct ImagePair {
  Image frame_a;
  Image frame_b;

  ImagePair() = default;
  ImagePair(Image a, Image b);

  int width() const noexcept { return frame_a.width(); }
  int height() const noexcept { return frame_a.height(); }

  friend bool operator==(const ImagePair&, const ImagePair&) = default;
};

struct ErrorField {
  Grid<double> e_u;
  Grid<double> e_v;
  Grid<double> epe;

  int width() const noexcept { return e_u.width(); }
  int height() const noexcept { return e_u.height(); }
};

/// Signed error gt - pred per component, plus the endpoint error.
ErrorField error_field(const FlowField& pred, const FlowField& gt);

/// Builds an ErrorField directly from signed per-component errors.
ErrorField error_field_from_components(Grid<double> e_u, Grid<double> e_v);

void clamp_intensity(Image& img);

// Quarter-turn rotations (counterclockwise as displayed). Flow vectors are
// rotated together with the grid so the result describes the rotated scene.
FlowField rotate_flow(const FlowField& flow, int quarter_turns);
UncertaintyField rotate_uncertainty(const UncertaintyField& unc, int quarter_turns);
std::pair<double, double> rotate_vector(double u, double v, int quarter_turns);

// ---- file I/O ------------------------------------------------------------

/// Middlebury `.flo` tag: the bytes "PIEH" read as a little-endian float.
inline constexpr float kFloMagic = 202021.25f;
/// `.unc` tag, distinct from `.flo` so the two cannot be mixed up silently.
inline constexpr float kUncMagic = 202122.25f;

FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& field, const std::filesystem::path& path);

UncertaintyField read_unc(const std::filesystem::path& path);
void write_unc(const UncertaintyField& field, const std::filesystem::path& path);

/// Binary P5 PGM with maxval 255. Values are rounded to nearest and clamped on write.
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const Image& img, const std::filesystem::path& path);

}  // namespace pivuq
