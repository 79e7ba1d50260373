#include "pivuq/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pivuq/rng.hpp"

namespace pivuq {

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw ParameterError("scene dimensions must be positive");
  if (!(particle_density > 0.0 && particle_density <= 0.2)) {
    throw ParameterError("particle_density must lie in (0, 0.2]");
  }
  if (!(particle_diameter >= 1.0 && particle_diameter <= 6.0)) {
    throw ParameterError("particle_diameter must lie in [1, 6]");
  }
  if (!(peak_intensity > 0.0 && peak_intensity <= 255.0)) {
    throw ParameterError("peak_intensity must lie in (0, 255]");
  }
}

std::string to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::uniform: return "uniform";
    case FlowKind::solid_rotation: return "solid_rotation";
    case FlowKind::shear: return "shear";
    case FlowKind::lamb_oseen: return "lamb_oseen";
  }
  return "unknown";
}

FlowKind parse_flow_kind(const std::string& name) {
  if (name == "uniform") return FlowKind::uniform;
  if (name == "solid_rotation" || name == "rotation") return FlowKind::solid_rotation;
  if (name == "shear") return FlowKind::shear;
  if (name == "lamb_oseen" || name == "vortex") return FlowKind::lamb_oseen;
  throw ParameterError("unknown flow kind '" + name + "'");
}

AnalyticFlow AnalyticFlow::uniform(double u0, double v0) {
  AnalyticFlow f;
  f.kind = FlowKind::uniform;
  f.u0 = u0;
  f.v0 = v0;
  return f;
}

AnalyticFlow AnalyticFlow::solid_rotation(double omega, double cx, double cy) {
  AnalyticFlow f;
  f.kind = FlowKind::solid_rotation;
  f.omega = omega;
  f.cx = cx;
  f.cy = cy;
  return f;
}

AnalyticFlow AnalyticFlow::shear(double rate, double cy) {
  AnalyticFlow f;
  f.kind = FlowKind::shear;
  f.rate = rate;
  f.cy = cy;
  return f;
}

AnalyticFlow AnalyticFlow::lamb_oseen(double circulation, double core_radius, double cx, double cy) {
  AnalyticFlow f;
  f.kind = FlowKind::lamb_oseen;
  f.circulation = circulation;
  f.core_radius = core_radius;
  f.cx = cx;
  f.cy = cy;
  return f;
}

std::pair<double, double> AnalyticFlow::evaluate(double x, double y) const {
  const int k = ((quarter_turns % 4) + 4) % 4;
  // Walk the point back to the source frame one quarter turn at a time.
  for (int j = k; j >= 1; --j) {
    const int pre_width = ((j - 1) % 2 == 0) ? source_width : source_height;
    const double px = (pre_width - 1) - y;
    const double py = x;
    x = px;
    y = py;
  }

  double u = 0.0;
  double v = 0.0;
  switch (kind) {
    case FlowKind::uniform:
      u = u0;
      v = v0;
      break;
    case FlowKind::solid_rotation:
      u = -omega * (y - cy);
      v = omega * (x - cx);
      break;
    case FlowKind::shear:
      u = rate * (y - cy);
      break;
    case FlowKind::lamb_oseen: {
      const double dx = x - cx;
      const double dy = y - cy;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 0.0) {
        // Azimuthal speed over r, so that (u, v) = k * (-dy, dx).
        const double k_over_r =
            circulation / (2.0 * std::numbers::pi * r2) * (1.0 - std::exp(-r2 / (core_radius * core_radius)));
        u = -k_over_r * dy;
        v = k_over_r * dx;
      }
      break;
    }
  }
  return rotate_vector(u, v, k);
}

AnalyticFlow AnalyticFlow::rotated(int turns, int width, int height) const {
  AnalyticFlow out = *this;
  if (((quarter_turns % 4) + 4) % 4 == 0) {
    out.source_width = width;
    out.source_height = height;
  }
  out.quarter_turns = ((quarter_turns + turns) % 4 + 4) % 4;
  return out;
}

void AnalyticFlow::validate() const {
  if (!(max_displacement > 0.0 && max_displacement <= 10.0)) {
    throw ParameterError("declared max displacement must lie in (0, 10] px");
  }
  if (kind == FlowKind::lamb_oseen && !(core_radius > 0.0)) {
    throw ParameterError("lamb_oseen core radius must be positive");
  }
  for (double p : {u0, v0, omega, rate, circulation, cx, cy}) {
    if (!std::isfinite(p)) throw ParameterError("flow parameters must be finite");
  }
  if (quarter_turns != 0 && (source_width <= 0 || source_height <= 0)) {
    throw ParameterError("rotated flow needs its source frame size");
  }
}

void DegradationSpec::validate() const {
  if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) throw ParameterError("noise_var must be >= 0");
  if (!(blur_sigma >= 0.0) || !std::isfinite(blur_sigma)) throw ParameterError("blur_sigma must be >= 0");
}

namespace {

double blob_sigma(const SceneSpec& scene) { return scene.particle_diameter / 4.0; }

}  // namespace

std::vector<Particle> sample_particles(const SceneSpec& scene, double margin) {
  scene.validate();
  Rng rng(scene.seed);
  const double x0 = -0.5 - margin;
  const double y0 = -0.5 - margin;
  const double ew = scene.width + 2.0 * margin;
  const double eh = scene.height + 2.0 * margin;
  const auto count = static_cast<std::size_t>(std::llround(scene.particle_density * ew * eh));
  std::vector<Particle> particles;
  particles.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = x0 + ew * rng.uniform();
    const double y = y0 + eh * rng.uniform();
    particles.push_back({x, y});
  }
  return particles;
}

Image render_particles(const std::vector<Particle>& particles, const SceneSpec& scene) {
  scene.validate();
  Image img(scene.width, scene.height);
  const double s = blob_sigma(scene);
  const double inv_two_s2 = 1.0 / (2.0 * s * s);
  const int reach = static_cast<int>(std::ceil(4.0 * s));
  for (const auto& p : particles) {
    const int cx = static_cast<int>(std::lround(p.x));
    const int cy = static_cast<int>(std::lround(p.y));
    const int xa = std::max(0, cx - reach);
    const int xb = std::min(scene.width - 1, cx + reach);
    const int ya = std::max(0, cy - reach);
    const int yb = std::min(scene.height - 1, cy + reach);
    for (int y = ya; y <= yb; ++y) {
      const double dy = y - p.y;
      for (int x = xa; x <= xb; ++x) {
        const double dx = x - p.x;
        img(y, x) += scene.peak_intensity * std::exp(-(dx * dx + dy * dy) * inv_two_s2);
      }
    }
  }
  clamp_intensity(img);
  return img;
}

std::vector<Particle> advect(const std::vector<Particle>& particles, const AnalyticFlow& flow) {
  std::vector<Particle> out;
  out.reserve(particles.size());
  for (const auto& p : particles) {
    const auto [u, v] = flow.evaluate(p.x, p.y);
    out.push_back({p.x + u, p.y + v});
  }
  return out;
}

FlowField sample_flow(const AnalyticFlow& flow, int width, int height) {
  FlowField out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::tie(out.u(y, x), out.v(y, x)) = flow.evaluate(x, y);
    }
  }
  out.validate();
  return out;
}

GeneratedPair generate_pair(const SceneSpec& scene, const AnalyticFlow& flow) {
  scene.validate();
  flow.validate();
  const double margin = flow.max_displacement + 4.0 * blob_sigma(scene) + 1.0;
  auto particles = sample_particles(scene, margin);

  FlowField gt = sample_flow(flow, scene.width, scene.height);
  const double bound2 = flow.max_displacement * flow.max_displacement * (1.0 + 1e-12);
  for (std::size_t i = 0; i < gt.u.size(); ++i) {
    if (gt.u[i] * gt.u[i] + gt.v[i] * gt.v[i] > bound2) {
      throw ParameterError("flow exceeds its declared max displacement of " +
                           std::to_string(flow.max_displacement) + " px inside the frame");
    }
  }

  // Particles outside the frame may move further than the in-frame bound; they
  // are still displaced exactly, only the in-frame field is checked.
  auto moved = advect(particles, flow);
  Image a = render_particles(particles, scene);
  Image b = render_particles(moved, scene);
  return {ImagePair(std::move(a), std::move(b)), std::move(gt)};
}

Image add_noise(const Image& img, const DegradationSpec& spec) {
  spec.validate();
  if (spec.noise_var == 0.0) return img;
  Rng rng(spec.noise_seed);
  const double sd = std::sqrt(spec.noise_var);
  Image out = img;
  for (double& x : out) x += sd * rng.normal();
  clamp_intensity(out);
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-(k * k) / (2.0 * sigma * sigma));
    sum += taps[k + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

Image add_blur(const Image& img, const DegradationSpec& spec) {
  spec.validate();
  if (spec.blur_sigma == 0.0) return img;
  const auto taps = gaussian_kernel(spec.blur_sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  const int w = img.width();
  const int h = img.height();

  Image tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * img(y, reflect_index(x + k, w));
      tmp(y, x) = acc;
    }
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp(reflect_index(y + k, h), x);
      out(y, x) = acc;
    }
  }
  clamp_intensity(out);
  return out;
}

ImagePair degrade(const ImagePair& pair, const DegradationSpec& spec) {
  spec.validate();
  DegradationSpec sa = spec;
  DegradationSpec sb = spec;
  sa.noise_seed = mix_seed(spec.noise_seed, 0);
  sb.noise_seed = mix_seed(spec.noise_seed, 1);
  Image a = add_blur(add_noise(pair.frame_a, sa), spec);
  Image b = add_blur(add_noise(pair.frame_b, sb), spec);
  return ImagePair(std::move(a), std::move(b));
}

}  // namespace pivuq
