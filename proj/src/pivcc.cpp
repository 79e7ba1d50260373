#include "pivuq/pivcc.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace pivuq {

std::string to_string(PeakFit fit) { return fit == PeakFit::gaussian3 ? "gaussian3" : "parabolic3"; }
std::string to_string(CorrelationMode mode) { return mode == CorrelationMode::fft ? "fft" : "direct"; }

PeakFit parse_peak_fit(const std::string& name) {
  if (name == "gaussian3") return PeakFit::gaussian3;
  if (name == "parabolic3") return PeakFit::parabolic3;
  throw ParameterError("unknown peak fit '" + name + "'");
}

CorrelationMode parse_correlation_mode(const std::string& name) {
  if (name == "fft") return CorrelationMode::fft;
  if (name == "direct") return CorrelationMode::direct;
  throw ParameterError("unknown correlation mode '" + name + "'");
}

void EstimatorConfig::validate() const {
  if (window_size < 8 || window_size % 2 != 0) throw ParameterError("window_size must be even and >= 8");
  if (!(overlap >= 0.0 && overlap <= 0.75)) throw ParameterError("overlap must lie in [0, 0.75]");
}

void EstimatorConfig::validate(int width, int height) const {
  validate();
  if (window_size > std::min(width, height) / 2) {
    throw ParameterError("window_size " + std::to_string(window_size) + " exceeds half the image size");
  }
}

int EstimatorConfig::step() const {
  return std::max(1, static_cast<int>(std::lround(window_size * (1.0 - overlap))));
}

std::vector<EstimatorConfig> default_mm_configs() {
  std::vector<EstimatorConfig> out;
  const std::pair<int, PeakFit> table[] = {{16, PeakFit::gaussian3},
                                           {24, PeakFit::gaussian3},
                                           {32, PeakFit::parabolic3},
                                           {48, PeakFit::gaussian3}};
  int id = 0;
  for (const auto& [size, fit] : table) {
    EstimatorConfig cfg;
    cfg.window_size = size;
    cfg.peak_fit = fit;
    cfg.instance_id = id++;
    out.push_back(cfg);
  }
  return out;
}

std::string CrossCorrelationEstimator::name() const {
  return "cc" + std::to_string(cfg_.instance_id) + "_w" + std::to_string(cfg_.window_size) + "_" +
         to_string(cfg_.peak_fit);
}

namespace {

struct Normalized {
  std::vector<double> values;
  double norm = 0.0;  // sqrt of the sum of squares after mean removal
};

Normalized remove_mean(const Image& w) {
  Normalized out;
  out.values.assign(w.begin(), w.end());
  double mean = 0.0;
  for (double x : out.values) mean += x;
  mean /= static_cast<double>(out.values.size());
  double ss = 0.0;
  for (double& x : out.values) {
    x -= mean;
    ss += x * x;
  }
  out.norm = std::sqrt(ss);
  return out;
}

// Relative to the window energy; below this a window carries no pattern.
constexpr double kMinWindowStd = 1e-6;

bool degenerate(const Normalized& n) {
  return n.norm <= kMinWindowStd * std::sqrt(static_cast<double>(n.values.size()));
}

void locate_peak(CorrelationMap& map) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.scores.size(); ++i) {
    if (map.scores[i] > map.scores[best]) best = i;
  }
  map.peak_y = static_cast<int>(best) / map.size;
  map.peak_x = static_cast<int>(best) % map.size;
  map.peak_value = map.scores[best];
}

// Per-thread FFTW plans for one transform size. Planning is not thread safe,
// so creation and destruction are serialized.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class FftWorkspace {
 public:
  explicit FftWorkspace(int n) : n_(n) {
    const std::size_t real_len = static_cast<std::size_t>(n) * n;
    const std::size_t spec_len = static_cast<std::size_t>(n) * (n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    in_a_ = fftw_alloc_real(real_len);
    in_b_ = fftw_alloc_real(real_len);
    out_ = fftw_alloc_real(real_len);
    spec_a_ = fftw_alloc_complex(spec_len);
    spec_b_ = fftw_alloc_complex(spec_len);
    plan_a_ = fftw_plan_dft_r2c_2d(n, n, in_a_, spec_a_, FFTW_ESTIMATE);
    plan_b_ = fftw_plan_dft_r2c_2d(n, n, in_b_, spec_b_, FFTW_ESTIMATE);
    plan_inv_ = fftw_plan_dft_c2r_2d(n, n, spec_a_, out_, FFTW_ESTIMATE);
  }
  ~FftWorkspace() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_a_);
    fftw_destroy_plan(plan_b_);
    fftw_destroy_plan(plan_inv_);
    fftw_free(in_a_);
    fftw_free(in_b_);
    fftw_free(out_);
    fftw_free(spec_a_);
    fftw_free(spec_b_);
  }
  FftWorkspace(const FftWorkspace&) = delete;
  FftWorkspace& operator=(const FftWorkspace&) = delete;

  double* input_a() noexcept { return in_a_; }
  double* input_b() noexcept { return in_b_; }

  // Circular cross-correlation sum_x a(x) b(x + t) of the two inputs, scaled
  // by n^2 (FFTW leaves the inverse unnormalized), indexed by t mod n.
  const double* correlate() {
    fftw_execute(plan_a_);
    fftw_execute(plan_b_);
    const std::size_t spec_len = static_cast<std::size_t>(n_) * (n_ / 2 + 1);
    for (std::size_t i = 0; i < spec_len; ++i) {
      const double ar = spec_a_[i][0], ai = -spec_a_[i][1];
      const double br = spec_b_[i][0], bi = spec_b_[i][1];
      spec_a_[i][0] = ar * br - ai * bi;
      spec_a_[i][1] = ar * bi + ai * br;
    }
    fftw_execute(plan_inv_);
    return out_;
  }

 private:
  int n_;
  double* in_a_;
  double* in_b_;
  double* out_;
  fftw_complex* spec_a_;
  fftw_complex* spec_b_;
  fftw_plan plan_a_;
  fftw_plan plan_b_;
  fftw_plan plan_inv_;
};

FftWorkspace& workspace_for(int n) {
  thread_local std::map<int, std::unique_ptr<FftWorkspace>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftWorkspace>(n);
  return *slot;
}

void require_window_shapes(const Image& a, const Image& search) {
  if (a.width() != a.height() || search.width() != 2 * a.width() || search.height() != 2 * a.height()) {
    throw DimensionError("correlation needs an NxN window and a 2Nx2N search region");
  }
}

// Score from a numerator sum a'(x) B(x) and the B window's first two moments.
double zncc(double numerator, double norm_a, double sum_b, double sum_b2, double count) {
  const double energy = sum_b2 - sum_b * sum_b / count;
  const double norm_b = energy > 0.0 ? std::sqrt(energy) : 0.0;
  if (norm_b <= kMinWindowStd * std::sqrt(count)) return 0.0;
  return numerator / (norm_a * norm_b);
}

}  // namespace

CorrelationMap correlate_direct(const Image& window_a, const Image& search_b) {
  require_window_shapes(window_a, search_b);
  const int n = window_a.width();
  const auto a = remove_mean(window_a);
  if (degenerate(a)) return {};

  CorrelationMap map;
  map.size = n;
  map.scores = Grid<double>(n, n);
  const double count = static_cast<double>(n) * n;
  for (int ty = 0; ty < n; ++ty) {
    for (int tx = 0; tx < n; ++tx) {
      double mean_b = 0.0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) mean_b += search_b(ty + y, tx + x);
      mean_b /= count;
      double num = 0.0;
      double energy = 0.0;
      for (int y = 0; y < n; ++y) {
        const double* arow = a.values.data() + static_cast<std::size_t>(y) * n;
        for (int x = 0; x < n; ++x) {
          const double b = search_b(ty + y, tx + x) - mean_b;
          num += arow[x] * b;
          energy += b * b;
        }
      }
      const double norm_b = std::sqrt(energy);
      map.scores(ty, tx) = norm_b <= kMinWindowStd * std::sqrt(count) ? 0.0 : num / (a.norm * norm_b);
    }
  }
  locate_peak(map);
  return map;
}

CorrelationMap correlate_fft(const Image& window_a, const Image& search_b) {
  require_window_shapes(window_a, search_b);
  const int n = window_a.width();
  const int m = 2 * n;
  const auto a = remove_mean(window_a);
  if (degenerate(a)) return {};

  auto& ws = workspace_for(m);
  double* in_a = ws.input_a();
  double* in_b = ws.input_b();
  std::fill(in_a, in_a + static_cast<std::size_t>(m) * m, 0.0);
  for (int y = 0; y < n; ++y)
    std::copy_n(a.values.data() + static_cast<std::size_t>(y) * n, n, in_a + static_cast<std::size_t>(y) * m);
  std::copy(search_b.begin(), search_b.end(), in_b);
  // The zero-padded A window never wraps for shifts t in [0, n).
  const double* raw = ws.correlate();

  // Summed-area tables of the search region for per-shift B moments.
  const int stride = m + 1;
  std::vector<double> s1(static_cast<std::size_t>(stride) * stride, 0.0);
  std::vector<double> s2(s1.size(), 0.0);
  for (int y = 0; y < m; ++y) {
    for (int x = 0; x < m; ++x) {
      const double v = search_b(y, x);
      const std::size_t i = static_cast<std::size_t>(y + 1) * stride + (x + 1);
      s1[i] = v + s1[i - 1] + s1[i - stride] - s1[i - stride - 1];
      s2[i] = v * v + s2[i - 1] + s2[i - stride] - s2[i - stride - 1];
    }
  }
  auto box = [&](const std::vector<double>& s, int y0, int x0) {
    const auto at = [&](int y, int x) { return s[static_cast<std::size_t>(y) * stride + x]; };
    return at(y0 + n, x0 + n) - at(y0, x0 + n) - at(y0 + n, x0) + at(y0, x0);
  };

  CorrelationMap map;
  map.size = n;
  map.scores = Grid<double>(n, n);
  const double count = static_cast<double>(n) * n;
  const double scale = 1.0 / (static_cast<double>(m) * m);
  for (int ty = 0; ty < n; ++ty) {
    for (int tx = 0; tx < n; ++tx) {
      const double num = raw[static_cast<std::size_t>(ty) * m + tx] * scale;
      map.scores(ty, tx) = zncc(num, a.norm, box(s1, ty, tx), box(s2, ty, tx), count);
    }
  }
  locate_peak(map);
  return map;
}

CorrelationMap symmetrize(const CorrelationMap& forward, const CorrelationMap& backward) {
  if (forward.size == 0) return forward;
  if (backward.size == 0) return forward;
  if (backward.size != forward.size) throw DimensionError("symmetrize: maps differ in size");
  const int n = forward.size;
  CorrelationMap out;
  out.size = n;
  out.scores = forward.scores;
  for (int r = 1; r < n; ++r) {
    for (int c = 1; c < n; ++c) out.scores(r, c) = 0.5 * (forward.scores(r, c) + backward.scores(n - r, n - c));
  }
  locate_peak(out);
  return out;
}

double subpixel_offset(double c_minus, double c_zero, double c_plus, PeakFit fit) {
  double num = 0.0;
  double den = 0.0;
  if (fit == PeakFit::gaussian3 && c_minus > 0.0 && c_zero > 0.0 && c_plus > 0.0) {
    const double lm = std::log(c_minus);
    const double l0 = std::log(c_zero);
    const double lp = std::log(c_plus);
    num = lm - lp;
    den = 2.0 * (lm - 2.0 * l0 + lp);
  } else {
    num = c_minus - c_plus;
    den = 2.0 * (c_minus - 2.0 * c_zero + c_plus);
  }
  if (den == 0.0) return 0.0;
  const double delta = num / den;
  if (!std::isfinite(delta) || std::abs(delta) >= 1.0) return 0.0;
  return delta;
}

SubpixelPeak subpixel_peak(const CorrelationMap& map, PeakFit fit) {
  const int half = map.size / 2;
  SubpixelPeak out;
  out.dx = map.peak_x - half;
  out.dy = map.peak_y - half;
  const int px = map.peak_x;
  const int py = map.peak_y;
  if (px <= 0 || py <= 0 || px >= map.size - 1 || py >= map.size - 1) return out;
  const auto& s = map.scores;
  out.dx += subpixel_offset(s(py, px - 1), s(py, px), s(py, px + 1), fit);
  out.dy += subpixel_offset(s(py - 1, px), s(py, px), s(py + 1, px), fit);
  out.refined = true;
  return out;
}

namespace {

struct Layout {
  std::vector<int> origins;  // top-left pixel of each window along one axis
};

// The lattice sits a quarter step off center. A mirrored axis then lands half
// a step away, so every right-angle rotation of the pair correlates different
// windows; a centered lattice makes the estimator exactly rotation-equivariant
// and the multiple-transform spread collapses to zero.
Layout layout_axis(int extent, int window, int step) {
  const int count = std::max(2, (extent - window) / step + 1);
  const int span = (count - 1) * step + window;
  const int start = (extent - span) / 2 - step / 4;
  Layout l;
  for (int k = 0; k < count; ++k) l.origins.push_back(start + k * step);
  return l;
}

Image extract(const Image& img, int x0, int y0, int n) {
  Image w(n, n);
  const bool inside = x0 >= 0 && y0 >= 0 && x0 + n <= img.width() && y0 + n <= img.height();
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      w(y, x) = inside ? img(y0 + y, x0 + x)
                       : img(reflect_index(y0 + y, img.height()), reflect_index(x0 + x, img.width()));
    }
  }
  return w;
}

void fill_invalid(WindowGrid& g) {
  const int nx = g.u.width();
  const int ny = g.u.height();
  Grid<unsigned char> known = g.valid;
  bool pending = true;
  while (pending) {
    pending = false;
    Grid<unsigned char> next = known;
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        if (known(y, x)) continue;
        double su = 0.0, sv = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= ny || xx >= nx || !known(yy, xx)) continue;
            su += g.u(yy, xx);
            sv += g.v(yy, xx);
            ++cnt;
          }
        }
        if (cnt > 0) {
          g.u(y, x) = su / cnt;
          g.v(y, x) = sv / cnt;
          next(y, x) = 1;
        } else {
          pending = true;
        }
      }
    }
    known = std::move(next);
  }
}

}  // namespace

WindowGrid estimate_windows(const ImagePair& pair, const EstimatorConfig& cfg) {
  const int w = pair.width();
  const int h = pair.height();
  cfg.validate(w, h);
  const int n = cfg.window_size;
  const auto lx = layout_axis(w, n, cfg.step());
  const auto ly = layout_axis(h, n, cfg.step());
  const int nx = static_cast<int>(lx.origins.size());
  const int ny = static_cast<int>(ly.origins.size());

  WindowGrid g;
  g.u = Grid<double>(nx, ny);
  g.v = Grid<double>(nx, ny);
  g.valid = Grid<unsigned char>(nx, ny);
  g.interior = Grid<unsigned char>(nx, ny);
  for (int ox : lx.origins) g.centers_x.push_back(ox + (n - 1) / 2.0);
  for (int oy : ly.origins) g.centers_y.push_back(oy + (n - 1) / 2.0);

  int valid_count = 0;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int x0 = lx.origins[i];
      const int y0 = ly.origins[j];
      g.interior(j, i) = (x0 >= 0 && y0 >= 0 && x0 + n <= w && y0 + n <= h) ? 1 : 0;
      const Image wa = extract(pair.frame_a, x0, y0, n);
      const Image sb = extract(pair.frame_b, x0 - n / 2, y0 - n / 2, 2 * n);
      const Image wb = extract(pair.frame_b, x0, y0, n);
      const Image sa = extract(pair.frame_a, x0 - n / 2, y0 - n / 2, 2 * n);
      const auto correlate = cfg.correlation == CorrelationMode::fft ? correlate_fft : correlate_direct;
      const CorrelationMap map = symmetrize(correlate(wa, sb), correlate(wb, sa));
      if (map.size == 0) continue;
      const auto peak = subpixel_peak(map, cfg.peak_fit);
      g.u(j, i) = peak.dx;
      g.v(j, i) = peak.dy;
      g.valid(j, i) = 1;
      ++valid_count;
    }
  }
  if (valid_count < 4) {
    throw EstimationError("only " + std::to_string(valid_count) + " windows carry a correlation signal");
  }
  fill_invalid(g);
  return g;
}

FlowField densify(const WindowGrid& g, int width, int height) {
  auto locate = [](const std::vector<double>& centers, double p, int& i0, int& i1, double& t) {
    const int n = static_cast<int>(centers.size());
    if (p <= centers.front()) {
      i0 = i1 = 0;
      t = 0.0;
      return;
    }
    if (p >= centers.back()) {
      i0 = i1 = n - 1;
      t = 0.0;
      return;
    }
    i0 = 0;
    while (i0 + 1 < n && centers[i0 + 1] <= p) ++i0;
    i1 = std::min(i0 + 1, n - 1);
    t = i1 == i0 ? 0.0 : (p - centers[i0]) / (centers[i1] - centers[i0]);
  };

  std::vector<int> x0(width), x1(width);
  std::vector<double> tx(width);
  for (int x = 0; x < width; ++x) locate(g.centers_x, x, x0[x], x1[x], tx[x]);

  FlowField out(width, height);
  for (int y = 0; y < height; ++y) {
    int y0, y1;
    double ty;
    locate(g.centers_y, y, y0, y1, ty);
    for (int x = 0; x < width; ++x) {
      const double t = tx[x];
      auto lerp2 = [&](const Grid<double>& f) {
        const double top = (1.0 - t) * f(y0, x0[x]) + t * f(y0, x1[x]);
        const double bot = (1.0 - t) * f(y1, x0[x]) + t * f(y1, x1[x]);
        return (1.0 - ty) * top + ty * bot;
      };
      out.u(y, x) = lerp2(g.u);
      out.v(y, x) = lerp2(g.v);
    }
  }
  return out;
}

FlowField estimate(const ImagePair& pair, const EstimatorConfig& cfg) {
  return densify(estimate_windows(pair, cfg), pair.width(), pair.height());
}

}  // namespace pivuq
