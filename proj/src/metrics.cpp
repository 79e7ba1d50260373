#include "pivuq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace pivuq {

namespace {

void require_shapes(const ErrorField& err, const UncertaintyField& unc) {
  if (!err.e_u.same_shape(unc.sigma_u) || !err.e_v.same_shape(unc.sigma_v)) {
    throw DimensionError("error and uncertainty fields differ in shape");
  }
}

double fraction_inside(const Grid<double>& e, const Grid<double>& s, double k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (std::abs(e[i]) < k * s[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(e.size());
}

std::vector<std::size_t> stable_order(std::span<const double> keys) {
  std::vector<std::size_t> idx(keys.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  return idx;
}

// Running sum held as non-overlapping partials (Shewchuk), rounded once on
// read. The result does not depend on the order of the terms, so two rankings
// that keep the same pixels give bit-identical curve points.
class ExactSum {
 public:
  void add(double x) {
    std::size_t kept = 0;
    for (std::size_t j = 0; j < partials_.size(); ++j) {
      double y = partials_[j];
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[kept++] = lo;
      x = hi;
    }
    partials_.resize(kept);
    partials_.push_back(x);
  }

  double value() const {
    std::size_t n = partials_.size();
    if (n == 0) return 0.0;
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    // round half-way cases correctly using the next partial's sign
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  std::vector<double> partials_;
};

std::vector<double> prefix_curve(std::span<const double> epe, const std::vector<std::size_t>& order,
                                 const std::vector<std::size_t>& kept, double mean_all) {
  std::vector<double> out;
  out.reserve(kept.size());
  ExactSum sum;
  std::size_t taken = 0;
  for (std::size_t k : kept) {
    while (taken < k) sum.add(epe[order[taken++]]);
    out.push_back(sum.value() / static_cast<double>(k) / mean_all);
  }
  return out;
}

}  // namespace

double coverage(const ErrorField& err, const UncertaintyField& unc, double k) {
  require_shapes(err, unc);
  if (!(k > 0.0)) throw ParameterError("coverage multiplier must be positive");
  const auto c = coverage_per_component(err, unc, k);
  return 0.5 * (c.u + c.v);
}

ComponentCoverage coverage_per_component(const ErrorField& err, const UncertaintyField& unc, double k) {
  require_shapes(err, unc);
  if (!(k > 0.0)) throw ParameterError("coverage multiplier must be positive");
  return {fraction_inside(err.e_u, unc.sigma_u, k), fraction_inside(err.e_v, unc.sigma_v, k)};
}

std::vector<double> average_ranks(std::span<const double> values) {
  const auto order = stable_order(values);
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 share the mean 1-based rank
    const double r = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

double spearman_cc(std::span<const double> err_mag, std::span<const double> unc_score) {
  if (err_mag.size() != unc_score.size()) throw DimensionError("spearman_cc: length mismatch");
  if (err_mag.size() < 2) throw DegenerateInputError("spearman_cc needs at least two points");
  const auto ra = average_ranks(err_mag);
  const auto rb = average_ranks(unc_score);
  const double n = static_cast<double>(ra.size());
  const double mean = (n + 1.0) / 2.0;  // average ranks always sum to n(n+1)/2
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double a = ra[i] - mean;
    const double b = rb[i] - mean;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("spearman_cc: zero rank variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Grid<double> uncertainty_score(const UncertaintyField& unc) {
  Grid<double> out(unc.width(), unc.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = unc.sigma_u[i] * unc.sigma_v[i];
  return out;
}

SparsificationCurve sparsification(std::span<const double> epe, std::span<const double> unc_score, int bins) {
  if (epe.size() != unc_score.size()) throw DimensionError("sparsification: length mismatch");
  if (bins < 1) throw ParameterError("sparsification needs at least one fraction");
  if (epe.size() < static_cast<std::size_t>(bins)) {
    throw DegenerateInputError("sparsification needs at least as many points as fractions");
  }
  const double n = static_cast<double>(epe.size());
  ExactSum total;
  for (double e : epe) total.add(e);
  const double mean_all = total.value() / n;
  if (!(mean_all > 0.0)) throw DegenerateInputError("sparsification: mean endpoint error is zero");

  SparsificationCurve c;
  std::vector<std::size_t> kept;
  for (int b = 1; b <= bins; ++b) {
    const double f = static_cast<double>(b) / bins;
    c.fractions.push_back(f);
    // ceil(f N) with protection against f*N landing a hair above an integer
    const auto k = static_cast<std::size_t>(std::ceil(f * n - 1e-9));
    kept.push_back(std::clamp<std::size_t>(k, 1, epe.size()));
  }
  c.normalized_error = prefix_curve(epe, stable_order(unc_score), kept, mean_all);
  c.oracle_error = prefix_curve(epe, stable_order(epe), kept, mean_all);
  return c;
}

double auc(std::span<const double> fractions, std::span<const double> values) {
  if (fractions.empty() || fractions.size() != values.size()) throw ParameterError("auc: malformed curve");
  double area = fractions[0] * values[0];
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    area += 0.5 * (values[i] + values[i - 1]) * (fractions[i] - fractions[i - 1]);
  }
  return area;
}

double auc(const SparsificationCurve& curve) { return auc(curve.fractions, curve.normalized_error); }
double oracle_auc(const SparsificationCurve& curve) { return auc(curve.fractions, curve.oracle_error); }

Evaluation evaluate(const FlowField& pred, const FlowField& gt, const UncertaintyField& unc, double k, int bins) {
  return evaluate(error_field(pred, gt), unc, k, bins);
}

Evaluation evaluate(const ErrorField& err, const UncertaintyField& unc, double k, int bins) {
  require_shapes(err, unc);
  Evaluation ev;
  auto& r = ev.report;
  r.k_sigma = k;
  const auto cc = coverage_per_component(err, unc, k);
  r.coverage_u = cc.u;
  r.coverage_v = cc.v;
  r.coverage = 0.5 * (cc.u + cc.v);

  const std::size_t n = err.e_u.size();
  std::vector<double> mag;
  std::vector<double> sig;
  mag.reserve(2 * n);
  sig.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    mag.push_back(std::abs(err.e_u[i]));
    sig.push_back(unc.sigma_u[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    mag.push_back(std::abs(err.e_v[i]));
    sig.push_back(unc.sigma_v[i]);
  }
  r.n_points = static_cast<long long>(2 * n);
  r.cc = spearman_cc(mag, sig);
  r.mean_sigma = std::accumulate(sig.begin(), sig.end(), 0.0) / static_cast<double>(sig.size());
  r.mean_epe = std::accumulate(err.epe.begin(), err.epe.end(), 0.0) / static_cast<double>(n);

  const auto score = uncertainty_score(unc);
  ev.curve = sparsification(err.epe.values(), score.values(), bins);
  r.auc = auc(ev.curve);
  r.oracle_auc = oracle_auc(ev.curve);
  return ev;
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["coverage"] = r.coverage;
  j["coverage_u"] = r.coverage_u;
  j["coverage_v"] = r.coverage_v;
  j["cc"] = r.cc;
  j["auc"] = r.auc;
  j["oracle_auc"] = r.oracle_auc;
  j["n_points"] = r.n_points;
  j["k_sigma"] = r.k_sigma;
  j["mean_sigma"] = r.mean_sigma;
  j["mean_epe"] = r.mean_epe;
  return j.dump(2);
}

void write_curve_csv(const SparsificationCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "fraction,normalized_error,oracle_error\n";
  char line[128];
  for (int i = 0; i < curve.bins(); ++i) {
    std::snprintf(line, sizeof line, "%.6f,%.9g,%.9g\n", curve.fractions[i], curve.normalized_error[i],
                  curve.oracle_error[i]);
    out << line;
  }
}

std::string sparsification_svg(std::span<const CurveSeries> series, const std::string& title) {
  constexpr double kW = 480, kH = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;
  double ymax = 1.0;
  for (const auto& s : series)
    for (double v : s.values) ymax = std::max(ymax, v);
  ymax *= 1.05;

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  // axes
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">fraction of pixels kept</text>\n";
  svg << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << kTop + ph / 2 << ")\">normalized EPE</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = t / 4.0;
    const double x = kLeft + fx * pw;
    svg << "<text x=\"" << x << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\" font-size=\"10\">" << fx
        << "</text>\n";
    const double fy = ymax * t / 4.0;
    const double y = kTop + ph - (fy / ymax) * ph;
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << fy
        << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& cs = series[s];
    const char* color = kColors[s % 6];
    svg << "<path fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" d=\"";
    for (std::size_t i = 0; i < cs.fractions.size(); ++i) {
      const double x = kLeft + cs.fractions[i] * pw;
      const double y = kTop + ph - (cs.values[i] / ymax) * ph;
      svg << (i == 0 ? "M" : " L") << x << ' ' << y;
    }
    svg << "\"/>\n";
    const double ly = kTop + 14 + 16.0 * static_cast<double>(s);
    svg << "<line x1=\"" << kLeft + 10 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + 30 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    svg << "<text x=\"" << kLeft + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << cs.label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_sparsification_svg(const SparsificationCurve& curve, const std::string& title,
                              const std::filesystem::path& path) {
  const CurveSeries series[] = {{"predicted", curve.fractions, curve.normalized_error},
                                {"oracle", curve.fractions, curve.oracle_error}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << sparsification_svg(series, title);
}

}  // namespace pivuq
