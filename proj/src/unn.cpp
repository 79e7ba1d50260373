#include "pivuq/unn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pivuq/parallel.hpp"
#include "pivuq/rng.hpp"

namespace pivuq {

namespace {

struct LayerShape {
  const char* name;
  int in;
  int out;
  int stride;
};

constexpr LayerShape kArchitecture[UnnModel::kLayerCount] = {
    {"enc1", 4, 8, 1},   {"enc2", 8, 16, 2}, {"enc3", 16, 32, 2},
    {"dec2", 48, 16, 1}, {"dec1", 24, 8, 1}, {"head", 8, 2, 1},
};

std::size_t weight_index(const ConvLayer& l, int oc, int ic, int ky, int kx) {
  return ((static_cast<std::size_t>(oc) * l.in_channels + ic) * 3 + ky) * 3 + kx;
}

void require_finite(const Tensor& t, const std::string& layer) {
  for (double x : t.data) {
    if (!std::isfinite(x)) throw NumericError("non-finite activation in layer " + layer);
  }
}

Tensor conv_forward(const ConvLayer& l, const Tensor& in) {
  const int s = l.stride;
  const int ho = (in.height - 1) / s + 1;
  const int wo = (in.width - 1) / s + 1;
  Tensor out(l.out_channels, ho, wo);
  for (int oc = 0; oc < l.out_channels; ++oc) {
    double* op = out.plane(oc);
    std::fill(op, op + static_cast<std::size_t>(ho) * wo, l.bias[oc]);
    for (int ic = 0; ic < l.in_channels; ++ic) {
      const double* ip = in.plane(ic);
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double w = l.weights[weight_index(l, oc, ic, ky, kx)];
          const int ox_lo = kx == 0 ? 1 : 0;
          const int ox_hi = std::min(wo - 1, (in.width - kx) / s);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s + ky - 1;
            if (iy < 0 || iy >= in.height) continue;
            const double* irow = ip + static_cast<std::size_t>(iy) * in.width;
            double* orow = op + static_cast<std::size_t>(oy) * wo;
            if (s == 1) {
              const double* src = irow + kx - 1;
              for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += w * src[ox];
            } else {
              for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += w * irow[ox * s + kx - 1];
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates weight/bias gradients into `grad` and returns dL/d(input).
Tensor conv_backward(const ConvLayer& l, const Tensor& in, const Tensor& dout, ConvLayer& grad) {
  const int s = l.stride;
  const int ho = dout.height;
  const int wo = dout.width;
  Tensor din(l.in_channels, in.height, in.width);
  for (int oc = 0; oc < l.out_channels; ++oc) {
    const double* gp = dout.plane(oc);
    double bsum = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) bsum += gp[i];
    grad.bias[oc] += bsum;
    for (int ic = 0; ic < l.in_channels; ++ic) {
      const double* ip = in.plane(ic);
      double* dp = din.plane(ic);
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const std::size_t wi = weight_index(l, oc, ic, ky, kx);
          const double w = l.weights[wi];
          const int ox_lo = kx == 0 ? 1 : 0;
          const int ox_hi = std::min(wo - 1, (in.width - kx) / s);
          double gw = 0.0;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s + ky - 1;
            if (iy < 0 || iy >= in.height) continue;
            const double* irow = ip + static_cast<std::size_t>(iy) * in.width;
            double* drow = dp + static_cast<std::size_t>(iy) * in.width;
            const double* grow = gp + static_cast<std::size_t>(oy) * wo;
            for (int ox = ox_lo; ox <= ox_hi; ++ox) {
              const int ix = ox * s + kx - 1;
              gw += grow[ox] * irow[ix];
              drow[ix] += w * grow[ox];
            }
          }
          grad.weights[wi] += gw;
        }
      }
    }
  }
  return din;
}

void relu_inplace(Tensor& t) {
  for (double& x : t.data) x = x > 0.0 ? x : 0.0;
}

void relu_backward(const Tensor& out, Tensor& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(out.data[i] > 0.0)) grad.data[i] = 0.0;
  }
}

Tensor upsample2(const Tensor& in) {
  Tensor out(in.channels, in.height * 2, in.width * 2);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
  return out;
}

Tensor upsample2_backward(const Tensor& g) {
  Tensor out(g.channels, g.height / 2, g.width / 2);
  for (int c = 0; c < g.channels; ++c)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) out.at(c, y / 2, x / 2) += g.at(c, y, x);
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

std::pair<Tensor, Tensor> split(const Tensor& g, int first_channels) {
  Tensor a(first_channels, g.height, g.width);
  Tensor b(g.channels - first_channels, g.height, g.width);
  std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), a.data.begin());
  std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), g.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

UnnModel blank_model() {
  return UnnModel::zeros();
}

}  // namespace

bool operator==(const ConvLayer& a, const ConvLayer& b) {
  return a.name == b.name && a.in_channels == b.in_channels && a.out_channels == b.out_channels &&
         a.stride == b.stride && a.weights == b.weights && a.bias == b.bias;
}

bool operator==(const UnnModel& a, const UnnModel& b) { return a.layers_ == b.layers_; }

UnnModel UnnModel::zeros() {
  UnnModel m;
  for (const auto& shape : kArchitecture) {
    ConvLayer l;
    l.name = shape.name;
    l.in_channels = shape.in;
    l.out_channels = shape.out;
    l.stride = shape.stride;
    l.weights.assign(static_cast<std::size_t>(shape.out) * shape.in * 9, 0.0);
    l.bias.assign(static_cast<std::size_t>(shape.out), 0.0);
    m.layers_.push_back(std::move(l));
  }
  return m;
}

UnnModel UnnModel::initialize(std::uint64_t seed) {
  UnnModel m = zeros();
  Rng rng(seed);
  for (auto& l : m.layers_) {
    const double fan_in = l.in_channels * 9.0;
    const double fan_out = l.out_channels * 9.0;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : l.weights) w = rng.uniform(-limit, limit);
  }
  return m;
}

std::size_t UnnModel::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> UnnModel::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void UnnModel::unflatten(std::span<const double> params) {
  if (params.size() != parameter_count()) throw DimensionError("parameter vector has the wrong length");
  auto it = params.begin();
  for (auto& l : layers_) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(l.weights.size()), l.weights.begin());
    it += static_cast<std::ptrdiff_t>(l.weights.size());
    std::copy(it, it + static_cast<std::ptrdiff_t>(l.bias.size()), l.bias.begin());
    it += static_cast<std::ptrdiff_t>(l.bias.size());
  }
}

// File layout: "UNN1", int32 layer count, then per layer five int32s
// (out_channels, in_channels, kernel_h, kernel_w, stride) followed by float32
// weights [out][in][kh][kw] and float32 biases [out]. Little-endian throughout.
void UnnModel::save(const std::filesystem::path& path) const {
  std::vector<unsigned char> bytes = {'U', 'N', 'N', '1'};
  auto put32 = [&](std::uint32_t x) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(x >> (8 * i)));
  };
  put32(static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    for (int x : {l.out_channels, l.in_channels, 3, 3, l.stride}) put32(static_cast<std::uint32_t>(x));
    for (double w : l.weights) put32(std::bit_cast<std::uint32_t>(static_cast<float>(w)));
    for (double b : l.bias) put32(std::bit_cast<std::uint32_t>(static_cast<float>(b)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

UnnModel UnnModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t pos = 0;
  auto get32 = [&]() {
    if (pos + 4 > bytes.size()) throw FormatError("unn: truncated model file", pos);
    const std::uint32_t x = std::uint32_t{bytes[pos]} | (std::uint32_t{bytes[pos + 1]} << 8) |
                            (std::uint32_t{bytes[pos + 2]} << 16) | (std::uint32_t{bytes[pos + 3]} << 24);
    pos += 4;
    return x;
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "UNN1", 4) != 0) throw FormatError("unn: bad magic", 0);
  pos = 4;
  const std::size_t count_pos = pos;
  if (get32() != static_cast<std::uint32_t>(kLayerCount)) throw FormatError("unn: unexpected layer count", count_pos);
  UnnModel m = zeros();
  for (auto& l : m.layers_) {
    const std::size_t header_pos = pos;
    const int shape[5] = {static_cast<int>(get32()), static_cast<int>(get32()), static_cast<int>(get32()),
                          static_cast<int>(get32()), static_cast<int>(get32())};
    if (shape[0] != l.out_channels || shape[1] != l.in_channels || shape[2] != 3 || shape[3] != 3 ||
        shape[4] != l.stride) {
      throw FormatError("unn: layer " + l.name + " does not match the fixed architecture", header_pos);
    }
    for (double& w : l.weights) w = std::bit_cast<float>(get32());
    for (double& b : l.bias) b = std::bit_cast<float>(get32());
  }
  if (pos != bytes.size()) throw FormatError("unn: trailing bytes", pos);
  return m;
}

Tensor make_input(const ImagePair& pair, const FlowField& flow, double flow_scale) {
  if (pair.width() != flow.width() || pair.height() != flow.height()) {
    throw DimensionError("image pair and flow differ in shape");
  }
  if (!(flow_scale > 0.0)) throw ParameterError("flow_scale must be positive");
  const int w = pair.width();
  const int h = pair.height();
  const int pw = (w + 3) / 4 * 4;
  const int ph = (h + 3) / 4 * 4;
  Tensor t(UnnModel::kInputChannels, ph, pw);
  for (int y = 0; y < ph; ++y) {
    const int sy = reflect_index(y, h);
    for (int x = 0; x < pw; ++x) {
      const int sx = reflect_index(x, w);
      t.at(0, y, x) = pair.frame_a(sy, sx) / 255.0;
      t.at(1, y, x) = pair.frame_b(sy, sx) / 255.0;
      t.at(2, y, x) = flow.u(sy, sx) / flow_scale;
      t.at(3, y, x) = flow.v(sy, sx) / flow_scale;
    }
  }
  return t;
}

Tensor forward_log_sigma(const UnnModel& model, const Tensor& input, ForwardCache* cache) {
  if (input.channels != UnnModel::kInputChannels) throw DimensionError("network input needs 4 channels");
  if (input.height % 4 != 0 || input.width % 4 != 0) {
    throw DimensionError("network input size must be a multiple of 4");
  }
  const auto& L = model.layers();
  auto run = [&](int idx, const Tensor& x, bool relu) {
    Tensor y = conv_forward(L[idx], x);
    if (relu) relu_inplace(y);
    require_finite(y, L[idx].name);
    return y;
  };
  Tensor enc1 = run(0, input, true);
  Tensor enc2 = run(1, enc1, true);
  Tensor enc3 = run(2, enc2, true);
  Tensor cat2 = concat(upsample2(enc3), enc2);
  Tensor dec2 = run(3, cat2, true);
  Tensor cat1 = concat(upsample2(dec2), enc1);
  Tensor dec1 = run(4, cat1, true);
  Tensor head = run(5, dec1, false);

  Tensor log_sigma = head;
  for (double& s : log_sigma.data) s = std::clamp(s, kLogSigmaMin, kLogSigmaMax);
  if (cache) {
    *cache = ForwardCache{input,          std::move(enc1), std::move(enc2), std::move(enc3), std::move(cat2),
                          std::move(dec2), std::move(cat1), std::move(dec1), std::move(head)};
  }
  return log_sigma;
}

UncertaintyField forward(const UnnModel& model, const ImagePair& pair, const FlowField& flow, double flow_scale) {
  const Tensor ls = forward_log_sigma(model, make_input(pair, flow, flow_scale));
  Grid<double> su(pair.width(), pair.height());
  Grid<double> sv(pair.width(), pair.height());
  for (int y = 0; y < pair.height(); ++y) {
    for (int x = 0; x < pair.width(); ++x) {
      su(y, x) = std::exp(ls.at(0, y, x));
      sv(y, x) = std::exp(ls.at(1, y, x));
    }
  }
  return UncertaintyField(std::move(su), std::move(sv));
}

NllResult nll_loss(const UncertaintyField& sigma, const ErrorField& err) {
  if (!sigma.sigma_u.same_shape(err.e_u) || !sigma.sigma_v.same_shape(err.e_v)) {
    throw DimensionError("nll_loss: sigma and error differ in shape");
  }
  const double n = 2.0 * static_cast<double>(err.e_u.size());
  NllResult r{0.0, Grid<double>(err.width(), err.height()), Grid<double>(err.width(), err.height())};
  auto term = [&](double s, double e, double& grad) {
    const double log_s = std::log(s);
    if (log_s < kLogSigmaMin - 1e-9 || log_s > kLogSigmaMax + 1e-9) {
      throw ParameterError("nll_loss: sigma outside the clamp range");
    }
    const double ratio = e * e / (s * s);
    grad = (1.0 - ratio) / n;
    return log_s + 0.5 * ratio;
  };
  double acc = 0.0;
  for (std::size_t i = 0; i < err.e_u.size(); ++i) {
    acc += term(sigma.sigma_u[i], err.e_u[i], r.grad_log_sigma_u[i]);
    acc += term(sigma.sigma_v[i], err.e_v[i], r.grad_log_sigma_v[i]);
  }
  r.loss = acc / n;
  return r;
}

double nll_loss_tensor(const Tensor& log_sigma, const Tensor& error, Tensor* grad) {
  if (log_sigma.channels != 2 || error.channels != 2 || log_sigma.height != error.height ||
      log_sigma.width != error.width) {
    throw DimensionError("nll_loss_tensor: shape mismatch");
  }
  const double n = static_cast<double>(log_sigma.data.size());
  if (grad) *grad = Tensor(2, log_sigma.height, log_sigma.width);
  double acc = 0.0;
  for (std::size_t i = 0; i < log_sigma.data.size(); ++i) {
    const double s = log_sigma.data[i];
    const double e = error.data[i];
    const double ratio = e * e * std::exp(-2.0 * s);
    acc += s + 0.5 * ratio;
    if (grad) grad->data[i] = (1.0 - ratio) / n;
  }
  return acc / n;
}

UnnModel backward(const UnnModel& model, const ForwardCache& c, const Tensor& grad_log_sigma) {
  const auto& L = model.layers();
  UnnModel g = blank_model();
  auto& G = g.layers();

  Tensor g_head = grad_log_sigma;
  for (std::size_t i = 0; i < g_head.data.size(); ++i) {
    const double raw = c.head.data[i];
    if (raw <= kLogSigmaMin || raw >= kLogSigmaMax) g_head.data[i] = 0.0;
  }
  Tensor g_dec1 = conv_backward(L[5], c.dec1, g_head, G[5]);
  relu_backward(c.dec1, g_dec1);
  Tensor g_cat1 = conv_backward(L[4], c.cat1, g_dec1, G[4]);
  auto [g_up2, g_enc1_skip] = split(g_cat1, L[3].out_channels);
  Tensor g_dec2 = upsample2_backward(g_up2);
  relu_backward(c.dec2, g_dec2);
  Tensor g_cat2 = conv_backward(L[3], c.cat2, g_dec2, G[3]);
  auto [g_up3, g_enc2_skip] = split(g_cat2, L[2].out_channels);
  Tensor g_enc3 = upsample2_backward(g_up3);
  relu_backward(c.enc3, g_enc3);
  Tensor g_enc2 = conv_backward(L[2], c.enc2, g_enc3, G[2]);
  for (std::size_t i = 0; i < g_enc2.data.size(); ++i) g_enc2.data[i] += g_enc2_skip.data[i];
  relu_backward(c.enc2, g_enc2);
  Tensor g_enc1 = conv_backward(L[1], c.enc1, g_enc2, G[1]);
  for (std::size_t i = 0; i < g_enc1.data.size(); ++i) g_enc1.data[i] += g_enc1_skip.data[i];
  relu_backward(c.enc1, g_enc1);
  conv_backward(L[0], c.input, g_enc1, G[0]);
  return g;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (steps < 0) throw ParameterError("steps must be nonnegative");
  if (batch <= 0) throw ParameterError("batch must be positive");
  if (crop_size < 4) throw ParameterError("crop_size must be at least 4");
  if (!(flow_scale > 0.0)) throw ParameterError("flow_scale must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw ParameterError("invalid moment parameters");
  }
}

namespace {

struct PreparedSample {
  Tensor input;  // unpadded-size region is [0, h) x [0, w)
  Tensor error;  // gt - pred, 2 channels
  int width;
  int height;
};

PreparedSample prepare(const TrainSample& s, double flow_scale) {
  const ErrorField err = error_field(s.pred, s.gt);
  PreparedSample p{make_input(s.pair, s.pred, flow_scale), Tensor(2, s.gt.height(), s.gt.width()),
                   s.gt.width(), s.gt.height()};
  std::copy(err.e_u.begin(), err.e_u.end(), p.error.plane(0));
  std::copy(err.e_v.begin(), err.e_v.end(), p.error.plane(1));
  return p;
}

Tensor crop(const Tensor& t, int y0, int x0, int size) {
  Tensor out(t.channels, size, size);
  for (int c = 0; c < t.channels; ++c)
    for (int y = 0; y < size; ++y)
      std::copy_n(t.plane(c) + static_cast<std::size_t>(y0 + y) * t.width + x0, size,
                  out.plane(c) + static_cast<std::size_t>(y) * size);
  return out;
}

}  // namespace

TrainResult train(std::span<const TrainSample> dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ParameterError("training needs at least one sample");

  TrainResult result{UnnModel::initialize(mix_seed(cfg.seed, 0)), {}};
  if (cfg.steps == 0) return result;

  std::vector<PreparedSample> prepared;
  prepared.reserve(dataset.size());
  int crop_size = cfg.crop_size;
  for (const auto& s : dataset) {
    prepared.push_back(prepare(s, cfg.flow_scale));
    crop_size = std::min(crop_size, std::min(s.gt.width(), s.gt.height()));
  }
  crop_size = crop_size / 4 * 4;
  if (crop_size < 4) throw ParameterError("training images are smaller than 4 px");

  Rng rng(mix_seed(cfg.seed, 1));
  std::vector<double> params = result.model.flatten();
  std::vector<double> m(params.size(), 0.0);
  std::vector<double> v(params.size(), 0.0);
  double beta1_t = 1.0;
  double beta2_t = 1.0;

  struct Job {
    std::size_t sample;
    int y0;
    int x0;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Job> jobs;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto idx = static_cast<std::size_t>(rng.below(prepared.size()));
      const auto& p = prepared[idx];
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.height - crop_size + 1)));
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.width - crop_size + 1)));
      jobs.push_back({idx, y0, x0});
    }

    std::vector<double> losses(jobs.size());
    std::vector<std::vector<double>> grads(jobs.size());
    try {
      parallel_for(jobs.size(), [&](std::size_t j) {
        const auto& p = prepared[jobs[j].sample];
        const Tensor in = crop(p.input, jobs[j].y0, jobs[j].x0, crop_size);
        const Tensor err = crop(p.error, jobs[j].y0, jobs[j].x0, crop_size);
        ForwardCache cache;
        const Tensor ls = forward_log_sigma(result.model, in, &cache);
        Tensor g;
        losses[j] = nll_loss_tensor(ls, err, &g);
        grads[j] = backward(result.model, cache, g).flatten();
      });
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(),
                             result.loss_history);
    }

    double loss = 0.0;
    std::vector<double> grad(params.size(), 0.0);
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      loss += losses[j];
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += grads[j][i];
    }
    const double inv_batch = 1.0 / static_cast<double>(jobs.size());
    loss *= inv_batch;
    result.loss_history.push_back(loss);
    if (!std::isfinite(loss) || loss > 1e6) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step), result.loss_history);
    }

    beta1_t *= cfg.beta1;
    beta2_t *= cfg.beta2;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double gi = grad[i] * inv_batch;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / (1.0 - beta1_t);
      const double v_hat = v[i] / (1.0 - beta2_t);
      params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    result.model.unflatten(params);
  }
  return result;
}

double dataset_loss(const UnnModel& model, std::span<const TrainSample> dataset, double flow_scale) {
  if (dataset.empty()) throw ParameterError("dataset_loss needs at least one sample");
  double acc = 0.0;
  for (const auto& s : dataset) {
    acc += nll_loss(forward(model, s.pair, s.pred, flow_scale), error_field(s.pred, s.gt)).loss;
  }
  return acc / static_cast<double>(dataset.size());
}

}  // namespace pivuq
