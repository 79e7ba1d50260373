#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "pivuq/rng.hpp"
#include "pivuq/synthgen.hpp"
#include "pivuq/unn.hpp"
#include "pivuq/uqensemble.hpp"

namespace pivuq::testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pivuq_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

inline GeneratedPair translation_pair(double u, double v, std::uint64_t seed, int size = 64) {
  SceneSpec scene;
  scene.width = size;
  scene.height = size;
  scene.seed = seed;
  return generate_pair(scene, AnalyticFlow::uniform(u, v));
}

// Returns the analytic ground truth of whichever orientation of the scene it is handed.
class OracleEstimator final : public FlowEstimator {
 public:
  OracleEstimator(const ImagePair& pair, const AnalyticFlow& flow) {
    for (auto angle : default_mt_angles()) {
      const int k = quarter_turns(angle);
      const ImagePair rp = rotate_pair(pair, angle);
      cases_.push_back({rp, sample_flow(flow.rotated(k, pair.width(), pair.height()), rp.width(), rp.height())});
    }
  }
  FlowField estimate(const ImagePair& pair) const override {
    for (const auto& [p, f] : cases_)
      if (p == pair) return f;
    throw EstimationError("oracle has no ground truth for this orientation");
  }
  std::string name() const override { return "oracle"; }

 private:
  std::vector<std::pair<ImagePair, FlowField>> cases_;
};

// Two-region heteroscedastic toy set: the flow input is the ground truth plus
// Gaussian noise with std 0.2 px on the left half and 1.0 px on the right.
inline constexpr double kToyLowSigma = 0.2;
inline constexpr double kToyHighSigma = 1.0;

inline std::vector<TrainSample> toy_dataset(int count, std::uint64_t seed, int size = 64) {
  std::vector<TrainSample> out;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    SceneSpec scene;
    scene.width = size;
    scene.height = size;
    scene.seed = seed * 1000 + static_cast<std::uint64_t>(i);
    auto g = generate_pair(scene, AnalyticFlow::uniform(rng.uniform(-3, 3), rng.uniform(-3, 3)));
    FlowField pred = g.ground_truth;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double s = x < size / 2 ? kToyLowSigma : kToyHighSigma;
        pred.u(y, x) += s * rng.normal();
        pred.v(y, x) += s * rng.normal();
      }
    }
    out.push_back({g.pair, pred, g.ground_truth});
  }
  return out;
}

// Mean sigma (both components) over the left and right halves.
struct RegionSigma {
  double left = 0.0;
  double right = 0.0;
};

inline RegionSigma region_sigma(const UncertaintyField& unc) {
  double l = 0, r = 0;
  long nl = 0, nr = 0;
  for (int y = 0; y < unc.height(); ++y) {
    for (int x = 0; x < unc.width(); ++x) {
      const double s = 0.5 * (unc.sigma_u(y, x) + unc.sigma_v(y, x));
      if (x < unc.width() / 2) {
        l += s;
        ++nl;
      } else {
        r += s;
        ++nr;
      }
    }
  }
  return {l / nl, r / nr};
}

}  // namespace pivuq::testing
