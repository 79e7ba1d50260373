#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "pivuq/rng.hpp"
#include "pivuq/synthgen.hpp"
#include "pivuq/uqensemble.hpp"
#include "support.hpp"

using namespace pivuq;
using pivuq::testing::OracleEstimator;

namespace {

FlowField constant_flow(int w, int h, double u, double v) {
  return {Grid<double>(w, h, u), Grid<double>(w, h, v)};
}

FlowField random_flow(int w, int h, Rng& rng) {
  FlowField f(w, h);
  for (auto& x : f.u) x = rng.uniform(-4, 4);
  for (auto& x : f.v) x = rng.uniform(-4, 4);
  return f;
}

// Always fails, to exercise member dropping.
class FailingEstimator final : public FlowEstimator {
 public:
  FlowField estimate(const ImagePair&) const override { throw EstimationError("no"); }
  std::string name() const override { return "failing"; }
};

class ConstantEstimator final : public FlowEstimator {
 public:
  explicit ConstantEstimator(double u) : u_(u) {}
  FlowField estimate(const ImagePair& p) const override { return constant_flow(p.width(), p.height(), u_, -u_); }
  std::string name() const override { return "constant"; }

 private:
  double u_;
};

}  // namespace

TEST(Statistics, IdenticalMembersGiveZeroSpread) {
  Rng rng(1);
  const FlowField f = random_flow(9, 7, rng);
  const std::vector<FlowField> members{f, f, f, f};
  const auto st = ensemble_statistics(members);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    EXPECT_EQ(st.std_u[i], 0.0);
    EXPECT_EQ(st.std_v[i], 0.0);
    EXPECT_EQ(st.mean.u[i], f.u[i]);
  }
  const auto r = aggregate(members);
  for (double s : r.uncertainty.sigma_u) EXPECT_EQ(s, kSigmaFloor);
}

TEST(Statistics, TwoPointSample) {
  const auto r = aggregate({constant_flow(1, 1, 1.0, 0.0), constant_flow(1, 1, 3.0, 0.0)});
  EXPECT_DOUBLE_EQ(r.mean_flow.u(0, 0), 2.0);
  EXPECT_NEAR(r.uncertainty.sigma_u(0, 0), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(r.uncertainty.sigma_v(0, 0), kSigmaFloor);
}

TEST(Statistics, MatchesStraightLineRecompute) {
  Rng rng(2);
  std::vector<FlowField> members;
  for (int m = 0; m < 5; ++m) members.push_back(random_flow(11, 6, rng));
  const auto st = ensemble_statistics(members);
  for (std::size_t i = 0; i < st.std_u.size(); ++i) {
    double mean = 0;
    for (const auto& m : members) mean += m.u[i];
    mean /= members.size();
    double ss = 0;
    for (const auto& m : members) ss += (m.u[i] - mean) * (m.u[i] - mean);
    EXPECT_NEAR(st.mean.u[i], mean, 1e-12);
    EXPECT_NEAR(st.std_u[i], std::sqrt(ss / (members.size() - 1)), 1e-12);
  }
}

TEST(Statistics, PermutationInvariant) {
  Rng rng(3);
  std::vector<FlowField> members;
  for (int m = 0; m < 4; ++m) members.push_back(random_flow(8, 8, rng));
  const auto a = ensemble_statistics(members);
  std::reverse(members.begin(), members.end());
  std::swap(members[0], members[2]);
  const auto b = ensemble_statistics(members);
  for (std::size_t i = 0; i < a.std_u.size(); ++i) {
    EXPECT_NEAR(a.std_u[i], b.std_u[i], 1e-12);
    EXPECT_NEAR(a.std_v[i], b.std_v[i], 1e-12);
    EXPECT_NEAR(a.mean.u[i], b.mean.u[i], 1e-12);
  }
}

TEST(Statistics, ErrorsOnTinyOrMismatchedEnsembles) {
  EXPECT_THROW(ensemble_statistics(std::vector<FlowField>{FlowField(2, 2)}), EnsembleError);
  EXPECT_THROW(ensemble_statistics(std::vector<FlowField>{FlowField(2, 2), FlowField(3, 2)}), DimensionError);
}

TEST(Angles, ParsingAndComposition) {
  EXPECT_EQ(rotation_from_degrees(270), RotationAngle::deg270);
  EXPECT_THROW(rotation_from_degrees(45), ParameterError);
  EXPECT_EQ(compose(RotationAngle::deg270, RotationAngle::deg180), RotationAngle::deg90);
  EXPECT_EQ(compose(RotationAngle::deg180, RotationAngle::deg180), RotationAngle::deg0);
  const auto a = parse_angles("0, 90,180,270");
  EXPECT_EQ(a, default_mt_angles());
  EXPECT_THROW(parse_angles("0,30"), ParameterError);
}

TEST(Transforms, ZeroIsIdentity) {
  const auto g = pivuq::testing::translation_pair(1.2, -0.4, 4, 32);
  EXPECT_EQ(rotate_pair(g.pair, RotationAngle::deg0), g.pair);
  EXPECT_EQ(rotate_flow_back(g.ground_truth, RotationAngle::deg0), g.ground_truth);
}

TEST(Transforms, HalfTurnTwiceIsIdentity) {
  const auto g = pivuq::testing::translation_pair(1.2, -0.4, 5, 32);
  EXPECT_EQ(rotate_pair(rotate_pair(g.pair, RotationAngle::deg180), RotationAngle::deg180), g.pair);
  Rng rng(5);
  const FlowField f = random_flow(6, 6, rng);
  EXPECT_EQ(rotate_flow_back(rotate_flow_back(f, RotationAngle::deg180), RotationAngle::deg180), f);
}

TEST(Transforms, RotatedSceneGroundTruthBacktransformsExactly) {
  SceneSpec scene;
  scene.width = 48;
  scene.height = 48;
  scene.seed = 6;
  const auto flows = {AnalyticFlow::lamb_oseen(120.0, 5.0, 20.0, 27.0), AnalyticFlow::shear(0.08, 20.0),
                      AnalyticFlow::solid_rotation(0.1, 24.0, 24.0), AnalyticFlow::uniform(2.5, -1.0)};
  for (const auto& flow : flows) {
    const auto base = generate_pair(scene, flow);
    for (auto angle : default_mt_angles()) {
      const auto rot = generate_pair(scene, flow.rotated(quarter_turns(angle), 48, 48));
      EXPECT_EQ(rotate_flow_back(rot.ground_truth, angle), base.ground_truth)
          << to_string(flow.kind) << " " << static_cast<int>(angle);
    }
  }
}

TEST(Transforms, RectangularImagesTransposeConsistently) {
  Image a(30, 20);
  a(0, 29) = 9.0;
  const ImagePair r = rotate_pair(ImagePair(a, Image(30, 20)), RotationAngle::deg90);
  EXPECT_EQ(r.width(), 20);
  EXPECT_EQ(r.height(), 30);
  EXPECT_EQ(r.frame_a(0, 0), 9.0);
  const FlowField back = rotate_flow_back(FlowField(20, 30), RotationAngle::deg90);
  EXPECT_EQ(back.width(), 30);
  EXPECT_EQ(back.height(), 20);
}

TEST(MultipleTransforms, OracleEstimatorHasZeroSpread) {
  SceneSpec scene;
  scene.width = 64;
  scene.height = 64;
  scene.seed = 8;
  const auto flow = AnalyticFlow::lamb_oseen(150.0, 6.0, 30.0, 35.0);
  const auto g = generate_pair(scene, flow);
  const OracleEstimator oracle(g.pair, flow);
  const auto r = mt_estimate(g.pair, oracle, default_mt_angles());
  ASSERT_EQ(r.member_flows.size(), 4u);
  const auto st = ensemble_statistics(r.member_flows);
  for (std::size_t i = 0; i < st.std_u.size(); ++i) {
    ASSERT_EQ(st.std_u[i], 0.0);
    ASSERT_EQ(st.std_v[i], 0.0);
  }
  EXPECT_EQ(r.mean_flow, g.ground_truth);
}

TEST(MultipleTransforms, DuplicateAnglesGiveZeroSpread) {
  const auto g = pivuq::testing::translation_pair(2.2, 1.4, 9, 96);
  const std::vector<RotationAngle> angles{RotationAngle::deg0, RotationAngle::deg0};
  const auto r = mt_estimate(g.pair, EstimatorConfig{}, angles);
  for (double s : r.uncertainty.sigma_u) EXPECT_EQ(s, kSigmaFloor);
  for (double s : r.uncertainty.sigma_v) EXPECT_EQ(s, kSigmaFloor);
}

TEST(MultipleTransforms, NeedsTwoAngles) {
  const auto g = pivuq::testing::translation_pair(1, 1, 10, 64);
  const std::vector<RotationAngle> one{RotationAngle::deg90};
  EXPECT_THROW(mt_estimate(g.pair, EstimatorConfig{}, one), EnsembleError);
}

TEST(MultipleTransforms, SpreadGrowsWithNoise) {
  // dim particles so the noise levels are well separated in SNR
  SceneSpec scene;
  scene.width = 96;
  scene.height = 96;
  scene.peak_intensity = 40.0;
  double previous = -1.0;
  for (double var : {0.0, 25.0, 100.0}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      scene.seed = 100 + seed;
      const auto g = generate_pair(scene, AnalyticFlow::uniform(2.3, -1.6));
      const auto pair = degrade(g.pair, {var, 0.0, 200 + seed});
      const auto r = mt_estimate(pair, EstimatorConfig{}, default_mt_angles());
      double s = 0;
      for (std::size_t i = 0; i < r.uncertainty.sigma_u.size(); ++i)
        s += 0.5 * (r.uncertainty.sigma_u[i] + r.uncertainty.sigma_v[i]);
      total += s / r.uncertainty.sigma_u.size();
    }
    EXPECT_GT(total, previous) << "noise var " << var;
    previous = total;
  }
}

TEST(MultipleModels, DropsFailingMembers) {
  const auto g = pivuq::testing::translation_pair(1, 1, 11, 32);
  const ConstantEstimator a(1.0), b(3.0);
  const FailingEstimator bad;
  std::vector<const FlowEstimator*> members{&a, &bad, &b};
  const auto r = mm_estimate(g.pair, members);
  EXPECT_EQ(r.member_flows.size(), 2u);
  EXPECT_NEAR(r.uncertainty.sigma_u(0, 0), std::sqrt(2.0), 1e-12);
  members = {&a, &bad};
  EXPECT_THROW(mm_estimate(g.pair, members), EnsembleError);
}

TEST(MultipleModels, VortexSpreadPeaksNearCore) {
  SceneSpec scene;
  scene.width = 128;
  scene.height = 128;
  scene.seed = 12;
  const double cx = 63.5, cy = 63.5, rc = 6.0;
  const auto g = generate_pair(scene, AnalyticFlow::lamb_oseen(300.0, rc, cx, cy));
  const auto cfgs = default_mm_configs();
  const auto r = mm_estimate(g.pair, cfgs);
  ASSERT_EQ(r.member_flows.size(), 4u);

  // Independent spread: max minus min of member magnitudes of (u, v) difference.
  double core = 0, far = 0;
  int nc = 0, nf = 0;
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      double su = 0, sv = 0;
      for (const auto& m : r.member_flows) {
        su += m.u(y, x);
        sv += m.v(y, x);
      }
      su /= 4;
      sv /= 4;
      double q = 0;
      for (const auto& m : r.member_flows) q += std::pow(m.u(y, x) - su, 2) + std::pow(m.v(y, x) - sv, 2);
      EXPECT_NEAR(r.uncertainty.sigma_u(y, x) * r.uncertainty.sigma_u(y, x) +
                      r.uncertainty.sigma_v(y, x) * r.uncertainty.sigma_v(y, x),
                  std::max(q / 3.0, 0.0) + 0.0, 1e-9 + 2 * kSigmaFloor * kSigmaFloor);
      if (d < 2 * rc) {
        core += std::sqrt(q / 3.0);
        ++nc;
      } else if (d > 4 * rc && d < 55) {
        far += std::sqrt(q / 3.0);
        ++nf;
      }
    }
  }
  EXPECT_GT(core / nc, 2.0 * far / nf);
}
