#include "pivuq/uqensemble.hpp"

#include <cmath>
#include <sstream>

namespace pivuq {

EnsembleStatistics ensemble_statistics(std::span<const FlowField> members) {
  if (members.size() < 2) throw EnsembleError("an ensemble needs at least two members");
  const auto& first = members.front();
  for (const auto& m : members) {
    if (!m.same_shape(first)) throw DimensionError("ensemble members differ in shape");
  }
  const int w = first.width();
  const int h = first.height();
  const double n = static_cast<double>(members.size());

  EnsembleStatistics st{FlowField(w, h), Grid<double>(w, h), Grid<double>(w, h)};
  // Welford updates: identical members leave the deltas, and so the spread, exactly zero.
  for (std::size_t i = 0; i < st.std_u.size(); ++i) {
    double mu = 0.0, mv = 0.0, qu = 0.0, qv = 0.0, k = 0.0;
    for (const auto& m : members) {
      k += 1.0;
      const double du = m.u[i] - mu;
      const double dv = m.v[i] - mv;
      mu += du / k;
      mv += dv / k;
      qu += du * (m.u[i] - mu);
      qv += dv * (m.v[i] - mv);
    }
    st.mean.u[i] = mu;
    st.mean.v[i] = mv;
    st.std_u[i] = std::sqrt(qu / (n - 1.0));
    st.std_v[i] = std::sqrt(qv / (n - 1.0));
  }
  return st;
}

EnsembleResult aggregate(std::vector<FlowField> members) {
  auto st = ensemble_statistics(members);
  return {std::move(st.mean), UncertaintyField::with_floor(std::move(st.std_u), std::move(st.std_v), kSigmaFloor),
          std::move(members)};
}

RotationAngle rotation_from_degrees(int degrees) {
  switch (degrees) {
    case 0: return RotationAngle::deg0;
    case 90: return RotationAngle::deg90;
    case 180: return RotationAngle::deg180;
    case 270: return RotationAngle::deg270;
    default: throw ParameterError("rotation must be one of 0, 90, 180, 270; got " + std::to_string(degrees));
  }
}

int quarter_turns(RotationAngle angle) noexcept { return static_cast<int>(angle) / 90; }

RotationAngle compose(RotationAngle a, RotationAngle b) noexcept {
  return static_cast<RotationAngle>((static_cast<int>(a) + static_cast<int>(b)) % 360);
}

std::vector<RotationAngle> default_mt_angles() {
  return {RotationAngle::deg0, RotationAngle::deg90, RotationAngle::deg180, RotationAngle::deg270};
}

std::vector<RotationAngle> parse_angles(const std::string& csv) {
  std::vector<RotationAngle> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int deg = 0;
    try {
      deg = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw ParameterError("bad angle '" + item + "'");
    }
    if (used != item.size()) throw ParameterError("bad angle '" + item + "'");
    out.push_back(rotation_from_degrees(deg));
  }
  return out;
}

ImagePair rotate_pair(const ImagePair& pair, RotationAngle angle) {
  const int k = quarter_turns(angle);
  return ImagePair(rotate_quarter_turns(pair.frame_a, k), rotate_quarter_turns(pair.frame_b, k));
}

FlowField rotate_flow_back(const FlowField& flow, RotationAngle angle) {
  return rotate_flow(flow, -quarter_turns(angle));
}

EnsembleResult mm_estimate(const ImagePair& pair, std::span<const FlowEstimator* const> estimators) {
  if (estimators.size() < 2) throw EnsembleError("multiple-model ensemble needs at least two estimators");
  std::vector<FlowField> members;
  for (const auto* est : estimators) {
    try {
      members.push_back(est->estimate(pair));
    } catch (const Error&) {
      // dropped member
    }
  }
  if (members.size() < 2) {
    throw EnsembleError("only " + std::to_string(members.size()) + " ensemble members survived");
  }
  return aggregate(std::move(members));
}

EnsembleResult mm_estimate(const ImagePair& pair, std::span<const EstimatorConfig> configs) {
  std::vector<CrossCorrelationEstimator> owned;
  owned.reserve(configs.size());
  for (const auto& cfg : configs) owned.emplace_back(cfg);
  std::vector<const FlowEstimator*> ptrs;
  for (const auto& e : owned) ptrs.push_back(&e);
  return mm_estimate(pair, ptrs);
}

EnsembleResult mt_estimate(const ImagePair& pair, const FlowEstimator& estimator,
                           std::span<const RotationAngle> angles) {
  if (angles.size() < 2) throw EnsembleError("multiple-transform ensemble needs at least two angles");
  std::vector<FlowField> members;
  for (const auto angle : angles) {
    try {
      members.push_back(rotate_flow_back(estimator.estimate(rotate_pair(pair, angle)), angle));
    } catch (const Error&) {
      // dropped member
    }
  }
  if (members.size() < 2) {
    throw EnsembleError("only " + std::to_string(members.size()) + " ensemble members survived");
  }
  return aggregate(std::move(members));
}

EnsembleResult mt_estimate(const ImagePair& pair, const EstimatorConfig& cfg,
                           std::span<const RotationAngle> angles) {
  const CrossCorrelationEstimator est(cfg);
  return mt_estimate(pair, est, angles);
}

}  // namespace pivuq
