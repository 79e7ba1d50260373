// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"
#include "json.hpp"
#include "pivuq/errors.hpp"
#include "pivuq/flowdata.hpp"
#include "pivuq/harness.hpp"
#include "pivuq/metrics.hpp"
#include "pivuq/pivcc.hpp"
#include "pivuq/rng.hpp"
#include "pivuq/synthgen.hpp"
#include "pivuq/unn.hpp"
#include "pivuq/uqensemble.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace pivuq;
using pivuq::testing::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

Grid<double> grid_from(int w, int h, const std::function<double()>& gen) {
  Grid<double> g(w, h);
  for (auto& x : g) x = gen();
  return g;
}

// 1-based ranks by an independent argsort; inputs are tie-free.
std::vector<double> plain_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i + 1);
  return r;
}

// Mean epe of the kept pixels after dropping the largest-epe ones, by brute force.
std::vector<double> brute_oracle_curve(const std::vector<double>& epe, const std::vector<double>& fractions) {
  std::vector<double> sorted = epe;
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0) / sorted.size();
  std::vector<double> out;
  for (double f : fractions) {
    const auto keep = static_cast<std::size_t>(std::ceil(f * sorted.size() - 1e-9));
    double s = 0.0;
    for (std::size_t i = 0; i < keep; ++i) s += sorted[i];
    out.push_back(keep == 0 ? 0.0 : s / keep / total);
  }
  return out;
}

// ---------------------------------------------------------------------------

Verdict coverage_calibration() {
  const auto t0 = Clock::now();
  const int w = 400, h = 250;  // 1e5 pixels
  Rng rng(101);
  auto su = grid_from(w, h, [&] { return rng.uniform(0.05, 3.0); });
  auto sv = grid_from(w, h, [&] { return rng.uniform(0.05, 3.0); });
  Grid<double> eu(w, h), ev(w, h);
  for (std::size_t i = 0; i < eu.size(); ++i) {
    eu[i] = su[i] * rng.normal();
    ev[i] = sv[i] * rng.normal();
  }
  const UncertaintyField unc(su, sv);
  const ErrorField err = error_field_from_components(eu, ev);
  const double c2 = coverage(err, unc, 2.0);
  const double c1 = coverage(err, unc, 1.0);
  const double elapsed = seconds_since(t0);

  long long n2 = 0, n1 = 0;
  for (std::size_t i = 0; i < eu.size(); ++i) {
    n2 += (std::abs(eu[i]) < 2 * su[i]) + (std::abs(ev[i]) < 2 * sv[i]);
    n1 += (std::abs(eu[i]) < su[i]) + (std::abs(ev[i]) < sv[i]);
  }
  const double total = 2.0 * static_cast<double>(eu.size());
  const bool counts = c2 == n2 / total && c1 == n1 / total;
  const bool pass = c2 >= 0.949 && c2 <= 0.959 && c1 >= 0.678 && c1 <= 0.688 && elapsed < 1.0 && counts;
  return {pass, fmt("k=2 %.4f, k=1 %.4f, direct count %s, %.3f s", c2, c1, counts ? "agrees" : "DISAGREES", elapsed)};
}

Verdict spearman_closed_form() {
  Rng rng(202);
  const int n = 1000;
  double worst = 0.0;
  int vectors = 0;
  while (vectors < 100) {
    std::vector<double> x(n), y(n);
    const double mix = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = mix * x[i] + rng.normal();
    }
    auto tie_free = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return std::adjacent_find(v.begin(), v.end()) == v.end();
    };
    if (!tie_free(x) || !tie_free(y)) continue;
    const auto rx = plain_ranks(x), ry = plain_ranks(y);
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    const double closed = 1.0 - 6.0 * d2 / (static_cast<double>(n) * (static_cast<double>(n) * n - 1.0));
    worst = std::max(worst, std::abs(spearman_cc(x, y) - closed));
    ++vectors;
  }
  return {worst <= 1e-12, fmt("%d vectors of %d, worst |diff| %.3g", vectors, n, worst)};
}

Verdict sparsification_properties() {
  std::string detail;
  bool pass = true;

  // epe-identical orderings reproduce the oracle exactly
  Rng rng(303);
  const int n = 20000;
  std::vector<double> epe(n);
  for (auto& e : epe) e = -std::log(1.0 - rng.uniform()) * 0.4;
  for (int i = 0; i < 500; ++i) epe[rng.below(n)] = 0.25;  // ties
  std::vector<double> affine(n);
  for (int i = 0; i < n; ++i) affine[i] = 3.0 * epe[i] + 1.0;
  int identical_mismatch = 0;
  double brute_worst = 0.0;
  for (const auto* score : {&epe, &affine}) {
    const auto c = sparsification(epe, *score, 50);
    if (c.normalized_error != c.oracle_error) ++identical_mismatch;
    if (auc(c) != oracle_auc(c)) ++identical_mismatch;
    const auto brute = brute_oracle_curve(epe, c.fractions);
    for (std::size_t i = 0; i < brute.size(); ++i)
      brute_worst = std::max(brute_worst, std::abs(brute[i] - c.oracle_error[i]));
  }
  pass &= identical_mismatch == 0 && brute_worst <= 1e-12;
  detail += fmt("identical-order mismatches %d, oracle vs brute force %.2g", identical_mismatch, brute_worst);

  // oracle AUC never exceeds predicted AUC
  int fixtures = 0, violations = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(1000 + seed);
    const int m = 500 + static_cast<int>(r.below(4000));
    std::vector<double> e(m);
    for (auto& x : e) x = seed % 3 == 0 ? r.uniform() : -std::log(1.0 - r.uniform());
    std::vector<std::vector<double>> scores(5, std::vector<double>(m));
    for (int i = 0; i < m; ++i) {
      scores[0][i] = r.uniform();
      scores[1][i] = e[i] * (1.0 + 0.3 * r.normal());
      scores[2][i] = -e[i];
      scores[3][i] = e[i];
      scores[4][i] = std::floor(4.0 * r.uniform());
    }
    for (const auto& s : scores) {
      const auto c = sparsification(e, s, 1 + static_cast<int>(seed % 7) * 10);
      ++fixtures;
      if (oracle_auc(c) > auc(c)) ++violations;
    }
  }
  {
    const auto g = pivuq::testing::translation_pair(2.3, -1.2, 31, 96);
    const auto mm = mm_estimate(g.pair, default_mm_configs());
    const auto err = error_field(mm.mean_flow, g.ground_truth);
    const auto score = uncertainty_score(mm.uncertainty);
    const auto c = sparsification(err.epe.values(), score.values(), 50);
    ++fixtures;
    if (oracle_auc(c) > auc(c)) ++violations;
  }
  pass &= violations == 0;
  detail += fmt("; oracle > predicted on %d of %d fixtures", violations, fixtures);

  // random scores give a flat curve
  const int big = 100000;
  std::vector<double> e(big), s(big);
  for (int i = 0; i < big; ++i) {
    e[i] = -std::log(1.0 - rng.uniform());
    s[i] = rng.uniform();
  }
  const double random_auc = auc(sparsification(e, s, 50));
  pass &= std::abs(random_auc - 1.0) <= 0.05;
  detail += fmt("; random-score AUC %.4f", random_auc);
  return {pass, detail};
}

Verdict mt_oracle_zero_spread() {
  const auto scenes = default_scenes(10, 404);
  int nonzero = 0;
  std::size_t members = 0;
  for (const auto& s : scenes) {
    const auto g = generate_pair(s.scene, s.flow);
    const pivuq::testing::OracleEstimator oracle(g.pair, s.flow);
    const auto r = mt_estimate(g.pair, oracle, default_mt_angles());
    members += r.member_flows.size();
    const auto st = ensemble_statistics(r.member_flows);
    for (std::size_t i = 0; i < st.std_u.size(); ++i) nonzero += (st.std_u[i] != 0.0) + (st.std_v[i] != 0.0);
  }
  return {nonzero == 0 && members == 4 * scenes.size(),
          fmt("%zu scenes, %zu member flows, %d nonzero spreads", scenes.size(), members, nonzero)};
}

Verdict shift_accuracy() {
  const auto t0 = Clock::now();
  std::set<std::pair<double, double>> integer_shifts, half_shifts;
  for (int s = -6; s <= 6; ++s) {
    integer_shifts.insert({s, 0});
    integer_shifts.insert({0, s});
    integer_shifts.insert({s, -s});
  }
  for (double s = -5.5; s <= 5.5; s += 1.0) {
    half_shifts.insert({s, 0});
    half_shifts.insert({0, s});
    half_shifts.insert({s, -s});
  }
  const int seeds = 20;
  auto worst_error = [&](const std::set<std::pair<double, double>>& shifts) {
    double worst = 0.0;
    for (int seed = 0; seed < seeds; ++seed) {
      for (const auto& [u, v] : shifts) {
        const auto g = pivuq::testing::translation_pair(u, v, 5000 + seed, 96);
        const auto wg = estimate_windows(g.pair, EstimatorConfig{});
        for (std::size_t i = 0; i < wg.u.size(); ++i) {
          if (!wg.interior[i]) continue;
          worst = std::max({worst, std::abs(wg.u[i] - u), std::abs(wg.v[i] - v)});
        }
      }
    }
    return worst;
  };
  const double wi = worst_error(integer_shifts);
  const double wh = worst_error(half_shifts);
  const double elapsed = seconds_since(t0);
  return {wi <= 0.1 && wh <= 0.15 && elapsed < 30.0,
          fmt("%d seeds, worst integer %.4f px over %zu shifts, worst half-pixel %.4f px over %zu shifts, %.1f s",
              seeds, wi, integer_shifts.size(), wh, half_shifts.size(), elapsed)};
}

Verdict gradient_check_16() {
  const auto f = pivuq::testing::grad_fixture(16, 606);
  const auto r = pivuq::testing::gradient_check(f, 1e-4, 1e-3);
  const std::size_t params = f.model.parameter_count();
  return {r.failed == 0 && r.skipped == 0 && r.checked == params,
          fmt("%zu of %zu weights checked, %zu unusable, %zu failed, worst relative %.2g", r.checked, params,
              r.skipped, r.failed, r.worst_rel)};
}

Verdict toy_training() {
  const auto t0 = Clock::now();
  const auto train_set = pivuq::testing::toy_dataset(16, 1, 64);
  TrainConfig cfg;
  cfg.steps = 1500;
  cfg.learning_rate = 3e-3;
  cfg.crop_size = 32;
  cfg.batch = 4;
  const auto trained = train(train_set, cfg);
  const double elapsed = seconds_since(t0);

  std::vector<double> sigma, abs_err;
  double high = 0.0, low = 0.0;
  const auto held_out = pivuq::testing::toy_dataset(4, 2, 64);
  for (const auto& s : held_out) {
    const auto unc = forward(trained.model, s.pair, s.pred, cfg.flow_scale);
    const auto score = uncertainty_score(unc);
    const auto err = error_field(s.pred, s.gt);
    sigma.insert(sigma.end(), score.begin(), score.end());
    abs_err.insert(abs_err.end(), err.epe.begin(), err.epe.end());
    const auto r = pivuq::testing::region_sigma(unc);
    high += r.right / held_out.size();
    low += r.left / held_out.size();
  }
  const double cc = spearman_cc(abs_err, sigma);
  return {cc >= 0.6 && high > low && elapsed < 600.0,
          fmt("held-out CC %.3f, mean sigma high %.3f vs low %.3f, training %.1f s", cc, high, low, elapsed)};
}

Verdict degradation_trends() {
  TempDir dir("accept_matrix");
  ExperimentSpec spec;
  spec.scenes = default_scenes(10, 0);
  spec.output_dir = dir.path();
  spec.write_fields = false;
  const auto rec = run_matrix(spec);

  bool pass = true;
  std::string detail;
  for (const auto& [axis, table] : {std::pair{"noise", &rec.noise_table}, std::pair{"blur", &rec.blur_table}}) {
    for (Method m : spec.methods) {
      std::vector<const TableRow*> rows;
      for (const auto& row : *table)
        if (row.method == m) rows.push_back(&row);
      std::string cc_list, sigma_list;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i]->scenes < 10) pass = false;
        cc_list += fmt("%s%.3f", i ? "/" : "", rows[i]->mean.cc);
        sigma_list += fmt("%s%.4f", i ? "/" : "", rows[i]->mean.mean_sigma);
        if (i == 0) continue;
        const bool cc_ok = rows[i]->mean.cc <= rows[i - 1]->mean.cc + 0.05;
        const bool sigma_ok = rows[i]->mean.mean_sigma >= rows[i - 1]->mean.mean_sigma;
        if (!cc_ok) cc_list += "(!)";
        if (!sigma_ok) sigma_list += "(!)";
        pass &= cc_ok && sigma_ok;
      }
      detail += fmt("%s%s %s cc %s sigma %s", detail.empty() ? "" : "; ", to_string(m).c_str(), axis,
                    cc_list.c_str(), sigma_list.c_str());
    }
  }
  return {pass, detail};
}

Verdict oracle_like_beats_random() {
  const auto scenes = default_scenes(10, 909);
  int wins = 0;
  double auc_good = 0, auc_rand = 0, cc_good = 0, cc_rand = 0;
  Rng rng(910);
  for (const auto& s : scenes) {
    const auto g = generate_pair(s.scene, s.flow);
    const auto err = error_field(estimate(g.pair, EstimatorConfig{}), g.ground_truth);
    const int w = err.width(), h = err.height();
    Grid<double> gu(w, h), gv(w, h), ru(w, h), rv(w, h);
    for (std::size_t i = 0; i < gu.size(); ++i) {
      gu[i] = std::abs(err.e_u[i]) * (1.0 + 0.1 * rng.normal());
      gv[i] = std::abs(err.e_v[i]) * (1.0 + 0.1 * rng.normal());
      ru[i] = rng.uniform(0.01, 1.0);
      rv[i] = rng.uniform(0.01, 1.0);
    }
    const auto good = evaluate(err, UncertaintyField::with_floor(gu, gv, kSigmaFloor)).report;
    const auto rand = evaluate(err, UncertaintyField(ru, rv)).report;
    wins += good.auc < rand.auc && good.cc > rand.cc;
    auc_good += good.auc / scenes.size();
    auc_rand += rand.auc / scenes.size();
    cc_good += good.cc / scenes.size();
    cc_rand += rand.cc / scenes.size();
  }
  return {wins == static_cast<int>(scenes.size()),
          fmt("%d of %zu scenes; mean AUC %.3f vs %.3f, mean CC %.3f vs %.3f", wins, scenes.size(), auc_good,
              auc_rand, cc_good, cc_rand)};
}

Verdict cli_reproducible() {
  TempDir dir("accept_cli");
  const fs::path out = dir / "run";
  const std::string d = out.string();
  const std::string pair = " --a " + d + "/gen/pairs/frame_a.pgm --b " + d + "/gen/pairs/frame_b.pgm";
  const std::vector<std::string> commands{
      "generate --flow lamb_oseen --circulation 200 --core-radius 8 --width 96 --height 96 --seed 5 "
      "--noise-var 5 --blur-sigma 1 --noise-seed 6 --out " + d + "/gen",
      "estimate" + pair + " --out " + d + "/est.flo",
      "uq --method mm" + pair + " --out " + d + "/uq",
      "uq --method mt" + pair + " --out " + d + "/uq",
      "train-unn --scenes 3 --size 64 --steps 15 --seed 3 --history " + d + "/history.csv --out " + d + "/unn.bin",
      "uq --method unn --model " + d + "/unn.bin" + pair + " --out " + d + "/uq",
      "evaluate --pred " + d + "/uq/flows/mt.flo --gt " + d + "/gen/flows/gt.flo --unc " + d +
          "/uq/unc/mt.unc --out " + d + "/eval.json --curve " + d + "/curve.csv --svg " + d + "/curve.svg",
      "report --scenes 2 --size 64 --methods mm,mt,unn --model " + d + "/unn.bin --out " + d + "/report",
  };

  auto run_all = [&]() -> std::string {
    fs::remove_all(out);
    fs::create_directories(out / "logs");
    for (std::size_t i = 0; i < commands.size(); ++i) {
      const std::string log = (out / "logs" / ("cmd" + std::to_string(i))).string();
      const std::string cmd = std::string(PIVUQ_CLI_PATH) + " " + commands[i] + " > " + log + ".out 2> " + log + ".err";
      const int status = std::system(cmd.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return "command " + std::to_string(i) + " failed";
    }
    return "";
  };
  // The run record carries wall-clock timings by design; those fields are
  // dropped before comparing it. Every other file is compared byte for byte.
  auto snapshot = [&] {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
      if (!e.is_regular_file()) continue;
      std::string bytes = pivuq::testing::slurp(e.path());
      if (e.path().filename() == "run.json") {
        auto j = nlohmann::json::parse(bytes);
        std::function<void(nlohmann::json&)> strip = [&](nlohmann::json& node) {
          if (node.is_object()) node.erase("seconds");
          if (node.is_structured())
            for (auto& child : node) strip(child);
        };
        strip(j);
        bytes = j.dump();
      }
      files[fs::relative(e.path(), out).string()] = std::move(bytes);
    }
    return files;
  };

  if (auto e = run_all(); !e.empty()) return {false, e};
  const auto first = snapshot();
  if (auto e = run_all(); !e.empty()) return {false, "rerun: " + e};
  const auto second = snapshot();

  int differing = 0;
  std::map<std::string, int> kinds;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) ++differing;
    kinds[fs::path(name).extension().string()]++;
  }
  const bool covered = kinds[".flo"] > 0 && kinds[".unc"] > 0 && kinds[".csv"] > 0;
  return {differing == 0 && first.size() == second.size() && covered,
          fmt("%zu files (%d .flo, %d .unc, %d .csv), %d differ", first.size(), kinds[".flo"], kinds[".unc"],
              kinds[".csv"], differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria{
      {"coverage calibration", coverage_calibration},
      {"spearman closed form", spearman_closed_form},
      {"sparsification properties", sparsification_properties},
      {"mt oracle zero spread", mt_oracle_zero_spread},
      {"shift accuracy", shift_accuracy},
      {"unn gradient check", gradient_check_16},
      {"unn two-region training", toy_training},
      {"degradation trends", degradation_trends},
      {"informative sigma beats random", oracle_like_beats_random},
      {"cli reproducibility", cli_reproducible},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
