// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
// Monte Carlo criteria use 2000 replicates per scenario.

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hct/hct.hpp"

using namespace hct;

namespace {

constexpr std::uint64_t kReps = 2000;
constexpr std::uint64_t kSeed = 20240601;

unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [out of band]");
  }
};

std::string fmt(double v, int digits = 3) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol; }

std::string band(double v, double target, double tol, int digits = 3) {
  return fmt(v, digits) + " vs " + fmt(target, digits) + "+-" + fmt(tol, digits);
}

class Runs {
 public:
  // Scenario key -> summary rows, computed on first use.
  const ScenarioResult& get(const std::string& key) {
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto cfg = parse_config(configs().at(key)).front();
    std::cerr << "  running " << key << " (" << cfg.replicates << " replicates)\n";
    return cache_.emplace(key, run_scenario(cfg, worker_count())).first->second;
  }

  const SummaryRow& row(const std::string& key, const std::string& method, int covset, const std::string& hp = "") {
    for (const auto& s : get(key).summary)
      if (s.method_id == method && s.covset == covset && s.hyperparam == hp) return s;
    throw std::runtime_error("no cell " + method + "/" + std::to_string(covset) + "/" + hp + " in " + key);
  }

 private:
  static std::string scenario(const std::string& id, const std::string& preset, bool null_effect,
                              const std::string& methods) {
    std::ostringstream os;
    os << R"({"scenario_id": ")" << id << R"(", "coefficients": ")" << preset << '"';
    if (null_effect) os << R"(, "theta_treat": 0)";
    os << R"(, "replicates": )" << kReps << R"(, "master_seed": )" << kSeed << R"(, "methods": )" << methods << "}";
    return os.str();
  }

  static const std::map<std::string, std::string>& configs() {
    static const std::map<std::string, std::string> c{
        {"single-moderate-null",
         scenario("single-moderate-null", "single-moderate", true,
                  R"([{"id": "MAP", "omega": [0.2, 1]}, "MM.nc",
                      {"id": "PSM+MAP", "covsets": [1], "omega": [0.5]}])")},
        {"single-moderate-alt",
         scenario("single-moderate-alt", "single-moderate", false,
                  R"([{"id": "PSM", "covsets": [1]}, {"id": "PSW", "covsets": [1]},
                      {"id": "PSM+MAP", "covsets": [1], "omega": [0.5]}])")},
        {"single-severe-null",
         scenario("single-severe-null", "single-severe", true,
                  R"([{"id": "PSM", "covsets": [3]}, {"id": "PSW", "covsets": [3]},
                      {"id": "PSS+PP", "covsets": [3]}])")},
        {"single-severe-alt",
         scenario("single-severe-alt", "single-severe", false, R"([{"id": "MM", "covsets": [1]}])")},
        {"multi-moderate-null", scenario("multi-moderate-null", "multi-moderate", true, R"(["unadj.rc"])")},
        {"multi-severe-null",
         scenario("multi-severe-null", "multi-severe", true, R"([{"id": "PSM", "covsets": [1, 3]}])")},
        {"multi-severe-alt",
         scenario("multi-severe-alt", "multi-severe", false,
                  R"([{"id": "PSW+MAP", "covsets": [1], "omega": [0.5], "tau": ["XS"]}])")},
    };
    return c;
  }

  std::map<std::string, ScenarioResult> cache_;
};

// ESSR bands accept either the per-replicate or the empirical variant.
void check_essr(Outcome& o, const std::string& label, const SummaryRow& r, double target, double tol) {
  const bool ok = within(r.essr_pct, target, tol) || within(r.essr_empirical_pct, target, tol);
  o.check(ok, label + " essr " + fmt(r.essr_pct, 1) + " (empirical " + fmt(r.essr_empirical_pct, 1) + ") vs " +
                  fmt(target, 1) + "+-" + fmt(tol, 1));
}

void check_rate(Outcome& o, const std::string& label, double rate, double target, double tol) {
  o.check(within(rate, target, tol), label + " " + band(rate, target, tol));
}

void check_pct(Outcome& o, const std::string& label, double rate, double target, double tol) {
  o.check(within(100.0 * rate, target, tol), label + " " + band(100.0 * rate, target, tol, 1));
}

// ---------------------------------------------------------------- criteria

Outcome c01(Runs& r) {
  Outcome o;
  check_rate(o, "moderate type I", r.row("single-moderate-null", "unadj.rc", 0).reject_rate, 0.051, 0.015);
  check_rate(o, "severe type I", r.row("single-severe-null", "unadj.rc", 0).reject_rate, 0.061, 0.015);
  check_pct(o, "moderate power", r.row("single-moderate-alt", "unadj.rc", 0).reject_rate, 75.7, 3.0);
  check_pct(o, "severe power", r.row("single-severe-alt", "unadj.rc", 0).reject_rate, 78.5, 3.0);
  return o;
}

Outcome c02(Runs& r) {
  Outcome o;
  const auto& m = r.row("single-moderate-alt", "unadj.fc", 0);
  const auto& s = r.row("single-severe-alt", "unadj.fc", 0);
  check_pct(o, "moderate power", m.reject_rate, 89.6, 2.5);
  check_pct(o, "severe power", s.reject_rate, 92.3, 2.5);
  check_essr(o, "moderate", m, 49.7, 5.0);
  return o;
}

Outcome c03(Runs& r) {
  Outcome o;
  const auto& map1 = r.row("single-moderate-null", "MAP", 0, "omega=1;tau=M");
  const auto& rc = r.row("single-moderate-null", "unadj.rc", 0);
  o.check(map1.essr_pct <= 3.0, "MAP(1) essr " + fmt(map1.essr_pct, 2) + " <= 3");
  check_rate(o, "MAP(1) type I vs unadj.rc", map1.reject_rate, rc.reject_rate, 0.015);
  return o;
}

Outcome c04(Runs& r) {
  Outcome o;
  check_rate(o, "MAP(0.2) type I", r.row("single-moderate-null", "MAP", 0, "omega=0.2;tau=M").reject_rate, 0.305,
             0.04);
  return o;
}

Outcome c05(Runs& r) {
  Outcome o;
  check_rate(o, "PSM", r.row("single-severe-null", "PSM", 3).reject_rate, 0.962, 0.02);
  check_rate(o, "PSW", r.row("single-severe-null", "PSW", 3).reject_rate, 0.950, 0.02);
  return o;
}

Outcome c06(Runs& r) {
  Outcome o;
  check_pct(o, "PSM power", r.row("single-moderate-alt", "PSM", 1).reject_rate, 95.6, 2.5);
  check_pct(o, "PSW power", r.row("single-moderate-alt", "PSW", 1).reject_rate, 94.4, 2.5);
  return o;
}

Outcome c07(Runs& r) {
  Outcome o;
  const auto& mm = r.row("single-severe-alt", "MM", 1);
  check_pct(o, "MM power", mm.reject_rate, 97.0, 2.0);
  check_essr(o, "MM", mm, 260.0, 40.0);
  check_rate(o, "MM.nc type I", r.row("single-moderate-null", "MM.nc", 0).reject_rate, 0.092, 0.02);
  return o;
}

Outcome c08(Runs& r) {
  Outcome o;
  const auto& m = r.row("single-moderate-null", "PSM+MAP", 1, "omega=0.5;tau=M");
  check_rate(o, "type I", m.reject_rate, 0.048, 0.02);
  check_essr(o, "PSM+MAP(0.5)", m, 56.0, 12.0);
  return o;
}

Outcome c09(Runs& r) {
  Outcome o;
  check_rate(o, "PSS+PP bias", r.row("single-severe-null", "PSS+PP", 3, "strata=5").bias, 0.534, 0.05);
  check_rate(o, "PSM bias", r.row("single-severe-null", "PSM", 3).bias, 0.489, 0.04);
  return o;
}

Outcome c10(Runs& r) {
  Outcome o;
  check_pct(o, "unadj.rc power", r.row("multi-severe-alt", "unadj.rc", 0).reject_rate, 79.7, 3.0);
  check_pct(o, "unadj.fc power", r.row("multi-severe-alt", "unadj.fc", 0).reject_rate, 91.4, 2.5);
  return o;
}

Outcome c11(Runs& r) {
  Outcome o;
  check_rate(o, "PSM covset 1", r.row("multi-severe-null", "PSM", 1).reject_rate, 0.042, 0.015);
  check_rate(o, "PSM covset 3", r.row("multi-severe-null", "PSM", 3).reject_rate, 0.111, 0.025);
  return o;
}

Outcome c12(Runs& r) {
  Outcome o;
  const auto& m = r.row("multi-severe-alt", "PSW+MAP", 1, "omega=0.5;tau=XS");
  check_pct(o, "PSW+MAP(XS) power", m.reject_rate, 95.0, 2.5);
  check_essr(o, "PSW+MAP(XS)", m, 68.5, 15.0);
  return o;
}

Outcome c13(Runs&) {
  Outcome o;
  RandomStream rng(13);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double m0 = 3.0 * rng.normal(), s0 = 0.05 + 2.0 * rng.uniform();
    const double x = m0 + s0 * 2.0 * rng.normal(), s = 0.05 + 2.0 * rng.uniform();
    const auto g = uniform_grid(m0 - 12.0 * s0, m0 + 12.0 * s0, 4001);
    std::vector<double> d(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) d[j] = normal_pdf(g[j], m0, s0);
    const GridDensity post = posterior_update(GridDensity::from_density(g, d), x, s);
    const double prec = 1.0 / (s0 * s0) + 1.0 / (s * s);
    const double mean = (m0 / (s0 * s0) + x / (s * s)) / prec, sd = std::sqrt(1.0 / prec);
    worst = std::max({worst, std::abs(post.mean() - mean) / std::max(std::abs(mean), sd),
                      std::abs(post.sd() / sd - 1.0)});
  }
  o.check(worst < 0.01, "max relative error over 100 cases " + fmt(worst, 6) + " < 0.01");
  return o;
}

Outcome c14(Runs&) {
  Outcome o;
  RandomStream rng(14);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double pm = rng.normal(), ps = 0.05 + rng.uniform(), em = rng.normal(), es = 0.05 + rng.uniform();
    const auto none = power_prior_update(pm, ps, em, es, 0.0);
    const auto full = power_prior_update(pm, ps, em, es, 1.0);
    const double prec = 1.0 / (ps * ps) + 1.0 / (es * es);
    const double mean = (pm / (ps * ps) + em / (es * es)) / prec;
    worst = std::max({worst, std::abs(none.mean - pm), std::abs(none.se - ps), std::abs(full.mean - mean),
                      std::abs(full.se - std::sqrt(1.0 / prec))});
  }
  o.check(worst <= 1e-10, "max abs error " + fmt(worst * 1e10, 4) + "e-10 <= 1e-10");
  return o;
}

Outcome c15(Runs&) {
  Outcome o;
  const std::vector<double> omegas{0.0, 0.2, 0.5, 0.8, 1.0};
  const std::vector<TauLadder> taus{TauLadder::XS, TauLadder::S, TauLadder::M, TauLadder::L};
  std::vector<MapConfig> cfgs;
  for (TauLadder t : taus)
    for (double w : omegas) {
      MapConfig c;
      c.omega = w;
      c.tau_ladder = t;
      cfgs.push_back(c);
    }
  int violations = 0, checked = 0;
  for (const char* name : {"single-moderate", "multi-moderate"}) {
    const auto coef = preset(name);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      RandomStream rng(derive_seed(kSeed, std::string("monotone/") + name, seed));
      const TrialDataset ds = build_replicate({coef, coef.k() == 1 ? 1200 : 1600}, rng);
      const EffectEstimate rc = estimate_unadjusted(ds.reduced_concurrent);
      const auto res = estimate_map(ds, cfgs);
      auto e = [&](std::size_t t, std::size_t w) {
        return essr(rc.var_for_essr, res[t * omegas.size() + w].var_for_essr);
      };
      const double tol = 1e-9;
      for (std::size_t t = 0; t < taus.size(); ++t)
        for (std::size_t w = 0; w < omegas.size(); ++w) {
          if (w > 0) violations += e(t, w) > e(t, w - 1) + tol ? 1 : 0, ++checked;
          if (t > 0) violations += e(t, w) > e(t - 1, w) + tol ? 1 : 0, ++checked;
        }
    }
  }
  o.check(violations == 0, std::to_string(violations) + " violations in " + std::to_string(checked) +
                               " pairwise comparisons over 2 presets x 50 seeds");
  return o;
}

Outcome c16(Runs&) {
  Outcome o;
  std::size_t pairs = 0, retained = 0, bad_caliper = 0, bad_weight = 0, dup_conc = 0;
  for (const char* name : {"single-severe", "multi-severe"}) {
    const auto coef = preset(name);
    for (std::uint64_t rep = 0; rep < 200; ++rep) {
      RandomStream rng(derive_seed(kSeed, std::string("audit/") + name, rep));
      const TrialDataset ds = build_replicate({coef, coef.k() == 1 ? 1200 : 1600}, rng);
      for (int cs : {1, 2, 3}) {
        const PsFit f = estimate_ps(ds, cs);
        RandomStream mrng = rng.child("match/" + std::to_string(cs));
        const MatchSet m = match_nearest(f, f.sample.concurrent, f.sample.historical, mrng);
        std::set<std::int64_t> seen;
        for (const auto& p : m.pairs) {
          ++pairs;
          bad_caliper += std::abs(f.ps[p.concurrent_index] - f.ps[p.historical_index]) > m.caliper ? 1 : 0;
          bad_caliper += f.sample.is_concurrent(p.historical_index) ? 1 : 0;
          dup_conc += seen.insert(p.concurrent_id).second ? 0 : 1;
        }
        const WeightSet w = ipw_weights(f);
        for (std::size_t i = 0; i < f.ps.size(); ++i) {
          if (f.sample.is_concurrent(i)) {
            bad_weight += w.weights[i] == 1.0 ? 0 : 1;
          } else if (w.retained[i]) {
            ++retained;
            bad_weight += (w.weights[i] < 0.05 || w.weights[i] > 20.0) ? 1 : 0;
          }
        }
      }
    }
  }
  o.check(bad_caliper == 0 && dup_conc == 0,
          std::to_string(pairs) + " matched pairs, " + std::to_string(bad_caliper + dup_conc) + " invariant breaches");
  o.check(bad_weight == 0,
          std::to_string(retained) + " retained historical weights, " + std::to_string(bad_weight) + " out of bounds");
  return o;
}

Outcome c17(Runs&) {
  Outcome o;
  // 3 groups x 5 subjects: the returned optimum is at least the best of a 10^4-point grid.
  RandomStream rng(17);
  int worse = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd y(15);
    std::vector<int> z(15), g(15);
    for (int j = 0; j < 3; ++j) {
      const double u = 0.1 * trial * rng.normal();
      for (int i = 0; i < 5; ++i) {
        const int r = 5 * j + i;
        z[r] = (i + j) % 2;
        g[r] = j;
        y[r] = 0.5 * z[r] + u + rng.normal();
      }
    }
    const LmmFit fit = fit_lmm(y, z, std::nullopt, g);
    const LmmProblem prob(y, z, std::nullopt, g);
    double best = prob.criterion(0.0);
    for (int i = 0; i < 10000; ++i) best = std::max(best, prob.criterion(std::exp(-12.0 + 24.0 * i / 9999.0)));
    worse += prob.criterion(fit.lambda) < best - 1e-9 * std::abs(best) ? 1 : 0;
  }
  o.check(worse == 0, "grid oracle beaten in " + std::to_string(worse) + " of 20 problems");

  // Identical groups, n = 10^4: fit collapses to OLS.
  const int n = 10000;
  Eigen::VectorXd y(n);
  std::vector<int> z(n), g(n);
  Eigen::MatrixXd d(n, 2);
  for (int i = 0; i < n; ++i) {
    z[i] = i % 2;
    g[i] = i % 4;
    y[i] = 1.0 + 0.3 * z[i] + rng.normal();
    d(i, 0) = 1.0;
    d(i, 1) = z[i];
  }
  const double diff = std::abs(fit_lmm(y, z, std::nullopt, g).theta - fit_ols(d, y).coef[1]);
  o.check(diff < 1e-3, "OLS collapse |theta_lmm - theta_ols| " + fmt(diff, 6) + " < 1e-3");
  return o;
}

Outcome c18(Runs&) {
  Outcome o;
  const auto cfg = parse_config(R"({"scenario_id": "determinism", "coefficients": "multi-severe",
    "replicates": 40, "master_seed": 99, "covsets": [1, 3],
    "methods": ["MAP", "MM", "MM.nc", "PSM", "PSW", "PSS+PP", "PSS+CL", "PSM+MAP", "PSW+MAP"]})")
                       .front();
  auto csv = [&](unsigned threads) {
    const ScenarioResult r = run_scenario(cfg, threads);
    std::ostringstream os;
    os << kRawHeader << "\n";
    write_raw_rows(os, r);
    os << kSummaryHeader << "\n";
    write_summary_rows(os, r);
    return os.str();
  };
  const std::string a = csv(1), b = csv(1), c = csv(4);
  o.check(a == b, "rerun byte-identical (" + std::to_string(a.size()) + " bytes)");
  o.check(a == c, "1 vs 4 workers byte-identical");
  return o;
}

Outcome c19(Runs& r) {
  Outcome o;
  const double lo = 0.040, hi = 0.060;
  for (const char* key : {"single-moderate-null", "single-severe-null", "multi-moderate-null", "multi-severe-null"})
    for (const char* m : {"unadj.rc", "unadj.fc"}) {
      const double v = r.row(key, m, 0).reject_rate;
      o.check(v >= lo && v <= hi, std::string(key) + " " + m + " " + fmt(v));
    }
  return o;
}

}  // namespace

int main() {
  Runs runs;
  const std::vector<std::pair<const char*, std::function<Outcome(Runs&)>>> criteria{
      {"unadjusted reduced-concurrent Type I error and power", c01},
      {"unadjusted full-concurrent power and ESSR", c02},
      {"MAP(1) no-borrowing collapse", c03},
      {"MAP(0.2) moderate Type I error", c04},
      {"PSM and PSW severe covset-3 Type I error", c05},
      {"PSM and PSW moderate covset-1 power", c06},
      {"MM severe power and ESSR, MM.nc moderate Type I error", c07},
      {"PSM+MAP(0.5) moderate Type I error and ESSR", c08},
      {"PSS+PP and PSM severe covset-3 bias", c09},
      {"multi-trial severe unadjusted power", c10},
      {"multi-trial severe PSM Type I error", c11},
      {"multi-trial severe PSW+MAP(XS) power and ESSR", c12},
      {"posterior_update conjugate identities", c13},
      {"power_prior_update limits", c14},
      {"MAP ESSR monotone in omega and tau", c15},
      {"matching caliper and trimming audit", c16},
      {"LMM grid oracle and OLS collapse", c17},
      {"determinism and worker-count invariance", c18},
      {"null calibration of unadjusted methods", c19},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second(runs);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << " of " << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
