#pragma once

// Scenario orchestration: cell expansion, seeded replicate evaluation,
// replicate-parallel runs, and CSV / metadata emission.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "hct/borrow.hpp"
#include "hct/config.hpp"
#include "hct/estimate.hpp"
#include "hct/metrics.hpp"
#include "hct/mixed.hpp"
#include "hct/power_prior.hpp"
#include "hct/propensity.hpp"
#include "hct/random.hpp"
#include "hct/trialdata.hpp"

namespace hct {

struct CellKey {
  std::string method_id;
  int covset = 0;
  std::string hyperparam;

  friend bool operator==(const CellKey&, const CellKey&) = default;
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string map_label(double omega, const MethodSpec& m, TauLadder tau) {
  std::string s = "omega=" + format_number(omega);
  if (m.tau_scale) return s + ";tau_scale=" + format_number(*m.tau_scale);
  return s + ";tau=" + to_string(tau);
}

namespace detail {

inline std::vector<int> method_covsets(const MethodSpec& m, const ScenarioConfig& cfg) {
  if (!m.uses_covariates()) return {0};
  return m.covsets.empty() ? cfg.covsets : m.covsets;
}

inline std::vector<MapConfig> map_configs(const MethodSpec& m) {
  // A fixed tau_scale replaces the ladder, leaving one cell per omega.
  const std::vector<TauLadder> taus = m.tau_scale ? std::vector<TauLadder>{TauLadder::M} : m.taus;
  std::vector<MapConfig> out;
  for (TauLadder t : taus)
    for (double w : m.omegas) {
      MapConfig c;
      c.omega = w;
      c.tau_ladder = t;
      c.tau_scale = m.tau_scale;
      c.xs_factor = m.xs_factor;
      out.push_back(c);
    }
  return out;
}

inline std::string method_label(const MethodSpec& m) {
  if (m.id == "PSS+PP" || m.id == "PSS+CL") return "strata=" + std::to_string(m.pss.n_strata);
  if (m.id == "MM" || m.id == "MM.nc") return m.criterion == LmmCriterion::ML ? "ML" : "";
  return "";
}

}  // namespace detail

// Every (method, covset, hyperparam) cell in evaluation order. unadj.rc and
// unadj.fc come first whether or not they are listed.
inline std::vector<CellKey> plan_cells(const ScenarioConfig& cfg) {
  std::vector<CellKey> cells{{"unadj.rc", 0, ""}, {"unadj.fc", 0, ""}};
  for (const auto& m : cfg.methods) {
    if (m.id == "unadj.rc" || m.id == "unadj.fc") continue;
    for (int cs : detail::method_covsets(m, cfg)) {
      if (m.uses_map()) {
        for (const auto& mc : detail::map_configs(m))
          cells.push_back({m.id, cs, map_label(mc.omega, m, mc.tau_ladder)});
      } else {
        cells.push_back({m.id, cs, detail::method_label(m)});
      }
    }
  }
  return cells;
}

namespace detail {

inline std::string sanitize_flag(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '|' || c == '\n' || c == '\r' || c == '"') c = ' ';
  return s;
}

inline EffectEstimate failed_estimate(const std::string& what) {
  EffectEstimate e;
  e.failed = true;
  e.add_flag("error=" + sanitize_flag(what));
  return e;
}

}  // namespace detail

// Evaluates every planned cell on one dataset. Method failures become
// flagged rows; they never abort the replicate.
inline std::vector<EffectEstimate> evaluate_cells(const ScenarioConfig& cfg, const TrialDataset& ds,
                                                  const RandomStream& root) {
  std::vector<EffectEstimate> out;
  auto push = [&](EffectEstimate e, const CellKey& key) {
    e.method_id = key.method_id;
    e.covset = key.covset;
    e.hyperparam = key.hyperparam;
    out.push_back(std::move(e));
  };
  auto guarded = [&](const CellKey& key, auto&& fn) {
    try {
      push(fn(), key);
    } catch (const std::exception& ex) {
      push(detail::failed_estimate(ex.what()), key);
    }
  };

  guarded({"unadj.rc", 0, ""}, [&] { return estimate_unadjusted(ds.reduced_concurrent); });
  guarded({"unadj.fc", 0, ""}, [&] { return estimate_unadjusted(ds.full_concurrent); });

  std::map<int, std::variant<PsFit, std::string>> ps_cache;
  auto ps_for = [&](int covset) -> const PsFit& {
    auto it = ps_cache.find(covset);
    if (it == ps_cache.end()) {
      try {
        it = ps_cache.emplace(covset, estimate_ps(ds, covset)).first;
      } catch (const std::exception& ex) {
        it = ps_cache.emplace(covset, std::string(ex.what())).first;
      }
    }
    if (const auto* err = std::get_if<std::string>(&it->second)) throw NumericalError("propensity model: " + *err);
    return std::get<PsFit>(it->second);
  };

  for (const auto& m : cfg.methods) {
    if (m.id == "unadj.rc" || m.id == "unadj.fc") continue;
    const std::string label = detail::method_label(m);
    for (int cs : detail::method_covsets(m, cfg)) {
      if (m.uses_map()) {
        const auto cfgs = detail::map_configs(m);
        std::vector<CellKey> keys;
        for (const auto& mc : cfgs) keys.push_back({m.id, cs, map_label(mc.omega, m, mc.tau_ladder)});
        try {
          std::vector<EffectEstimate> res;
          if (m.id == "MAP") {
            res = estimate_map(ds, cfgs);
          } else if (m.id == "PSM+MAP") {
            RandomStream rng = root.child("PSM+MAP/" + std::to_string(cs));
            res = estimate_psm_map(ps_for(cs), cfgs, rng, m.psm);
          } else {
            res = estimate_psw_map(ps_for(cs), cfgs, m.psw);
          }
          for (std::size_t i = 0; i < keys.size(); ++i) push(std::move(res[i]), keys[i]);
        } catch (const std::exception& ex) {
          for (const auto& k : keys) push(detail::failed_estimate(ex.what()), k);
        }
        continue;
      }
      const CellKey key{m.id, cs, label};
      LmmOptions lmm;
      lmm.criterion = m.criterion;
      if (m.id == "MM") guarded(key, [&] { return estimate_mm(ds, cs, 0.05, lmm); });
      else if (m.id == "MM.nc") guarded(key, [&] { return estimate_mm(ds, 0, 0.05, lmm); });
      else if (m.id == "PSM")
        guarded(key, [&] {
          RandomStream rng = root.child("PSM/" + std::to_string(cs));
          return estimate_psm(ps_for(cs), rng, m.psm);
        });
      else if (m.id == "PSW") guarded(key, [&] { return estimate_psw(ps_for(cs), m.psw); });
      else if (m.id == "PSS+PP") guarded(key, [&] { return estimate_pss_pp(ps_for(cs), m.pss); });
      else if (m.id == "PSS+CL") guarded(key, [&] { return estimate_pss_cl(ps_for(cs), m.pss); });
    }
  }

  // Per-replicate ESSR against the reduced-concurrent benchmark.
  const EffectEstimate& rc = out.front();
  for (auto& e : out) {
    if (e.failed || rc.failed) continue;
    if (e.var_for_essr > 0.0 && rc.var_for_essr > 0.0) e.essr_pct = essr(rc.var_for_essr, e.var_for_essr);
  }
  return out;
}

inline RandomStream replicate_stream(const ScenarioConfig& cfg, std::uint64_t index) {
  return RandomStream(derive_seed(cfg.master_seed, cfg.scenario_id, index));
}

inline std::vector<EffectEstimate> run_replicate(const ScenarioConfig& cfg, std::uint64_t index) {
  const RandomStream root = replicate_stream(cfg, index);
  RandomStream data_rng = root.child("data");
  const TrialDataset ds = build_replicate(cfg.generation(), data_rng);
  return evaluate_cells(cfg, ds, root);
}

struct ScenarioResult {
  std::string scenario_id;
  double theta_true = 0.0;
  std::vector<CellKey> cells;
  std::vector<SummaryRow> summary;                // one per cell, in plan order
  std::vector<std::vector<EffectEstimate>> raw;   // [replicate][cell]
  bool failures_exceeded = false;
};

// Replicates are claimed dynamically by `threads` workers and stored by
// index; the reduction runs afterwards in replicate order, so every output
// byte is independent of the worker count.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg, unsigned threads = 1) {
  require(threads >= 1, "run_scenario: worker count must be >= 1");
  require(cfg.replicates >= 1, "run_scenario: replicates must be >= 1");
  ScenarioResult res;
  res.scenario_id = cfg.scenario_id;
  res.theta_true = cfg.theta_treat();
  res.cells = plan_cells(cfg);
  res.raw.resize(cfg.replicates);

  std::atomic<std::uint64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::uint64_t i = next.fetch_add(1);
      if (i >= cfg.replicates) return;
      try {
        res.raw[i] = run_replicate(cfg, i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = cfg.replicates;
        return;
      }
    }
  };
  const unsigned n_workers = static_cast<unsigned>(std::min<std::uint64_t>(threads, cfg.replicates));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  std::vector<MetricAccumulator> acc(res.cells.size());
  for (std::uint64_t r = 0; r < cfg.replicates; ++r) {
    const auto& row = res.raw[r];
    if (row.size() != res.cells.size()) throw NumericalError("run_scenario: replicate produced an unexpected cell count");
    for (std::size_t c = 0; c < row.size(); ++c) {
      const auto& e = row[c];
      ReplicateRecord rec;
      rec.replicate = r;
      rec.failed = e.failed || !std::isfinite(e.estimate) || !std::isfinite(e.se) || row[0].failed;
      rec.estimate = e.estimate;
      rec.se = e.se;
      rec.reject = e.reject;
      rec.essr_pct = e.essr_pct;
      rec.rc_estimate = row[0].estimate;
      acc[c].add(rec);
    }
  }
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    SummaryRow s = acc[c].summarize(res.theta_true);
    s.scenario_id = cfg.scenario_id;
    s.method_id = res.cells[c].method_id;
    s.covset = res.cells[c].covset;
    s.hyperparam = res.cells[c].hyperparam;
    if (static_cast<double>(s.n_failed) > cfg.failure_threshold * static_cast<double>(cfg.replicates))
      res.failures_exceeded = true;
    res.summary.push_back(std::move(s));
  }
  return res;
}

inline const char* kRawHeader = "scenario_id,replicate,method_id,covset,hyperparam,estimate,se,reject,essr_pct,flags";
inline const char* kSummaryHeader =
    "scenario_id,method_id,covset,hyperparam,bias,rel_bias_pct,type1_or_power,mean_se,essr_pct,essr_empirical_pct,"
    "n_used,n_failed";

inline std::string join_flags(const std::vector<std::string>& flags) {
  std::string s;
  for (const auto& f : flags) {
    if (!s.empty()) s += '|';
    s += detail::sanitize_flag(f);
  }
  return s;
}

inline void write_raw_rows(std::ostream& os, const ScenarioResult& r) {
  for (std::size_t i = 0; i < r.raw.size(); ++i)
    for (const auto& e : r.raw[i])
      os << r.scenario_id << ',' << i << ',' << e.method_id << ',' << e.covset << ',' << e.hyperparam << ','
         << (e.failed ? "NA" : format_number(e.estimate)) << ',' << (e.failed ? "NA" : format_number(e.se)) << ','
         << (e.failed ? "NA" : (e.reject ? "1" : "0")) << ',' << format_number(e.essr_pct) << ','
         << join_flags(e.flags) << '\n';
}

inline void write_summary_rows(std::ostream& os, const ScenarioResult& r) {
  for (const auto& s : r.summary)
    os << s.scenario_id << ',' << s.method_id << ',' << s.covset << ',' << s.hyperparam << ','
       << format_number(s.bias) << ',' << (s.rel_bias_pct ? format_number(*s.rel_bias_pct) : "NA") << ','
       << format_number(s.reject_rate) << ',' << format_number(s.mean_se) << ',' << format_number(s.essr_pct)
       << ',' << format_number(s.essr_empirical_pct) << ',' << s.n_used << ',' << s.n_failed << '\n';
}

// Run description without timestamps, so reruns are byte-identical.
inline nlohmann::ordered_json scenario_metadata(const ScenarioConfig& cfg, const ScenarioResult& r) {
  nlohmann::ordered_json j;
  j["scenario_id"] = cfg.scenario_id;
  j["k_historical"] = cfg.k_historical;
  j["heterogeneity"] = cfg.heterogeneity;
  j["theta_treat"] = cfg.theta_treat();
  j["n_total"] = cfg.n_total;
  j["replicates"] = cfg.replicates;
  j["master_seed"] = cfg.master_seed;
  j["historical_treatment"] = cfg.historical_treatment == HistoricalTreatment::ControlOnly ? "control_only" : "discard";
  const auto& c = cfg.coefficients;
  j["coefficients"] = {{"alpha0", c.alpha0},
                       {"alpha", std::vector<double>(c.alpha.begin(), c.alpha.end())},
                       {"beta0", c.beta0},
                       {"sigma_e", c.sigma_e}};
  std::vector<std::vector<double>> beta;
  for (const auto& b : c.beta) beta.emplace_back(b.begin(), b.end());
  j["coefficients"]["beta"] = beta;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& k : r.cells) cells.push_back({{"method_id", k.method_id}, {"covset", k.covset}, {"hyperparam", k.hyperparam}});
  j["cells"] = cells;
  j["failures_exceeded"] = r.failures_exceeded;
  return j;
}

inline nlohmann::ordered_json conventions_metadata() {
  return {{"robust_se", "HC0 (no small-sample correction); cluster-robust HC0 for matched designs"},
          {"test", "two-sided normal Wald test at alpha = 0.05"},
          {"bayesian_decision", "reject when the 95% equal-tailed credible interval excludes 0"},
          {"essr_pct", "mean over replicates of (se_rc^2 / se^2 - 1) * 100"},
          {"essr_empirical_pct", "(var of unadj.rc estimates / var of method estimates - 1) * 100"},
          {"mixed_model", "random intercept per trial; REML unless configured otherwise"},
          {"failures", "failed replicates excluded per cell and counted in n_failed"}};
}

}  // namespace hct
