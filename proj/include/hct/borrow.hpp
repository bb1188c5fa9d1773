#pragma once

// MAP-based borrowing estimators: MAP on raw historical summaries, and the
// two-step PS-matched (PSM+MAP) and PS-weighted (PSW+MAP) variants.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hct/errors.hpp"
#include "hct/estimate.hpp"
#include "hct/map_prior.hpp"
#include "hct/propensity.hpp"
#include "hct/random.hpp"
#include "hct/trialdata.hpp"

namespace hct {

// Between-trial heterogeneity scale relative to the empirical choice.
enum class TauLadder { L, M, S, XS };

inline const char* to_string(TauLadder t) {
  switch (t) {
    case TauLadder::L: return "L";
    case TauLadder::M: return "M";
    case TauLadder::S: return "S";
    case TauLadder::XS: return "XS";
  }
  return "?";
}

inline TauLadder parse_tau_ladder(const std::string& s) {
  if (s == "L") return TauLadder::L;
  if (s == "M") return TauLadder::M;
  if (s == "S") return TauLadder::S;
  if (s == "XS") return TauLadder::XS;
  throw PreconditionError("unknown tau ladder label '" + s + "' (expected L, M, S or XS)");
}

struct MapConfig {
  double omega = 0.5;
  TauLadder tau_ladder = TauLadder::M;
  std::optional<double> tau_scale;  // overrides the ladder when set
  double xs_factor = 0.01;
  std::optional<double> vague_mean;  // default: precision-weighted historical mean
  std::optional<double> vague_sd;    // default: unit-information outcome SD
  MapGridOptions grid;
  double alpha = 0.05;
};

inline double ladder_factor(TauLadder t, double xs_factor) {
  switch (t) {
    case TauLadder::L: return 10.0;
    case TauLadder::M: return 1.0;
    case TauLadder::S: return 0.1;
    case TauLadder::XS: return xs_factor;
  }
  return 1.0;
}

// Empirical half-normal scale: SD of study means for k >= 2, the study SE
// for k = 1 (or when all means coincide).
inline double empirical_tau_scale(std::span<const StudySummary> studies) {
  require(!studies.empty(), "empirical_tau_scale: no studies");
  if (studies.size() >= 2) {
    std::vector<double> means;
    for (const auto& s : studies) means.push_back(s.mean);
    const double sd = sample_sd(means);
    if (sd > 0.0) return sd;
  }
  double se = 0.0;
  for (const auto& s : studies) se += s.se;
  return se / static_cast<double>(studies.size());
}

inline double resolve_tau_scale(const MapConfig& cfg, std::span<const StudySummary> studies) {
  if (cfg.tau_scale) {
    require(*cfg.tau_scale > 0.0, "MapConfig: tau_scale must be positive");
    return *cfg.tau_scale;
  }
  return empirical_tau_scale(studies) * ladder_factor(cfg.tau_ladder, cfg.xs_factor);
}

// Historical evidence fed to the MAP pipeline.
struct HistoricalEvidence {
  std::vector<StudySummary> studies;
  double unit_sd = 1.0;  // outcome SD used for the vague component and prior ESS
  std::vector<std::string> flags;
};

// Evaluates MAP -> robustify -> posterior -> effect for each config. Priors
// are shared between configs with the same tau scale and grid.
inline std::vector<EffectEstimate> map_effects(const HistoricalEvidence& hist, const ArmSummary& treated,
                                               const ArmSummary& control, std::span<const MapConfig> cfgs) {
  struct Cached {
    double tau, lo, hi;
    int points;
    GridDensity prior;
  };
  std::vector<Cached> cache;
  std::vector<EffectEstimate> out;
  for (const auto& cfg : cfgs) {
    require(cfg.omega >= 0.0 && cfg.omega <= 1.0, "MapConfig: omega must lie in [0,1]");
    EffectEstimate e;
    if (hist.studies.empty()) {
      // Nothing to borrow: vague prior centred on the concurrent controls.
      const double vm = cfg.vague_mean.value_or(control.mean);
      const double vs = cfg.vague_sd.value_or(control.sd);
      const auto grid = uniform_grid(std::min(vm - 8.0 * vs, control.mean - 10.0 * control.se),
                                     std::max(vm + 8.0 * vs, control.mean + 10.0 * control.se),
                                     cfg.grid.theta_points);
      std::vector<double> d(grid.size());
      for (std::size_t i = 0; i < grid.size(); ++i) d[i] = normal_pdf(grid[i], vm, vs);
      const GridDensity prior = GridDensity::from_density(grid, d);
      e = effect_posterior(posterior_update(prior, control.mean, control.se), treated.mean, treated.se, cfg.alpha);
      e.prior_ess = prior_ess(prior, vs);
      e.add_flag("omega_forced_1");
    } else {
      const double tau = resolve_tau_scale(cfg, hist.studies);
      const double vm = cfg.vague_mean.value_or(pooled_mean(hist.studies));
      const double vs = cfg.vague_sd.value_or(hist.unit_sd);
      const auto base = default_theta_grid(hist.studies, tau, cfg.grid);
      const double lo = std::min({base.front(), vm - 8.0 * vs, control.mean - 10.0 * control.se});
      const double hi = std::max({base.back(), vm + 8.0 * vs, control.mean + 10.0 * control.se});
      const Cached* hit = nullptr;
      for (const auto& c : cache)
        if (c.tau == tau && c.lo == lo && c.hi == hi && c.points == cfg.grid.theta_points) hit = &c;
      if (!hit) {
        cache.push_back({tau, lo, hi, cfg.grid.theta_points,
                         map_prior(hist.studies, tau, uniform_grid(lo, hi, cfg.grid.theta_points),
                                   cfg.grid.tau_points)});
        hit = &cache.back();
      }
      const GridDensity robust = robustify(hit->prior, cfg.omega, vm, vs);
      e = effect_posterior(posterior_update(robust, control.mean, control.se), treated.mean, treated.se, cfg.alpha);
      e.prior_ess = prior_ess(robust, vs);
    }
    for (const auto& f : hist.flags) e.add_flag(f);
    out.push_back(std::move(e));
  }
  return out;
}

namespace detail {
inline double pooled_within_sd(const std::vector<SubjectList>& pools) {
  double ss = 0.0, dof = 0.0;
  for (const auto& p : pools) {
    if (p.size() < 2) continue;
    double m = 0.0;
    for (const auto& s : p) m += s.y;
    m /= static_cast<double>(p.size());
    for (const auto& s : p) ss += (s.y - m) * (s.y - m);
    dof += static_cast<double>(p.size() - 1);
  }
  require(dof > 0.0, "pooled SD needs a pool with at least 2 subjects");
  return std::sqrt(ss / dof);
}
}  // namespace detail

// Raw per-trial control means with SE = sd / sqrt(n).
inline HistoricalEvidence raw_evidence(const TrialDataset& ds) {
  HistoricalEvidence ev;
  for (std::size_t j = 0; j < ds.historical.size(); ++j) {
    const auto& pool = ds.historical[j];
    if (pool.size() < 2) {
      ev.flags.push_back("trial" + std::to_string(j + 1) + "_too_small");
      continue;
    }
    const ArmSummary a = summarize_arm(pool, 0);
    ev.studies.push_back({a.mean, a.se, static_cast<double>(a.n)});
  }
  ev.unit_sd = detail::pooled_within_sd(ds.historical);
  return ev;
}

inline std::vector<EffectEstimate> estimate_map(const TrialDataset& ds, std::span<const MapConfig> cfgs) {
  require(ds.k() >= 1, "estimate_map: need at least one historical pool");
  const auto ev = raw_evidence(ds);
  auto out = map_effects(ev, summarize_arm(ds.reduced_concurrent, 1), summarize_arm(ds.reduced_concurrent, 0), cfgs);
  for (auto& e : out) e.method_id = "MAP";
  return out;
}

inline EffectEstimate estimate_map(const TrialDataset& ds, const MapConfig& cfg) {
  return estimate_map(ds, std::span<const MapConfig>(&cfg, 1)).front();
}

// Per historical trial: match that trial's controls to every concurrent
// subject, then summarise the matched outcomes (one row per match) by their
// mean and a cluster-robust SE with clusters = historical subject.
inline HistoricalEvidence matched_evidence(const PsFit& fit, RandomStream& rng, const PsmOptions& opt) {
  HistoricalEvidence ev;
  int k = 0;
  for (std::size_t i : fit.sample.historical) k = std::max(k, fit.sample.subjects[i].trial);
  double ss = 0.0, dof = 0.0;
  for (int j = 1; j <= k; ++j) {
    std::vector<std::size_t> hist;
    for (std::size_t i : fit.sample.historical)
      if (fit.sample.subjects[i].trial == j) hist.push_back(i);
    const std::string tag = "trial" + std::to_string(j);
    if (hist.empty()) {
      ev.flags.push_back(tag + "_empty");
      continue;
    }
    RandomStream trial_rng = rng.child(tag);
    const MatchSet m = match_nearest(fit, fit.sample.concurrent, hist, trial_rng, opt.caliper_mult, opt.caliper_scale);
    std::map<std::int64_t, double> cluster_sum;
    std::vector<double> ys;
    for (const auto& p : m.pairs) ys.push_back(fit.sample.subjects[p.historical_index].y);
    for (const auto& p : m.pairs) cluster_sum[p.historical_id];
    if (cluster_sum.size() < 2) {
      ev.flags.push_back(tag + "_no_matches");
      continue;
    }
    const double n = static_cast<double>(ys.size());
    double mean = 0.0;
    for (double y : ys) mean += y;
    mean /= n;
    double trial_ss = 0.0;
    for (std::size_t r = 0; r < ys.size(); ++r) {
      cluster_sum[m.pairs[r].historical_id] += ys[r] - mean;
      trial_ss += (ys[r] - mean) * (ys[r] - mean);
    }
    double meat = 0.0;
    for (const auto& [id, u] : cluster_sum) meat += u * u;
    const double g = static_cast<double>(cluster_sum.size());
    const double se = std::sqrt(g / (g - 1.0) * meat) / n;
    ev.studies.push_back({mean, se, g});
    ss += trial_ss;
    dof += n - 1.0;
  }
  if (ev.studies.empty()) {
    ev.flags.push_back("no_matched_trials");
    ev.unit_sd = 1.0;
  } else {
    ev.unit_sd = std::sqrt(ss / dof);
  }
  return ev;
}

inline std::vector<EffectEstimate> estimate_psm_map(const PsFit& fit, std::span<const MapConfig> cfgs,
                                                    RandomStream& rng, const PsmOptions& opt = {}) {
  SubjectList concurrent;
  for (std::size_t i : fit.sample.concurrent) concurrent.push_back(fit.sample.subjects[i]);
  const auto ev = matched_evidence(fit, rng, opt);
  auto out = map_effects(ev, summarize_arm(concurrent, 1), summarize_arm(concurrent, 0), cfgs);
  for (auto& e : out) {
    e.method_id = "PSM+MAP";
    e.covset = fit.covset;
  }
  return out;
}

inline EffectEstimate estimate_psm_map(const TrialDataset& ds, int covset, const MapConfig& cfg, RandomStream& rng,
                                       const PsmOptions& opt = {}) {
  return estimate_psm_map(estimate_ps(ds, covset), std::span<const MapConfig>(&cfg, 1), rng, opt).front();
}

// Per historical trial: trimmed-IPW weighted mean with a robust SE,
// se^2 = n/(n-1) * sum w^2 r^2 / (sum w)^2, which reduces to sd^2/n under
// unit weights.
inline HistoricalEvidence weighted_evidence(const PsFit& fit, const PswOptions& opt) {
  const WeightSet ws = ipw_weights(fit, opt.lower, opt.upper);
  HistoricalEvidence ev;
  int k = 0;
  for (std::size_t i : fit.sample.historical) k = std::max(k, fit.sample.subjects[i].trial);
  double ss = 0.0, dof = 0.0;
  for (int j = 1; j <= k; ++j) {
    double sw = 0.0, sw2 = 0.0, swy = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t i : fit.sample.historical)
      if (fit.sample.subjects[i].trial == j && ws.retained[i]) {
        idx.push_back(i);
        const double w = ws.weights[i];
        sw += w;
        sw2 += w * w;
        swy += w * fit.sample.subjects[i].y;
      }
    const std::string tag = "trial" + std::to_string(j);
    if (idx.size() < 2) {
      ev.flags.push_back(tag + "_all_trimmed");
      continue;
    }
    const double mean = swy / sw;
    double s_w2r2 = 0.0, s_wr2 = 0.0;
    for (std::size_t i : idx) {
      const double w = ws.weights[i];
      const double r = fit.sample.subjects[i].y - mean;
      s_w2r2 += w * w * r * r;
      s_wr2 += w * r * r;
    }
    const double n = static_cast<double>(idx.size());
    const double se = std::sqrt(n / (n - 1.0) * s_w2r2) / sw;
    ev.studies.push_back({mean, se, sw * sw / sw2});
    ss += s_wr2;
    dof += sw - sw2 / sw;
  }
  if (ev.studies.empty()) {
    ev.flags.push_back("no_weighted_trials");
    ev.unit_sd = 1.0;
  } else {
    ev.unit_sd = std::sqrt(ss / dof);
  }
  return ev;
}

inline std::vector<EffectEstimate> estimate_psw_map(const PsFit& fit, std::span<const MapConfig> cfgs,
                                                    const PswOptions& opt = {}) {
  SubjectList concurrent;
  for (std::size_t i : fit.sample.concurrent) concurrent.push_back(fit.sample.subjects[i]);
  const auto ev = weighted_evidence(fit, opt);
  auto out = map_effects(ev, summarize_arm(concurrent, 1), summarize_arm(concurrent, 0), cfgs);
  for (auto& e : out) {
    e.method_id = "PSW+MAP";
    e.covset = fit.covset;
  }
  return out;
}

inline EffectEstimate estimate_psw_map(const TrialDataset& ds, int covset, const MapConfig& cfg,
                                       const PswOptions& opt = {}) {
  return estimate_psw_map(estimate_ps(ds, covset), std::span<const MapConfig>(&cfg, 1), opt).front();
}

}  // namespace hct
