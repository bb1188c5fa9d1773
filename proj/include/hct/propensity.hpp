#pragma once

// Propensity of concurrent-trial membership and the PS-based estimators
// (matching with replacement, trimmed inverse-probability weighting,
// quantile stratification).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hct/errors.hpp"
#include "hct/estimate.hpp"
#include "hct/random.hpp"
#include "hct/regress.hpp"
#include "hct/trialdata.hpp"

namespace hct {

// Analysis model specifications: 1 = x1..x6, 2 = drop x4, 3 = x1..x3.
inline std::vector<int> covset_columns(int covset) {
  switch (covset) {
    case 1: return {0, 1, 2, 3, 4, 5};
    case 2: return {0, 1, 2, 4, 5};
    case 3: return {0, 1, 2};
    default: throw PreconditionError("covariate set must be 1, 2 or 3 (got " + std::to_string(covset) + ")");
  }
}

// Reduced concurrent subjects (both arms) followed by every historical control.
struct PooledSample {
  SubjectList subjects;
  std::vector<std::size_t> concurrent;
  std::vector<std::size_t> historical;

  bool is_concurrent(std::size_t i) const { return subjects[i].trial == 0; }
};

inline PooledSample pool_for_ps(const TrialDataset& ds) {
  PooledSample p;
  for (const auto& s : ds.reduced_concurrent) {
    p.concurrent.push_back(p.subjects.size());
    p.subjects.push_back(s);
  }
  for (const auto& pool : ds.historical)
    for (const auto& s : pool) {
      p.historical.push_back(p.subjects.size());
      p.subjects.push_back(s);
    }
  return p;
}

struct PsFit {
  PooledSample sample;
  std::vector<double> ps;  // Pr(concurrent | x), indexed like sample.subjects
  std::vector<double> logit_ps;
  int covset = 1;
  Eigen::VectorXd coef;
};

inline PsFit estimate_ps(PooledSample sample, int covset) {
  const auto cols = covset_columns(covset);
  require(!sample.historical.empty(), "estimate_ps: no historical subjects");
  require(!sample.concurrent.empty(), "estimate_ps: no concurrent subjects");
  const auto n = static_cast<Eigen::Index>(sample.subjects.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(cols.size()) + 1);
  Eigen::VectorXd t(n);
  std::vector<std::string> labels{"(Intercept)"};
  for (int c : cols) labels.push_back("x" + std::to_string(c + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = sample.subjects[i];
    x(i, 0) = 1.0;
    for (std::size_t j = 0; j < cols.size(); ++j) x(i, j + 1) = s.x[cols[j]];
    t[i] = s.trial == 0 ? 1.0 : 0.0;
  }
  const FitResult fit = fit_logistic(x, t, std::nullopt, labels);
  PsFit out;
  out.sample = std::move(sample);
  out.covset = covset;
  out.coef = fit.coef;
  const Eigen::VectorXd eta = x * fit.coef;
  out.ps.resize(n);
  out.logit_ps.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.logit_ps[i] = eta[i];
    out.ps[i] = expit(eta[i]);
  }
  return out;
}

inline PsFit estimate_ps(const TrialDataset& ds, int covset) { return estimate_ps(pool_for_ps(ds), covset); }

// ---------------------------------------------------------------- matching

enum class CaliperScale {
  PooledSd,  // caliper = mult * SD(pooled propensity scores)
  Raw,       // caliper = mult on the probability scale
};

struct MatchPair {
  std::int64_t concurrent_id = 0;
  std::int64_t historical_id = 0;
  std::size_t concurrent_index = 0;  // into PsFit::sample.subjects
  std::size_t historical_index = 0;
  double distance = 0.0;
};

struct MatchSet {
  std::vector<MatchPair> pairs;
  std::vector<std::int64_t> unmatched_concurrent;
  double caliper = 0.0;
};

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// 1:1 nearest-neighbour matching on the propensity score, with replacement.
// Ties in distance go to the historical subject ranked first by a seeded
// shuffle.
inline MatchSet match_nearest(const PsFit& fit, const std::vector<std::size_t>& concurrent,
                              const std::vector<std::size_t>& historical, RandomStream& rng,
                              double caliper_mult = 0.2, CaliperScale scale = CaliperScale::PooledSd) {
  require(!concurrent.empty() && !historical.empty(), "match_nearest: both subject lists must be non-empty");
  require(caliper_mult >= 0.0, "match_nearest: caliper must be non-negative");
  MatchSet out;
  out.caliper = scale == CaliperScale::PooledSd ? caliper_mult * sample_sd(fit.ps) : caliper_mult;

  std::vector<std::size_t> rank_order = historical;
  rng.shuffle(rank_order);
  struct Candidate {
    double ps;
    std::size_t rank;
    std::size_t index;
  };
  std::vector<Candidate> cand;
  cand.reserve(historical.size());
  for (std::size_t r = 0; r < rank_order.size(); ++r) cand.push_back({fit.ps[rank_order[r]], r, rank_order[r]});
  std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) {
    return a.ps != b.ps ? a.ps < b.ps : a.rank < b.rank;
  });

  for (std::size_t ci : concurrent) {
    const double target = fit.ps[ci];
    auto lb = std::lower_bound(cand.begin(), cand.end(), target,
                               [](const Candidate& c, double v) { return c.ps < v; });
    double best = std::numeric_limits<double>::infinity();
    if (lb != cand.end()) best = lb->ps - target;
    if (lb != cand.begin()) best = std::min(best, target - std::prev(lb)->ps);
    // Best-ranked candidate among all at the minimal distance (equal-ps runs on
    // either side of the target).
    const Candidate* pick = nullptr;
    auto consider = [&](const Candidate& c) {
      if (std::abs(c.ps - target) == best && (!pick || c.rank < pick->rank)) pick = &c;
    };
    for (auto it = lb; it != cand.end() && it->ps - target <= best; ++it) consider(*it);
    for (auto it = lb; it != cand.begin();) {
      --it;
      if (target - it->ps > best) break;
      consider(*it);
    }
    const auto& cs = fit.sample.subjects[ci];
    if (pick && best <= out.caliper) {
      out.pairs.push_back({cs.id, fit.sample.subjects[pick->index].id, ci, pick->index, best});
    } else {
      out.unmatched_concurrent.push_back(cs.id);
    }
  }
  return out;
}

// ---------------------------------------------------------------- weighting

struct WeightSet {
  std::vector<double> weights;  // indexed like PsFit::sample.subjects; 0 when trimmed
  std::vector<bool> retained;
  std::vector<std::int64_t> trimmed_ids;
};

// Concurrent subjects weight 1; historical controls e/(1-e), dropped when the
// weight falls outside [lower, upper].
inline WeightSet ipw_weights(const PsFit& fit, double lower = 0.05, double upper = 20.0) {
  require(lower <= upper, "ipw_weights: lower bound exceeds upper bound");
  const std::size_t n = fit.ps.size();
  WeightSet w;
  w.weights.assign(n, 0.0);
  w.retained.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = fit.ps[i];
    require(e > 0.0 && e < 1.0, "ipw_weights: propensity scores must lie in (0,1)");
    if (fit.sample.is_concurrent(i)) {
      w.weights[i] = 1.0;
      w.retained[i] = true;
      continue;
    }
    const double wi = e / (1.0 - e);
    if (wi < lower || wi > upper) {
      w.trimmed_ids.push_back(fit.sample.subjects[i].id);
    } else {
      w.weights[i] = wi;
      w.retained[i] = true;
    }
  }
  return w;
}

// ---------------------------------------------------------------- strata

inline constexpr int kOutsideSupport = -1;

// Sample quantile, linear interpolation between order statistics (R type 7).
inline double quantile_type7(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Stratum labels 0..n_strata-1 with cut points at the concurrent-PS quantiles
// 1/n, ..., (n-1)/n. Stratum s holds cut[s-1] < ps <= cut[s]; the first stratum
// includes the concurrent minimum. Subjects outside the concurrent PS range
// get kOutsideSupport.
inline std::vector<int> stratify(const PsFit& fit, const std::vector<std::size_t>& concurrent, int n_strata = 5) {
  require(n_strata >= 2, "stratify: need at least 2 strata");
  require(!concurrent.empty(), "stratify: no concurrent subjects");
  std::vector<double> cps;
  for (std::size_t i : concurrent) cps.push_back(fit.ps[i]);
  std::sort(cps.begin(), cps.end());
  std::vector<double> uniq = cps;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (static_cast<int>(uniq.size()) < n_strata)
    throw PreconditionError("stratify: fewer distinct concurrent propensity scores than strata");

  std::vector<double> cuts;
  for (int s = 1; s < n_strata; ++s) cuts.push_back(quantile_type7(cps, static_cast<double>(s) / n_strata));
  const double lo = cps.front(), hi = cps.back();

  std::vector<int> labels(fit.ps.size(), kOutsideSupport);
  for (std::size_t i = 0; i < fit.ps.size(); ++i) {
    const double e = fit.ps[i];
    if (e < lo || e > hi) continue;
    labels[i] = static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), e) - cuts.begin());
  }
  return labels;
}

// ---------------------------------------------------------------- estimators

struct PsmOptions {
  double caliper_mult = 0.2;
  CaliperScale caliper_scale = CaliperScale::PooledSd;
  double alpha = 0.05;
};

// Concurrent subjects plus matched historical controls (one row per match, so
// re-used controls appear repeatedly); OLS of y on treatment with
// cluster-robust SE by original subject id.
inline EffectEstimate estimate_psm(const PsFit& fit, RandomStream& rng, const PsmOptions& opt = {}) {
  const MatchSet m = match_nearest(fit, fit.sample.concurrent, fit.sample.historical, rng, opt.caliper_mult,
                                   opt.caliper_scale);
  SubjectList rows;
  for (std::size_t i : fit.sample.concurrent) rows.push_back(fit.sample.subjects[i]);
  if (m.pairs.empty()) {
    EffectEstimate e = estimate_unadjusted(rows, opt.alpha);
    e.method_id = "PSM";
    e.covset = fit.covset;
    e.add_flag("no_matches");
    return e;
  }
  for (const auto& p : m.pairs) rows.push_back(fit.sample.subjects[p.historical_index]);
  std::vector<std::int64_t> clusters;
  for (const auto& r : rows) clusters.push_back(r.id);
  const FitResult ols = fit_ols(treatment_design(rows), outcomes(rows), std::nullopt, {"(Intercept)", "z"});
  EffectEstimate e = wald_estimate(ols.coef[1], sandwich_se(ols, 1, clusters), opt.alpha);
  e.method_id = "PSM";
  e.covset = fit.covset;
  if (!m.unmatched_concurrent.empty()) e.add_flag("unmatched=" + std::to_string(m.unmatched_concurrent.size()));
  return e;
}

inline EffectEstimate estimate_psm(const TrialDataset& ds, int covset, RandomStream& rng,
                                   const PsmOptions& opt = {}) {
  return estimate_psm(estimate_ps(ds, covset), rng, opt);
}

struct PswOptions {
  double lower = 0.05;
  double upper = 20.0;
  double alpha = 0.05;
};

// Weighted OLS of y on treatment over concurrent subjects and retained
// historical controls; HC0 robust SE.
inline EffectEstimate estimate_psw(const PsFit& fit, const PswOptions& opt = {}) {
  const WeightSet ws = ipw_weights(fit, opt.lower, opt.upper);
  SubjectList rows;
  std::vector<double> w;
  for (std::size_t i : fit.sample.concurrent) {
    rows.push_back(fit.sample.subjects[i]);
    w.push_back(1.0);
  }
  std::size_t n_hist = 0;
  for (std::size_t i : fit.sample.historical)
    if (ws.retained[i]) {
      rows.push_back(fit.sample.subjects[i]);
      w.push_back(ws.weights[i]);
      ++n_hist;
    }
  if (n_hist == 0) {
    EffectEstimate e = estimate_unadjusted(rows, opt.alpha);
    e.method_id = "PSW";
    e.covset = fit.covset;
    e.add_flag("all_trimmed");
    return e;
  }
  const Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  const FitResult ols = fit_ols(treatment_design(rows), outcomes(rows), wv, {"(Intercept)", "z"});
  EffectEstimate e = wald_estimate(ols.coef[1], sandwich_se(ols, 1), opt.alpha);
  e.method_id = "PSW";
  e.covset = fit.covset;
  if (!ws.trimmed_ids.empty()) e.add_flag("trimmed=" + std::to_string(ws.trimmed_ids.size()));
  return e;
}

inline EffectEstimate estimate_psw(const TrialDataset& ds, int covset, const PswOptions& opt = {}) {
  return estimate_psw(estimate_ps(ds, covset), opt);
}

}  // namespace hct
