#pragma once

// PS-stratified borrowing: power prior (PSS+PP) and composite likelihood
// (PSS+CL) applied within propensity strata, aggregated over strata.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hct/errors.hpp"
#include "hct/estimate.hpp"
#include "hct/propensity.hpp"

namespace hct {

struct PowerPriorResult {
  double mean = 0.0;
  double se = 0.0;
};

// Normal power prior: the external likelihood raised to alpha_discount adds
// precision alpha_discount / ext_se^2. An empty prior_se means a flat prior.
inline PowerPriorResult power_prior_update(double prior_mean, std::optional<double> prior_se, double ext_mean,
                                           double ext_se, double alpha_discount) {
  require(alpha_discount >= 0.0 && alpha_discount <= 1.0, "power_prior_update: discount must lie in [0,1]");
  require(ext_se > 0.0, "power_prior_update: ext_se must be positive");
  require(!prior_se || *prior_se > 0.0, "power_prior_update: prior_se must be positive");
  const double prior_prec = prior_se ? 1.0 / (*prior_se * *prior_se) : 0.0;
  const double ext_prec = alpha_discount / (ext_se * ext_se);
  const double prec = prior_prec + ext_prec;
  if (!(prec > 0.0)) throw PreconditionError("power_prior_update: flat prior with zero discount is improper");
  if (alpha_discount == 0.0) return {prior_mean, *prior_se};
  return {(prior_prec * prior_mean + ext_prec * ext_mean) / prec, std::sqrt(1.0 / prec)};
}

struct PssOptions {
  int n_strata = 5;
  // Historical subjects to borrow in total; default n_treated - n_control
  // among concurrent subjects (borrow back to 1:1).
  std::optional<double> total_borrow;
  double alpha = 0.05;
};

struct StratumSummary {
  std::size_t n_concurrent = 0;
  ArmSummary treated, control;
  std::size_t n_hist = 0;
  double hist_mean = 0.0;
  double hist_sd = 0.0;
  double pooled_sd = 0.0;  // within-stratum control SD, concurrent and historical pooled
  double allocation = 0.0;
  double discount = 0.0;   // min(1, allocation / n_hist)
};

namespace detail {

inline void arm_moments(const SubjectList& s, double& mean, double& sd) {
  mean = 0.0;
  for (const auto& r : s) mean += r.y;
  mean /= static_cast<double>(s.size());
  double ss = 0.0;
  for (const auto& r : s) ss += (r.y - mean) * (r.y - mean);
  sd = s.size() > 1 ? std::sqrt(ss / static_cast<double>(s.size() - 1)) : 0.0;
}

inline std::size_t count_arm(const SubjectList& s, int z) {
  std::size_t n = 0;
  for (const auto& r : s) n += r.z == z ? 1 : 0;
  return n;
}

}  // namespace detail

// Strata from concurrent PS quintiles; strata lacking two concurrent subjects
// per arm are merged into a neighbour.
inline std::vector<StratumSummary> stratum_summaries(const PsFit& fit, const PssOptions& opt,
                                                     std::vector<std::string>& flags) {
  const std::vector<int> labels = stratify(fit, fit.sample.concurrent, opt.n_strata);
  std::vector<SubjectList> conc(opt.n_strata), hist(opt.n_strata);
  std::size_t n_excluded = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& s = fit.sample.subjects[i];
    if (labels[i] == kOutsideSupport) {
      ++n_excluded;
      continue;
    }
    (s.trial == 0 ? conc : hist)[labels[i]].push_back(s);
  }
  if (n_excluded > 0) flags.push_back("outside_support=" + std::to_string(n_excluded));

  bool merged = false;
  for (std::size_t s = 0; s < conc.size();) {
    if (conc.size() > 1 && (detail::count_arm(conc[s], 1) < 2 || detail::count_arm(conc[s], 0) < 2)) {
      const std::size_t into = s + 1 < conc.size() ? s + 1 : s - 1;
      conc[into].insert(conc[into].end(), conc[s].begin(), conc[s].end());
      hist[into].insert(hist[into].end(), hist[s].begin(), hist[s].end());
      conc.erase(conc.begin() + static_cast<std::ptrdiff_t>(s));
      hist.erase(hist.begin() + static_cast<std::ptrdiff_t>(s));
      merged = true;
      s = 0;
      continue;
    }
    ++s;
  }
  if (merged) flags.push_back("stratum_merged");
  if (detail::count_arm(conc[0], 1) < 2 || detail::count_arm(conc[0], 0) < 2)
    throw NumericalError("stratified analysis: fewer than 2 concurrent subjects per arm");

  std::size_t n_treated = 0, n_control = 0, n_hist_total = 0;
  std::vector<StratumSummary> out(conc.size());
  for (std::size_t s = 0; s < conc.size(); ++s) {
    auto& st = out[s];
    st.n_concurrent = conc[s].size();
    st.treated = summarize_arm(conc[s], 1);
    st.control = summarize_arm(conc[s], 0);
    n_treated += st.treated.n;
    n_control += st.control.n;
    st.n_hist = hist[s].size();
    const double nc = static_cast<double>(st.control.n);
    if (st.n_hist >= 2) {
      detail::arm_moments(hist[s], st.hist_mean, st.hist_sd);
      const double nh = static_cast<double>(st.n_hist);
      st.pooled_sd = std::sqrt(((nc - 1.0) * st.control.sd * st.control.sd + (nh - 1.0) * st.hist_sd * st.hist_sd) /
                               (nc + nh - 2.0));
      n_hist_total += st.n_hist;
    } else {
      st.n_hist = 0;
      st.pooled_sd = st.control.sd;
    }
  }
  const double total_borrow =
      opt.total_borrow.value_or(std::max(0.0, static_cast<double>(n_treated) - static_cast<double>(n_control)));
  require(total_borrow >= 0.0, "stratified analysis: total_borrow must be non-negative");
  for (auto& st : out) {
    if (st.n_hist == 0 || n_hist_total == 0) continue;
    st.allocation = total_borrow * static_cast<double>(st.n_hist) / static_cast<double>(n_hist_total);
    st.discount = std::min(1.0, st.allocation / static_cast<double>(st.n_hist));
  }
  return out;
}

enum class StratifiedBorrowing { PowerPrior, CompositeLikelihood };

inline EffectEstimate estimate_stratified(const PsFit& fit, StratifiedBorrowing kind, const PssOptions& opt = {}) {
  std::vector<std::string> flags;
  const auto strata = stratum_summaries(fit, opt, flags);
  double n_conc = 0.0;
  for (const auto& st : strata) n_conc += static_cast<double>(st.n_concurrent);

  double est = 0.0, var = 0.0;
  for (const auto& st : strata) {
    const double nc = static_cast<double>(st.control.n);
    const double nh = static_cast<double>(st.n_hist);
    double control_mean = st.control.mean, control_se = st.control.se;
    if (st.n_hist > 0) {
      if (kind == StratifiedBorrowing::PowerPrior) {
        const double hist_se = st.hist_sd > 0.0 ? st.hist_sd / std::sqrt(nh) : st.pooled_sd / std::sqrt(nh);
        const auto post = power_prior_update(st.control.mean, st.control.se, st.hist_mean, hist_se, st.discount);
        control_mean = post.mean;
        control_se = post.se;
      } else {
        const double eta = st.discount;
        control_mean = (nc * st.control.mean + eta * nh * st.hist_mean) / (nc + eta * nh);
        control_se = st.pooled_sd / std::sqrt(nc + eta * nh);
      }
    }
    const double w = static_cast<double>(st.n_concurrent) / n_conc;
    est += w * (st.treated.mean - control_mean);
    var += w * w * (st.treated.se * st.treated.se + control_se * control_se);
  }
  EffectEstimate e = wald_estimate(est, std::sqrt(var), opt.alpha);
  e.method_id = kind == StratifiedBorrowing::PowerPrior ? "PSS+PP" : "PSS+CL";
  e.covset = fit.covset;
  e.flags = std::move(flags);
  return e;
}

inline EffectEstimate estimate_pss_pp(const PsFit& fit, const PssOptions& opt = {}) {
  return estimate_stratified(fit, StratifiedBorrowing::PowerPrior, opt);
}

inline EffectEstimate estimate_pss_cl(const PsFit& fit, const PssOptions& opt = {}) {
  return estimate_stratified(fit, StratifiedBorrowing::CompositeLikelihood, opt);
}

inline EffectEstimate estimate_pss_pp(const TrialDataset& ds, int covset, const PssOptions& opt = {}) {
  return estimate_pss_pp(estimate_ps(ds, covset), opt);
}

inline EffectEstimate estimate_pss_cl(const TrialDataset& ds, int covset, const PssOptions& opt = {}) {
  return estimate_pss_cl(estimate_ps(ds, covset), opt);
}

}  // namespace hct
