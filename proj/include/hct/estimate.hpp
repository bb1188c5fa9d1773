#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hct/normal.hpp"
#include "hct/regress.hpp"
#include "hct/trialdata.hpp"

namespace hct {

// One method's result on one replicate.
struct EffectEstimate {
  std::string method_id;
  int covset = 0;  // 0 = no covariates
  std::string hyperparam;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  bool reject = false;
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  double var_for_essr = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> flags;
  bool failed = false;
  // Bayesian methods: moment-based prior effective sample size.
  double prior_ess = std::numeric_limits<double>::quiet_NaN();
  // Filled by the harness once the reduced-concurrent benchmark is known.
  double essr_pct = std::numeric_limits<double>::quiet_NaN();

  void add_flag(std::string f) { flags.push_back(std::move(f)); }
};

// Wald-type estimate with a symmetric normal interval.
inline EffectEstimate wald_estimate(double estimate, double se, double alpha = 0.05) {
  const WaldResult w = wald_decision(estimate, se, alpha);
  const double crit = normal_quantile(1.0 - alpha / 2.0);
  EffectEstimate e;
  e.estimate = estimate;
  e.se = se;
  e.reject = w.reject;
  e.lo = estimate - crit * se;
  e.hi = estimate + crit * se;
  e.var_for_essr = se * se;
  return e;
}

// Design [1, z] over a subject list.
inline Eigen::MatrixXd treatment_design(const SubjectList& s) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(s.size()), 2);
  for (std::size_t i = 0; i < s.size(); ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = s[i].z;
  }
  return x;
}

inline Eigen::VectorXd outcomes(const SubjectList& s) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) y[i] = s[i].y;
  return y;
}

// Difference in means by OLS of y on treatment, model-based SE.
inline EffectEstimate estimate_unadjusted(const SubjectList& concurrent, double alpha = 0.05) {
  const FitResult fit = fit_ols(treatment_design(concurrent), outcomes(concurrent), std::nullopt,
                                {"(Intercept)", "z"});
  return wald_estimate(fit.coef[1], std::sqrt(fit.cov_model(1, 1)), alpha);
}

struct ArmSummary {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline ArmSummary summarize_arm(const SubjectList& s, int z) {
  ArmSummary a;
  double sum = 0.0;
  for (const auto& r : s)
    if (r.z == z) {
      sum += r.y;
      ++a.n;
    }
  require(a.n >= 2, "arm summary needs at least 2 subjects");
  a.mean = sum / static_cast<double>(a.n);
  double ss = 0.0;
  for (const auto& r : s)
    if (r.z == z) ss += (r.y - a.mean) * (r.y - a.mean);
  a.sd = std::sqrt(ss / static_cast<double>(a.n - 1));
  a.se = a.sd / std::sqrt(static_cast<double>(a.n));
  return a;
}

}  // namespace hct
