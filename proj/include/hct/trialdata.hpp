#pragma once

// Simulated hybrid-control trials: covariates, trial membership, treatment,
// outcomes, and the full / reduced / historical partitions.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hct/errors.hpp"
#include "hct/normal.hpp"
#include "hct/random.hpp"

namespace hct {

inline constexpr int kNumCovariates = 6;
using Covariates = std::array<double, kNumCovariates>;

struct SubjectRecord {
  std::int64_t id = 0;
  Covariates x{};
  int z = 0;      // 1 = treated
  int trial = 0;  // 0 = concurrent, 1..k = historical
  double y = 0.0;
};

using SubjectList = std::vector<SubjectRecord>;

struct GenCoefficients {
  double alpha0 = 1.0;
  Covariates alpha{};
  double theta_treat = 0.0;
  // One entry per historical trial. For k = 1 this is the logit of
  // concurrent membership; for k > 1 the multinomial log-odds of trial j
  // against the concurrent trial.
  std::vector<double> beta0;
  std::vector<Covariates> beta;
  double sigma_e = 1.0;

  int k() const { return static_cast<int>(beta0.size()); }

  void validate() const {
    require(k() == 1 || k() == 3, "GenCoefficients: number of historical trials must be 1 or 3");
    require(beta.size() == beta0.size(), "GenCoefficients: beta rows must match beta0 length");
    require(sigma_e >= 0.0 && std::isfinite(sigma_e), "GenCoefficients: sigma_e must be finite and >= 0");
  }
};

namespace detail {
inline Covariates filled(double v) {
  Covariates c;
  c.fill(v);
  return c;
}
}  // namespace detail

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"single-moderate", "single-severe", "multi-moderate",
                                              "multi-severe"};
  return names;
}

// Coefficient sets for the four heterogeneity settings. theta_treat holds the
// alternative-hypothesis effect.
inline GenCoefficients preset(std::string_view name) {
  using detail::filled;
  GenCoefficients c;
  if (name == "single-moderate") {
    c.alpha0 = 1.0;
    c.alpha = filled(0.2);
    c.theta_treat = 0.35;
    c.beta0 = {-0.78};
    c.beta = {filled(0.3)};
  } else if (name == "single-severe") {
    c.alpha0 = 1.0;
    c.alpha = filled(0.5);
    c.theta_treat = 0.5;
    c.beta0 = {-0.9};
    c.beta = {filled(0.5)};
  } else if (name == "multi-moderate") {
    c.alpha0 = 1.2;
    c.alpha = filled(0.5);
    c.theta_treat = 0.5;
    c.beta0 = {0.8, -1.0, -0.7};
    c.beta = {filled(0.1), filled(0.0), filled(-0.1)};
  } else if (name == "multi-severe") {
    c.alpha0 = 1.0;
    c.alpha = filled(0.5);
    c.theta_treat = 0.5;
    c.beta0 = {-1.0, -0.1, 0.2};
    c.beta = {filled(0.1), filled(0.4), filled(-0.2)};
  } else {
    throw PreconditionError("unknown coefficient preset '" + std::string(name) + "'");
  }
  return c;
}

inline Eigen::MatrixXd gen_covariates(int n, RandomStream& rng) {
  require(n >= 1, "gen_covariates: n must be >= 1");
  Eigen::MatrixXd x(n, kNumCovariates);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < kNumCovariates; ++l) x(i, l) = rng.normal();
  return x;
}

inline double linear_predictor(const Eigen::MatrixXd& x, int row, double b0, const Covariates& b) {
  double eta = b0;
  for (int l = 0; l < kNumCovariates; ++l) eta += b[l] * x(row, l);
  return eta;
}

// Returns trial labels: 0 = concurrent (logit model success), 1 = historical.
inline std::vector<int> assign_trials_single(const Eigen::MatrixXd& x, double beta0, const Covariates& beta,
                                             RandomStream& rng) {
  require(x.cols() == kNumCovariates, "assign_trials_single: X must have 6 columns");
  std::vector<int> labels(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double p = expit(linear_predictor(x, static_cast<int>(i), beta0, beta));
    labels[i] = rng.bernoulli(p) ? 0 : 1;
  }
  return labels;
}

// Category probabilities (concurrent, 1..k) for one covariate row under the
// multinomial logit with the concurrent trial as reference.
inline std::vector<double> multinomial_probabilities(const Eigen::MatrixXd& x, int row,
                                                     std::span<const double> beta0,
                                                     std::span<const Covariates> beta) {
  const std::size_t k = beta0.size();
  std::vector<double> eta(k + 1, 0.0);
  for (std::size_t j = 0; j < k; ++j) eta[j + 1] = linear_predictor(x, row, beta0[j], beta[j]);
  const double shift = *std::max_element(eta.begin(), eta.end());
  std::vector<double> p(k + 1);
  double total = 0.0;
  for (std::size_t j = 0; j <= k; ++j) {
    p[j] = std::exp(eta[j] - shift);
    total += p[j];
  }
  for (double& v : p) v /= total;
  return p;
}

inline std::vector<int> assign_trials_multi(const Eigen::MatrixXd& x, std::span<const double> beta0,
                                            std::span<const Covariates> beta, RandomStream& rng) {
  require(x.cols() == kNumCovariates, "assign_trials_multi: X must have 6 columns");
  require(beta0.size() == beta.size() && !beta0.empty(), "assign_trials_multi: coefficient dimensions differ");
  std::vector<int> labels(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto p = multinomial_probabilities(x, static_cast<int>(i), beta0, beta);
    const double u = rng.uniform();
    double cum = 0.0;
    int label = static_cast<int>(p.size()) - 1;
    for (std::size_t j = 0; j < p.size(); ++j) {
      cum += p[j];
      if (u < cum) {
        label = static_cast<int>(j);
        break;
      }
    }
    labels[i] = label;
  }
  return labels;
}

inline Eigen::VectorXd gen_outcomes(const Eigen::MatrixXd& x, std::span<const int> z, const GenCoefficients& c,
                                    RandomStream& rng) {
  require(x.cols() == kNumCovariates, "gen_outcomes: X must have 6 columns");
  require(static_cast<Eigen::Index>(z.size()) == x.rows(), "gen_outcomes: z length must match rows of X");
  Eigen::VectorXd y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mu = linear_predictor(x, static_cast<int>(i), c.alpha0, c.alpha) + c.theta_treat * z[i];
    y[i] = mu + c.sigma_e * rng.normal();
  }
  return y;
}

// How treatment is handled for subjects landing in a historical trial.
enum class HistoricalTreatment {
  ControlOnly,  // historical subjects are generated as controls
  Discard,      // z ~ Bernoulli(0.5) for everyone; treated historical subjects dropped
};

struct GenerationSpec {
  GenCoefficients coefficients;
  int n_total = 1200;
  HistoricalTreatment historical_treatment = HistoricalTreatment::ControlOnly;
};

struct TrialDataset {
  SubjectList full_concurrent;     // 1:1 treated:control
  SubjectList reduced_concurrent;  // 2:1, half the controls dropped
  std::vector<SubjectList> historical;

  int k() const { return static_cast<int>(historical.size()); }

  std::size_t historical_count() const {
    std::size_t n = 0;
    for (const auto& h : historical) n += h.size();
    return n;
  }
};

inline TrialDataset build_replicate(const GenerationSpec& spec, RandomStream& rng) {
  const auto& c = spec.coefficients;
  c.validate();
  require(spec.n_total >= 4, "build_replicate: n_total must be >= 4");
  const int n = spec.n_total;
  const int k = c.k();

  const Eigen::MatrixXd x = gen_covariates(n, rng);
  const std::vector<int> trial =
      k == 1 ? assign_trials_single(x, c.beta0[0], c.beta[0], rng) : assign_trials_multi(x, c.beta0, c.beta, rng);

  std::vector<int> z(n, 0);
  if (spec.historical_treatment == HistoricalTreatment::ControlOnly) {
    std::vector<int> concurrent;
    for (int i = 0; i < n; ++i)
      if (trial[i] == 0) concurrent.push_back(i);
    rng.shuffle(concurrent);
    const std::size_t n_treated = (concurrent.size() + 1) / 2;
    for (std::size_t i = 0; i < n_treated; ++i) z[concurrent[i]] = 1;
  } else {
    for (int i = 0; i < n; ++i) z[i] = rng.bernoulli(0.5) ? 1 : 0;
  }

  const Eigen::VectorXd y = gen_outcomes(x, z, c, rng);

  TrialDataset ds;
  ds.historical.resize(k);
  SubjectList controls;
  for (int i = 0; i < n; ++i) {
    SubjectRecord s;
    s.id = i;
    for (int l = 0; l < kNumCovariates; ++l) s.x[l] = x(i, l);
    s.z = z[i];
    s.trial = trial[i];
    s.y = y[i];
    if (s.trial == 0) {
      ds.full_concurrent.push_back(s);
      if (s.z == 0) controls.push_back(s);
    } else if (s.z == 0) {
      ds.historical[s.trial - 1].push_back(s);
    }
  }

  // Keep a uniformly drawn floor(m/2) of the m concurrent controls.
  std::vector<std::size_t> order(controls.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<char> keep(controls.size(), 0);
  for (std::size_t i = 0; i < controls.size() / 2; ++i) keep[order[i]] = 1;
  std::size_t ci = 0;
  for (const auto& s : ds.full_concurrent) {
    if (s.z == 1) {
      ds.reduced_concurrent.push_back(s);
    } else {
      if (keep[ci]) ds.reduced_concurrent.push_back(s);
      ++ci;
    }
  }
  return ds;
}

// x = rho * standardize(y) + sqrt(1 - rho^2) * w, w iid N(0,1).
inline std::vector<double> make_correlated_covariate(std::span<const double> y, double rho, RandomStream& rng) {
  require(y.size() >= 3, "make_correlated_covariate: need at least 3 outcomes");
  require(rho > -1.0 && rho < 1.0, "make_correlated_covariate: rho must lie in (-1,1)");
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw PreconditionError("make_correlated_covariate: outcome has zero variance");
  const double noise = std::sqrt(1.0 - rho * rho);
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = rho * (y[i] - mean) / sd + noise * rng.normal();
  return out;
}

// Draws a concurrent set of exactly n_target subjects, favouring those with
// above-average propensity. Subjects are visited in shuffled order, repeatedly,
// until the target is reached.
inline std::vector<bool> ps_biased_split(std::span<const double> ps, std::size_t n_target, RandomStream& rng,
                                         double p_hi = 0.65, double p_lo = 0.35) {
  require(n_target > 0 && n_target < ps.size(), "ps_biased_split: need 0 < n_target < |ps|");
  require(p_hi > 0.0 || p_lo > 0.0, "ps_biased_split: acceptance probabilities are both zero");
  const double mean = std::accumulate(ps.begin(), ps.end(), 0.0) / static_cast<double>(ps.size());
  std::size_t reachable = 0;
  for (double p : ps) reachable += ((p > mean ? p_hi : p_lo) > 0.0) ? 1 : 0;
  require(reachable >= n_target, "ps_biased_split: n_target unreachable with zero acceptance probability");
  std::vector<std::size_t> order(ps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<bool> selected(ps.size(), false);
  std::size_t accepted = 0;
  while (accepted < n_target) {
    for (std::size_t idx : order) {
      if (selected[idx]) continue;
      const double p = ps[idx] > mean ? p_hi : p_lo;
      if (rng.bernoulli(p)) {
        selected[idx] = true;
        if (++accepted == n_target) break;
      }
    }
  }
  return selected;
}

}  // namespace hct
