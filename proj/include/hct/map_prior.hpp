#pragma once

// Meta-analytic-predictive prior on a grid: normal-normal hierarchy over
// historical study means with a half-normal prior on the between-trial SD,
// integrated deterministically (mu analytically under a flat prior, tau by
// quadrature).

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "hct/errors.hpp"
#include "hct/estimate.hpp"
#include "hct/grid_density.hpp"
#include "hct/normal.hpp"

namespace hct {

struct StudySummary {
  double mean = 0.0;
  double se = 1.0;
  double n_effective = 0.0;
};

struct MapGridOptions {
  int theta_points = 4001;
  int tau_points = 201;
  double span_mult = 10.0;
};

namespace detail {
inline void check_studies(std::span<const StudySummary> studies) {
  require(!studies.empty(), "map_prior: need at least one study");
  for (const auto& s : studies)
    require(std::isfinite(s.mean) && std::isfinite(s.se) && s.se > 0.0,
            "map_prior: study means must be finite and SEs positive");
}
}  // namespace detail

inline double pooled_mean(std::span<const StudySummary> studies) {
  double num = 0.0, den = 0.0;
  for (const auto& s : studies) {
    num += s.mean / (s.se * s.se);
    den += 1.0 / (s.se * s.se);
  }
  return num / den;
}

// pooled mean +/- span_mult * (max SE + tau_scale)
inline std::vector<double> default_theta_grid(std::span<const StudySummary> studies, double tau_scale,
                                              const MapGridOptions& opt = {}) {
  detail::check_studies(studies);
  double max_se = 0.0;
  for (const auto& s : studies) max_se = std::max(max_se, s.se);
  const double c = pooled_mean(studies);
  const double half = opt.span_mult * (max_se + tau_scale);
  return uniform_grid(c - half, c + half, opt.theta_points);
}

// Zero plus geometric spacing up to 10 * tau_scale.
inline std::vector<double> tau_grid(double tau_scale, int points) {
  require(tau_scale > 0.0 && std::isfinite(tau_scale), "tau_grid: tau_scale must be positive");
  require(points >= 3, "tau_grid: need at least 3 points");
  const double top = 10.0 * tau_scale;
  const double bottom = top * 1e-5;
  std::vector<double> g{0.0};
  const int m = points - 1;
  for (int i = 0; i < m; ++i) g.push_back(bottom * std::pow(top / bottom, static_cast<double>(i) / (m - 1)));
  return g;
}

inline GridDensity map_prior(std::span<const StudySummary> studies, double tau_scale,
                             const std::vector<double>& theta_grid, int tau_points = 201) {
  detail::check_studies(studies);
  const auto taus = tau_grid(tau_scale, tau_points);
  const auto q = GridDensity::trapezoid_weights(taus);

  struct Component {
    double logw, mean, sd;
  };
  std::vector<Component> comp;
  comp.reserve(taus.size());
  double max_logw = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const double t2 = taus[i] * taus[i];
    double prec = 0.0, num = 0.0, log_det = 0.0;
    for (const auto& s : studies) {
      const double v = s.se * s.se + t2;
      prec += 1.0 / v;
      num += s.mean / v;
      log_det += std::log(v);
    }
    const double mu = num / prec;
    double rss = 0.0;
    for (const auto& s : studies) rss += (s.mean - mu) * (s.mean - mu) / (s.se * s.se + t2);
    const double log_marginal = -0.5 * (log_det + std::log(prec) + rss);
    const double log_halfnormal = -0.5 * t2 / (tau_scale * tau_scale);
    const double lw = std::log(q[i]) + log_halfnormal + log_marginal;
    comp.push_back({lw, mu, std::sqrt(1.0 / prec + t2)});
    max_logw = std::max(max_logw, lw);
  }

  std::vector<double> density(theta_grid.size(), 0.0);
  for (const auto& c : comp) {
    const double w = std::exp(c.logw - max_logw);
    if (w < 1e-15) continue;
    const auto first = std::lower_bound(theta_grid.begin(), theta_grid.end(), c.mean - 12.0 * c.sd);
    const auto last = std::upper_bound(first, theta_grid.end(), c.mean + 12.0 * c.sd);
    for (auto it = first; it != last; ++it) {
      const std::size_t j = static_cast<std::size_t>(it - theta_grid.begin());
      density[j] += w * normal_pdf(*it, c.mean, c.sd);
    }
  }
  return GridDensity::from_density(theta_grid, density);
}

inline GridDensity map_prior(std::span<const StudySummary> studies, double tau_scale,
                             const MapGridOptions& opt = {}) {
  return map_prior(studies, tau_scale, default_theta_grid(studies, tau_scale, opt), opt.tau_points);
}

// (1 - omega) * prior + omega * N(vague_mean, vague_sd^2), both normalised on
// the prior's grid.
inline GridDensity robustify(const GridDensity& prior, double omega, double vague_mean, double vague_sd) {
  require(omega >= 0.0 && omega <= 1.0, "robustify: omega must lie in [0,1]");
  require(vague_sd > 0.0, "robustify: vague_sd must be positive");
  if (omega == 0.0) return prior;
  std::vector<double> vd(prior.size());
  for (std::size_t i = 0; i < vd.size(); ++i) vd[i] = normal_pdf(prior.grid()[i], vague_mean, vague_sd);
  const GridDensity vague = GridDensity::from_density(prior.grid(), vd);
  if (omega == 1.0) return vague;
  std::vector<double> mass(prior.size());
  for (std::size_t i = 0; i < mass.size(); ++i) mass[i] = (1.0 - omega) * prior.mass()[i] + omega * vague.mass()[i];
  return GridDensity::from_mass(prior.grid(), std::move(mass));
}

// Multiplies by the normal likelihood of the observed mean and renormalises.
inline GridDensity posterior_update(const GridDensity& prior, double data_mean, double data_se) {
  require(data_se > 0.0 && std::isfinite(data_se), "posterior_update: data_se must be positive");
  require(std::isfinite(data_mean), "posterior_update: data_mean must be finite");
  const auto& g = prior.grid();
  double nearest = std::numeric_limits<double>::infinity();
  for (double t : g) nearest = std::min(nearest, std::abs(t - data_mean) / data_se);
  if (nearest > 37.0)
    throw NumericalError("posterior_update: likelihood lies entirely off the grid; widen the grid");

  std::vector<double> logpost(g.size(), -std::numeric_limits<double>::infinity());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (prior.mass()[i] <= 0.0) continue;
    const double z = (g[i] - data_mean) / data_se;
    logpost[i] = std::log(prior.mass()[i]) - 0.5 * z * z;
    mx = std::max(mx, logpost[i]);
  }
  if (!std::isfinite(mx)) throw NumericalError("posterior_update: prior has no mass where the data lie");
  std::vector<double> mass(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) mass[i] = std::exp(logpost[i] - mx);
  return GridDensity::from_mass(g, std::move(mass));
}

inline double prior_ess(const GridDensity& prior, double sigma_ref) {
  return sigma_ref * sigma_ref / prior.variance();
}

// Posterior of delta = T - C with T ~ N(treated_mean, treated_se^2)
// independent of C ~ control_post. The normal kernel is convolved with the
// grid masses exactly; quantiles by safeguarded Newton on the mixture CDF.
inline EffectEstimate effect_posterior(const GridDensity& control_post, double treated_mean, double treated_se,
                                       double alpha = 0.05) {
  require(treated_se > 0.0, "effect_posterior: treated_se must be positive");
  require(alpha > 0.0 && alpha < 1.0, "effect_posterior: alpha must lie in (0,1)");
  const auto& g = control_post.grid();
  const auto& m = control_post.mass();
  const double mmax = *std::max_element(m.begin(), m.end());
  std::vector<double> cs, ms;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (m[i] > mmax * 1e-17) {
      cs.push_back(g[i]);
      ms.push_back(m[i]);
    }

  const double mean = treated_mean - control_post.mean();
  const double sd = std::sqrt(treated_se * treated_se + control_post.variance());

  auto cdf_pdf = [&](double d, double& f) {
    double F = 0.0;
    f = 0.0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const double u = (d + cs[i] - treated_mean) / treated_se;
      F += ms[i] * normal_cdf(u);
      f += ms[i] * normal_pdf(u);
    }
    f /= treated_se;
    return F;
  };
  auto quantile = [&](double p) {
    double lo = mean - 40.0 * sd, hi = mean + 40.0 * sd;
    double d = mean + sd * normal_quantile(p);
    for (int it = 0; it < 200; ++it) {
      double f = 0.0;
      const double F = cdf_pdf(d, f) - p;
      if (F > 0) hi = d; else lo = d;
      double next = f > 0 ? d - F / f : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - d) < 1e-12 * sd) return next;
      d = next;
    }
    return d;
  };

  EffectEstimate e;
  e.estimate = mean;
  e.se = sd;
  e.var_for_essr = sd * sd;
  e.lo = quantile(alpha / 2.0);
  e.hi = quantile(1.0 - alpha / 2.0);
  e.reject = e.lo > 0.0 || e.hi < 0.0;
  return e;
}

}  // namespace hct
