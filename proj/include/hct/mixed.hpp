#pragma once

// Random-intercept linear mixed model y = b0 + theta z + X beta + gamma_g + e,
// fitted by profiled REML (or ML) over lambda = sigma_g^2 / sigma_e^2.
//
// For fixed lambda each group's covariance is sigma_e^2 (I + lambda 1 1'),
// whose inverse is I - c 1 1' with c = lambda / (1 + n_g lambda). All
// quantities reduce to per-group cross-products, so one criterion evaluation
// costs O(G p^2 + p^3) after a single pass over the data.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hct/errors.hpp"
#include "hct/estimate.hpp"
#include "hct/propensity.hpp"
#include "hct/regress.hpp"
#include "hct/trialdata.hpp"

namespace hct {

enum class LmmCriterion { REML, ML };

struct LmmFit {
  double theta = 0.0;
  double se_theta = 0.0;
  Eigen::VectorXd beta;  // all fixed effects: intercept, z, covariates
  double sigma_e2 = 0.0;
  double sigma_g2 = 0.0;
  double lambda = 0.0;
  double loglik = 0.0;
  bool converged = false;
  std::vector<std::string> flags;
};

class LmmProblem {
 public:
  LmmProblem(const Eigen::VectorXd& y, const std::vector<int>& z, const std::optional<Eigen::MatrixXd>& x_cov,
             const std::vector<int>& groups, LmmCriterion criterion = LmmCriterion::REML)
      : criterion_(criterion) {
    const Eigen::Index n = y.size();
    require(static_cast<Eigen::Index>(z.size()) == n && static_cast<Eigen::Index>(groups.size()) == n,
            "fit_lmm: y, z and group labels must have equal length");
    require(!x_cov || x_cov->rows() == n, "fit_lmm: covariate rows must match y");
    const Eigen::Index q = x_cov ? x_cov->cols() : 0;
    p_ = 2 + q;
    n_ = n;
    Eigen::MatrixXd f(n, p_);
    std::vector<std::string> labels{"(Intercept)", "z"};
    for (Eigen::Index j = 0; j < q; ++j) labels.push_back("cov" + std::to_string(j + 1));
    for (Eigen::Index i = 0; i < n; ++i) {
      f(i, 0) = 1.0;
      f(i, 1) = z[i];
      for (Eigen::Index j = 0; j < q; ++j) f(i, 2 + j) = (*x_cov)(i, j);
    }
    detail::check_rank(f, labels);
    require(n > p_, "fit_lmm: need more observations than fixed effects");

    std::map<int, std::size_t> index;
    for (int g : groups) index.try_emplace(g, index.size());
    require(index.size() >= 2, "fit_lmm: need at least 2 groups");
    for (auto& [label, pos] : index) pos = groups_.size(), groups_.emplace_back(p_);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& g = groups_[index.at(groups[i])];
      const Eigen::VectorXd fi = f.row(i).transpose();
      g.n += 1.0;
      g.ftf.noalias() += fi * fi.transpose();
      g.f1 += fi;
      g.fty += fi * y[i];
      g.y1 += y[i];
      g.yy += y[i] * y[i];
    }
  }

  struct Solution {
    Eigen::VectorXd beta;
    Eigen::MatrixXd a_inv;
    double sigma_e2 = 0.0;
    double criterion = 0.0;
  };

  // Profiled log-likelihood (REML or ML) at lambda >= 0.
  Solution solve(double lambda) const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p_, p_);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p_);
    double yhy = 0.0, logdet_h = 0.0;
    for (const auto& g : groups_) {
      const double c = lambda / (1.0 + g.n * lambda);
      a.noalias() += g.ftf - c * g.f1 * g.f1.transpose();
      b.noalias() += g.fty - c * g.f1 * g.y1;
      yhy += g.yy - c * g.y1 * g.y1;
      logdet_h += std::log1p(g.n * lambda);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    Solution s;
    s.beta = ldlt.solve(b);
    s.a_inv = ldlt.solve(Eigen::MatrixXd::Identity(p_, p_));
    const double rhr = std::max(yhy - b.dot(s.beta), 1e-300);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    if (criterion_ == LmmCriterion::REML) {
      const double dof = static_cast<double>(n_ - p_);
      s.sigma_e2 = rhr / dof;
      const double logdet_a = ldlt.vectorD().array().log().sum();
      s.criterion = -0.5 * (dof * (1.0 + log2pi + std::log(s.sigma_e2)) + logdet_h + logdet_a);
    } else {
      const double n = static_cast<double>(n_);
      s.sigma_e2 = rhr / n;
      s.criterion = -0.5 * (n * (1.0 + log2pi + std::log(s.sigma_e2)) + logdet_h);
    }
    return s;
  }

  double criterion(double lambda) const { return solve(lambda).criterion; }
  std::size_t group_count() const { return groups_.size(); }

 private:
  struct Group {
    explicit Group(Eigen::Index p)
        : ftf(Eigen::MatrixXd::Zero(p, p)), f1(Eigen::VectorXd::Zero(p)), fty(Eigen::VectorXd::Zero(p)) {}
    double n = 0.0;
    Eigen::MatrixXd ftf;
    Eigen::VectorXd f1, fty;
    double y1 = 0.0, yy = 0.0;
  };
  LmmCriterion criterion_;
  Eigen::Index n_ = 0, p_ = 0;
  std::vector<Group> groups_;
};

struct LmmOptions {
  LmmCriterion criterion = LmmCriterion::REML;
  double log_lambda_lo = -12.0;
  double log_lambda_hi = 12.0;
  int scan_points = 49;
  double tol = 1e-8;
};

// Coarse scan over log lambda, golden-section refinement around the best
// scan point, then comparison against the lambda = 0 boundary.
inline LmmFit fit_lmm(const Eigen::VectorXd& y, const std::vector<int>& z, const std::optional<Eigen::MatrixXd>& x_cov,
                      const std::vector<int>& groups, const LmmOptions& opt = {}) {
  const LmmProblem prob(y, z, x_cov, groups, opt.criterion);
  LmmFit fit;

  const int m = opt.scan_points;
  std::vector<double> rho(m), val(m);
  int best = 0;
  for (int i = 0; i < m; ++i) {
    rho[i] = opt.log_lambda_lo + (opt.log_lambda_hi - opt.log_lambda_lo) * i / (m - 1);
    val[i] = prob.criterion(std::exp(rho[i]));
    if (val[i] > val[best]) best = i;
  }
  int local_max = 0;
  for (int i = 0; i < m; ++i) {
    const bool left = i == 0 || val[i] > val[i - 1];
    const bool right = i == m - 1 || val[i] >= val[i + 1];
    local_max += left && right ? 1 : 0;
  }
  if (local_max > 1) fit.flags.push_back("reml_multimodal_scan");

  double a = rho[std::max(best - 1, 0)], b = rho[std::min(best + 1, m - 1)];
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = prob.criterion(std::exp(c)), fd = prob.criterion(std::exp(d));
  int iter = 0;
  while (b - a > opt.tol && iter < 200) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = prob.criterion(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = prob.criterion(std::exp(d));
    }
    ++iter;
  }
  fit.converged = b - a <= opt.tol;
  double rho_star = 0.5 * (a + b);
  double lambda = std::exp(rho_star);
  double crit = prob.criterion(lambda);
  if (val[best] > crit) {
    lambda = std::exp(rho[best]);
    crit = val[best];
  }
  if (best == m - 1) fit.flags.push_back("lambda_at_upper_bound");
  const double crit0 = prob.criterion(0.0);
  if (crit0 >= crit) {
    lambda = 0.0;
    fit.flags.push_back("sigma_g_zero");
  }

  const auto sol = prob.solve(lambda);
  fit.lambda = lambda;
  fit.beta = sol.beta;
  fit.theta = sol.beta[1];
  fit.sigma_e2 = sol.sigma_e2;
  fit.sigma_g2 = lambda * sol.sigma_e2;
  fit.se_theta = std::sqrt(sol.sigma_e2 * sol.a_inv(1, 1));
  fit.loglik = sol.criterion;
  return fit;
}

// Reduced concurrent subjects plus all historical controls, random intercept
// per trial, optional adjustment for the covariate set (0 = none).
inline EffectEstimate estimate_mm(const TrialDataset& ds, int covset, double alpha = 0.05,
                                  const LmmOptions& opt = {}) {
  require(ds.historical_count() > 0, "estimate_mm: need at least one historical subject");
  SubjectList rows = ds.reduced_concurrent;
  for (const auto& pool : ds.historical) rows.insert(rows.end(), pool.begin(), pool.end());
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd y(n);
  std::vector<int> z(n), g(n);
  std::optional<Eigen::MatrixXd> x;
  std::vector<int> cols;
  if (covset != 0) {
    cols = covset_columns(covset);
    x = Eigen::MatrixXd(n, static_cast<Eigen::Index>(cols.size()));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = rows[i].y;
    z[i] = rows[i].z;
    g[i] = rows[i].trial;
    for (std::size_t j = 0; j < cols.size(); ++j) (*x)(i, j) = rows[i].x[cols[j]];
  }
  const LmmFit fit = fit_lmm(y, z, x, g, opt);
  EffectEstimate e = wald_estimate(fit.theta, fit.se_theta, alpha);
  e.method_id = covset == 0 ? "MM.nc" : "MM";
  e.covset = covset;
  e.flags = fit.flags;
  return e;
}

}  // namespace hct
