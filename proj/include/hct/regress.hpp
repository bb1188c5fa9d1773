#pragma once

// Dense regression kernels: (weighted) least squares, logistic regression by
// IRLS, HC0 sandwich covariance, and the two-sided Wald test.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hct/errors.hpp"
#include "hct/normal.hpp"

namespace hct {

struct FitResult {
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov_model;
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;  // response scale: y - fitted
  std::vector<std::string> design_info;
  std::optional<Eigen::VectorXd> weights;

  // Retained for the sandwich estimator.
  Eigen::MatrixXd design;
  Eigen::MatrixXd bread;  // (X'WX)^-1

  int iterations = 0;
  double log_likelihood = 0.0;  // logistic fits only
};

namespace detail {

inline std::vector<std::string> default_labels(Eigen::Index p) {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < p; ++j) out.push_back(j == 0 ? "(Intercept)" : "x" + std::to_string(j));
  return out;
}

inline Eigen::VectorXd resolve_weights(Eigen::Index n, const std::optional<Eigen::VectorXd>& w) {
  if (!w) return Eigen::VectorXd::Ones(n);
  require(w->size() == n, "regression weights must have one entry per row");
  for (Eigen::Index i = 0; i < n; ++i)
    require(std::isfinite((*w)[i]) && (*w)[i] >= 0.0, "regression weights must be finite and non-negative");
  return *w;
}

// Throws SingularDesignError naming the first column that lies in the span of
// the columns before it.
inline void check_rank(const Eigen::MatrixXd& wx, const std::vector<std::string>& labels) {
  constexpr double kTol = 1e-10;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(wx);
  qr.setThreshold(kTol);
  if (qr.rank() == wx.cols()) return;
  for (Eigen::Index j = 0; j < wx.cols(); ++j) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> sub(wx.leftCols(j + 1));
    sub.setThreshold(kTol);
    if (sub.rank() < j + 1)
      throw SingularDesignError(labels[j], "rank-deficient design: column '" + labels[j] +
                                               "' is collinear with earlier columns");
  }
  throw SingularDesignError(labels.back(), "rank-deficient design");
}

}  // namespace detail

inline FitResult fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const std::optional<Eigen::VectorXd>& weights = std::nullopt,
                         std::vector<std::string> labels = {}) {
  const Eigen::Index n = x.rows(), p = x.cols();
  require(y.size() == n, "fit_ols: y length must match rows of X");
  require(p >= 1 && n >= p, "fit_ols: need rows >= columns >= 1");
  if (labels.empty()) labels = detail::default_labels(p);
  require(static_cast<Eigen::Index>(labels.size()) == p, "fit_ols: one label per column");
  const Eigen::VectorXd w = detail::resolve_weights(n, weights);

  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd wx = sw.asDiagonal() * x;
  detail::check_rank(wx, labels);

  FitResult fit;
  fit.coef = wx.colPivHouseholderQr().solve(sw.cwiseProduct(y));
  fit.bread = (wx.transpose() * wx).inverse();
  fit.fitted = x * fit.coef;
  fit.residuals = y - fit.fitted;

  Eigen::Index n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) n_pos += w[i] > 0.0 ? 1 : 0;
  const double dof = static_cast<double>(std::max<Eigen::Index>(n_pos - p, 1));
  const double sigma2 = (w.array() * fit.residuals.array().square()).sum() / dof;
  fit.cov_model = sigma2 * fit.bread;
  fit.design_info = std::move(labels);
  if (weights) fit.weights = w;
  fit.design = x;
  return fit;
}

namespace detail {
inline double bernoulli_loglik(const Eigen::VectorXd& eta, const Eigen::VectorXd& t, const Eigen::VectorXd& w) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) computed stably
    const double e = eta[i];
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += w[i] * (t[i] * e - softplus);
  }
  return ll;
}
}  // namespace detail

// Maximum-likelihood logistic regression by Newton / IRLS with step halving.
inline FitResult fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                              const std::optional<Eigen::VectorXd>& weights = std::nullopt,
                              std::vector<std::string> labels = {}) {
  constexpr int kMaxIter = 100;
  constexpr int kMaxHalvings = 20;
  constexpr double kStepTol = 1e-8;
  constexpr double kSeparationBound = 1e3;

  const Eigen::Index n = x.rows(), p = x.cols();
  require(t.size() == n, "fit_logistic: t length must match rows of X");
  require(p >= 1 && n >= p, "fit_logistic: need rows >= columns >= 1");
  if (labels.empty()) labels = detail::default_labels(p);
  const Eigen::VectorXd w = detail::resolve_weights(n, weights);

  double n1 = 0.0, n0 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    require(t[i] == 0.0 || t[i] == 1.0, "fit_logistic: outcome must be binary 0/1");
    (t[i] == 1.0 ? n1 : n0) += w[i];
  }
  require(n1 > 0.0 && n0 > 0.0, "fit_logistic: both outcome classes must be present");
  detail::check_rank(w.cwiseSqrt().asDiagonal() * x, labels);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = x * beta;
  double ll = detail::bernoulli_loglik(eta, t, w);
  Eigen::MatrixXd info(p, p);
  int iter = 0;
  bool converged = false;
  for (; iter < kMaxIter && !converged; ++iter) {
    Eigen::VectorXd mu(n), wv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      wv[i] = w[i] * mu[i] * (1.0 - mu[i]);
    }
    const Eigen::VectorXd score = x.transpose() * (w.array() * (t - mu).array()).matrix();
    info = x.transpose() * wv.asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
      throw SeparationError("fit_logistic: information matrix singular (fitted probabilities at 0 or 1)");
    Eigen::VectorXd step = ldlt.solve(score);

    double ll_new = 0.0;
    Eigen::VectorXd beta_new;
    int halvings = 0;
    for (;; ++halvings) {
      beta_new = beta + step;
      ll_new = detail::bernoulli_loglik(x * beta_new, t, w);
      if (ll_new >= ll - 1e-12 * std::abs(ll)) break;
      if (halvings == kMaxHalvings)
        throw SeparationError("fit_logistic: likelihood failed to increase after step halving");
      step *= 0.5;
    }
    beta = beta_new;
    eta = x * beta;
    ll = ll_new;
    if (beta.cwiseAbs().maxCoeff() > kSeparationBound)
      throw SeparationError("fit_logistic: coefficients diverging (complete separation)");
    converged = step.cwiseAbs().maxCoeff() < kStepTol;
  }

  FitResult fit;
  fit.coef = beta;
  fit.fitted.resize(n);
  Eigen::VectorXd wv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    fit.fitted[i] = expit(eta[i]);
    wv[i] = w[i] * fit.fitted[i] * (1.0 - fit.fitted[i]);
  }
  fit.residuals = t - fit.fitted;
  fit.bread = (x.transpose() * wv.asDiagonal() * x).inverse();
  fit.cov_model = fit.bread;
  fit.design_info = std::move(labels);
  if (weights) fit.weights = w;
  fit.design = x;
  fit.iterations = iter;
  fit.log_likelihood = ll;
  return fit;
}

// HC0 sandwich covariance B M B for a least-squares fit, where M sums score
// outer products per observation or, with clusters, per cluster.
inline Eigen::MatrixXd sandwich_cov(const FitResult& fit,
                                    std::optional<std::span<const std::int64_t>> clusters = std::nullopt) {
  const Eigen::MatrixXd& x = fit.design;
  const Eigen::Index n = x.rows(), p = x.cols();
  const Eigen::VectorXd w = fit.weights ? *fit.weights : Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  if (!clusters) {
    require(n >= 2, "sandwich_cov: need at least 2 observations");
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd u = x.row(i).transpose() * (w[i] * fit.residuals[i]);
      meat.noalias() += u * u.transpose();
    }
  } else {
    require(static_cast<Eigen::Index>(clusters->size()) == n, "sandwich_cov: one cluster id per row");
    std::map<std::int64_t, Eigen::VectorXd> scores;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto [it, inserted] = scores.try_emplace((*clusters)[i], Eigen::VectorXd::Zero(p));
      it->second.noalias() += x.row(i).transpose() * (w[i] * fit.residuals[i]);
    }
    require(scores.size() >= 2, "sandwich_cov: need at least 2 clusters");
    for (const auto& [id, u] : scores) meat.noalias() += u * u.transpose();
  }
  Eigen::MatrixXd cov = fit.bread * meat * fit.bread;
  return 0.5 * (cov + cov.transpose());
}

inline double sandwich_se(const FitResult& fit, Eigen::Index target,
                          std::optional<std::span<const std::int64_t>> clusters = std::nullopt) {
  require(target >= 0 && target < fit.coef.size(), "sandwich_se: target column out of range");
  return std::sqrt(sandwich_cov(fit, clusters)(target, target));
}

struct WaldResult {
  bool reject = false;
  double z = 0.0;
  double p = 1.0;
};

// Two-sided normal-reference test; rejects iff |z| strictly exceeds the
// critical value.
inline WaldResult wald_decision(double estimate, double se, double alpha = 0.05) {
  require(se > 0.0 && std::isfinite(se), "wald_decision: se must be positive");
  require(alpha > 0.0 && alpha < 1.0, "wald_decision: alpha must lie in (0,1)");
  WaldResult r;
  r.z = estimate / se;
  r.p = std::min(1.0, 2.0 * normal_sf(std::abs(r.z)));
  r.reject = std::abs(r.z) > normal_quantile(1.0 - alpha / 2.0);
  return r;
}

}  // namespace hct
