#include <catch_amalgamated.hpp>

#include <cmath>

#include "hct/mixed.hpp"

using namespace hct;
using Catch::Approx;

namespace {

struct Problem {
  Eigen::VectorXd y;
  std::vector<int> z, g;
  Eigen::MatrixXd x;
};

Problem grouped(int groups, int per_group, double sd_group, double theta, RandomStream& rng,
                const std::vector<double>& offsets = {}) {
  Problem p;
  const int n = groups * per_group;
  p.y.resize(n);
  p.x.resize(n, 1);
  for (int j = 0; j < groups; ++j) {
    const double u = offsets.empty() ? sd_group * rng.normal() : offsets[j];
    for (int i = 0; i < per_group; ++i) {
      const int r = j * per_group + i;
      p.z.push_back(j == 0 ? (i % 2) : (i % 5 == 0 ? 1 : 0));
      p.g.push_back(j);
      p.x(r, 0) = rng.normal();
      p.y[r] = 1.0 + theta * p.z.back() + 0.4 * p.x(r, 0) + u + rng.normal();
    }
  }
  return p;
}

}  // namespace

TEST_CASE("identical groups collapse to OLS") {
  RandomStream rng(1);
  const Problem p = grouped(4, 2500, 0.0, 0.3, rng);
  const LmmFit fit = fit_lmm(p.y, p.z, p.x, p.g);
  Eigen::MatrixXd d(p.y.size(), 3);
  for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) << 1.0, p.z[i], p.x(i, 0);
  const FitResult ols = fit_ols(d, p.y);
  CHECK(std::abs(fit.theta - ols.coef[1]) < 1e-3);
  CHECK(fit.sigma_g2 < 0.01);
  CHECK(fit.sigma_e2 > 0.0);
  CHECK(fit.se_theta > 0.0);
}

TEST_CASE("lambda = 0 reproduces OLS exactly") {
  RandomStream rng(2);
  const Problem p = grouped(3, 40, 0.5, 0.3, rng);
  const LmmProblem prob(p.y, p.z, p.x, p.g);
  const auto sol = prob.solve(0.0);
  Eigen::MatrixXd d(p.y.size(), 3);
  for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) << 1.0, p.z[i], p.x(i, 0);
  const FitResult ols = fit_ols(d, p.y);
  CHECK((sol.beta - ols.coef).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::sqrt(sol.sigma_e2 * sol.a_inv(1, 1)) == Approx(std::sqrt(ols.cov_model(1, 1))).epsilon(1e-10));
}

TEST_CASE("widely separated groups approach the fixed-intercept fit") {
  RandomStream rng(3);
  const Problem p = grouped(2, 300, 0.0, 0.5, rng, {0.0, 10.0});
  const LmmFit fit = fit_lmm(p.y, p.z, p.x, p.g);
  Eigen::MatrixXd d(p.y.size(), 4);
  for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) << 1.0, p.z[i], p.x(i, 0), p.g[i] == 1 ? 1.0 : 0.0;
  const FitResult fe = fit_ols(d, p.y);
  CHECK(fit.theta == Approx(fe.coef[1]).epsilon(0.01));
}

TEST_CASE("REML optimum beats a 10^4-point lambda grid on a 3x5 problem") {
  RandomStream rng(4);
  const Problem p = grouped(3, 5, 1.0, 0.5, rng);
  const LmmFit fit = fit_lmm(p.y, p.z, std::nullopt, p.g);
  const LmmProblem prob(p.y, p.z, std::nullopt, p.g);
  const double at_fit = prob.criterion(fit.lambda);
  double grid_best = prob.criterion(0.0);
  for (int i = 0; i < 10000; ++i) grid_best = std::max(grid_best, prob.criterion(std::exp(-12.0 + 24.0 * i / 9999.0)));
  CHECK(at_fit >= grid_best - 1e-9 * std::abs(grid_best));
}

TEST_CASE("REML optimum beats the grid across many small problems") {
  for (int s = 0; s < 30; ++s) {
    RandomStream rng(100 + s);
    const Problem p = grouped(3, 5, 0.3 * s / 10.0, 0.5, rng);
    const LmmFit fit = fit_lmm(p.y, p.z, p.x, p.g);
    const LmmProblem prob(p.y, p.z, p.x, p.g);
    double grid_best = prob.criterion(0.0);
    for (int i = 0; i < 2000; ++i) grid_best = std::max(grid_best, prob.criterion(std::exp(-12.0 + 24.0 * i / 1999.0)));
    CHECK(fit.loglik >= grid_best - 1e-9 * std::abs(grid_best));
    CHECK(fit.sigma_g2 >= 0.0);
  }
}

TEST_CASE("shifting every outcome moves only the intercept") {
  RandomStream rng(5);
  const Problem p = grouped(4, 60, 0.7, 0.3, rng);
  const LmmFit a = fit_lmm(p.y, p.z, p.x, p.g);
  const Eigen::VectorXd shifted = p.y.array() + 3.25;
  const LmmFit b = fit_lmm(shifted, p.z, p.x, p.g);
  // Exact at a common lambda; the fitted lambda is only located to about sqrt(eps).
  const LmmProblem pa(p.y, p.z, p.x, p.g), pb(shifted, p.z, p.x, p.g);
  const auto sa = pa.solve(a.lambda), sb = pb.solve(a.lambda);
  CHECK(std::abs(sa.beta[1] - sb.beta[1]) < 1e-10);
  CHECK(sb.beta[0] == Approx(sa.beta[0] + 3.25).epsilon(1e-10));
  CHECK(sb.sigma_e2 == Approx(sa.sigma_e2).epsilon(1e-9));
  CHECK(std::abs(a.theta - b.theta) < 1e-7);
  CHECK(std::abs(a.se_theta - b.se_theta) < 1e-7);
}

TEST_CASE("ML and REML agree on the effect for large samples") {
  RandomStream rng(6);
  const Problem p = grouped(5, 400, 0.5, 0.3, rng);
  LmmOptions ml;
  ml.criterion = LmmCriterion::ML;
  const LmmFit a = fit_lmm(p.y, p.z, p.x, p.g);
  const LmmFit b = fit_lmm(p.y, p.z, p.x, p.g, ml);
  CHECK(std::abs(a.theta - b.theta) < 1e-3);
  CHECK(b.sigma_g2 <= a.sigma_g2 + 1e-12);
}

TEST_CASE("fit_lmm preconditions") {
  RandomStream rng(7);
  const Problem p = grouped(2, 10, 0.5, 0.3, rng);
  const std::vector<int> one(p.g.size(), 0);
  REQUIRE_THROWS_AS(fit_lmm(p.y, p.z, p.x, one), PreconditionError);
  Eigen::MatrixXd dup(p.y.size(), 1);
  for (Eigen::Index i = 0; i < dup.rows(); ++i) dup(i, 0) = p.z[i];
  REQUIRE_THROWS_AS(fit_lmm(p.y, p.z, dup, p.g), SingularDesignError);
}

TEST_CASE("estimate_mm stacks reduced concurrent and historical subjects") {
  RandomStream rng(8);
  const TrialDataset ds = build_replicate({preset("multi-moderate"), 1600, HistoricalTreatment::ControlOnly}, rng);
  const EffectEstimate nc = estimate_mm(ds, 0);
  const EffectEstimate mm = estimate_mm(ds, 1);
  CHECK(nc.method_id == "MM.nc");
  CHECK(mm.method_id == "MM");
  CHECK(mm.se > 0.0);
  CHECK(mm.se < estimate_unadjusted(ds.reduced_concurrent).se);
  TrialDataset none = ds;
  none.historical.clear();
  REQUIRE_THROWS_AS(estimate_mm(none, 1), PreconditionError);
}
