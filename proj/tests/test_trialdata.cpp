#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hct/trialdata.hpp"

using namespace hct;
using Catch::Approx;

namespace {

double correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> normal_draws(std::size_t n, RandomStream& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("gen_covariates rejects n = 0") {
  RandomStream rng(1);
  REQUIRE_THROWS_AS(gen_covariates(0, rng), PreconditionError);
}

TEST_CASE("gen_covariates columns are standard normal") {
  RandomStream rng(11);
  const Eigen::MatrixXd x = gen_covariates(100000, rng);
  for (int l = 0; l < kNumCovariates; ++l) {
    const double m = x.col(l).mean();
    const double sd = std::sqrt((x.col(l).array() - m).square().sum() / (x.rows() - 1));
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(sd - 1.0) < 0.02);
  }
}

TEST_CASE("gen_covariates is reproducible for a fixed seed") {
  RandomStream a(5), b(5);
  CHECK(gen_covariates(3, a) == gen_covariates(3, b));
}

TEST_CASE("assign_trials_single, severe preset gives about 400 concurrent of 1200") {
  const auto c = preset("single-severe");
  RandomStream rng(21);
  const Eigen::MatrixXd x = gen_covariates(1200, rng);
  const auto t = assign_trials_single(x, c.beta0[0], c.beta[0], rng);
  const auto n_conc = std::count(t.begin(), t.end(), 0);
  CHECK(std::abs(n_conc - 400) <= 40);
}

TEST_CASE("assign_trials_single with zero coefficients is a fair coin") {
  RandomStream rng(3);
  const Eigen::MatrixXd x = gen_covariates(20000, rng);
  const auto t = assign_trials_single(x, 0.0, Covariates{}, rng);
  const double frac = static_cast<double>(std::count(t.begin(), t.end(), 0)) / 20000.0;
  CHECK(std::abs(frac - 0.5) < 0.02);
}

TEST_CASE("assign_trials_single matches the Monte Carlo marginal inclusion probability") {
  const auto c = preset("single-moderate");
  RandomStream oracle_rng(99);
  double p_bar = 0.0;
  const int n_oracle = 1000000;
  for (int i = 0; i < n_oracle; ++i) {
    double eta = c.beta0[0];
    for (int l = 0; l < kNumCovariates; ++l) eta += c.beta[0][l] * oracle_rng.normal();
    p_bar += expit(eta);
  }
  p_bar /= n_oracle;

  RandomStream rng(7);
  const Eigen::MatrixXd x = gen_covariates(1200, rng);
  const auto t = assign_trials_single(x, c.beta0[0], c.beta[0], rng);
  const double frac = static_cast<double>(std::count(t.begin(), t.end(), 0)) / 1200.0;
  CHECK(std::abs(frac - p_bar) < 0.04);
}

TEST_CASE("multinomial probabilities form a simplex point") {
  RandomStream rng(4);
  const Eigen::MatrixXd x = gen_covariates(200, rng);
  const auto c = preset("multi-severe");
  for (int i = 0; i < 200; ++i) {
    const auto p = multinomial_probabilities(x, i, c.beta0, c.beta);
    REQUIRE(p.size() == 4);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  const std::vector<double> b0(3, 0.0);
  const std::vector<Covariates> b(3, Covariates{});
  for (double v : multinomial_probabilities(x, 0, b0, b)) CHECK(v == Approx(0.25).margin(1e-15));
}

TEST_CASE("assign_trials_multi, severe preset puts about a quarter in the concurrent trial") {
  const auto c = preset("multi-severe");
  RandomStream rng(8);
  const Eigen::MatrixXd x = gen_covariates(1600, rng);
  const auto t = assign_trials_multi(x, c.beta0, c.beta, rng);
  const auto n_conc = std::count(t.begin(), t.end(), 0);
  CHECK(std::abs(n_conc - 400) <= 60);
  CHECK(*std::max_element(t.begin(), t.end()) == 3);
}

TEST_CASE("gen_outcomes draws N(alpha0, 1) with null effects") {
  GenCoefficients c;
  c.alpha0 = 1.0;
  RandomStream rng(12);
  const int n = 100000;
  const Eigen::MatrixXd x = gen_covariates(n, rng);
  const std::vector<int> z(n, 1);
  const Eigen::VectorXd y = gen_outcomes(x, z, c, rng);
  CHECK(std::abs(y.mean() - 1.0) < 0.01);
}

TEST_CASE("gen_outcomes without noise is exactly alpha0 + theta z") {
  GenCoefficients c;
  c.alpha0 = 1.0;
  c.theta_treat = 0.5;
  c.sigma_e = 0.0;
  RandomStream rng(2);
  const Eigen::MatrixXd x = gen_covariates(10, rng);
  const std::vector<int> z{0, 1, 0, 1, 1, 0, 0, 1, 0, 1};
  const Eigen::VectorXd y = gen_outcomes(x, z, c, rng);
  for (int i = 0; i < 10; ++i) CHECK(y[i] == 1.0 + 0.5 * z[i]);
}

TEST_CASE("build_replicate partitions subjects as described") {
  for (const auto& name : preset_names()) {
    GenerationSpec spec{preset(name), name.starts_with("single") ? 1200 : 1600, HistoricalTreatment::ControlOnly};
    RandomStream rng(31);
    const TrialDataset ds = build_replicate(spec, rng);
    CHECK(ds.k() == spec.coefficients.k());
    CHECK(ds.full_concurrent.size() + ds.historical_count() == static_cast<std::size_t>(spec.n_total));

    std::set<std::int64_t> full_controls, full_treated;
    for (const auto& s : ds.full_concurrent) (s.z ? full_treated : full_controls).insert(s.id);
    CHECK(full_treated.size() - full_controls.size() <= 1);

    std::set<std::int64_t> red_controls, red_treated;
    for (const auto& s : ds.reduced_concurrent) (s.z ? red_treated : red_controls).insert(s.id);
    CHECK(red_treated == full_treated);
    CHECK(red_controls.size() == full_controls.size() / 2);
    CHECK(std::includes(full_controls.begin(), full_controls.end(), red_controls.begin(), red_controls.end()));

    for (int j = 0; j < ds.k(); ++j)
      for (const auto& s : ds.historical[j]) {
        CHECK(s.z == 0);
        CHECK(s.trial == j + 1);
        CHECK(std::isfinite(s.y));
      }
  }
}

TEST_CASE("build_replicate is a pure function of the seed") {
  GenerationSpec spec{preset("multi-moderate"), 1600, HistoricalTreatment::ControlOnly};
  RandomStream a(77), b(77);
  const TrialDataset x = build_replicate(spec, a), y = build_replicate(spec, b);
  REQUIRE(x.reduced_concurrent.size() == y.reduced_concurrent.size());
  for (std::size_t i = 0; i < x.reduced_concurrent.size(); ++i) {
    CHECK(x.reduced_concurrent[i].id == y.reduced_concurrent[i].id);
    CHECK(x.reduced_concurrent[i].y == y.reduced_concurrent[i].y);
  }
  for (int j = 0; j < x.k(); ++j) {
    REQUIRE(x.historical[j].size() == y.historical[j].size());
    for (std::size_t i = 0; i < x.historical[j].size(); ++i) CHECK(x.historical[j][i].y == y.historical[j][i].y);
  }
}

TEST_CASE("build_replicate with the discard rule drops treated historical subjects") {
  GenerationSpec spec{preset("single-moderate"), 1200, HistoricalTreatment::Discard};
  RandomStream rng(5);
  const TrialDataset ds = build_replicate(spec, rng);
  CHECK(ds.full_concurrent.size() + ds.historical_count() < 1200);
  for (const auto& s : ds.historical[0]) CHECK(s.z == 0);
}

TEST_CASE("make_correlated_covariate hits the target correlation") {
  RandomStream rng(40);
  const auto y = normal_draws(10000, rng);
  CHECK(std::abs(correlation(make_correlated_covariate(y, 0.0, rng), y)) < 0.05);
  CHECK(std::abs(correlation(make_correlated_covariate(y, 0.99, rng), y) - 0.99) < 0.01);
  const std::vector<double> y_small(y.begin(), y.begin() + 1892);
  CHECK(std::abs(correlation(make_correlated_covariate(y_small, 0.5, rng), y_small) - 0.5) < 0.05);
}

TEST_CASE("make_correlated_covariate rejects constant outcomes") {
  RandomStream rng(1);
  const std::vector<double> y(10, 3.0);
  REQUIRE_THROWS_AS(make_correlated_covariate(y, 0.5, rng), PreconditionError);
}

TEST_CASE("ps_biased_split with certain acceptance takes the first n in shuffled order") {
  RandomStream rng(9);
  std::vector<double> ps(50);
  for (auto& p : ps) p = rng.uniform();
  RandomStream a(13), b(13);
  const auto flags = ps_biased_split(ps, 20, a, 1.0, 1.0);
  std::vector<std::size_t> order(ps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  b.shuffle(order);
  std::vector<bool> expect(ps.size(), false);
  for (std::size_t i = 0; i < 20; ++i) expect[order[i]] = true;
  CHECK(flags == expect);
}

TEST_CASE("ps_biased_split selects exactly n_target and favours high scores") {
  int favoured = 0;
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    RandomStream rng(1000 + s);
    std::vector<double> ps(1892);
    for (auto& p : ps) p = rng.uniform();
    const auto flags = ps_biased_split(ps, 600, rng);
    REQUIRE(std::count(flags.begin(), flags.end(), true) == 600);
    double in = 0.0, out = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) (flags[i] ? in : out) += ps[i];
    favoured += in / 600.0 > out / 1292.0 ? 1 : 0;
  }
  CHECK(favoured >= 99);
}

TEST_CASE("ps_biased_split rejects an unreachable target") {
  RandomStream rng(1);
  const std::vector<double> ps{0.1, 0.2, 0.3};
  REQUIRE_THROWS_AS(ps_biased_split(ps, 3, rng), PreconditionError);
}

TEST_CASE("null treatment leaves arm outcome distributions identical") {
  // Two-sample KS statistic between arms on shared covariate rows.
  GenCoefficients c = preset("single-severe");
  c.theta_treat = 0.0;
  RandomStream rng(55);
  const int n = 100000;
  const Eigen::MatrixXd x = gen_covariates(n, rng);
  const Eigen::VectorXd y0 = gen_outcomes(x, std::vector<int>(n, 0), c, rng);
  const Eigen::VectorXd y1 = gen_outcomes(x, std::vector<int>(n, 1), c, rng);
  std::vector<double> a(y0.data(), y0.data() + n), b(y1.data(), y1.data() + n);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) ++i;
    else ++j;
    d = std::max(d, std::abs(static_cast<double>(i) - static_cast<double>(j)) / n);
  }
  // 1.95 * sqrt(2/n) is the 0.001 critical value.
  CHECK(d < 1.95 * std::sqrt(2.0 / n));
}
