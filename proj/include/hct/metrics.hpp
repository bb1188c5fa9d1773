#pragma once

// Operating characteristics over replicates: bias, relative bias, rejection
// rate, mean SE and effective sample size rate (ESSR).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hct/errors.hpp"

namespace hct {

inline double bias(std::span<const double> estimates, double theta_true) {
  require(!estimates.empty(), "bias: need at least one estimate");
  double s = 0.0;
  for (double e : estimates) s += e - theta_true;
  return s / static_cast<double>(estimates.size());
}

// Percent of theta_true; empty when theta_true is zero.
inline std::optional<double> relative_bias_pct(std::span<const double> estimates, double theta_true) {
  if (theta_true == 0.0) return std::nullopt;
  return 100.0 * bias(estimates, theta_true) / theta_true;
}

inline double reject_rate(const std::vector<bool>& rejects) {
  if (rejects.empty()) return 0.0;
  const auto n = std::count(rejects.begin(), rejects.end(), true);
  return static_cast<double>(n) / static_cast<double>(rejects.size());
}

// (var_no_borrow / var_borrow - 1) * 100
inline double essr(double var_no_borrow, double var_borrow) {
  if (!(var_no_borrow > 0.0) || !(var_borrow > 0.0))
    throw PreconditionError("essr: variances must be positive");
  return (var_no_borrow / var_borrow - 1.0) * 100.0;
}

inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

struct ReplicateRecord {
  std::uint64_t replicate = 0;
  bool failed = false;
  double estimate = 0.0;
  double se = 0.0;
  bool reject = false;
  double essr_pct = 0.0;     // per-replicate ESSR against unadj.rc
  double rc_estimate = 0.0;  // unadj.rc estimate on the same replicate
};

struct SummaryRow {
  std::string scenario_id;
  std::string method_id;
  int covset = 0;
  std::string hyperparam;
  double theta_true = 0.0;
  double bias = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> rel_bias_pct;
  double reject_rate = std::numeric_limits<double>::quiet_NaN();
  double mean_se = std::numeric_limits<double>::quiet_NaN();
  double essr_pct = std::numeric_limits<double>::quiet_NaN();
  double essr_empirical_pct = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_used = 0;
  std::size_t n_failed = 0;
};

// Per-cell collection of replicate records. Partial accumulators from
// different workers merge by concatenation; summarize() sorts by replicate
// index first, so the result does not depend on arrival order.
class MetricAccumulator {
 public:
  void add(const ReplicateRecord& r) { records_.push_back(r); }

  void merge(const MetricAccumulator& other) {
    records_.insert(records_.end(), other.records_.begin(), other.records_.end());
  }

  std::size_t size() const noexcept { return records_.size(); }

  SummaryRow summarize(double theta_true) const {
    auto recs = records_;
    std::sort(recs.begin(), recs.end(),
              [](const ReplicateRecord& a, const ReplicateRecord& b) { return a.replicate < b.replicate; });
    SummaryRow row;
    row.theta_true = theta_true;
    std::vector<double> est, rc;
    std::vector<bool> rej;
    double se_sum = 0.0, essr_sum = 0.0;
    for (const auto& r : recs) {
      if (r.failed) {
        ++row.n_failed;
        continue;
      }
      est.push_back(r.estimate);
      rc.push_back(r.rc_estimate);
      rej.push_back(r.reject);
      se_sum += r.se;
      essr_sum += r.essr_pct;
    }
    row.n_used = est.size();
    if (est.empty()) return row;
    const double n = static_cast<double>(est.size());
    row.bias = bias(est, theta_true);
    row.rel_bias_pct = relative_bias_pct(est, theta_true);
    row.reject_rate = reject_rate(rej);
    row.mean_se = se_sum / n;
    row.essr_pct = essr_sum / n;
    const double v_method = sample_variance(est), v_rc = sample_variance(rc);
    if (v_method > 0.0 && v_rc > 0.0) row.essr_empirical_pct = essr(v_rc, v_method);
    return row;
  }

 private:
  std::vector<ReplicateRecord> records_;
};

}  // namespace hct
