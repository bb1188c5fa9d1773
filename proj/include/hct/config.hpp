#pragma once

// Scenario configuration: JSON schema, preset expansion and validation.
//
// A config file holds either one scenario object or {"scenarios": [...]}.
// Scenario keys:
//   scenario_id          string, required
//   k_historical         1 or 3 (default taken from the coefficient preset)
//   heterogeneity        "moderate" | "severe"
//   coefficients         preset name, or an object overriding preset fields
//   theta_treat          number; defaults to the preset alternative
//   n_total              count (default 1200 for k = 1, 1600 for k = 3)
//   methods              list of method objects, required
//   covsets              subset of [1, 2, 3] (default [1, 2, 3])
//   replicates           count (default 2000)
//   master_seed          unsigned 64-bit integer (default 1)
//   historical_treatment "control_only" | "discard" (default control_only)
//   failure_threshold    fraction in [0, 1] (default 0.05)
// Method keys: id, covsets, omega, tau, tau_scale, xs_factor, caliper_mult,
// caliper_scale, trim, n_strata, total_borrow, criterion. Only keys legal
// for the method are accepted.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hct/borrow.hpp"
#include "hct/errors.hpp"
#include "hct/mixed.hpp"
#include "hct/power_prior.hpp"
#include "hct/propensity.hpp"
#include "hct/trialdata.hpp"

namespace hct {

inline const std::vector<std::string>& method_ids() {
  static const std::vector<std::string> ids{"unadj.rc", "unadj.fc", "MAP",    "MM",      "MM.nc",  "PSM",
                                            "PSW",      "PSS+PP",   "PSS+CL", "PSM+MAP", "PSW+MAP"};
  return ids;
}

struct MethodSpec {
  std::string id;
  std::vector<int> covsets;  // empty: scenario covsets (covariate methods) or none
  std::vector<double> omegas;
  std::vector<TauLadder> taus;
  std::optional<double> tau_scale;
  double xs_factor = 0.01;
  PsmOptions psm;
  PswOptions psw;
  PssOptions pss;
  LmmCriterion criterion = LmmCriterion::REML;

  bool uses_covariates() const {
    return id == "MM" || id == "PSM" || id == "PSW" || id == "PSS+PP" || id == "PSS+CL" || id == "PSM+MAP" ||
           id == "PSW+MAP";
  }
  bool uses_map() const { return id == "MAP" || id == "PSM+MAP" || id == "PSW+MAP"; }
};

struct ScenarioConfig {
  std::string scenario_id;
  int k_historical = 1;
  std::string heterogeneity = "moderate";
  GenCoefficients coefficients;
  int n_total = 1200;
  std::vector<MethodSpec> methods;
  std::vector<int> covsets{1, 2, 3};
  std::uint64_t replicates = 2000;
  std::uint64_t master_seed = 1;
  HistoricalTreatment historical_treatment = HistoricalTreatment::ControlOnly;
  double failure_threshold = 0.05;

  double theta_treat() const { return coefficients.theta_treat; }
  GenerationSpec generation() const { return {coefficients, n_total, historical_treatment}; }
};

// Default hyperparameter grids: omega sweep at tau M for one historical
// trial, tau sweep at omega 0.5 for several.
inline void apply_map_defaults(MethodSpec& m, int k) {
  if (!m.uses_map()) return;
  if (m.omegas.empty()) m.omegas = k == 1 ? std::vector<double>{0.2, 0.5, 0.8, 1.0} : std::vector<double>{0.5};
  if (m.taus.empty())
    m.taus = k == 1 ? std::vector<TauLadder>{TauLadder::M}
                    : std::vector<TauLadder>{TauLadder::L, TauLadder::M, TauLadder::S, TauLadder::XS};
}

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void config_fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

inline void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) config_fail(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key())) config_fail(path + "." + it.key(), "unknown key");
}

inline double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) config_fail(path, "expected a number");
  return j.get<double>();
}

inline std::uint64_t get_count(const json& j, const std::string& path) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) config_fail(path, "expected a non-negative integer");
  if (j.is_number_integer() && j.get<std::int64_t>() < 0) config_fail(path, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

inline std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) config_fail(path, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> get_numbers(const json& j, const std::string& path, std::size_t len = 0) {
  const json arr = j.is_array() ? j : json::array({j});
  std::vector<double> out;
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(get_number(arr[i], path + "[" + std::to_string(i) + "]"));
  if (len != 0 && out.size() != len) config_fail(path, "expected " + std::to_string(len) + " numbers");
  return out;
}

inline Covariates get_covariates(const json& j, const std::string& path) {
  Covariates c{};
  if (j.is_number()) {
    c.fill(j.get<double>());
    return c;
  }
  const auto v = get_numbers(j, path, kNumCovariates);
  std::copy(v.begin(), v.end(), c.begin());
  return c;
}

inline std::vector<int> get_covsets(const json& j, const std::string& path) {
  std::vector<int> out;
  for (double v : get_numbers(j, path)) {
    const int c = static_cast<int>(v);
    if (c != v || c < 1 || c > 3) config_fail(path, "covariate sets must be 1, 2 or 3");
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  if (out.empty()) config_fail(path, "must not be empty");
  return out;
}

inline void apply_coefficient_overrides(const json& j, const std::string& path, GenCoefficients& c) {
  check_keys(j, path, {"preset", "alpha0", "alpha", "theta_treat", "beta0", "beta", "sigma_e"});
  if (j.contains("preset")) c = preset(get_string(j["preset"], path + ".preset"));
  if (j.contains("alpha0")) c.alpha0 = get_number(j["alpha0"], path + ".alpha0");
  if (j.contains("alpha")) c.alpha = get_covariates(j["alpha"], path + ".alpha");
  if (j.contains("theta_treat")) c.theta_treat = get_number(j["theta_treat"], path + ".theta_treat");
  if (j.contains("sigma_e")) c.sigma_e = get_number(j["sigma_e"], path + ".sigma_e");
  if (j.contains("beta0")) c.beta0 = get_numbers(j["beta0"], path + ".beta0");
  if (j.contains("beta")) {
    const json& b = j["beta"];
    c.beta.clear();
    if (b.is_array() && !b.empty() && b[0].is_array()) {
      for (std::size_t i = 0; i < b.size(); ++i)
        c.beta.push_back(get_covariates(b[i], path + ".beta[" + std::to_string(i) + "]"));
    } else {
      const auto v = get_numbers(b, path + ".beta");
      for (double x : v) {
        Covariates row{};
        row.fill(x);
        c.beta.push_back(row);
      }
    }
  }
}

inline MethodSpec parse_method(const json& j, const std::string& path) {
  MethodSpec m;
  if (j.is_string()) {
    m.id = j.get<std::string>();
  } else {
    if (!j.is_object() || !j.contains("id")) config_fail(path, "method needs an \"id\"");
    m.id = get_string(j["id"], path + ".id");
  }
  const auto& ids = method_ids();
  if (std::find(ids.begin(), ids.end(), m.id) == ids.end()) config_fail(path + ".id", "unknown method '" + m.id + "'");
  if (j.is_string()) return m;

  std::set<std::string> allowed{"id"};
  if (m.uses_covariates()) allowed.insert("covsets");
  if (m.uses_map()) allowed.insert({"omega", "tau", "tau_scale", "xs_factor"});
  if (m.id == "PSM" || m.id == "PSM+MAP") allowed.insert({"caliper_mult", "caliper_scale"});
  if (m.id == "PSW" || m.id == "PSW+MAP") allowed.insert("trim");
  if (m.id == "PSS+PP" || m.id == "PSS+CL") allowed.insert({"n_strata", "total_borrow"});
  if (m.id == "MM" || m.id == "MM.nc") allowed.insert("criterion");
  check_keys(j, path, allowed);

  if (j.contains("covsets")) m.covsets = get_covsets(j["covsets"], path + ".covsets");
  if (j.contains("omega")) {
    m.omegas = get_numbers(j["omega"], path + ".omega");
    for (double w : m.omegas)
      if (w < 0.0 || w > 1.0) config_fail(path + ".omega", "omega must lie in [0, 1]");
  }
  if (j.contains("tau")) {
    const json arr = j["tau"].is_array() ? j["tau"] : json::array({j["tau"]});
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = path + ".tau[" + std::to_string(i) + "]";
      try {
        m.taus.push_back(parse_tau_ladder(get_string(arr[i], p)));
      } catch (const PreconditionError& e) {
        config_fail(p, e.what());
      }
    }
  }
  if (j.contains("tau_scale")) {
    m.tau_scale = get_number(j["tau_scale"], path + ".tau_scale");
    if (!(*m.tau_scale > 0.0)) config_fail(path + ".tau_scale", "must be positive");
  }
  if (j.contains("xs_factor")) {
    m.xs_factor = get_number(j["xs_factor"], path + ".xs_factor");
    if (!(m.xs_factor > 0.0)) config_fail(path + ".xs_factor", "must be positive");
  }
  if (j.contains("caliper_mult")) {
    m.psm.caliper_mult = get_number(j["caliper_mult"], path + ".caliper_mult");
    if (!(m.psm.caliper_mult > 0.0)) config_fail(path + ".caliper_mult", "must be positive");
  }
  if (j.contains("caliper_scale")) {
    const auto s = get_string(j["caliper_scale"], path + ".caliper_scale");
    if (s == "pooled_sd") m.psm.caliper_scale = CaliperScale::PooledSd;
    else if (s == "raw") m.psm.caliper_scale = CaliperScale::Raw;
    else config_fail(path + ".caliper_scale", "expected \"pooled_sd\" or \"raw\"");
  }
  if (j.contains("trim")) {
    const auto t = get_numbers(j["trim"], path + ".trim", 2);
    if (!(t[0] >= 0.0 && t[1] > t[0])) config_fail(path + ".trim", "need 0 <= lower < upper");
    m.psw.lower = t[0];
    m.psw.upper = t[1];
  }
  if (j.contains("n_strata")) {
    const auto s = get_count(j["n_strata"], path + ".n_strata");
    if (s < 2 || s > 50) config_fail(path + ".n_strata", "must lie in [2, 50]");
    m.pss.n_strata = static_cast<int>(s);
  }
  if (j.contains("total_borrow")) {
    m.pss.total_borrow = get_number(j["total_borrow"], path + ".total_borrow");
    if (*m.pss.total_borrow < 0.0) config_fail(path + ".total_borrow", "must be non-negative");
  }
  if (j.contains("criterion")) {
    const auto s = get_string(j["criterion"], path + ".criterion");
    if (s == "REML") m.criterion = LmmCriterion::REML;
    else if (s == "ML") m.criterion = LmmCriterion::ML;
    else config_fail(path + ".criterion", "expected \"REML\" or \"ML\"");
  }
  return m;
}

inline ScenarioConfig parse_scenario(const json& j, const std::string& path) {
  check_keys(j, path,
             {"scenario_id", "k_historical", "heterogeneity", "coefficients", "theta_treat", "n_total", "methods",
              "covsets", "replicates", "master_seed", "historical_treatment", "failure_threshold"});
  ScenarioConfig c;
  if (!j.contains("scenario_id")) config_fail(path + ".scenario_id", "required");
  c.scenario_id = get_string(j["scenario_id"], path + ".scenario_id");
  if (c.scenario_id.empty()) config_fail(path + ".scenario_id", "must not be empty");

  std::optional<int> k;
  if (j.contains("k_historical")) {
    const auto v = get_count(j["k_historical"], path + ".k_historical");
    if (v != 1 && v != 3) config_fail(path + ".k_historical", "must be 1 or 3");
    k = static_cast<int>(v);
  }
  if (j.contains("heterogeneity")) {
    c.heterogeneity = get_string(j["heterogeneity"], path + ".heterogeneity");
    if (c.heterogeneity != "moderate" && c.heterogeneity != "severe")
      config_fail(path + ".heterogeneity", "expected \"moderate\" or \"severe\"");
  }

  std::string preset_name = (k.value_or(1) == 1 ? "single-" : "multi-") + c.heterogeneity;
  const json* overrides = nullptr;
  if (j.contains("coefficients")) {
    const json& cj = j["coefficients"];
    if (cj.is_string()) {
      preset_name = cj.get<std::string>();
    } else {
      overrides = &cj;
      if (cj.is_object() && cj.contains("preset")) preset_name = get_string(cj["preset"], path + ".coefficients.preset");
    }
  }
  try {
    c.coefficients = preset(preset_name);
  } catch (const PreconditionError& e) {
    config_fail(path + ".coefficients", e.what());
  }
  if (!j.contains("heterogeneity") && preset_name.find("severe") != std::string::npos) c.heterogeneity = "severe";
  if (overrides) apply_coefficient_overrides(*overrides, path + ".coefficients", c.coefficients);
  if (j.contains("theta_treat")) c.coefficients.theta_treat = get_number(j["theta_treat"], path + ".theta_treat");
  try {
    c.coefficients.validate();
  } catch (const PreconditionError& e) {
    config_fail(path + ".coefficients", e.what());
  }
  c.k_historical = c.coefficients.k();
  if (k && *k != c.k_historical)
    config_fail(path + ".k_historical", "does not match the coefficient set (k = " + std::to_string(c.k_historical) + ")");

  c.n_total = c.k_historical == 1 ? 1200 : 1600;
  if (j.contains("n_total")) {
    const auto n = get_count(j["n_total"], path + ".n_total");
    if (n < 20 || n > 10'000'000) config_fail(path + ".n_total", "must lie in [20, 1e7]");
    c.n_total = static_cast<int>(n);
  }
  if (j.contains("covsets")) c.covsets = get_covsets(j["covsets"], path + ".covsets");
  if (j.contains("replicates")) {
    c.replicates = get_count(j["replicates"], path + ".replicates");
    if (c.replicates < 1) config_fail(path + ".replicates", "must be >= 1");
  }
  if (j.contains("master_seed")) c.master_seed = get_count(j["master_seed"], path + ".master_seed");
  if (j.contains("historical_treatment")) {
    const auto s = get_string(j["historical_treatment"], path + ".historical_treatment");
    if (s == "control_only") c.historical_treatment = HistoricalTreatment::ControlOnly;
    else if (s == "discard") c.historical_treatment = HistoricalTreatment::Discard;
    else config_fail(path + ".historical_treatment", "expected \"control_only\" or \"discard\"");
  }
  if (j.contains("failure_threshold")) {
    c.failure_threshold = get_number(j["failure_threshold"], path + ".failure_threshold");
    if (c.failure_threshold < 0.0 || c.failure_threshold > 1.0)
      config_fail(path + ".failure_threshold", "must lie in [0, 1]");
  }

  if (!j.contains("methods")) config_fail(path + ".methods", "required (list of methods)");
  const json& mj = j["methods"];
  if (!mj.is_array() || mj.empty()) config_fail(path + ".methods", "expected a non-empty list");
  for (std::size_t i = 0; i < mj.size(); ++i) {
    MethodSpec m = parse_method(mj[i], path + ".methods[" + std::to_string(i) + "]");
    apply_map_defaults(m, c.k_historical);
    c.methods.push_back(std::move(m));
  }
  return c;
}

}  // namespace detail

inline std::vector<ScenarioConfig> parse_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  std::vector<ScenarioConfig> out;
  if (j.is_object() && j.contains("scenarios")) {
    detail::check_keys(j, "$", {"scenarios"});
    const json& s = j["scenarios"];
    if (!s.is_array() || s.empty()) detail::config_fail("$.scenarios", "expected a non-empty list");
    for (std::size_t i = 0; i < s.size(); ++i)
      out.push_back(detail::parse_scenario(s[i], "$.scenarios[" + std::to_string(i) + "]"));
  } else {
    out.push_back(detail::parse_scenario(j, "$"));
  }
  std::set<std::string> seen;
  for (const auto& c : out)
    if (!seen.insert(c.scenario_id).second) throw ConfigError("duplicate scenario_id '" + c.scenario_id + "'");
  return out;
}

inline std::vector<ScenarioConfig> load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace hct
