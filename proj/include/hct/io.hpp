#pragma once

// Subject-level CSV ingestion and plain-text rendering of summary tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hct/errors.hpp"
#include "hct/trialdata.hpp"

namespace hct {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse '" + s + "' as a number");
  }
}

}  // namespace detail

// Columns: id, trial (0 = concurrent, 1..k = historical), z, y, x1..x6.
// The concurrent trial is used as given for both concurrent variants;
// treated historical subjects are dropped and counted in `dropped`.
inline TrialDataset read_subjects_csv(std::istream& in, std::size_t* dropped = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("subjects file is empty");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  std::vector<std::string> need{"id", "trial", "z", "y"};
  for (int l = 1; l <= kNumCovariates; ++l) need.push_back("x" + std::to_string(l));
  for (const auto& n : need)
    if (!col.contains(n)) throw ConfigError("subjects file: missing column '" + n + "'");

  TrialDataset ds;
  std::size_t n_dropped = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw ConfigError("subjects file line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " fields");
    const std::string where = "subjects file line " + std::to_string(lineno);
    SubjectRecord s;
    s.id = static_cast<std::int64_t>(detail::parse_double(f[col["id"]], where));
    s.trial = static_cast<int>(detail::parse_double(f[col["trial"]], where));
    s.z = static_cast<int>(detail::parse_double(f[col["z"]], where));
    s.y = detail::parse_double(f[col["y"]], where);
    for (int l = 0; l < kNumCovariates; ++l) s.x[l] = detail::parse_double(f[col["x" + std::to_string(l + 1)]], where);
    if (s.trial < 0 || (s.z != 0 && s.z != 1)) throw ConfigError(where + ": trial must be >= 0 and z in {0, 1}");
    if (s.trial == 0) {
      ds.full_concurrent.push_back(s);
      continue;
    }
    if (s.z == 1) {
      ++n_dropped;
      continue;
    }
    if (static_cast<int>(ds.historical.size()) < s.trial) ds.historical.resize(s.trial);
    ds.historical[s.trial - 1].push_back(s);
  }
  ds.reduced_concurrent = ds.full_concurrent;
  std::erase_if(ds.historical, [](const SubjectList& p) { return p.empty(); });
  int label = 1;
  for (auto& pool : ds.historical) {
    for (auto& s : pool) s.trial = label;
    ++label;
  }
  if (ds.full_concurrent.empty() || ds.historical.empty())
    throw ConfigError("subjects file needs concurrent (trial 0) and historical (trial >= 1) subjects");
  if (dropped) *dropped = n_dropped;
  return ds;
}

struct SummaryTableRow {
  std::string scenario_id, method_id, hyperparam;
  int covset = 0;
  double bias = 0.0;
  std::optional<double> rel_bias_pct;
  double type1_or_power = 0.0, mean_se = 0.0, essr_pct = 0.0, essr_empirical_pct = 0.0;
  std::size_t n_used = 0, n_failed = 0;
};

inline std::vector<SummaryTableRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("summary file is empty");
  std::vector<SummaryTableRow> rows;
  std::size_t lineno = 1;
  auto num = [](const std::string& s, const std::string& where) {
    return s == "NA" ? std::numeric_limits<double>::quiet_NaN() : detail::parse_double(s, where);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = "summary line " + std::to_string(lineno);
    if (f.size() != 12) throw ConfigError(where + ": expected 12 fields");
    SummaryTableRow r;
    r.scenario_id = f[0];
    r.method_id = f[1];
    r.covset = static_cast<int>(num(f[2], where));
    r.hyperparam = f[3];
    r.bias = num(f[4], where);
    if (f[5] != "NA") r.rel_bias_pct = num(f[5], where);
    r.type1_or_power = num(f[6], where);
    r.mean_se = num(f[7], where);
    r.essr_pct = num(f[8], where);
    r.essr_empirical_pct = num(f[9], where);
    r.n_used = static_cast<std::size_t>(num(f[10], where));
    r.n_failed = static_cast<std::size_t>(num(f[11], where));
    rows.push_back(std::move(r));
  }
  return rows;
}

// One block per scenario: rows are methods, columns covariate sets. Null
// scenarios (no relative bias) show the Type I error rate, others power in
// percent; bias and ESSR follow as separate blocks.
inline void render_summary_tables(std::ostream& os, const std::vector<SummaryTableRow>& rows) {
  std::vector<std::string> scenarios;
  for (const auto& r : rows)
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario_id) == scenarios.end())
      scenarios.push_back(r.scenario_id);
  auto cell = [](double v, const char* fmt) {
    if (std::isnan(v)) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, fmt, v);
    return std::string(buf);
  };
  for (const auto& sc : scenarios) {
    std::vector<std::string> labels;
    std::vector<int> covsets;
    std::map<std::pair<std::string, int>, const SummaryTableRow*> at;
    bool is_null = true;
    for (const auto& r : rows) {
      if (r.scenario_id != sc) continue;
      const std::string label = r.hyperparam.empty() ? r.method_id : r.method_id + " (" + r.hyperparam + ")";
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
      if (std::find(covsets.begin(), covsets.end(), r.covset) == covsets.end()) covsets.push_back(r.covset);
      at[{label, r.covset}] = &r;
      if (r.rel_bias_pct) is_null = false;
    }
    std::sort(covsets.begin(), covsets.end());
    std::size_t width = 6;
    for (const auto& l : labels) width = std::max(width, l.size());

    struct Block {
      const char* title;
      double (*get)(const SummaryTableRow&);
      const char* fmt;
    };
    const Block blocks[] = {
        {is_null ? "Type I error" : "Power (%)",
         is_null ? +[](const SummaryTableRow& r) { return r.type1_or_power; }
                 : +[](const SummaryTableRow& r) { return 100.0 * r.type1_or_power; },
         is_null ? "%.3f" : "%.1f"},
        {"Bias", +[](const SummaryTableRow& r) { return r.bias; }, "%.3f"},
        {"ESSR (%)", +[](const SummaryTableRow& r) { return r.essr_pct; }, "%.1f"},
    };
    os << "Scenario " << sc << "\n";
    for (const auto& b : blocks) {
      os << "  " << b.title << "\n    " << std::string(width, ' ');
      for (int c : covsets) {
        const std::string h = c == 0 ? "no cov" : "Model " + std::to_string(c);
        os << "  " << std::string(h.size() < 9 ? 9 - h.size() : 0, ' ') << h;
      }
      os << "\n";
      for (const auto& l : labels) {
        os << "    " << l << std::string(width - l.size(), ' ');
        for (int c : covsets) {
          const auto it = at.find({l, c});
          const std::string v = it == at.end() ? "-" : cell(b.get(*it->second), b.fmt);
          os << "  " << std::string(v.size() < 9 ? 9 - v.size() : 0, ' ') << v;
        }
        os << "\n";
      }
    }
    os << "\n";
  }
}

}  // namespace hct
