// hctsim: run hybrid-control borrowing simulations, list presets, render
// summary tables, or analyse a subject-level dataset.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hct/hct.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFailures = 3;

int cmd_run(const std::string& config_path, const std::optional<std::string>& scenario,
            const std::optional<std::uint64_t>& reps, const std::optional<std::uint64_t>& seed, unsigned threads,
            const std::string& out_dir) {
  std::vector<hct::ScenarioConfig> configs;
  try {
    configs = hct::load_config(config_path);
  } catch (const hct::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (scenario) {
    std::erase_if(configs, [&](const hct::ScenarioConfig& c) { return c.scenario_id != *scenario; });
    if (configs.empty()) {
      std::cerr << "config error: no scenario named '" << *scenario << "'\n";
      return kExitConfig;
    }
  }
  for (auto& c : configs) {
    if (reps) c.replicates = *reps;
    if (seed) c.master_seed = *seed;
    if (c.replicates < 1) {
      std::cerr << "config error: --reps must be >= 1\n";
      return kExitConfig;
    }
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream raw(std::filesystem::path(out_dir) / "raw.csv");
  std::ofstream summary(std::filesystem::path(out_dir) / "summary.csv");
  if (!raw || !summary) {
    std::cerr << "error: cannot write to '" << out_dir << "'\n";
    return 1;
  }
  raw << hct::kRawHeader << "\n";
  summary << hct::kSummaryHeader << "\n";
  nlohmann::ordered_json meta;
  meta["conventions"] = hct::conventions_metadata();
  meta["scenarios"] = nlohmann::ordered_json::array();

  bool exceeded = false;
  for (const auto& c : configs) {
    std::cerr << "running " << c.scenario_id << " (" << c.replicates << " replicates, " << threads << " threads)\n";
    const hct::ScenarioResult r = hct::run_scenario(c, threads);
    hct::write_raw_rows(raw, r);
    hct::write_summary_rows(summary, r);
    meta["scenarios"].push_back(hct::scenario_metadata(c, r));
    for (const auto& s : r.summary)
      if (s.n_failed > 0)
        std::cerr << "  " << s.method_id << " covset " << s.covset << " " << s.hyperparam << ": " << s.n_failed
                  << " failed replicates\n";
    exceeded = exceeded || r.failures_exceeded;
  }
  std::ofstream(std::filesystem::path(out_dir) / "metadata.json") << meta.dump(2) << "\n";
  if (exceeded) {
    std::cerr << "method failures exceeded the configured threshold\n";
    return kExitFailures;
  }
  return 0;
}

int cmd_presets() {
  for (const auto& name : hct::preset_names()) {
    const auto c = hct::preset(name);
    std::cout << name << ": k=" << c.k() << " alpha0=" << c.alpha0 << " alpha=" << c.alpha[0]
              << " theta_treat=" << c.theta_treat << " beta0=[";
    for (std::size_t j = 0; j < c.beta0.size(); ++j) std::cout << (j ? "," : "") << c.beta0[j];
    std::cout << "] beta=[";
    for (std::size_t j = 0; j < c.beta.size(); ++j) std::cout << (j ? "," : "") << c.beta[j][0];
    std::cout << "]\n";
  }
  return 0;
}

int cmd_table(const std::string& in_dir) {
  std::ifstream in(std::filesystem::path(in_dir) / "summary.csv");
  if (!in) {
    std::cerr << "error: no summary.csv in '" << in_dir << "'\n";
    return 1;
  }
  try {
    hct::render_summary_tables(std::cout, hct::read_summary_csv(in));
  } catch (const hct::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}

int cmd_analyze(const std::string& data_path, const std::vector<int>& covsets, std::uint64_t seed) {
  std::ifstream in(data_path);
  if (!in) {
    std::cerr << "error: cannot read '" << data_path << "'\n";
    return 1;
  }
  hct::TrialDataset ds;
  std::size_t dropped = 0;
  try {
    ds = hct::read_subjects_csv(in, &dropped);
  } catch (const hct::ConfigError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (dropped > 0) std::cerr << "dropped " << dropped << " treated historical subjects\n";

  hct::ScenarioConfig cfg;
  cfg.scenario_id = "analysis";
  cfg.k_historical = ds.k();
  cfg.covsets = covsets;
  for (const auto& id : hct::method_ids()) {
    if (id == "unadj.fc") continue;
    hct::MethodSpec m;
    m.id = id;
    hct::apply_map_defaults(m, ds.k() == 1 ? 1 : 3);
    cfg.methods.push_back(m);
  }
  auto est = hct::evaluate_cells(cfg, ds, hct::RandomStream(seed));
  std::erase_if(est, [](const hct::EffectEstimate& e) { return e.method_id == "unadj.fc"; });
  std::cout << "method_id,covset,hyperparam,estimate,se,lo,hi,reject,essr_pct,flags\n";
  for (const auto& e : est)
    std::cout << e.method_id << ',' << e.covset << ',' << e.hyperparam << ',' << hct::format_number(e.estimate)
              << ',' << hct::format_number(e.se) << ',' << hct::format_number(e.lo) << ','
              << hct::format_number(e.hi) << ',' << (e.failed ? "NA" : (e.reject ? "1" : "0")) << ','
              << hct::format_number(e.essr_pct) << ',' << hct::join_flags(e.flags) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid-control borrowing simulations"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run scenarios from a config file");
  std::string config_path, out_dir = "hct_out";
  std::optional<std::string> scenario;
  std::optional<std::uint64_t> reps, seed;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  run->add_option("--config", config_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--scenario", scenario, "Run only this scenario_id");
  run->add_option("--reps", reps, "Override replicate count");
  run->add_option("--seed", seed, "Override master seed");
  run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "Output directory");

  auto* presets = app.add_subcommand("presets", "Coefficient presets");
  presets->add_subcommand("list", "List presets")->final_callback([] {});
  presets->require_subcommand(1);

  auto* table = app.add_subcommand("table", "Render summary.csv as text tables");
  std::string in_dir, style = "paper";
  table->add_option("--in", in_dir, "Directory holding summary.csv")->required();
  table->add_option("--style", style, "Table style")->check(CLI::IsMember({"paper"}));

  auto* analyze = app.add_subcommand("analyze", "Run every method once on a subject-level CSV");
  std::string data_path;
  std::vector<int> covsets{1, 2, 3};
  std::uint64_t analyze_seed = 1;
  analyze->add_option("--data", data_path, "CSV with id,trial,z,y,x1..x6")->required()->check(CLI::ExistingFile);
  analyze->add_option("--covsets", covsets, "Covariate sets for covariate-based methods")
      ->check(CLI::Range(1, 3));
  analyze->add_option("--seed", analyze_seed, "Seed for matching tie-breaks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, scenario, reps, seed, threads, out_dir);
    if (*presets) return cmd_presets();
    if (*table) return cmd_table(in_dir);
    if (*analyze) return cmd_analyze(data_path, covsets, analyze_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
