// Command-line front end: estimation, simulation, Monte Carlo and
// forecasting with file-based configuration and reproducible outputs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmdfm/config_io.hpp"
#include "dmdfm/errors.hpp"
#include "dmdfm/panel.hpp"
#include "dmdfm/parallel.hpp"
#include "dmdfm/pipeline.hpp"
#include "dmdfm/simulation.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.2.0";

struct CliRun {
  std::string command;
  std::string output_dir = ".";
  std::string input_path;
  std::string cells = "20x5,50x5,100x10,200x10";
  int reps = 200;
  bool full = false;
  int horizon = 20;
  int rep_index = 0;
  int verbosity = 0;
  dmdfm::SimulationConfig sim;
};

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dmdfm::DataError("FileNotWritable", "cannot write " + path.string());
  out << content;
}

std::vector<std::pair<int, int>> parse_cells(const std::string& spec) {
  std::vector<std::pair<int, int>> cells;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    const auto x = cur.find('x');
    if (x == std::string::npos)
      throw dmdfm::DataError("BadCells", "cell '" + cur + "' is not of the form NxT");
    cells.emplace_back(std::stoi(cur.substr(0, x)), std::stoi(cur.substr(x + 1)));
    cur.clear();
  };
  for (char ch : spec) {
    if (ch == ',') flush();
    else cur.push_back(ch);
  }
  flush();
  if (cells.empty()) throw dmdfm::DataError("BadCells", "no cells given");
  return cells;
}

std::string manifest_json(const CliRun& run) {
  ordered_json j;
  j["tool"] = "dmdfm";
  j["version"] = kVersion;
  j["command"] = run.command;
  ordered_json args;
  if (run.command == "estimate") args["input"] = run.input_path;
  if (run.command == "montecarlo") {
    args["cells"] = run.cells;
    args["reps"] = run.reps;
    args["full"] = run.full;
  }
  if (run.command == "forecast") args["horizon"] = run.horizon;
  if (run.command == "simulate") args["rep_index"] = run.rep_index;
  j["args"] = args;
  j["simulation"] = ordered_json::parse(dmdfm::simulation_config_to_json(run.sim));
  return j.dump(2) + "\n";
}

CliRun run_from_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dmdfm::DataError("FileNotFound", "cannot open manifest: " + path);
  ordered_json j;
  in >> j;
  CliRun run;
  run.command = j.at("command").get<std::string>();
  dmdfm::simulation_config_from_json(j.at("simulation").dump(), run.sim);
  const auto& args = j.at("args");
  if (args.contains("input")) run.input_path = args.at("input").get<std::string>();
  if (args.contains("cells")) run.cells = args.at("cells").get<std::string>();
  if (args.contains("reps")) run.reps = args.at("reps").get<int>();
  if (args.contains("full")) run.full = args.at("full").get<bool>();
  if (args.contains("horizon")) run.horizon = args.at("horizon").get<int>();
  if (args.contains("rep_index")) run.rep_index = args.at("rep_index").get<int>();
  return run;
}

std::string matrix_csv(const dmdfm::PanelDataset& panel, const dmdfm::Matrix& values,
                       const std::string& value_name) {
  std::string out = "individual,period," + value_name + "\n";
  for (int i = 0; i < panel.n_individuals; ++i)
    for (int s = 0; s < panel.n_periods; ++s) {
      out += panel.individual_ids[i];
      out += ',';
      out += panel.period_ids[s];
      out += ',';
      out += dmdfm::format_double(values(i, s));
      out += '\n';
    }
  return out;
}

int run_estimate(const CliRun& run) {
  const dmdfm::PanelDataset panel = dmdfm::load_panel(run.input_path);
  const dmdfm::DmdfmFit fit = dmdfm::estimate(panel, run.sim.pipeline);
  const fs::path dir(run.output_dir);
  write_text(dir / "fit.json", fit.to_json() + "\n");
  write_text(dir / "fitted.csv", matrix_csv(panel, fit.fitted, "fitted"));
  write_text(dir / "residuals.csv", matrix_csv(panel, fit.residuals, "residual"));
  {
    std::string scores = "individual,period";
    for (int j = 0; j < fit.r(); ++j) scores += ",f" + std::to_string(j + 1);
    scores += '\n';
    for (int i = 0; i < panel.n_individuals; ++i)
      for (int s = 0; s < panel.n_periods; ++s) {
        scores += panel.individual_ids[i];
        scores += ',';
        scores += panel.period_ids[s];
        for (int j = 0; j < fit.r(); ++j) {
          scores += ',';
          scores += dmdfm::format_double(fit.f_scores.at(i, s, j));
        }
        scores += '\n';
      }
    write_text(dir / "scores.csv", scores);
  }
  write_text(dir / "run-manifest.json", manifest_json(run));
  if (!fit.diagnostics.converged) {
    std::cerr << "dmdfm: error: NonConvergence: estimation stopped at the iteration cap; "
                 "outputs hold the last iterate\n";
    return 3;
  }
  return 0;
}

int run_simulate(const CliRun& run) {
  const dmdfm::GeneratedPanel gen = dmdfm::generate_panel(run.sim, run.rep_index);
  const fs::path dir(run.output_dir);
  std::ostringstream panel_csv;
  dmdfm::save_panel(gen.panel, panel_csv);
  write_text(dir / "panel.csv", panel_csv.str());
  write_text(dir / "truth.json", gen.truth.to_json() + "\n");
  write_text(dir / "run-manifest.json", manifest_json(run));
  return 0;
}

int run_montecarlo(const CliRun& run) {
  std::vector<dmdfm::SimulationConfig> grid;
  if (run.full) {
    grid = dmdfm::full_grid(run.sim, 2000);
  } else {
    for (const auto& [n, t] : parse_cells(run.cells)) {
      dmdfm::SimulationConfig cfg = run.sim;
      cfg.n = n;
      cfg.t = t;
      cfg.reps = run.reps;
      grid.push_back(cfg);
    }
  }
  if (run.verbosity > 0)
    std::cerr << "running " << grid.size() << " cell(s) x " << grid.front().reps
              << " replication(s)\n";
  const dmdfm::McReport report = dmdfm::run_monte_carlo(grid);
  const fs::path dir(run.output_dir);
  std::ostringstream csv;
  report.to_csv(csv);
  write_text(dir / "mc_report.csv", csv.str());
  write_text(dir / "mc_report.json", report.to_json() + "\n");
  write_text(dir / "run-manifest.json", manifest_json(run));
  if (run.verbosity > 0) std::cerr << csv.str();
  return 0;
}

int run_forecast(const CliRun& run) {
  const dmdfm::ForecastExperiment exp = dmdfm::run_forecast_experiment(run.sim, run.horizon);
  const fs::path dir(run.output_dir);
  std::ostringstream csv;
  const dmdfm::GeneratedPanel gen = dmdfm::generate_panel(run.sim, 0);
  exp.to_csv(csv, gen.panel.individual_ids);
  write_text(dir / "forecast.csv", csv.str());
  write_text(dir / "forecast.json", exp.to_json() + "\n");
  write_text(dir / "run-manifest.json", manifest_json(run));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic mixed double factor model estimation toolkit"};
  app.set_version_flag("--version", kVersion);

  CliRun run;
  std::string config_path, manifest_path;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  bool serial = false;

  app.add_option("--output-dir", run.output_dir, "directory for output files");
  app.add_option("--config", config_path, "key-value configuration file");
  app.add_option("--seed", seed, "master seed for all randomness");
  app.add_option("--jobs", jobs, "worker threads (0 = hardware default)");
  app.add_flag("--serial", serial, "force the serial reference code path");
  app.add_flag("-v,--verbose", run.verbosity, "progress output on stderr");
  app.add_option("--from-manifest", manifest_path,
                 "re-run the command recorded in a run-manifest.json");

  int cli_n = 0, cli_t = 0;

  auto* cmd_estimate = app.add_subcommand("estimate", "fit the model to a panel CSV");
  cmd_estimate->add_option("input", run.input_path, "long-format panel CSV")->required();

  auto* cmd_simulate = app.add_subcommand("simulate", "generate one panel from the DGP");
  cmd_simulate->add_option("--n", cli_n, "individuals");
  cmd_simulate->add_option("--t", cli_t, "periods");
  cmd_simulate->add_option("--rep", run.rep_index, "replication index within the seed stream");

  auto* cmd_mc = app.add_subcommand("montecarlo", "bias/RMSE table over a cell grid");
  cmd_mc->add_option("--cells", run.cells, "comma-separated NxT cells");
  cmd_mc->add_option("--reps", run.reps, "replications per cell");
  cmd_mc->add_flag("--full", run.full, "the full reference grid at 2000 replications");

  auto* cmd_fc = app.add_subcommand("forecast", "rolling one-step forecast experiment");
  cmd_fc->add_option("--n", cli_n, "individuals");
  cmd_fc->add_option("--t", cli_t, "training periods");
  cmd_fc->add_option("--horizon", run.horizon, "forecast periods");

  app.require_subcommand(0, 1);
  // Global options are accepted in subcommand position too.
  for (CLI::App* sub : {cmd_estimate, cmd_simulate, cmd_mc, cmd_fc}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (!manifest_path.empty()) {
      const std::string out_dir = run.output_dir;
      const int verbosity = run.verbosity;
      run = run_from_manifest(manifest_path);
      run.output_dir = out_dir;
      run.verbosity = verbosity;
    } else {
      if (app.get_subcommands().empty()) {
        std::cerr << "dmdfm: error: Usage: a subcommand or --from-manifest is required\n";
        return 1;
      }
      for (const CLI::App* sub : app.get_subcommands()) run.command = sub->get_name();
      if (!config_path.empty()) {
        const dmdfm::ConfigFile file = dmdfm::ConfigFile::parse_file(config_path);
        dmdfm::apply_simulation_section(file, run.sim);
      }
      // Flags override file values, which override defaults.
      if (seed) run.sim.seed = *seed;
      const CLI::App* sub = run.command == "simulate" ? cmd_simulate
                            : run.command == "forecast" ? cmd_fc
                                                        : nullptr;
      if (sub != nullptr) {
        if (sub->count("--n")) run.sim.n = cli_n;
        if (sub->count("--t")) run.sim.t = cli_t;
      }
    }

    dmdfm::set_max_threads(jobs);
    dmdfm::set_serial_mode(serial);
    fs::create_directories(run.output_dir);

    if (run.command == "estimate") return run_estimate(run);
    if (run.command == "simulate") return run_simulate(run);
    if (run.command == "montecarlo") return run_montecarlo(run);
    if (run.command == "forecast") return run_forecast(run);
    std::cerr << "dmdfm: error: Usage: unknown command '" << run.command << "'\n";
    return 1;
  } catch (const dmdfm::DataError& e) {
    std::cerr << "dmdfm: error: " << e.what() << "\n";
    return 2;
  } catch (const dmdfm::NumericalError& e) {
    std::cerr << "dmdfm: error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "dmdfm: error: Internal: " << e.what() << "\n";
    return 1;
  }
}
