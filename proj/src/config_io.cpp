#include "dmdfm/config_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dmdfm/errors.hpp"

namespace dmdfm {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw DataError("BadConfig", "key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw DataError("BadConfig", "key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw DataError("BadConfig", "key '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in) {
  ConfigFile file;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw DataError("BadConfig", "line " + std::to_string(line_no) + ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      file.sections[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError("BadConfig", "line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    file.sections[section][key] = value;
  }
  return file;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("FileNotFound", "cannot open config file: " + path);
  return parse(in);
}

void apply_pipeline_section(const ConfigFile& file, DmdfmConfig& config) {
  const auto it = file.sections.find("pipeline");
  if (it == file.sections.end()) return;
  for (const auto& [key, value] : it->second) {
    if (key == "variance_threshold") config.variance_threshold = to_double(key, value);
    else if (key == "kmax_r") config.kmax_r = static_cast<int>(to_long(key, value));
    else if (key == "kmax_s") config.kmax_s = static_cast<int>(to_long(key, value));
    else if (key == "s_criterion") config.s_criterion = selection_criterion_from_string(value);
    else if (key == "gmm_steps") {
      if (value == "one") config.gmm_steps = GmmSteps::one;
      else if (value == "two") config.gmm_steps = GmmSteps::two;
      else throw DataError("BadConfig", "gmm_steps expects one|two, got '" + value + "'");
    } else if (key == "max_lag_depth") {
      if (value == "unbounded" || value == "auto") config.max_lag_depth.reset();
      else config.max_lag_depth = static_cast<int>(to_long(key, value));
    } else if (key == "max_outer_iterations")
      config.max_outer_iterations = static_cast<int>(to_long(key, value));
    else if (key == "convergence_tol") config.convergence_tol = to_double(key, value);
    else if (key == "stability_tol") config.stability_tol = to_double(key, value);
    else if (key == "pooled_r_selection") config.pooled_r_selection = to_bool(key, value);
    else if (key == "contemporaneous_f_only") config.contemporaneous_f_only = to_bool(key, value);
    else if (key == "identity_u") config.identity_u = to_bool(key, value);
    else if (key == "include_lag") config.include_lag = to_bool(key, value);
    else if (key == "force_r") {
      if (value == "auto") config.force_r.reset();
      else config.force_r = static_cast<int>(to_long(key, value));
    } else if (key == "force_s") {
      if (value == "auto") config.force_s.reset();
      else config.force_s = static_cast<int>(to_long(key, value));
    } else if (key == "g_forecast") {
      if (value == "hold") config.g_forecast = GForecastRule::hold;
      else if (value == "ar1") config.g_forecast = GForecastRule::ar1;
      else throw DataError("BadConfig", "g_forecast expects hold|ar1, got '" + value + "'");
    } else
      throw DataError("BadConfig", "unknown [pipeline] key '" + key + "'");
  }
}

void apply_simulation_section(const ConfigFile& file, SimulationConfig& config) {
  apply_pipeline_section(file, config.pipeline);
  const auto it = file.sections.find("simulation");
  if (it == file.sections.end()) return;
  for (const auto& [key, value] : it->second) {
    if (key == "n") config.n = static_cast<int>(to_long(key, value));
    else if (key == "t") config.t = static_cast<int>(to_long(key, value));
    else if (key == "reps") config.reps = static_cast<int>(to_long(key, value));
    else if (key == "seed") config.seed = static_cast<std::uint64_t>(to_long(key, value));
    else if (key == "burn_in") config.burn_in = static_cast<int>(to_long(key, value));
    else if (key == "beta_l1") config.beta_l1 = to_double(key, value);
    else if (key == "beta_f1") config.beta_f1 = to_double(key, value);
    else if (key == "beta_f2") config.beta_f2 = to_double(key, value);
    else if (key == "intercept_mean") config.intercept_mean = to_double(key, value);
    else if (key == "intercept_var") config.intercept_var = to_double(key, value);
    else if (key == "uniform_lo") config.uniform_lo = to_double(key, value);
    else if (key == "uniform_hi") config.uniform_hi = to_double(key, value);
    else if (key == "rho_1h") config.rho_1h = to_double(key, value);
    else if (key == "h1_init") config.h1_init = to_double(key, value);
    else if (key == "rho_2h") config.rho_2h = to_double(key, value);
    else if (key == "h2_init") config.h2_init = to_double(key, value);
    else if (key == "q_init") config.q_init = to_double(key, value);
    else if (key == "omega_var") config.omega_var = to_double(key, value);
    else if (key == "eta_sd") config.eta_sd = to_double(key, value);
    else if (key == "g_innov_sd") config.g_innov_sd = to_double(key, value);
    else if (key == "h_innov_sd") config.h_innov_sd = to_double(key, value);
    else if (key == "q_innov_sd") config.q_innov_sd = to_double(key, value);
    else if (key == "p_observables") config.p_observables = static_cast<int>(to_long(key, value));
    else if (key == "x_noise_var") config.x_noise_var = to_double(key, value);
    else if (key == "g_rho_per_period") config.g_rho_per_period = to_bool(key, value);
    else if (key == "gamma_shared") config.gamma_shared = to_bool(key, value);
    else
      throw DataError("BadConfig", "unknown [simulation] key '" + key + "'");
  }
}

std::string pipeline_config_to_json(const DmdfmConfig& c) {
  ordered_json j;
  j["variance_threshold"] = c.variance_threshold;
  j["kmax_r"] = c.kmax_r;
  j["kmax_s"] = c.kmax_s;
  j["s_criterion"] = to_string(c.s_criterion);
  j["gmm_steps"] = c.gmm_steps == GmmSteps::one ? "one" : "two";
  j["max_lag_depth"] = c.max_lag_depth ? ordered_json(*c.max_lag_depth) : ordered_json("auto");
  j["max_outer_iterations"] = c.max_outer_iterations;
  j["convergence_tol"] = c.convergence_tol;
  j["stability_tol"] = c.stability_tol;
  j["pooled_r_selection"] = c.pooled_r_selection;
  j["contemporaneous_f_only"] = c.contemporaneous_f_only;
  j["identity_u"] = c.identity_u;
  j["include_lag"] = c.include_lag;
  j["force_r"] = c.force_r ? ordered_json(*c.force_r) : ordered_json("auto");
  j["force_s"] = c.force_s ? ordered_json(*c.force_s) : ordered_json("auto");
  j["g_forecast"] = c.g_forecast == GForecastRule::hold ? "hold" : "ar1";
  return j.dump();
}

std::string simulation_config_to_json(const SimulationConfig& c) {
  ordered_json j;
  j["n"] = c.n;
  j["t"] = c.t;
  j["reps"] = c.reps;
  j["seed"] = c.seed;
  j["burn_in"] = c.burn_in;
  j["beta_l1"] = c.beta_l1;
  j["beta_f1"] = c.beta_f1;
  j["beta_f2"] = c.beta_f2;
  j["intercept_mean"] = c.intercept_mean;
  j["intercept_var"] = c.intercept_var;
  j["uniform_lo"] = c.uniform_lo;
  j["uniform_hi"] = c.uniform_hi;
  j["rho_1h"] = c.rho_1h;
  j["h1_init"] = c.h1_init;
  j["rho_2h"] = c.rho_2h;
  j["h2_init"] = c.h2_init;
  j["q_init"] = c.q_init;
  j["omega_var"] = c.omega_var;
  j["eta_sd"] = c.eta_sd;
  j["g_innov_sd"] = c.g_innov_sd;
  j["h_innov_sd"] = c.h_innov_sd;
  j["q_innov_sd"] = c.q_innov_sd;
  j["p_observables"] = c.p_observables;
  j["x_noise_var"] = c.x_noise_var;
  j["g_rho_per_period"] = c.g_rho_per_period;
  j["gamma_shared"] = c.gamma_shared;
  j["pipeline"] = ordered_json::parse(pipeline_config_to_json(c.pipeline));
  return j.dump();
}

void pipeline_config_from_json(const std::string& json, DmdfmConfig& c) {
  const ordered_json j = ordered_json::parse(json);
  c.variance_threshold = j.at("variance_threshold").get<double>();
  c.kmax_r = j.at("kmax_r").get<int>();
  c.kmax_s = j.at("kmax_s").get<int>();
  c.s_criterion = selection_criterion_from_string(j.at("s_criterion").get<std::string>());
  c.gmm_steps = j.at("gmm_steps").get<std::string>() == "one" ? GmmSteps::one : GmmSteps::two;
  if (j.at("max_lag_depth").is_number())
    c.max_lag_depth = j.at("max_lag_depth").get<int>();
  else
    c.max_lag_depth.reset();
  c.max_outer_iterations = j.at("max_outer_iterations").get<int>();
  c.convergence_tol = j.at("convergence_tol").get<double>();
  c.stability_tol = j.at("stability_tol").get<double>();
  c.pooled_r_selection = j.at("pooled_r_selection").get<bool>();
  c.contemporaneous_f_only = j.at("contemporaneous_f_only").get<bool>();
  c.identity_u = j.at("identity_u").get<bool>();
  c.include_lag = j.at("include_lag").get<bool>();
  if (j.at("force_r").is_number()) c.force_r = j.at("force_r").get<int>();
  else c.force_r.reset();
  if (j.at("force_s").is_number()) c.force_s = j.at("force_s").get<int>();
  else c.force_s.reset();
  c.g_forecast =
      j.at("g_forecast").get<std::string>() == "ar1" ? GForecastRule::ar1 : GForecastRule::hold;
}

void simulation_config_from_json(const std::string& json, SimulationConfig& c) {
  const ordered_json j = ordered_json::parse(json);
  c.n = j.at("n").get<int>();
  c.t = j.at("t").get<int>();
  c.reps = j.at("reps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.burn_in = j.at("burn_in").get<int>();
  c.beta_l1 = j.at("beta_l1").get<double>();
  c.beta_f1 = j.at("beta_f1").get<double>();
  c.beta_f2 = j.at("beta_f2").get<double>();
  c.intercept_mean = j.at("intercept_mean").get<double>();
  c.intercept_var = j.at("intercept_var").get<double>();
  c.uniform_lo = j.at("uniform_lo").get<double>();
  c.uniform_hi = j.at("uniform_hi").get<double>();
  c.rho_1h = j.at("rho_1h").get<double>();
  c.h1_init = j.at("h1_init").get<double>();
  c.rho_2h = j.at("rho_2h").get<double>();
  c.h2_init = j.at("h2_init").get<double>();
  c.q_init = j.at("q_init").get<double>();
  c.omega_var = j.at("omega_var").get<double>();
  c.eta_sd = j.at("eta_sd").get<double>();
  c.g_innov_sd = j.at("g_innov_sd").get<double>();
  c.h_innov_sd = j.at("h_innov_sd").get<double>();
  c.q_innov_sd = j.at("q_innov_sd").get<double>();
  c.p_observables = j.at("p_observables").get<int>();
  c.x_noise_var = j.at("x_noise_var").get<double>();
  c.g_rho_per_period = j.at("g_rho_per_period").get<bool>();
  c.gamma_shared = j.at("gamma_shared").get<bool>();
  pipeline_config_from_json(j.at("pipeline").dump(), c.pipeline);
}

}  // namespace dmdfm
