#include "risloc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace risloc {

using nlohmann::json;

std::string solver_name(SolverKind kind) {
  switch (kind) {
    case SolverKind::mp: return "mp";
    case SolverKind::mp_em: return "mp+em";
    case SolverKind::bg_gamp: return "bg-gamp";
    case SolverKind::bg_gamp_em: return "bg-gamp+em";
    case SolverKind::omp: return "omp";
  }
  return "?";
}

SolverKind parse_solver(const std::string& name) {
  for (SolverKind k : {SolverKind::mp, SolverKind::mp_em, SolverKind::bg_gamp, SolverKind::bg_gamp_em, SolverKind::omp})
    if (solver_name(k) == name) return k;
  throw ConfigError("unknown solver '" + name + "'");
}

bool uses_em(SolverKind kind) { return kind == SolverKind::mp_em || kind == SolverKind::bg_gamp_em; }

void ExperimentSpec::validate() const {
  try {
    system.validate();
  } catch (const InputError& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  if (angle_points < 2 || delay_points < 2) throw ConfigError("grid needs at least 2 points per axis");
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (solvers.empty() && !bcrb) throw ConfigError("enable at least one solver or the bound");
  if (snr_db.empty()) throw ConfigError("no SNR points");
  for (double s : snr_db)
    if (!std::isfinite(s)) throw ConfigError("SNR points must be finite");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (omp_target < 0) throw ConfigError("omp_target must be non-negative");
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
  if (solver.max_iterations < 1) throw ConfigError("solver.max_iterations must be at least 1");
  if (!(solver.damping > 0.0 && solver.damping <= 1.0)) throw ConfigError("solver.damping must lie in (0, 1]");
  if (!(solver.min_damping > 0.0 && solver.min_damping <= solver.damping))
    throw ConfigError("solver.min_damping must lie in (0, damping]");
  if (!(solver.tolerance > 0.0)) throw ConfigError("solver.tolerance must be positive");
  if (!(solver.variance_floor > 0.0 && solver.variance_floor < solver.variance_ceiling))
    throw ConfigError("solver variance floor/ceiling are inconsistent");
  if (solver.divergence_window < 1) throw ConfigError("solver.divergence_window must be at least 1");
  if (!(solver.blowup_factor > 1.0)) throw ConfigError("solver.blowup_factor must exceed 1");
  if (!(solver.noise_annealing >= 0.0 && solver.noise_annealing < 1.0))
    throw ConfigError("solver.noise_annealing must lie in [0, 1)");
  if (!(solver.detection_threshold > 0.0 && solver.detection_threshold < 1.0))
    throw ConfigError("solver.detection_threshold must lie in (0, 1)");
  if (em.max_outer < 1 || em.max_inner < 1) throw ConfigError("em loop counts must be at least 1");
  if (!(em.inner_tolerance > 0.0 && em.outer_tolerance > 0.0)) throw ConfigError("em tolerances must be positive");
  if (!(em.initial_step > 0.0 && em.min_step_ratio > 0.0 && em.min_step_ratio < 1.0))
    throw ConfigError("em step settings are out of range");
  if (em.device_guess < 1) throw ConfigError("em.device_guess must be at least 1");
  if (em.snapshot_every < 0) throw ConfigError("em.snapshot_every must be non-negative");
}

namespace {

constexpr double kDeg = kPi / 180.0;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// INI values arrive as strings; JSON values may be either.
double as_double(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = trim(v.get<std::string>());
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec == std::errc() && ptr == s.data() + s.size() && !s.empty()) return x;
  }
  throw ConfigError("'" + key + "' expects a number");
}

long long as_integer(const json& v, const std::string& key) {
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 9e15) return static_cast<long long>(d);
  }
  if (v.is_string()) {
    const std::string s = trim(v.get<std::string>());
    long long x = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec == std::errc() && ptr == s.data() + s.size() && !s.empty()) return x;
  }
  throw ConfigError("'" + key + "' expects an integer");
}

int as_int(const json& v, const std::string& key) {
  const long long x = as_integer(v, key);
  if (x < -2147483647LL || x > 2147483647LL) throw ConfigError("'" + key + "' is out of range");
  return static_cast<int>(x);
}

std::uint64_t as_u64(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_string()) {
    const std::string s = trim(v.get<std::string>());
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec == std::errc() && ptr == s.data() + s.size() && !s.empty()) return x;
  }
  const long long x = as_integer(v, key);
  if (x < 0) throw ConfigError("'" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(x);
}

bool as_bool(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    std::string s = trim(v.get<std::string>());
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  }
  throw ConfigError("'" + key + "' expects a boolean");
}

std::string as_string(const json& v, const std::string& key) {
  if (v.is_string()) return trim(v.get<std::string>());
  throw ConfigError("'" + key + "' expects a string");
}

std::vector<std::string> as_string_list(const json& v, const std::string& key) {
  if (v.is_string()) return split_list(v.get<std::string>());
  if (v.is_array()) {
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(as_string(e, key));
    return out;
  }
  throw ConfigError("'" + key + "' expects a list");
}

std::vector<double> as_double_list(const json& v, const std::string& key) {
  std::vector<double> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(as_double(e, key));
  } else if (v.is_string()) {
    for (const auto& s : split_list(v.get<std::string>())) out.push_back(as_double(json(s), key));
  } else if (v.is_number()) {
    out.push_back(v.get<double>());
  } else {
    throw ConfigError("'" + key + "' expects a list of numbers");
  }
  return out;
}

struct Binding {
  std::function<void(const json&, ExperimentSpec&, const std::string&)> read;
  std::function<json(const ExperimentSpec&)> write;
};

using Table = std::map<std::string, std::map<std::string, Binding>>;

#define RISLOC_NUM(section, key, expr)                                                                   \
  t[section][#key] = Binding{[](const json& v, ExperimentSpec& s, const std::string& k) { expr = as_double(v, k); }, \
                             [](const ExperimentSpec& s) { return json(expr); }}
#define RISLOC_INT(section, key, expr)                                                                \
  t[section][#key] = Binding{[](const json& v, ExperimentSpec& s, const std::string& k) { expr = as_int(v, k); }, \
                             [](const ExperimentSpec& s) { return json(expr); }}
#define RISLOC_BOOL(section, key, expr)                                                                \
  t[section][#key] = Binding{[](const json& v, ExperimentSpec& s, const std::string& k) { expr = as_bool(v, k); }, \
                             [](const ExperimentSpec& s) { return json(expr); }}
#define RISLOC_DEG(section, key, expr)                                                                            \
  t[section][#key] = Binding{[](const json& v, ExperimentSpec& s, const std::string& k) { expr = as_double(v, k) * kDeg; }, \
                             [](const ExperimentSpec& s) { return json(expr / kDeg); }}

const Table& bindings() {
  static const Table table = [] {
    Table t;
    RISLOC_INT("system", n_subcarriers, s.system.n_subcarriers);
    RISLOC_INT("system", n_blocks, s.system.n_blocks);
    RISLOC_INT("system", n_tx, s.system.n_tx);
    RISLOC_INT("system", n_rx, s.system.n_rx);
    RISLOC_NUM("system", subcarrier_spacing, s.system.subcarrier_spacing);
    RISLOC_NUM("system", cp_duration, s.system.cp_duration);
    RISLOC_NUM("system", wavelength, s.system.wavelength);
    RISLOC_INT("system", ris_cols, s.system.ris_cols);
    RISLOC_INT("system", ris_rows, s.system.ris_rows);
    RISLOC_INT("system", n_devices, s.system.n_devices);
    RISLOC_INT("system", dpsk_order, s.system.dpsk_order);
    RISLOC_DEG("system", reference_phase_deg, s.system.reference_phase);
    RISLOC_DEG("system", angle_min_deg, s.system.angle_min);
    RISLOC_DEG("system", angle_max_deg, s.system.angle_max);
    RISLOC_NUM("system", distance_min, s.system.distance_min);
    RISLOC_NUM("system", distance_max, s.system.distance_max);
    RISLOC_NUM("system", gain_tx, s.system.gain_tx);
    RISLOC_NUM("system", gain_rx, s.system.gain_rx);
    RISLOC_NUM("system", gain_ris, s.system.gain_ris);
    RISLOC_NUM("system", noise_variance, s.system.noise_variance);

    RISLOC_INT("grid", angle_points, s.angle_points);
    RISLOC_INT("grid", delay_points, s.delay_points);

    t["experiment"]["scenario"] = Binding{
        [](const json& v, ExperimentSpec& s, const std::string& k) {
          const std::string x = as_string(v, k);
          if (x == "on-grid")
            s.scenario = Scenario::on_grid;
          else if (x == "off-grid")
            s.scenario = Scenario::off_grid;
          else
            throw ConfigError("scenario must be on-grid or off-grid");
        },
        [](const ExperimentSpec& s) { return json(s.scenario == Scenario::on_grid ? "on-grid" : "off-grid"); }};
    t["experiment"]["snr_db"] = Binding{
        [](const json& v, ExperimentSpec& s, const std::string& k) { s.snr_db = as_double_list(v, k); },
        [](const ExperimentSpec& s) { return json(s.snr_db); }};
    RISLOC_INT("experiment", trials, s.trials);
    t["experiment"]["solvers"] = Binding{
        [](const json& v, ExperimentSpec& s, const std::string& k) {
          s.solvers.clear();
          for (const auto& name : as_string_list(v, k)) {
            const SolverKind kind = parse_solver(name);
            if (std::find(s.solvers.begin(), s.solvers.end(), kind) != s.solvers.end())
              throw ConfigError("solver '" + name + "' listed twice");
            s.solvers.push_back(kind);
          }
        },
        [](const ExperimentSpec& s) {
          json a = json::array();
          for (SolverKind kind : s.solvers) a.push_back(solver_name(kind));
          return a;
        }};
    RISLOC_BOOL("experiment", bcrb, s.bcrb);
    t["experiment"]["seed"] = Binding{
        [](const json& v, ExperimentSpec& s, const std::string& k) { s.seed = as_u64(v, k); },
        [](const ExperimentSpec& s) { return json(s.seed); }};
    t["experiment"]["output_dir"] = Binding{
        [](const json& v, ExperimentSpec& s, const std::string& k) { s.output_dir = as_string(v, k); },
        [](const ExperimentSpec& s) { return json(s.output_dir); }};
    RISLOC_BOOL("experiment", em_traces, s.em_traces);
    RISLOC_INT("experiment", threads, s.threads);
    RISLOC_INT("experiment", omp_target, s.omp_target);

    t["solver"]["schedule"] = Binding{
        [](const json& v, ExperimentSpec& s, const std::string& k) {
          const std::string x = as_string(v, k);
          if (x == "parallel")
            s.solver.schedule = Schedule::parallel;
          else if (x == "swept")
            s.solver.schedule = Schedule::swept;
          else
            throw ConfigError("schedule must be parallel or swept");
        },
        [](const ExperimentSpec& s) { return json(s.solver.schedule == Schedule::parallel ? "parallel" : "swept"); }};
    RISLOC_INT("solver", max_iterations, s.solver.max_iterations);
    RISLOC_NUM("solver", tolerance, s.solver.tolerance);
    RISLOC_NUM("solver", damping, s.solver.damping);
    RISLOC_BOOL("solver", damp_variances, s.solver.damp_variances);
    RISLOC_NUM("solver", min_damping, s.solver.min_damping);
    RISLOC_NUM("solver", variance_floor, s.solver.variance_floor);
    RISLOC_NUM("solver", variance_ceiling, s.solver.variance_ceiling);
    RISLOC_INT("solver", divergence_window, s.solver.divergence_window);
    RISLOC_NUM("solver", blowup_factor, s.solver.blowup_factor);
    RISLOC_NUM("solver", noise_annealing, s.solver.noise_annealing);
    RISLOC_NUM("solver", detection_threshold, s.solver.detection_threshold);

    RISLOC_INT("em", max_outer, s.em.max_outer);
    RISLOC_INT("em", max_inner, s.em.max_inner);
    RISLOC_NUM("em", inner_tolerance, s.em.inner_tolerance);
    RISLOC_NUM("em", outer_tolerance, s.em.outer_tolerance);
    RISLOC_NUM("em", initial_step, s.em.initial_step);
    RISLOC_NUM("em", min_step_ratio, s.em.min_step_ratio);
    RISLOC_INT("em", device_guess, s.em.device_guess);
    RISLOC_NUM("em", initial_snr_db, s.em.initial_snr_db);
    RISLOC_BOOL("em", learn_grid, s.em.learn_grid);
    RISLOC_INT("em", snapshot_every, s.em.snapshot_every);
    return t;
  }();
  return table;
}

#undef RISLOC_NUM
#undef RISLOC_INT
#undef RISLOC_BOOL
#undef RISLOC_DEG

ExperimentSpec from_sections(const json& root) {
  if (!root.is_object()) throw ConfigError("configuration must be an object of sections");
  ExperimentSpec spec;
  const Table& table = bindings();
  for (const auto& [section, body] : root.items()) {
    const auto sec = table.find(section);
    if (sec == table.end()) throw ConfigError("unknown section [" + section + "]");
    if (!body.is_object()) throw ConfigError("section [" + section + "] must be an object");
    for (const auto& [key, value] : body.items()) {
      const auto b = sec->second.find(key);
      if (b == sec->second.end()) throw ConfigError("unknown key '" + section + "." + key + "'");
      b->second.read(value, spec, section + "." + key);
    }
  }
  spec.validate();
  return spec;
}

}  // namespace

ExperimentSpec parse_ini(const std::string& text) {
  json root = json::object();
  std::string section;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(number) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!root.contains(section)) root[section] = json::object();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    if (section.empty()) throw ConfigError("line " + std::to_string(number) + ": key outside a section");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(number) + ": empty key");
    if (root[section].contains(key)) throw ConfigError("line " + std::to_string(number) + ": duplicate key '" + key + "'");
    root[section][key] = trim(line.substr(eq + 1));
  }
  return from_sections(root);
}

ExperimentSpec parse_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return from_sections(root);
}

ExperimentSpec parse_config(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_json(text);
  return parse_ini(text);
}

ExperimentSpec load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_json(const ExperimentSpec& spec, int indent) {
  json root = json::object();
  for (const auto& [section, keys] : bindings())
    for (const auto& [key, b] : keys) root[section][key] = b.write(spec);
  return root.dump(indent);
}

}  // namespace risloc
