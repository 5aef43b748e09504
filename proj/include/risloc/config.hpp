#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "risloc/core_model.hpp"
#include "risloc/em_learner.hpp"
#include "risloc/mp_solver.hpp"

namespace risloc {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class Scenario { on_grid, off_grid };

enum class SolverKind { mp, mp_em, bg_gamp, bg_gamp_em, omp };

std::string solver_name(SolverKind kind);
SolverKind parse_solver(const std::string& name);  // throws ConfigError
bool uses_em(SolverKind kind);

struct ExperimentSpec {
  SystemConfig system;
  int angle_points = 25;
  int delay_points = 25;
  Scenario scenario = Scenario::on_grid;
  std::vector<double> snr_db{18.0};
  int trials = 500;
  std::vector<SolverKind> solvers{SolverKind::mp, SolverKind::bg_gamp, SolverKind::omp};
  bool bcrb = true;
  std::uint64_t seed = 1;
  std::string output_dir = "results";
  SolverOptions solver;
  EmOptions em;
  bool em_traces = false;
  int threads = 1;
  int omp_target = 0;  // atoms per column; 0 means the device count

  void validate() const;  // throws ConfigError
};

// Sectioned key = value text ([system], [grid], [experiment], [solver], [em]); '#' and ';'
// start comments. Angles are given in degrees.
ExperimentSpec parse_ini(const std::string& text);
// Same sections and keys as a JSON object.
ExperimentSpec parse_json(const std::string& text);
// Chooses by the first non-blank character ('{' means JSON).
ExperimentSpec parse_config(const std::string& text);
ExperimentSpec load_config(const std::string& path);

// JSON text in the parse_json layout; parse_json(to_json(s)) reproduces s up to the
// rounding of the degree conversion.
std::string to_json(const ExperimentSpec& spec, int indent = 2);

}  // namespace risloc
