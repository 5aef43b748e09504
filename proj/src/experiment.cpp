#include "risloc/experiment.hpp"

#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "risloc/baselines.hpp"
#include "risloc/dictionary.hpp"
#include "risloc/mp_solver.hpp"

namespace risloc {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Realization {
  Scene scene;
  Grid grid;
  MeasurementFrame clean;
  MeasurementFrame noisy;
  double noise_variance = 0.0;
};

Realization realize(const ExperimentSpec& spec, int trial, double snr_db) {
  Realization r;
  r.grid = build_uniform_grid(spec.system, spec.angle_points, spec.delay_points);
  const bool on_grid = spec.scenario == Scenario::on_grid;
  r.scene = generate_scene(spec.system, trial_seed(spec.seed, trial, snr_db, Stream::scene), on_grid ? &r.grid : nullptr);
  r.clean = noiseless_frame(r.scene, spec.system);
  r.noise_variance = noise_variance_for_snr(r.clean, snr_db);
  r.noisy = add_noise(r.clean, r.noise_variance, trial_seed(spec.seed, trial, snr_db, Stream::noise));
  return r;
}

BgPrior bg_prior_from(const RowPrior& p) { return BgPrior{p.sparsity, p.gain_mean, p.gain_variance}; }

SolverOutcome solve(const ExperimentSpec& spec, const Realization& r, const Dictionary& dictionary, SolverKind kind) {
  SolverOutcome out;
  out.kind = kind;
  out.final_grid = r.grid;
  const auto start = std::chrono::steady_clock::now();
  try {
    const CMatrix& y = r.noisy.observations;
    const RowPrior prior = oracle_row_prior(spec.system, r.grid);
    CMatrix coefficients;
    std::vector<int> rows;
    const Grid* grid = &r.grid;
    EmResult em;

    switch (kind) {
      case SolverKind::mp: {
        const PosteriorEstimate est = run_mp(y, dictionary, prior, r.noise_variance, spec.solver);
        coefficients = est.mean;
        rows = est.support(spec.solver.detection_threshold);
        out.converged = est.converged && !est.diverged;
        break;
      }
      case SolverKind::bg_gamp: {
        const PosteriorEstimate est = bg_gamp(y, dictionary, bg_prior_from(prior), r.noise_variance, spec.solver);
        coefficients = est.mean;
        rows = est.support(spec.solver.detection_threshold);
        out.converged = est.converged && !est.diverged;
        break;
      }
      case SolverKind::omp: {
        const int target = spec.omp_target > 0 ? spec.omp_target : spec.system.n_devices;
        const OmpFrameResult est = omp(y, dictionary, target);
        coefficients = est.coefficients;
        rows = est.support();
        out.converged = !est.rank_deficient;
        break;
      }
      case SolverKind::mp_em:
      case SolverKind::bg_gamp_em: {
        const bool mp = kind == SolverKind::mp_em;
        const SolverOptions& opts = spec.solver;
        const InnerSolver inner = [&](const CMatrix& obs, const Dictionary& d, double noise, double sparsity) {
          RowPrior p = prior;
          p.sparsity = sparsity;
          return mp ? run_mp(obs, d, p, noise, opts) : bg_gamp(obs, d, bg_prior_from(p), noise, opts);
        };
        em = run_em(y, spec.system, r.scene.pilots, r.grid, inner, spec.em);
        coefficients = em.estimate.mean;
        rows = em.estimate.support(spec.solver.detection_threshold);
        grid = &em.dictionary.grid;
        out.converged = em.estimate.converged && !em.state.diverged;
        out.final_grid = em.dictionary.grid;
        out.em = std::move(em.state);
        break;
      }
    }
    out.metrics = evaluate_trial(coefficients, rows, *grid, r.scene, spec.system, spec.scenario == Scenario::on_grid);
  } catch (const std::exception& e) {
    out.failed = true;
    out.converged = false;
    out.error = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::string file_token(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

std::filesystem::path resolve_output_dir(const ExperimentSpec& spec) {
  if (const char* env = std::getenv("RISLOC_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return spec.output_dir;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot write '" + path.string() + "'");
  return f;
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t seed, int trial, double snr_db, Stream stream) {
  std::uint64_t bits = 0;
  const double s = snr_db == 0.0 ? 0.0 : snr_db;  // fold -0 onto +0
  std::memcpy(&bits, &s, sizeof bits);
  std::uint64_t h = splitmix(static_cast<std::uint64_t>(trial));
  h = splitmix(h ^ bits);
  h = splitmix(h ^ static_cast<std::uint64_t>(stream));
  return seed ^ h;
}

RowPrior oracle_row_prior(const SystemConfig& config, const Grid& grid) {
  const GainPrior g = beta_prior(config);
  RowPrior p;
  p.sparsity = static_cast<double>(config.n_devices) / static_cast<double>(grid.size());
  p.gain_mean = g.mean;
  p.gain_variance = g.variance;
  p.phases = dpsk_constellation(config.dpsk_order);
  return p;
}

TrialResult run_trial(const ExperimentSpec& spec, int trial, double snr_db) {
  const Realization r = realize(spec, trial, snr_db);
  TrialResult res;
  res.trial = trial;
  res.snr_db = snr_db;
  res.noise_variance = r.noise_variance;
  if (!spec.solvers.empty()) {
    const Dictionary dictionary = build_dictionary(r.grid, spec.system, r.scene.pilots);
    for (SolverKind kind : spec.solvers) res.solvers.push_back(solve(spec, r, dictionary, kind));
  }
  if (spec.bcrb) res.bound = evaluate_bcrb(r.scene, spec.system, r.noise_variance, oracle_row_prior(spec.system, r.grid));
  return res;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return ec == std::errc() ? std::string(buf, ptr) : "nan";
}

MetricStats summarize(const std::vector<double>& samples) {
  MetricStats s;
  double sum = 0.0;
  for (double x : samples)
    if (std::isfinite(x)) {
      sum += x;
      ++s.count;
    }
  if (s.count == 0) {
    s.mean = s.stderr_ = std::nan("");
    return s;
  }
  s.mean = sum / s.count;
  if (s.count > 1) {
    double ss = 0.0;
    for (double x : samples)
      if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
    s.stderr_ = std::sqrt(ss / (s.count - 1) / s.count);
  }
  return s;
}

RunSummary run_experiment(const ExperimentSpec& spec, const std::function<void(const TrialResult&)>& progress) {
  spec.validate();
  RunSummary summary;
  const std::filesystem::path dir = resolve_output_dir(spec);
  summary.output_dir = dir.string();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw RunError("cannot create output directory '" + dir.string() + "'");

  // Probe writability before any work.
  {
    auto f = open_output(dir / "manifest.json");
  }

  std::vector<std::pair<int, double>> jobs;
  for (double snr : spec.snr_db)
    for (int t = 0; t < spec.trials; ++t) jobs.emplace_back(t, snr);
  std::vector<std::optional<TrialResult>> results(jobs.size());

  // Workers fill slots; the calling thread reports completed prefixes in order.
  std::atomic<std::size_t> next{0};
  std::mutex lock;
  std::size_t reported = 0;
  auto report_ready = [&] {
    while (reported < results.size() && results[reported]) {
      if (progress) progress(*results[reported]);
      ++reported;
    }
  };
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      TrialResult r = run_trial(spec, jobs[i].first, jobs[i].second);
      std::lock_guard<std::mutex> g(lock);
      results[i] = std::move(r);
    }
  };
  if (spec.threads <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      results[i] = run_trial(spec, jobs[i].first, jobs[i].second);
      report_ready();
    }
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < spec.threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    report_ready();
  }

  const std::string header = "snr_db,solver,metric,mean,stderr,trials,nonconverged_count\n";
  auto write_row = [](std::ofstream& f, double snr, const std::string& solver, const std::string& metric,
                      const std::vector<double>& samples, int nonconverged) {
    const MetricStats s = summarize(samples);
    f << format_double(snr) << ',' << solver << ',' << metric << ',' << format_double(s.mean) << ','
      << format_double(s.stderr_) << ',' << s.count << ',' << nonconverged << '\n';
  };

  if (!spec.solvers.empty()) {
    auto csv = open_output(dir / "summary.csv");
    auto timing = open_output(dir / "timing.csv");
    csv << header;
    timing << header;
    for (double snr : spec.snr_db) {
      for (std::size_t si = 0; si < spec.solvers.size(); ++si) {
        std::map<std::string, std::vector<double>> m;
        std::vector<double> seconds;
        int nonconverged = 0;
        for (const auto& r : results) {
          if (r->snr_db != snr) continue;
          const SolverOutcome& o = r->solvers[si];
          seconds.push_back(o.seconds);
          if (!o.converged) ++nonconverged;
          if (o.failed) {
            ++summary.failures;
            continue;
          }
          m["nmse_zeta"].push_back(o.metrics.nmse_gain);
          m["nmse_angle"].push_back(o.metrics.nmse_angle);
          m["nmse_distance"].push_back(o.metrics.nmse_distance);
          m["ber"].push_back(o.metrics.ber);
          m["detected"].push_back(o.metrics.detected);
          m["false_alarms"].push_back(o.metrics.false_alarms);
        }
        summary.nonconverged += nonconverged;
        const std::string name = solver_name(spec.solvers[si]);
        for (const char* metric : {"nmse_zeta", "nmse_angle", "nmse_distance", "ber", "detected", "false_alarms"})
          write_row(csv, snr, name, metric, m[metric], nonconverged);
        write_row(timing, snr, name, "seconds", seconds, nonconverged);
      }
    }
    summary.files.push_back((dir / "summary.csv").string());
    summary.files.push_back((dir / "timing.csv").string());

    auto failures = open_output(dir / "failures.csv");
    failures << "snr_db,trial,solver,error\n";
    for (const auto& r : results)
      for (const auto& o : r->solvers)
        if (o.failed) {
          std::string msg = o.error;
          for (char& c : msg)
            if (c == ',' || c == '\n') c = ' ';
          failures << format_double(r->snr_db) << ',' << r->trial << ',' << solver_name(o.kind) << ',' << msg << '\n';
        }
    summary.files.push_back((dir / "failures.csv").string());
  }

  if (spec.bcrb) {
    auto csv = open_output(dir / "bcrb.csv");
    csv << header;
    for (double snr : spec.snr_db) {
      std::vector<double> zeta, zeta_c, angle, distance;
      int pinv = 0;
      for (const auto& r : results) {
        if (r->snr_db != snr) continue;
        zeta.push_back(r->bound->gain_nmse);
        zeta_c.push_back(r->bound->gain_nmse_complex);
        angle.push_back(r->bound->angle_nmse);
        distance.push_back(r->bound->distance_nmse);
        if (r->bound->pseudo_inverse) ++pinv;
      }
      // The last column counts trials whose information matrix needed a pseudo-inverse.
      write_row(csv, snr, "bcrb", "bcrb_zeta", zeta, pinv);
      write_row(csv, snr, "bcrb", "bcrb_zeta_complex", zeta_c, pinv);
      write_row(csv, snr, "bcrb", "bcrb_angle", angle, pinv);
      write_row(csv, snr, "bcrb", "bcrb_distance", distance, pinv);
    }
    summary.files.push_back((dir / "bcrb.csv").string());
  }

  if (spec.em_traces) {
    for (const auto& r : results)
      for (const auto& o : r->solvers) {
        if (!o.em) continue;
        const std::string stem =
            file_token(solver_name(o.kind)) + "_snr" + file_token(format_double(r->snr_db)) + "_t" + std::to_string(r->trial);
        const auto trace_path = dir / ("em_trace_" + stem + ".csv");
        auto f = open_output(trace_path);
        f << "iteration,objective_before,objective_after,noise_variance,sparsity,angle_step,delay_step,inner_runs\n";
        for (const auto& e : o.em->trace)
          f << e.iteration << ',' << format_double(e.objective_before) << ',' << format_double(e.objective_after) << ','
            << format_double(e.noise_variance) << ',' << format_double(e.sparsity) << ',' << format_double(e.angle_step)
            << ',' << format_double(e.delay_step) << ',' << e.inner_runs << '\n';
        const auto grid_path = dir / ("em_grid_" + stem + ".csv");
        auto g = open_output(grid_path);
        g << "iteration,axis,index,value\n";
        for (const auto& [it, grid] : o.em->snapshots) {
          for (std::size_t i = 0; i < grid.angles.size(); ++i)
            g << it << ",angle," << i << ',' << format_double(grid.angles[i]) << '\n';
          for (std::size_t i = 0; i < grid.delays.size(); ++i)
            g << it << ",delay," << i << ',' << format_double(grid.delays[i]) << '\n';
        }
        summary.files.push_back(trace_path.string());
        summary.files.push_back(grid_path.string());
      }
  }

  {
    ExperimentSpec resolved = spec;
    resolved.output_dir = dir.string();
    auto f = open_output(dir / "manifest.json");
    f << to_json(resolved) << '\n';
  }
  summary.files.push_back((dir / "manifest.json").string());
  return summary;
}

}  // namespace risloc
