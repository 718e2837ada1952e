#include "dbgcrot/harness.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

namespace dbgcrot::harness {

RhsMode parse_rhs_mode(const std::string& name) {
  if (name == "random") return RhsMode::random;
  if (name == "ones") return RhsMode::ones;
  if (name == "near-dependent") return RhsMode::near_dependent;
  throw UsageError("unknown rhs mode '" + name + "' (random | ones | near-dependent)");
}

StopRule parse_stop_rule(const std::string& name) {
  if (name == "max-column") return StopRule::max_column;
  if (name == "frobenius") return StopRule::frobenius;
  throw UsageError("unknown stop rule '" + name + "' (max-column | frobenius)");
}

BlockVector<double> make_rhs(RhsMode mode, Index n, Index p, std::uint64_t seed, double delta) {
  if (n < 1 || p < 1) throw UsageError("make_rhs: need n >= 1 and p >= 1");
  BlockVector<double> b(n, p);
  if (mode == RhsMode::ones) {
    for (Index j = 0; j < p; ++j) b.col(j).setConstant(static_cast<double>(j + 1));
    return b;
  }
  if (mode == RhsMode::near_dependent) {
    if (p < 2) throw UsageError("make_rhs: near-dependent mode needs p >= 2");
    if (!(delta > 0)) throw UsageError("make_rhs: near-dependent mode needs delta > 0");
  }
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) b(i, j) = normal(gen);
  if (mode == RhsMode::near_dependent) {
    Eigen::VectorXd dir(n);
    for (Index i = 0; i < n; ++i) dir(i) = normal(gen);
    b.col(1) = b.col(0) + delta * dir.normalized();
  }
  return b;
}

SparseMatrix<double> load_matrix(const RunSpec& spec) {
  const bool has_file = !spec.matrix_path.empty();
  const bool has_gen = !spec.generate.empty();
  if (has_file == has_gen) throw UsageError("give exactly one of --matrix or --generate");
  if (has_file) return read_matrix_market_file(spec.matrix_path);
  if (spec.generate == "conv-diff") return convection_diffusion(spec.grid, spec.beta);
  throw UsageError("unknown generated problem '" + spec.generate + "' (conv-diff)");
}

Solution<double> run_solver(const std::string& name, const SparseMatrix<double>& a, const BlockVector<double>& b,
                            const SolverConfig& cfg) {
  const BlockVector<double> x0 = BlockVector<double>::Zero(b.rows(), b.cols());
  if (name == "dbgcrot") return dbgcrot_solve(a, b, x0, cfg);
  if (name == "bgmres") return bgmres_restarted(a, b, x0, cfg);
  if (name == "gmres") return gmres_columnwise(a, b, x0, cfg);
  throw UsageError("unknown solver '" + name + "' (dbgcrot | bgmres | gmres)");
}

namespace {

void put(std::ostream& out, double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  out << s.str();
}

}  // namespace

void write_history(std::ostream& out, const ConvergenceHistory& history, Index p, bool timing) {
  out << "cycle,fro_residual";
  for (Index j = 1; j <= p; ++j) out << ",res_" << j;
  for (Index j = 1; j <= p; ++j) out << ",sigma_" << j;
  out << ",deflation_event_count,elapsed_ms\n";
  for (const auto& rec : history.records) {
    out << rec.cycle << ',';
    put(out, rec.fro_residual);
    for (Index j = 0; j < p; ++j) {
      out << ',';
      put(out, rec.column_residuals[static_cast<std::size_t>(j)]);
    }
    for (Index j = 0; j < p; ++j) {
      out << ',';
      if (static_cast<std::size_t>(j) < rec.sigmas.size()) {
        put(out, rec.sigmas[static_cast<std::size_t>(j)]);
      } else {
        out << "NA";
      }
    }
    out << ',' << rec.deflation_count() << ',';
    if (timing) {
      put(out, rec.elapsed_ms);
    } else {
      out << "NA";
    }
    out << '\n';
  }
}

void write_events(std::ostream& out, const ConvergenceHistory& history) {
  out << "cycle,iteration,action,width_before,width_after,sigmas\n";
  for (const auto& rec : history.records) {
    for (const auto& e : rec.events) {
      out << e.cycle << ',' << e.iteration << ',' << to_string(e.action) << ',' << e.width_before << ','
          << e.width_after << ',';
      for (std::size_t i = 0; i < e.sigmas.size(); ++i) {
        if (i > 0) out << ';';
        put(out, e.sigmas[i]);
      }
      out << '\n';
    }
  }
}

std::string summary_line(const SolverOutcome& o) {
  std::ostringstream s;
  s << "solver=" << o.label << " converged=" << (o.converged ? "yes" : "no") << " cycles=" << o.cycles
    << " final_metric=" << std::setprecision(6) << std::scientific << o.final_metric
    << " deflations=" << o.deflations << " wall_ms=" << std::fixed << std::setprecision(1) << o.wall_ms
    << " history=" << o.history_path;
  return s.str();
}

int run(const RunSpec& spec, std::ostream& out, std::vector<SolverOutcome>* outcomes) {
  if (spec.solvers.empty()) throw UsageError("no solver requested (--solver)");
  spec.config.validate();
  for (const auto& name : spec.solvers) {
    if (name != "dbgcrot" && name != "bgmres" && name != "gmres")
      throw UsageError("unknown solver '" + name + "' (dbgcrot | bgmres | gmres)");
  }
  const auto a = load_matrix(spec);
  if (spec.nrhs < 1) throw UsageError("--nrhs must be >= 1");
  if (spec.nrhs > a.rows()) throw UsageError("--nrhs exceeds the matrix dimension");
  const auto b = make_rhs(spec.rhs_mode, a.rows(), spec.nrhs, spec.seed, spec.delta);

  std::vector<std::string> labels;
  std::map<std::string, int> seen;
  for (const auto& name : spec.solvers) {
    const int k = ++seen[name];
    labels.push_back(k == 1 ? name : name + "_" + std::to_string(k));
  }

  std::vector<Solution<double>> solutions(spec.solvers.size());
  std::vector<double> wall(spec.solvers.size());
  auto solve = [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    solutions[i] = run_solver(spec.solvers[i], a, b, spec.config);
    wall[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  if (spec.parallel) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = 0; i < spec.solvers.size(); ++i) jobs.push_back(std::async(std::launch::async, solve, i));
    for (auto& j : jobs) j.get();
  } else {
    for (std::size_t i = 0; i < spec.solvers.size(); ++i) solve(i);
  }

  std::filesystem::create_directories(spec.out_dir);
  bool all_converged = true;
  for (std::size_t i = 0; i < spec.solvers.size(); ++i) {
    const auto& sol = solutions[i];
    SolverOutcome o;
    o.label = labels[i];
    o.history_path = (std::filesystem::path(spec.out_dir) / (labels[i] + "_history.csv")).string();
    o.events_path = (std::filesystem::path(spec.out_dir) / (labels[i] + "_events.csv")).string();
    {
      std::ofstream f(o.history_path, std::ios::binary);
      if (!f) throw UsageError("cannot write '" + o.history_path + "'");
      write_history(f, sol.history, spec.nrhs, spec.timing);
    }
    {
      std::ofstream f(o.events_path, std::ios::binary);
      if (!f) throw UsageError("cannot write '" + o.events_path + "'");
      write_events(f, sol.history);
    }
    o.converged = sol.converged;
    o.cycles = sol.cycles_used;
    o.final_metric = sol.history.records.back().stop_metric;
    o.deflations = sol.history.total_deflations();
    o.wall_ms = wall[i];
    out << summary_line(o) << '\n';
    all_converged = all_converged && o.converged;
    if (outcomes) outcomes->push_back(o);
  }
  return all_converged ? 0 : 1;
}

}  // namespace dbgcrot::harness
