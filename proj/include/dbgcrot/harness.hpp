#pragma once

// Benchmark harness behind the dbgcrot_bench CLI.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dbgcrot/solvers.hpp"
#include "dbgcrot/sparse.hpp"

namespace dbgcrot::harness {

enum class RhsMode { random, ones, near_dependent };

RhsMode parse_rhs_mode(const std::string& name);
StopRule parse_stop_rule(const std::string& name);

/// random: i.i.d. standard normal entries from a seeded mt19937_64.
/// ones: column j is all (j + 1).
/// near_dependent: random, then column 2 := column 1 + delta * (random unit vector).
BlockVector<double> make_rhs(RhsMode mode, Index n, Index p, std::uint64_t seed, double delta);

struct RunSpec {
  std::string matrix_path;  // exactly one of matrix_path / generate
  std::string generate;     // "conv-diff"
  Index grid = 32;
  double beta = 10.0;
  RhsMode rhs_mode = RhsMode::random;
  double delta = 1e-10;
  Index nrhs = 4;
  std::uint64_t seed = 0;
  std::vector<std::string> solvers;  // dbgcrot | bgmres | gmres
  SolverConfig config;
  std::string out_dir = ".";
  bool parallel = false;
  bool timing = false;  // fill the elapsed_ms history column (otherwise "NA")
};

struct SolverOutcome {
  std::string label;
  std::string history_path;
  std::string events_path;
  bool converged = false;
  Index cycles = 0;
  double final_metric = 0;
  Index deflations = 0;
  double wall_ms = 0;
};

SparseMatrix<double> load_matrix(const RunSpec& spec);

Solution<double> run_solver(const std::string& name, const SparseMatrix<double>& a, const BlockVector<double>& b,
                            const SolverConfig& cfg);

/// One header line, then one row per record:
/// cycle,fro_residual,res_1..res_p,sigma_1..sigma_p,deflation_event_count,elapsed_ms
void write_history(std::ostream& out, const ConvergenceHistory& history, Index p, bool timing);

/// cycle,iteration,action,width_before,width_after,sigmas (';'-separated)
void write_events(std::ostream& out, const ConvergenceHistory& history);

std::string summary_line(const SolverOutcome& outcome);

/// Runs every requested solver, writes history and event files into
/// spec.out_dir and one summary line per solver to `out`. Returns 0 iff all
/// solvers converged. Throws UsageError / FormatError on bad input.
int run(const RunSpec& spec, std::ostream& out, std::vector<SolverOutcome>* outcomes = nullptr);

}  // namespace dbgcrot::harness
