#pragma once

#include "mstage/errors.hpp"
#include "mstage/inference.hpp"
#include "mstage/simgen.hpp"

#include <string>

namespace mstage {

/// Bad command-line input; the CLI exits with status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Everything a run depends on besides its input files. Built from key=value
/// pairs (config file first, then flags) and echoed to out/config.txt.
struct RunConfig {
  std::string command;  // simulate, fit, bootstrap, sweep
  std::string out = "out";

  // simulate
  std::string kind = "cox";  // cox, binary-treat
  std::string sim_config;    // optional key=value simulation settings file
  long n = 0;
  long replicates = 1;
  long truth_draws = 10'000'000;

  // fit, bootstrap, sweep
  std::string data;
  std::string schema;
  std::string task = "cox";
  std::string method;
  std::string family = "auto";
  std::string nuisance = "auto";
  std::string kappa;  // "k1,k2,k3"
  bool interactions = false;
  int M = 50;
  int arm = 1;
  double rho = 0.0, zeta = 0.5, xi = 0.0;
  int B = 500;
  double alpha = 0.05;
  std::string param;
  std::string grid;

  std::uint64_t seed = 1;
  int threads = 1;
  bool verbose = false;

  static RunConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  EstimatorConfig estimator() const;
};

/// Commands return the process exit status: 0 on success, 3 when a fit did
/// not converge (outputs are still written and flagged).
int cmd_simulate(const RunConfig& cfg);
int cmd_fit(const RunConfig& cfg);
int cmd_bootstrap(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);

/// Parses argv with subcommands simulate | fit | bootstrap | sweep and runs
/// the command. Usage errors exit 2, library errors exit 1.
int run_cli(int argc, const char* const* argv);

}  // namespace mstage
