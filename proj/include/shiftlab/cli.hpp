#pragma once

// Config ingestion and command dispatch for the `shiftlab` tool.
//
//   shiftlab <check-identities|solve-fd|reduce-ode|simulate|compare>
//            --config FILE [--out DIR] [--threads N] [--seed-override S]
//
// The whole config is parsed and range-checked before anything is computed.
// Outputs are assembled in memory and written only when the command
// succeeds, together with manifest.json listing each file's SHA-256.

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "shiftlab/hjb_solver.hpp"
#include "shiftlab/mc_engine.hpp"
#include "shiftlab/model.hpp"
#include "shiftlab/ode_reduction.hpp"
#include "shiftlab/policies.hpp"
#include "shiftlab/shift_transform.hpp"

namespace shiftlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitExpectedFailureMissing = 4;

struct ExpectedFailure {
  std::string function;
  IdentityId identity = IdentityId::EQ9;
};

struct IdentitySuite {
  std::vector<std::string> functions;
  std::vector<IdentityId> identities;
  std::vector<ShiftPoint> points;
  double h = kDefaultStep;
  double tolerance = kDefaultTolerance;
  // Base step of the h-halving ratio reported with every record.
  double ratio_h = 1e-2;
  std::vector<ExpectedFailure> expect_fail;

  bool expects_failure(const std::string& fn, IdentityId id) const;
};

IdentitySuite default_identity_suite();

struct DiagnosticBounds {
  double max_residual = 1e-5;
  long max_monotonicity_violations = 0;
  long max_concavity_violations = 0;
  long max_spot_check_failures = 0;
};

struct ReduceOptions {
  double t = 1.0;
  double x = 1.0;
  double y = 1.0;
  // W(1); defaults to x u'(x) at the point when a utility block is given.
  std::optional<double> c;
  double beta_lo = 0.5;
  double beta_hi = 2.0;
  // Frozen pi for the ODE; the fixed point of the printed formula when unset.
  std::optional<double> pi;
  OdeOptions ode;
  FixedPointOptions fixed_point;
};

struct SimulateOptions {
  PolicyName policy = PolicyName::Zero;
  bool dump_paths = false;
  std::vector<ValuePoint> value_points;
};

struct RunConfig {
  std::optional<MarketModel> model;
  std::optional<UtilitySpec> utility;
  std::optional<GridSpec> grid;
  SolverConfig solver;
  DiagnosticBounds bounds;
  std::optional<SimConfig> sim;
  IdentitySuite identities = default_identity_suite();
  std::optional<ReduceOptions> reduce;
  SimulateOptions simulate;
  std::vector<PolicyName> compare;
  int threads = 1;
  std::string output_dir;
};

// Throws ValidationError naming the offending key.
RunConfig parse_run_config(std::string_view json_text);

// File name -> contents, in name order.
using Artifacts = std::map<std::string, std::string>;

struct CommandResult {
  int exit_code = kExitOk;
  Artifacts files;
  std::string message;
};

// Commands run on a parsed config and return their artifacts without
// touching the filesystem.
CommandResult cmd_check_identities(const RunConfig& config);
CommandResult cmd_solve_fd(const RunConfig& config);
CommandResult cmd_reduce_ode(const RunConfig& config);
CommandResult cmd_simulate(const RunConfig& config);
CommandResult cmd_compare(const RunConfig& config);

std::string sha256_hex(std::string_view data);

// Writes the artifacts and manifest.json into dir.
void write_artifacts(const std::string& dir, const std::string& command, const Artifacts& files);

// Full entry point; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace shiftlab
