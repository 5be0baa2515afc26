#pragma once

#include "nbfa/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace nbfa {

/// Process exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,      ///< bad flag, unreadable or malformed input
  kExitConfig = 3,     ///< incompatible model/sampler or schedule
  kExitCapability = 4, ///< the model cannot produce the requested output
  kExitSchema = 5,     ///< checkpoint or trace file of the wrong shape
};

/// Resolved settings of `nbfa train`. Defaults follow the published protocol.
struct TrainSettings {
  ModelKind model = ModelKind::nbfa;
  SamplerKind sampler = SamplerKind::cp_blocked;
  Truncation truncation = Truncation::adaptive;
  int iterations = 5000;
  int burn_in = 2500;
  int thin = 5;
  int K_init = 400;
  int K_star = 20;
  Hyperparams hyper;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
  int checkpoint_every = 500;
  int chains = 1;
};

/// Runs one invocation of the `nbfa` tool. Returns the exit code.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace nbfa
