#pragma once

#include "mloc/config.hpp"

#include <optional>
#include <string>

namespace mloc {

struct RunOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
};

/// Executes the experiment named in the config and writes summary.json,
/// per-study CSVs and manifest.json into the output directory.
/// Exit codes: 0 success, 2 solver failure, 3 config error.
/// No partial outputs remain on failure (everything is staged in memory).
int run_experiment(const RunOptions& opts);

/// Same, with an already-parsed config (used by tests).
int run_experiment(Config cfg, const RunOptions& opts = {});

}  // namespace mloc
