#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evlign {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Invariant suite behind `evlign selfcheck`: mass conservation, simulator
/// crossing counts, protocol windows, attention probability rows and residual
/// wiring, gradient checks, loss identities, metric invariances and format
/// round trips. Each check catches its own exceptions and reports them as
/// failures.
std::vector<CheckResult> run_selfcheck(std::uint64_t seed = 0);

}  // namespace evlign
