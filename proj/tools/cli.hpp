#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "provp/losses.hpp"
#include "provp/run_config.hpp"

namespace provp::cli {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Runs one `provp` invocation. `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err,
        const EnvLookup& env);

struct LossGradCheck {
  LossMode mode = LossMode::ce_only;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// Finite-difference check of d(total loss)/d(prompts) for every loss mode on
/// a 2-layer, width-16 encoder with a batch of 3. Prompt and loss settings
/// come from `config`; the encoder shape is fixed.
std::vector<LossGradCheck> grad_check_losses(const RunConfig& config, std::uint64_t seed,
                                             double tolerance, double step);

}  // namespace provp::cli
