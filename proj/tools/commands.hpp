#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace qmri::cli {

// Numeric failure (non-convergence under --strict, non-finite training loss).
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  RunConfig config;
  std::filesystem::path out;
  int threads = 1;
  bool strict = false;
  std::ostream* log = nullptr;  // progress and warnings
};

void cmd_simulate(const Context& ctx);
void cmd_train(const Context& ctx, const std::filesystem::path& data);
void cmd_recon(const Context& ctx, const std::filesystem::path& data, const std::string& method,
               const std::filesystem::path& checkpoint);
void cmd_fit(const Context& ctx, const std::filesystem::path& input);
void cmd_eval(const Context& ctx, const std::vector<std::filesystem::path>& inputs);
void cmd_report(const Context& ctx, const std::vector<std::filesystem::path>& inputs);

}  // namespace qmri::cli
