#include "cli.hpp"

#include <filesystem>
#include <stdexcept>

#include "CLI11.hpp"

#include "commands.hpp"
#include "qmri/io.hpp"

namespace qmri::cli {

namespace fs = std::filesystem;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quantitative MRI reconstruction and mapping toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  bool strict = false;
  app.add_option("--config", config_path, "JSON run config (strict schema)");
  auto* seed_opt = app.add_option("--seed", seed, "Global seed, overrides the config");
  app.add_option("--out", out_dir, "Output directory, overrides io.out");
  app.add_option("--threads", threads, "Worker threads (subject-level)")->check(CLI::Range(1, 256));
  app.add_flag("--strict", strict, "Treat non-convergence as fatal");

  std::string data, method, checkpoint, input;
  std::vector<std::string> inputs;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic dataset");
  auto* train = app.add_subcommand("train", "Train a network on a dataset");
  train->add_option("--data", data, "Dataset directory")->required();
  auto* recon = app.add_subcommand("recon", "Reconstruct undersampled subjects");
  recon->add_option("--data", data, "Dataset directory")->required();
  recon->add_option("--method", method, "zf | cgsense | unet | unet_lt | modl | modl_lt")->required();
  recon->add_option("--checkpoint", checkpoint, "Model checkpoint (learned methods)");
  auto* fit = app.add_subcommand("fit", "Fit T1/T2 maps to a dataset or reconstruction");
  fit->add_option("--input", input, "Dataset or reconstruction directory")->required();
  auto* eval = app.add_subcommand("eval", "Score reconstructions against references");
  eval->add_option("--input", inputs, "Reconstruction directories")->required();
  auto* report = app.add_subcommand("report", "Figures and a summary table");
  report->add_option("--input", inputs, "Reconstruction directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    Context ctx;
    ctx.log = &err;
    ctx.threads = threads;
    ctx.strict = strict;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw std::invalid_argument("--config: no such file: " + config_path);
      ctx.config = run_config_from_json(read_json(config_path));
    }
    if (seed_opt->count() > 0) ctx.config.set_seed(seed);
    if (!out_dir.empty()) ctx.config.io.out = out_dir;
    ctx.config.validate();
    ctx.out = ctx.config.io.out;

    if (*simulate) cmd_simulate(ctx);
    if (*train) cmd_train(ctx, data);
    if (*recon) {
      if (method != "zf" && method != "cgsense" && method != "unet" && method != "unet_lt" && method != "modl" &&
          method != "modl_lt") {
        throw std::invalid_argument("--method: unknown method \"" + method + "\"");
      }
      cmd_recon(ctx, data, method, checkpoint);
    }
    if (*fit) cmd_fit(ctx, input);
    if (*eval) cmd_eval(ctx, {inputs.begin(), inputs.end()});
    if (*report) cmd_report(ctx, {inputs.begin(), inputs.end()});
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"qmri"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace qmri::cli
