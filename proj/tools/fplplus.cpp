// Command-line driver for the pipeline stages.
#include <CLI11.hpp>
#include <iomanip>
#include <iostream>

#include "fpl/core/error.hpp"
#include "fpl/pipeline/config.hpp"
#include "fpl/pipeline/stages.hpp"

namespace fs = std::filesystem;
using namespace fpl;

int main(int argc, char** argv) {
  CLI::App app{"FPL+ unsupervised domain adaptation pipeline"};
  app.require_subcommand(0, 1);
  app.fallthrough();  // global flags may follow the command

  std::string config_path, workdir, variant = "fpl+";
  std::optional<std::uint64_t> seed;
  bool resume = false, force = false, print_config = false, quiet = false;
  app.add_option("-c,--config", config_path, "TOML configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the root seed");
  app.add_option("--workdir", workdir, "Override paths.workdir");
  app.add_option("--variant", variant, "Final segmentor: fpl+, unfiltered or source_only");
  app.add_flag("--resume", resume, "Skip stages whose outputs match the configuration");
  app.add_flag("--force", force, "Discard existing stage output");
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");
  app.add_flag("-q,--quiet", quiet, "No progress output");

  std::map<std::string, CLI::App*> stage_cmds;
  for (const auto& s : pipeline::stage_names()) stage_cmds[s] = app.add_subcommand(s, "Run the " + s + " stage");
  auto* all = app.add_subcommand("all", "Run every stage the variant needs");
  std::vector<std::string> compare_dirs;
  auto* compare = app.add_subcommand("compare", "Mean Dice of several eval directories");
  compare->add_option("dirs", compare_dirs, "eval directories")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    pipeline::PipelineConfig cfg =
        config_path.empty() ? pipeline::PipelineConfig{} : pipeline::PipelineConfig::from_toml_file(config_path);
    if (seed) cfg.seed = *seed;
    if (!workdir.empty()) cfg.workdir = workdir;
    cfg.validate();

    if (print_config) {
      std::cout << cfg.to_toml();
      return 0;
    }
    pipeline::RunOptions opt;
    opt.resume = resume;
    opt.force = force;
    opt.variant = pipeline::parse_variant(variant);
    opt.log = quiet ? nullptr : &std::cerr;

    if (compare->parsed()) {
      std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      for (const auto& [name, dice] : pipeline::compare_runs(dirs))
        std::cout << std::left << std::setw(28) << name << std::fixed << std::setprecision(4) << dice << "\n";
      return 0;
    }
    if (all->parsed()) {
      for (const auto& r : pipeline::run_all(cfg, opt))
        std::cout << r.log.stage << (r.skipped ? " (skipped)" : "") << " " << std::fixed << std::setprecision(1)
                  << r.log.wall_time_s << " s\n";
      return 0;
    }
    for (const auto& [name, cmd] : stage_cmds) {
      if (!cmd->parsed()) continue;
      const auto r = pipeline::run_stage(name, cfg, opt);
      std::cout << name << (r.skipped ? " (skipped)" : "") << " -> " << pipeline::stage_dir(cfg, name, opt.variant).string()
                << "\n";
      return 0;
    }
    std::cout << app.help();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingStageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
