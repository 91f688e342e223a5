#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nlmpc/pipeline.hpp"

namespace {

const char* kCommands[] = {"gen-random", "train-surrogate", "gen-demos", "learn", "tune-alpha",
                           "rollout",    "verify",          "bounds",    "emit-grid"};

void print_usage() {
  std::cerr << "usage: nlmpc <command> --config <file> [--force] [--seed N] [--out DIR]\n"
            << "commands:";
  for (const char* c : kCommands) std::cerr << " " << c;
  std::cerr << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Lyapunov MPC pipeline"};
  std::string command, config_path, out_dir;
  bool force = false;
  std::uint64_t seed = 0;
  bool seed_given = false;

  app.add_option("command", command, "pipeline stage to run")->required();
  app.add_option("--config", config_path, "run configuration JSON")->required();
  app.add_flag("--force", force, "re-run the stage even if outputs exist");
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    print_usage();
    return 2;
  }
  seed_given = seed_opt->count() > 0;

  bool known = false;
  for (const char* c : kCommands) known |= (command == c);
  if (!known) {
    std::cerr << "unknown command: " << command << "\n";
    print_usage();
    return 2;
  }

  try {
    nlmpc::RunConfig cfg = nlmpc::load_run_config(config_path);
    if (seed_given) cfg.seed = seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    const bool ran = nlmpc::pipeline::run_stage(cfg, command, force);
    if (!ran)
      std::cout << command << ": outputs already present in " << cfg.output_dir
                << " (use --force to re-run)\n";
    else
      std::cout << command << ": done -> " << cfg.output_dir << "\n";
    return 0;
  } catch (const nlmpc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
