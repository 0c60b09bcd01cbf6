#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "opsense/error.hpp"

int main(int argc, char** argv) {
  using namespace opsense::cli;
  CLI::App app{"Training-free architecture search and NTK verification"};
  app.require_subcommand(1);
  Flags flags;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seeds, "seed list, e.g. 0,1,2")->delimiter(',');
    sub->add_option("--variant", flags.variant, "vanilla | label | data");
    sub->add_option("--mode", flags.mode, "iterative | oneshot");
    sub->add_option("--alpha-mode", flags.alpha_mode, "linearized | mixing | raw");
    sub->add_option("--alpha-scale", flags.alpha_scale, "alpha init scale in [1e-6, 1e-1]");
    sub->add_option("--workers", flags.workers, "worker threads (default 1)");
    sub->add_option("--lookup", flags.lookup, "genotype quality file or oracle table")->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output directory (overrides OPSENSE_OUT_DIR)");
  };

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Flags&);
  };
  const Command commands[] = {
      {"search", "run the pruning search for each seed", cmd_search},
      {"sweep-alpha", "search across alpha scales", cmd_sweep_alpha},
      {"ntk-verify", "width scaling, sensitivity bound and decomposition checks", cmd_ntk_verify},
      {"bias-report", "parameter bias of FreeDARTS and summed-proxy selectors", cmd_bias_report},
      {"oracle", "train every genotype of the oracle space", cmd_oracle},
      {"track", "evaluate the argmax genotype after every prune", cmd_track},
  };
  int (*selected)(const Flags&) = nullptr;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    sub->callback([&selected, run = c.run] { selected = run; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return selected(flags);
  } catch (const opsense::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
