#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "opsense/io.hpp"

namespace opsense::cli {

// Flag values; unset flags fall back to the config file, then to defaults.
struct Flags {
  std::optional<std::string> config;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> variant;
  std::optional<std::string> mode;
  std::optional<std::string> alpha_mode;
  std::optional<double> alpha_scale;
  std::optional<std::size_t> workers;
  std::optional<std::string> lookup;
  std::optional<std::string> out;
};

inline constexpr const char* kOutDirEnv = "OPSENSE_OUT_DIR";

// Output directory precedence: --out, then OPSENSE_OUT_DIR, then the config.
RunConfig resolve_config(const Flags& flags);

int cmd_search(const Flags& flags);
int cmd_sweep_alpha(const Flags& flags);
int cmd_ntk_verify(const Flags& flags);
int cmd_bias_report(const Flags& flags);
int cmd_oracle(const Flags& flags);
int cmd_track(const Flags& flags);

}  // namespace opsense::cli
