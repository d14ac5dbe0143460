#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lexchain/backend.hpp"
#include "lexchain/chain.hpp"
#include "lexchain/index.hpp"

namespace lexchain::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kBackend = 3,
  kQuality = 4,
};

/// One pipeline run. Relative paths are resolved against the config file.
struct RunConfig {
  std::filesystem::path corpus;
  std::string label_space = "echr";
  BackendDescriptor summarize = default_descriptor(BackendKind::summarize);
  BackendDescriptor embed = default_descriptor(BackendKind::embed);
  BackendDescriptor generate = default_descriptor(BackendKind::generate);
  ChainConfig chain;
  IndexMode index_mode = ForestMode{};
  std::filesystem::path templates;  // empty: builtin templates
  std::string summarize_template;   // empty: chunks go to the summarizer raw
  std::string classify_template = "classify_fewshot";
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;

  /// Copies the global seed into every seeded component.
  void propagate_seed();
  /// Checks paths, backends and templates; throws ConfigError.
  void validate() const;
};

RunConfig load_config(const std::filesystem::path& path);

/// Command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lexchain::cli
