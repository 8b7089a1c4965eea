#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace npis::cli {

/// Fully defaulted settings of one invocation, echoed as the output header.
struct RunSpec {
  std::string subcommand;
  std::vector<std::pair<std::string, std::string>> fields;
  std::uint64_t seed = 0;
  bool seeded = true;
  std::size_t workers = 0;
  std::string output;

  void set(const std::string& key, const std::string& value);
  /// `# npis <version> <subcommand> key=value ...`. The worker count is left
  /// out since it never changes results.
  std::string header() const;
};

/// Subcommands integrate, study, queue, trace-gen and density. NPIS_SEED and
/// NPIS_WORKERS supply --seed and --workers when the flags are absent.
/// Returns 0 on success; errors go to `err` with a nonzero code.
int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int parse_and_dispatch(int argc, char** argv);

}  // namespace npis::cli
