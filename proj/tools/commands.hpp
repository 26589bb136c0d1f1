#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pgn/toynet.hpp"

namespace pgn::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;  // error, or oracle check not passed
inline constexpr int kExitSizeGuard = 2;

/// Everything a run can be configured with. Empty lists mean "use the
/// subcommand's default".
struct RunConfig {
  std::vector<std::string> in;      // bundle directories
  std::vector<std::string> gt;      // per-bundle NPY label maps overriding the bundle's annotations
  std::vector<std::string> labels;  // per-bundle explicit label tensors (mode explicit)
  std::string out = "pgn_out";

  std::vector<std::string> modes;
  std::vector<std::string> layers;
  std::vector<double> ps;

  std::size_t bins = 10;
  std::size_t points = 50;
  std::vector<double> thresholds;

  std::uint64_t seed = 42;
  HeadDims dims;
  double bn_eps = 1e-5;
  bool scene = false;
  bool ood = false;
  bool pgm = false;

  double tolerance = 1e-4;
  double epsilon = 1e-3;
  std::size_t size_guard = 1'000'000;
  std::vector<std::string> routes;  // "pgn:linearized", "exact:loss", "pgn:loss"

  std::size_t reps = 20;
  std::size_t warmup = 3;

  /// Long option names that were set on the command line or in the config file.
  std::set<std::string> given;

  bool has(const std::string& name) const { return given.count(name) > 0; }
  /// Throws ValidationError on p <= 0, thresholds outside (0, 1) and similar.
  void validate() const;
};

int cmd_gen_synthetic(const RunConfig& cfg);
int cmd_heatmap(const RunConfig& cfg);
int cmd_oracle_check(const RunConfig& cfg);
int cmd_eval_pixel(const RunConfig& cfg);
int cmd_eval_segment(const RunConfig& cfg);
int cmd_eval_ood(const RunConfig& cfg);
int cmd_bench(const RunConfig& cfg);

}  // namespace pgn::cli
