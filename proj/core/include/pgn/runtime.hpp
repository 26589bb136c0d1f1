#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgn/gradnorm.hpp"
#include "pgn/toynet.hpp"

namespace pgn {

struct TimingStats {
  std::vector<double> samples;  // seconds per repetition
  double median = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;

  static TimingStats from_samples(std::vector<double> samples);
  nlohmann::ordered_json to_json() const;
};

/// Wall-clock seconds of `fn` over `reps` repetitions after `warmup` untimed calls.
TimingStats time_repeated(const std::function<void()>& fn, std::size_t warmup = 3, std::size_t reps = 20);

/// Forward pass vs forward pass plus PGN scores. Each repetition times the
/// forward pass and then the score computation on its trace, so the combined
/// samples dominate the forward samples and overhead_ratio >= 1.
struct OverheadReport {
  TimingStats forward;
  TimingStats scores;
  TimingStats forward_plus_scores;
  double overhead_ratio = 1.0;  // median(forward + scores) / median(forward)

  nlohmann::ordered_json to_json() const;
};

OverheadReport measure_pgn_overhead(const SegHeadParams& params, const Tensor& psi_prev, const LabelMode& mode,
                                    Layer layer, double p, std::size_t warmup = 3, std::size_t reps = 20);

}  // namespace pgn
