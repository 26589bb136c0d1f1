#include "pgn/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "pgn/errors.hpp"

namespace pgn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Keeps results observable so the timed work is not optimised away.
volatile double g_sink = 0.0;

}  // namespace

TimingStats TimingStats::from_samples(std::vector<double> samples) {
  if (samples.empty()) throw ValidationError("no timing samples");
  TimingStats s;
  s.samples = std::move(samples);
  std::vector<double> sorted = s.samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : sorted) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(n));
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

nlohmann::ordered_json TimingStats::to_json() const {
  return {{"median_s", median}, {"mean_s", mean}, {"stddev_s", stddev},
          {"min_s", min},       {"max_s", max},   {"repetitions", samples.size()}};
}

TimingStats time_repeated(const std::function<void()>& fn, std::size_t warmup, std::size_t reps) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto start = Clock::now();
    fn();
    samples.push_back(seconds_since(start));
  }
  return TimingStats::from_samples(std::move(samples));
}

nlohmann::ordered_json OverheadReport::to_json() const {
  nlohmann::ordered_json j;
  j["forward"] = forward.to_json();
  j["scores"] = scores.to_json();
  j["forward_plus_scores"] = forward_plus_scores.to_json();
  j["overhead_ratio"] = overhead_ratio;
  return j;
}

OverheadReport measure_pgn_overhead(const SegHeadParams& params, const Tensor& psi_prev, const LabelMode& mode,
                                    Layer layer, double p, std::size_t warmup, std::size_t reps) {
  if (reps == 0) throw ValidationError("need at least one repetition");
  for (std::size_t i = 0; i < warmup; ++i) {
    const ForwardTrace t = forward(params, psi_prev);
    g_sink = g_sink + pgn_heatmap(t, params, mode, layer, p).scores[0];
  }
  std::vector<double> fwd, sc, both;
  for (std::size_t i = 0; i < reps; ++i) {
    auto start = Clock::now();
    const ForwardTrace t = forward(params, psi_prev);
    const double t_fwd = seconds_since(start);
    start = Clock::now();
    const GradientScoreMap m = pgn_heatmap(t, params, mode, layer, p);
    const double t_sc = seconds_since(start);
    g_sink = g_sink + m.scores[0];
    fwd.push_back(t_fwd);
    sc.push_back(t_sc);
    both.push_back(t_fwd + t_sc);
  }
  OverheadReport r;
  r.forward = TimingStats::from_samples(std::move(fwd));
  r.scores = TimingStats::from_samples(std::move(sc));
  r.forward_plus_scores = TimingStats::from_samples(std::move(both));
  r.overhead_ratio = r.forward.median > 0.0 ? r.forward_plus_scores.median / r.forward.median : 1.0;
  return r;
}

}  // namespace pgn
