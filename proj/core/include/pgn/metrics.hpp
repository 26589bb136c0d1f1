#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgn/tensor.hpp"

namespace pgn {

/// Expected calibration error with `bins` equal-width bins over [0, 1]:
/// sum_b (n_b / N) |acc_b - conf_b|. A confidence of exactly 1 falls in the
/// last bin. Throws UndefinedMetricError on empty input.
double ece(std::span<const double> confidences, std::span<const int> correct, std::size_t bins = 10);

/// Maps nonnegative uncertainty scores to confidences 1 - s / max(s).
std::vector<double> scores_to_confidence(std::span<const double> scores, double max_score);

struct SparsificationCurves {
  std::vector<double> fractions;  // 0, 0.02, ..., 0.98 by default
  std::vector<double> method;     // mean error of the kept pixels, / value at f = 0
  std::vector<double> oracle;
  std::vector<double> error;      // method - oracle
  double ause = 0.0;              // trapezoidal area under `error`
};

/// At fraction f the floor(f * N) pixels with the highest uncertainty are
/// removed (ties keep input order); the oracle removes by true error. Both
/// curves are divided by the mean error at f = 0 (AuSE is 0 if that is 0).
SparsificationCurves sparsification(std::span<const double> uncertainties, std::span<const double> errors,
                                    std::size_t points = 50);

double ause(std::span<const double> uncertainties, std::span<const double> errors, std::size_t points = 50);

/// Per-pixel Brier error sum_k (p_k - [k == gt])^2.
double brier_error(const Tensor& probs, std::size_t a, std::size_t b, std::int32_t gt_class);

/// Step-wise average precision sum_n (R_n - R_{n-1}) P_n over the descending
/// sweep of distinct scores. Positive class = label != 0. Throws
/// UndefinedMetricError without positives.
double auprc(std::span<const double> scores, std::span<const int> labels);

/// False positive rate at the largest threshold reaching TPR >= 0.95.
/// Throws UndefinedMetricError without positives or negatives.
double fpr_at_95_tpr(std::span<const double> scores, std::span<const int> labels);

/// 0.25, 0.30, ..., 0.75
std::vector<double> default_ood_thresholds();

struct OodSegmentMetrics {
  double siou = 0.0;  // threshold-averaged mean sIoU over ground-truth components
  double ppv = 0.0;   // threshold-averaged mean PPV over predicted components
  double f1 = 0.0;    // threshold-averaged component F1
  std::vector<double> thresholds;
  std::vector<double> siou_per_threshold, ppv_per_threshold, f1_per_threshold;
};

/// One image: a score map already normalised to [0, 1] and an OoD mask
/// (1 = OoD, 0 = in-distribution, 255 = void; void pixels are never
/// predicted).
struct OodImage {
  const Tensor* scores = nullptr;
  const LabelMap* mask = nullptr;
};

/// Component-level OoD metrics. Per threshold t, pixels with score >= t form
/// the prediction. For each ground-truth component A, with P the union of
/// predicted components touching A and X the predicted pixels inside other
/// ground-truth components, sIoU(A) = |A n P| / |(A u P) \ X|. For each
/// predicted component Q, PPV(Q) = |Q n gt| / |Q|. A is a TP if sIoU > t,
/// else FN; Q is a FP if PPV <= t. F1 = 2TP / (2TP + FN + FP). Components
/// are pooled over images; PPV is 0 at thresholds with no prediction.
OodSegmentMetrics ood_segment_metrics(std::span<const OodImage> images, std::span<const double> thresholds);
OodSegmentMetrics ood_segment_metrics(const Tensor& scores, const LabelMap& mask, std::span<const double> thresholds);

/// Named scalar metrics plus the configuration and provenance that produced them.
struct MetricsReport {
  std::string name;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, std::optional<double>>> metrics;
  std::vector<std::string> errors;

  void set(const std::string& key, std::optional<double> value);
  std::optional<double> get(const std::string& key) const;
  nlohmann::ordered_json to_json() const;
};

/// One row per report, one column per metric name (union, first-seen order).
void write_reports_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path);

}  // namespace pgn
