#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgn/segments.hpp"

namespace pgn {

using FeatureMatrix = std::vector<std::vector<double>>;

/// Per-column z-scoring fitted on training rows (population std). Columns
/// with zero variance map to 0.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> scale;  // 1/std, or 0 for constant columns

  static Standardization fit(const FeatureMatrix& rows);
  std::vector<double> apply(std::span<const double> row) const;
  FeatureMatrix apply(const FeatureMatrix& rows) const;
};

enum class ModelKind { Logistic, LeastSquares };

/// Linear model on standardised features. For Logistic, predict() returns
/// the probability of IoU > 0; for LeastSquares, the IoU clamped to [0, 1].
struct LinearModel {
  ModelKind kind = ModelKind::LeastSquares;
  std::vector<std::string> feature_names;
  Standardization standardization;
  std::vector<double> weights;
  double intercept = 0.0;

  double decision(std::span<const double> row) const;
  double predict(std::span<const double> row) const;
  std::vector<double> predict(const FeatureMatrix& rows) const;

  nlohmann::ordered_json to_json() const;
  static LinearModel from_json(const nlohmann::json& j);
};

struct LogisticConfig {
  double l2 = 1e-4;  // penalty on non-intercept weights, per-sample loss scale
  std::size_t max_iter = 100;
  double tol = 1e-10;  // stop when ||gradient||_inf falls below this
};

/// L2-regularised logistic regression by full-batch Newton iterations.
/// Throws DegenerateTargetError unless both classes are present and there
/// are at least 2 rows.
LinearModel fit_logistic(const FeatureMatrix& x, std::span<const int> targets, const LogisticConfig& config = {},
                         std::vector<std::string> feature_names = {});

/// Ridge least squares in closed form; the intercept is not penalised.
/// Throws NumericError when the normal matrix is singular and ridge == 0.
LinearModel fit_least_squares(const FeatureMatrix& x, std::span<const double> targets, double ridge = 1e-6,
                              std::vector<std::string> feature_names = {});

/// Area under the ROC curve from the rank statistic with average ranks for
/// ties. Labels are 0/1; throws UndefinedMetricError if only one class.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// 1 - SS_res / SS_tot; 0 when the targets have zero variance.
double r_squared(std::span<const double> predictions, std::span<const double> targets);

/// Deterministic 70/30 split of segments by a hash of (image, segment).
bool in_training_split(std::size_t image_id, std::size_t segment_id, double train_fraction = 0.7);

/// Feature matrix of the rows, restricted to the named columns (all when empty).
FeatureMatrix table_features(const SegmentTable& table, const std::vector<std::string>& columns = {});

}  // namespace pgn
