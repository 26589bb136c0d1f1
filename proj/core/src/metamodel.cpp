#include "pgn/metamodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "pgn/errors.hpp"
#include "pgn/rng.hpp"

namespace pgn {

namespace {

Eigen::MatrixXd design_matrix(const FeatureMatrix& z) {
  const auto n = static_cast<Eigen::Index>(z.size());
  const auto d = z.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(z.front().size());
  Eigen::MatrixXd x(n, d + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < d; ++j) x(i, j + 1) = z[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return x;
}

void check_rows(const FeatureMatrix& x) {
  if (x.empty()) throw ValidationError("no rows to fit");
  const std::size_t d = x.front().size();
  for (const auto& r : x) {
    if (r.size() != d) throw DimensionError("feature rows have different lengths");
    for (double v : r) {
      if (!std::isfinite(v)) throw NumericError("non-finite feature value");
    }
  }
}

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

Standardization Standardization::fit(const FeatureMatrix& rows) {
  check_rows(rows);
  const std::size_t d = rows.front().size();
  const auto n = static_cast<double>(rows.size());
  Standardization s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  for (auto& m : s.mean) m /= n;
  std::vector<double> var(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / n);
    s.scale[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? 1.0 / sd : 0.0;
  }
  return s;
}

std::vector<double> Standardization::apply(std::span<const double> row) const {
  if (row.size() != mean.size()) throw DimensionError("row length does not match the standardisation");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) * scale[j];
  return out;
}

FeatureMatrix Standardization::apply(const FeatureMatrix& rows) const {
  FeatureMatrix out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(apply(r));
  return out;
}

double LinearModel::decision(std::span<const double> row) const {
  const auto z = standardization.apply(row);
  double t = intercept;
  for (std::size_t j = 0; j < z.size(); ++j) t += weights[j] * z[j];
  return t;
}

double LinearModel::predict(std::span<const double> row) const {
  const double t = decision(row);
  return kind == ModelKind::Logistic ? sigmoid(t) : std::clamp(t, 0.0, 1.0);
}

std::vector<double> LinearModel::predict(const FeatureMatrix& rows) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(predict(r));
  return out;
}

nlohmann::ordered_json LinearModel::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind == ModelKind::Logistic ? "logistic" : "least_squares";
  j["feature_names"] = feature_names;
  j["intercept"] = intercept;
  j["weights"] = weights;
  j["standardization"] = {{"mean", standardization.mean}, {"scale", standardization.scale}};
  return j;
}

LinearModel LinearModel::from_json(const nlohmann::json& j) {
  LinearModel m;
  m.kind = j.at("kind").get<std::string>() == "logistic" ? ModelKind::Logistic : ModelKind::LeastSquares;
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.intercept = j.at("intercept").get<double>();
  m.weights = j.at("weights").get<std::vector<double>>();
  m.standardization.mean = j.at("standardization").at("mean").get<std::vector<double>>();
  m.standardization.scale = j.at("standardization").at("scale").get<std::vector<double>>();
  if (m.weights.size() != m.standardization.mean.size()) throw DimensionError("model weight count mismatch");
  return m;
}

LinearModel fit_logistic(const FeatureMatrix& x, std::span<const int> targets, const LogisticConfig& config,
                         std::vector<std::string> feature_names) {
  check_rows(x);
  if (targets.size() != x.size()) throw DimensionError("target count does not match row count");
  const auto positives = std::count_if(targets.begin(), targets.end(), [](int t) { return t != 0; });
  if (x.size() < 2 || positives == 0 || positives == static_cast<std::ptrdiff_t>(targets.size())) {
    throw DegenerateTargetError("logistic regression needs both target classes");
  }

  LinearModel model;
  model.kind = ModelKind::Logistic;
  model.feature_names = std::move(feature_names);
  model.standardization = Standardization::fit(x);
  const Eigen::MatrixXd design = design_matrix(model.standardization.apply(x));
  const Eigen::Index n = design.rows(), d = design.cols();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = targets[static_cast<std::size_t>(i)] != 0 ? 1.0 : 0.0;

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d, config.l2);
  penalty(0) = 0.0;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t iter = 0; iter < config.max_iter; ++iter) {
    const Eigen::VectorXd t = design * w;
    Eigen::VectorXd prob(n), curvature(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i) = sigmoid(t(i));
      curvature(i) = std::max(prob(i) * (1.0 - prob(i)), 1e-12);
    }
    const Eigen::VectorXd grad = inv_n * (design.transpose() * (prob - y)) + penalty.cwiseProduct(w);
    if (grad.lpNorm<Eigen::Infinity>() < config.tol) break;
    Eigen::MatrixXd hess = inv_n * (design.transpose() * curvature.asDiagonal() * design);
    hess.diagonal() += penalty;
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) throw NumericError("logistic Newton step is not finite");
    w -= step;
  }

  model.intercept = w(0);
  model.weights.assign(w.data() + 1, w.data() + d);
  return model;
}

LinearModel fit_least_squares(const FeatureMatrix& x, std::span<const double> targets, double ridge,
                              std::vector<std::string> feature_names) {
  check_rows(x);
  if (targets.size() != x.size()) throw DimensionError("target count does not match row count");
  if (ridge < 0.0) throw ValidationError("ridge must be >= 0");
  const std::size_t d_features = x.front().size();
  if (ridge == 0.0 && x.size() < d_features + 1) {
    throw NumericError("least squares needs at least feature_count + 1 rows without a ridge term");
  }

  LinearModel model;
  model.kind = ModelKind::LeastSquares;
  model.feature_names = std::move(feature_names);
  model.standardization = Standardization::fit(x);
  const Eigen::MatrixXd design = design_matrix(model.standardization.apply(x));
  const Eigen::Index n = design.rows(), d = design.cols();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = targets[static_cast<std::size_t>(i)];

  Eigen::MatrixXd normal = design.transpose() * design;
  for (Eigen::Index j = 1; j < d; ++j) normal(j, j) += ridge * static_cast<double>(n);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  if (ldlt.info() != Eigen::Success) throw NumericError("normal matrix factorisation failed");
  const Eigen::VectorXd diag = ldlt.vectorD();
  const double dmax = diag.cwiseAbs().maxCoeff();
  if (diag.minCoeff() <= 1e-12 * std::max(1.0, dmax)) {
    throw NumericError("normal matrix is singular; use a positive ridge term");
  }
  const Eigen::VectorXd w = ldlt.solve(design.transpose() * y);
  if (!w.allFinite()) throw NumericError("least-squares solution is not finite");

  model.intercept = w(0);
  model.weights.assign(w.data() + 1, w.data() + d);
  return model;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = static_cast<double>(i + 1 + j) / 2.0;  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AuROC needs both label classes");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double r_squared(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw DimensionError("predictions and targets differ in length");
  if (targets.empty()) throw UndefinedMetricError("R^2 of an empty set");
  const double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(targets.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ss_res += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
  }
  if (ss_tot == 0.0) return 0.0;
  return 1.0 - ss_res / ss_tot;
}

bool in_training_split(std::size_t image_id, std::size_t segment_id, double train_fraction) {
  const std::uint64_t key = (static_cast<std::uint64_t>(image_id) << 32) ^ static_cast<std::uint64_t>(segment_id);
  const std::uint64_t h = mix64(key ^ 0xA5A5A5A55A5A5A5AULL);
  return static_cast<double>(h % 10000) < train_fraction * 10000.0;
}

FeatureMatrix table_features(const SegmentTable& table, const std::vector<std::string>& columns) {
  std::vector<std::size_t> idx;
  if (columns.empty()) {
    idx.resize(table.feature_names.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    for (const auto& c : columns) {
      const auto it = std::find(table.feature_names.begin(), table.feature_names.end(), c);
      if (it == table.feature_names.end()) throw ValidationError("unknown feature column '" + c + "'");
      idx.push_back(static_cast<std::size_t>(it - table.feature_names.begin()));
    }
  }
  FeatureMatrix out;
  out.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    std::vector<double> v;
    v.reserve(idx.size());
    for (auto i : idx) v.push_back(r.features[i]);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace pgn
