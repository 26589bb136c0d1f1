#include "pgn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "pgn/errors.hpp"
#include "pgn/segments.hpp"
#include "pgn/toynet.hpp"

namespace pgn {

namespace {

// Indices sorted by descending score; equal scores keep input order.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void check_binary_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("NaN score");
  }
}

}  // namespace

double ece(std::span<const double> confidences, std::span<const int> correct, std::size_t bins) {
  if (confidences.size() != correct.size()) throw DimensionError("confidences and correctness differ in length");
  if (confidences.empty()) throw UndefinedMetricError("ECE of an empty set");
  if (bins == 0) throw ValidationError("bins must be >= 1");
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("confidences must lie in [0, 1]");
    const auto b = std::min(bins - 1, static_cast<std::size_t>(c * static_cast<double>(bins)));
    conf_sum[b] += c;
    acc_sum[b] += correct[i] != 0 ? 1.0 : 0.0;
    ++count[b];
  }
  const auto n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (!count[b]) continue;
    const auto nb = static_cast<double>(count[b]);
    total += nb / n * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

std::vector<double> scores_to_confidence(std::span<const double> scores, double max_score) {
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = max_score > 0.0 ? std::clamp(1.0 - scores[i] / max_score, 0.0, 1.0) : 1.0;
  }
  return out;
}

SparsificationCurves sparsification(std::span<const double> uncertainties, std::span<const double> errors,
                                    std::size_t points) {
  if (uncertainties.size() != errors.size()) throw DimensionError("uncertainties and errors differ in length");
  if (errors.empty()) throw UndefinedMetricError("sparsification of an empty set");
  if (points < 2) throw ValidationError("need at least 2 sparsification points");
  const std::size_t n = errors.size();

  auto curve = [&](std::span<const double> key) {
    const auto order = descending(key);
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + errors[order[i]];
    std::vector<double> out(points);
    for (std::size_t i = 0; i < points; ++i) {
      const std::size_t removed = i * n / points;
      out[i] = (prefix[n] - prefix[removed]) / static_cast<double>(n - removed);
    }
    return out;
  };

  SparsificationCurves c;
  c.fractions.resize(points);
  for (std::size_t i = 0; i < points; ++i) c.fractions[i] = static_cast<double>(i) / static_cast<double>(points);
  c.method = curve(uncertainties);
  c.oracle = curve(errors);
  const double base = c.method.front();
  c.error.assign(points, 0.0);
  if (base > 0.0) {
    for (std::size_t i = 0; i < points; ++i) {
      c.method[i] /= base;
      c.oracle[i] /= base;
      c.error[i] = c.method[i] - c.oracle[i];
    }
  }
  for (std::size_t i = 0; i + 1 < points; ++i) {
    c.ause += 0.5 * (c.error[i] + c.error[i + 1]) * (c.fractions[i + 1] - c.fractions[i]);
  }
  return c;
}

double ause(std::span<const double> uncertainties, std::span<const double> errors, std::size_t points) {
  return sparsification(uncertainties, errors, points).ause;
}

double brier_error(const Tensor& probs, std::size_t a, std::size_t b, std::int32_t gt_class) {
  double e = 0.0;
  for (std::size_t k = 0; k < probs.dim(0); ++k) {
    const double d = probs(k, a, b) - (static_cast<std::int32_t>(k) == gt_class ? 1.0 : 0.0);
    e += d * d;
  }
  return e;
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_binary_inputs(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
  if (n_pos == 0) throw UndefinedMetricError("AuPRC needs at least one positive");
  const auto order = descending(scores);
  std::size_t tp = 0, fp = 0;
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] != 0) ++tp;
      else ++fp;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double fpr_at_95_tpr(std::span<const double> scores, std::span<const int> labels) {
  check_binary_inputs(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("FPR95 needs positives and negatives");
  const auto order = descending(scores);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] != 0) ++tp;
      else ++fp;
      ++j;
    }
    if (static_cast<double>(tp) / static_cast<double>(n_pos) >= 0.95) {
      return static_cast<double>(fp) / static_cast<double>(n_neg);
    }
    i = j;
  }
  return 1.0;
}

std::vector<double> default_ood_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 10; ++i) t.push_back(static_cast<double>(25 + 5 * i) / 100.0);
  return t;
}

OodSegmentMetrics ood_segment_metrics(std::span<const OodImage> images, std::span<const double> thresholds) {
  if (thresholds.empty()) throw ValidationError("need at least one threshold");
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("thresholds must lie in (0, 1)");
  }

  // Ground-truth components do not depend on the threshold.
  std::vector<LabelMap> gt_ids(images.size());
  std::vector<std::size_t> gt_count(images.size());
  std::size_t total_gt = 0;
  for (std::size_t m = 0; m < images.size(); ++m) {
    const Tensor& s = *images[m].scores;
    const LabelMap& mask = *images[m].mask;
    if (s.rank() != 2 || s.dim(0) != mask.height || s.dim(1) != mask.width) {
      throw DimensionError("score map and OoD mask shapes differ");
    }
    for (double v : s.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("score map must be normalised to [0, 1]");
    }
    LabelMap gt_binary(mask.height, mask.width, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) gt_binary.labels[i] = mask.labels[i] == 1 ? 1 : 0;
    gt_count[m] = mask_components(gt_binary, gt_ids[m]);
    total_gt += gt_count[m];
  }
  if (total_gt == 0) throw UndefinedMetricError("OoD ground truth mask is empty");

  OodSegmentMetrics out;
  out.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double t : thresholds) {
    double siou_sum = 0.0, ppv_sum = 0.0;
    std::size_t n_pred = 0, tp = 0, fn = 0, fp = 0;
    for (std::size_t m = 0; m < images.size(); ++m) {
      const Tensor& s = *images[m].scores;
      const LabelMap& mask = *images[m].mask;
      const LabelMap& gid = gt_ids[m];
      LabelMap pred(mask.height, mask.width, 0);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        pred.labels[i] = (s[i] >= t && mask.labels[i] != kIgnoreLabel) ? 1 : 0;
      }
      LabelMap pid;
      const std::size_t np = mask_components(pred, pid);

      std::vector<std::size_t> pred_size(np + 1, 0), pred_in_gt(np + 1, 0), gt_size(gt_count[m] + 1, 0);
      std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> overlap;  // (pred, gt) -> pixels
      for (std::size_t i = 0; i < mask.size(); ++i) {
        const std::int32_t q = pid.labels[i], g = gid.labels[i];
        if (g) ++gt_size[static_cast<std::size_t>(g)];
        if (!q) continue;
        ++pred_size[static_cast<std::size_t>(q)];
        if (g) {
          ++pred_in_gt[static_cast<std::size_t>(q)];
          ++overlap[{q, g}];
        }
      }

      std::vector<std::vector<std::pair<std::int32_t, std::size_t>>> touching(gt_count[m] + 1);
      for (const auto& [key, cnt] : overlap) touching[static_cast<std::size_t>(key.second)].push_back({key.first, cnt});
      for (std::size_t g = 1; g <= gt_count[m]; ++g) {
        std::size_t inter = 0, p_size = 0, excluded = 0;
        for (const auto& [q, cnt] : touching[g]) {
          inter += cnt;
          p_size += pred_size[static_cast<std::size_t>(q)];
          excluded += pred_in_gt[static_cast<std::size_t>(q)] - cnt;
        }
        const std::size_t uni = gt_size[g] + p_size - inter - excluded;
        const double siou = static_cast<double>(inter) / static_cast<double>(uni);
        siou_sum += siou;
        if (siou > t) ++tp;
        else ++fn;
      }
      for (std::size_t q = 1; q <= np; ++q) {
        const double ppv = static_cast<double>(pred_in_gt[q]) / static_cast<double>(pred_size[q]);
        ppv_sum += ppv;
        ++n_pred;
        if (ppv <= t) ++fp;
      }
    }
    out.siou_per_threshold.push_back(siou_sum / static_cast<double>(total_gt));
    out.ppv_per_threshold.push_back(n_pred ? ppv_sum / static_cast<double>(n_pred) : 0.0);
    out.f1_per_threshold.push_back(2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fn + fp));
  }
  const auto k = static_cast<double>(thresholds.size());
  out.siou = std::accumulate(out.siou_per_threshold.begin(), out.siou_per_threshold.end(), 0.0) / k;
  out.ppv = std::accumulate(out.ppv_per_threshold.begin(), out.ppv_per_threshold.end(), 0.0) / k;
  out.f1 = std::accumulate(out.f1_per_threshold.begin(), out.f1_per_threshold.end(), 0.0) / k;
  return out;
}

OodSegmentMetrics ood_segment_metrics(const Tensor& scores, const LabelMap& mask, std::span<const double> thresholds) {
  const OodImage img{&scores, &mask};
  return ood_segment_metrics(std::span<const OodImage>(&img, 1), thresholds);
}

void MetricsReport::set(const std::string& key, std::optional<double> value) {
  for (auto& [k, v] : metrics) {
    if (k == key) {
      v = value;
      return;
    }
  }
  metrics.emplace_back(key, value);
}

std::optional<double> MetricsReport::get(const std::string& key) const {
  for (const auto& [k, v] : metrics) {
    if (k == key) return v;
  }
  return std::nullopt;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["config"] = config;
  j["provenance"] = provenance;
  nlohmann::ordered_json m = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metrics) {
    if (v) m[k] = *v;
    else m[k] = nullptr;
  }
  j["metrics"] = m;
  j["errors"] = errors;
  return j;
}

void write_reports_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path) {
  std::vector<std::string> columns;
  for (const auto& r : reports) {
    for (const auto& [k, v] : r.metrics) {
      if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "name";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const auto& r : reports) {
    out << r.name;
    for (const auto& c : columns) {
      const auto v = r.get(c);
      out << ',' << (v ? format_double(*v) : std::string());
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace pgn
