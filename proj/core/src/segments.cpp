#include "pgn/segments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "pgn/errors.hpp"

namespace pgn {

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::size_t> parent_;
};

// Labels 8-connected regions of equal value among pixels with include(i).
// Excluded pixels get id 0. Returns the number of components.
template <typename Include>
std::size_t label_regions(const LabelMap& values, Include include, LabelMap& out) {
  const std::size_t h = values.height, w = values.width;
  DisjointSets sets(h * w);
  for (std::size_t a = 0; a < h; ++a) {
    for (std::size_t b = 0; b < w; ++b) {
      const std::size_t i = a * w + b;
      if (!include(i)) continue;
      auto link = [&](std::size_t na, std::size_t nb) {
        const std::size_t j = na * w + nb;
        if (include(j) && values.labels[j] == values.labels[i]) sets.unite(i, j);
      };
      // Already-visited neighbours: W, NW, N, NE.
      if (b > 0) link(a, b - 1);
      if (a > 0) {
        if (b > 0) link(a - 1, b - 1);
        link(a - 1, b);
        if (b + 1 < w) link(a - 1, b + 1);
      }
    }
  }
  out = LabelMap(h, w, 0);
  std::vector<std::int32_t> id_of_root(h * w, 0);
  std::int32_t next = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!include(i)) continue;
    const std::size_t r = sets.find(i);
    if (id_of_root[r] == 0) id_of_root[r] = ++next;
    out.labels[i] = id_of_root[r];
  }
  return static_cast<std::size_t>(next);
}

// Plain sum for the mean, Welford update for the population variance.
struct Moments {
  double sum = 0.0, running_mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
    const double delta = v - running_mean;
    running_mean += delta / static_cast<double>(n);
    m2 += delta * (v - running_mean);
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double variance() const { return n ? m2 / static_cast<double>(n) : 0.0; }
};

}  // namespace

SegmentMap connected_components(const LabelMap& pred) {
  SegmentMap seg;
  seg.count = label_regions(pred, [](std::size_t) { return true; }, seg.labels);
  seg.class_of.assign(seg.count, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    seg.class_of[static_cast<std::size_t>(seg.labels.labels[i] - 1)] = pred.labels[i];
  }
  return seg;
}

std::size_t mask_components(const LabelMap& mask, LabelMap& out) {
  LabelMap binary(mask.height, mask.width, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) binary.labels[i] = mask.labels[i] != 0 ? 1 : 0;
  return label_regions(binary, [&](std::size_t i) { return binary.labels[i] != 0; }, out);
}

LabelMap inner_boundary_split(const SegmentMap& seg) {
  const std::size_t h = seg.labels.height, w = seg.labels.width;
  LabelMap inner(h, w, 0);
  if (h < 3 || w < 3) return inner;
  for (std::size_t a = 1; a + 1 < h; ++a) {
    for (std::size_t b = 1; b + 1 < w; ++b) {
      const std::int32_t id = seg.labels(a, b);
      bool all = true;
      for (std::size_t da = 0; da < 3 && all; ++da) {
        for (std::size_t db = 0; db < 3; ++db) {
          if (seg.labels(a + da - 1, b + db - 1) != id) {
            all = false;
            break;
          }
        }
      }
      inner(a, b) = all ? 1 : 0;
    }
  }
  return inner;
}

DispersionMaps dispersion_maps(const Tensor& probs) {
  if (probs.rank() != 3) throw DimensionError("dispersion_maps expects C x H x W");
  const std::size_t classes = probs.dim(0), h = probs.dim(1), w = probs.dim(2), plane = h * w;
  DispersionMaps out{Tensor({h, w}), Tensor({h, w})};
  const double log_c = std::log(static_cast<double>(classes));
  for (std::size_t i = 0; i < plane; ++i) {
    double ent = 0.0, first = -1.0, second = -1.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = probs[k * plane + i];
      if (p > 0.0) ent -= p * std::log(p);
      if (p > first) {
        second = first;
        first = p;
      } else if (p > second) {
        second = p;
      }
    }
    out.entropy[i] = std::clamp(ent / log_c, 0.0, 1.0);
    out.margin[i] = std::clamp(1.0 - first + second, 0.0, 1.0);
  }
  return out;
}

std::vector<double> segment_iou(const SegmentMap& seg, const LabelMap& gt, const IouOptions& options) {
  const std::size_t h = seg.labels.height, w = seg.labels.width;
  if (gt.height != h || gt.width != w) throw DimensionError("ground truth shape does not match the segmentation");

  struct Box {
    std::size_t a0 = std::numeric_limits<std::size_t>::max(), a1 = 0;
    std::size_t b0 = std::numeric_limits<std::size_t>::max(), b1 = 0;
  };
  std::vector<Box> boxes(seg.count);
  std::vector<std::size_t> inter(seg.count, 0), own(seg.count, 0);
  for (std::size_t a = 0; a < h; ++a) {
    for (std::size_t b = 0; b < w; ++b) {
      const auto k = static_cast<std::size_t>(seg.labels(a, b) - 1);
      Box& bx = boxes[k];
      bx.a0 = std::min(bx.a0, a);
      bx.a1 = std::max(bx.a1, a);
      bx.b0 = std::min(bx.b0, b);
      bx.b1 = std::max(bx.b1, b);
      const std::int32_t g = gt(a, b);
      if (g == options.ignore_label) continue;
      ++own[k];
      if (g == seg.class_of[k]) ++inter[k];
    }
  }

  std::vector<double> iou(seg.count);
  for (std::size_t k = 0; k < seg.count; ++k) {
    const Box& bx = boxes[k];
    const std::size_t a0 = bx.a0 > options.dilation ? bx.a0 - options.dilation : 0;
    const std::size_t b0 = bx.b0 > options.dilation ? bx.b0 - options.dilation : 0;
    const std::size_t a1 = std::min(h - 1, bx.a1 + options.dilation);
    const std::size_t b1 = std::min(w - 1, bx.b1 + options.dilation);
    const auto id = static_cast<std::int32_t>(k + 1);
    std::size_t outside = 0;
    for (std::size_t a = a0; a <= a1; ++a) {
      for (std::size_t b = b0; b <= b1; ++b) {
        if (seg.labels(a, b) != id && gt(a, b) == seg.class_of[k]) ++outside;
      }
    }
    const std::size_t uni = own[k] + outside;
    iou[k] = uni == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(inter[k]) / static_cast<double>(uni);
  }
  return iou;
}

void SegmentTable::append(const SegmentTable& other) {
  if (rows.empty() && feature_names.empty()) feature_names = other.feature_names;
  if (other.feature_names != feature_names) throw DimensionError("cannot append tables with different columns");
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

std::size_t feature_count(std::size_t num_classes, std::size_t num_heatmaps) {
  return 5 + num_classes + 10 + 10 * num_heatmaps;
}

SegmentTable build_feature_table(const ForwardTrace& trace, const SegmentMap& seg,
                                 const std::vector<GradientScoreMap>& heatmaps, const LabelMap& gt,
                                 std::size_t image_id, const IouOptions& options) {
  const std::size_t h = trace.height(), w = trace.width(), plane = h * w, classes = trace.num_classes();
  if (seg.labels.height != h || seg.labels.width != w) throw DimensionError("segment map does not match trace");
  for (const auto& m : heatmaps) {
    if (m.scores.shape() != Shape{h, w}) throw DimensionError("heatmap " + m.name() + " does not match trace");
  }

  SegmentTable table;
  auto& names = table.feature_names;
  for (const char* n : {"S", "S_in", "S_bd", "S_rel", "S_in_rel"}) names.emplace_back(n);
  for (std::size_t k = 0; k < classes; ++k) names.push_back("P_" + std::to_string(k));
  for (const char* d : {"E", "M"}) {
    for (const char* suffix : {"_mean", "_mean_in", "_mean_bd", "_mean_rel", "_mean_in_rel"}) {
      names.push_back(std::string(d) + suffix);
    }
  }
  for (const auto& m : heatmaps) {
    for (const char* suffix : {"_mean", "_mean_in", "_mean_bd", "_mean_rel", "_mean_in_rel", "_var", "_var_in",
                               "_var_bd", "_var_rel", "_var_in_rel"}) {
      names.push_back(m.name() + suffix);
    }
  }

  const LabelMap inner = inner_boundary_split(seg);
  const DispersionMaps disp = dispersion_maps(trace.probs);
  const std::vector<double> iou = segment_iou(seg, gt, options);

  // Accumulators per segment: [all, inner, boundary] for each map.
  const std::size_t n_maps = 2 + heatmaps.size();
  std::vector<Moments> acc(seg.count * n_maps * 3);
  std::vector<double> prob_sum(seg.count * classes, 0.0);
  auto slot = [&](std::size_t k, std::size_t m, std::size_t part) -> Moments& {
    return acc[(k * n_maps + m) * 3 + part];
  };
  for (std::size_t i = 0; i < plane; ++i) {
    const auto k = static_cast<std::size_t>(seg.labels.labels[i] - 1);
    const std::size_t part = inner.labels[i] ? 1 : 2;
    for (std::size_t m = 0; m < n_maps; ++m) {
      const double v = m == 0 ? disp.entropy[i] : m == 1 ? disp.margin[i] : heatmaps[m - 2].scores[i];
      slot(k, m, 0).add(v);
      slot(k, m, part).add(v);
    }
    for (std::size_t c = 0; c < classes; ++c) prob_sum[k * classes + c] += trace.probs[c * plane + i];
  }

  table.rows.reserve(seg.count);
  for (std::size_t k = 0; k < seg.count; ++k) {
    SegmentRow row;
    row.image_id = image_id;
    row.segment_id = k + 1;
    row.cls = seg.class_of[k];
    row.iou = iou[k];
    const double s = static_cast<double>(slot(k, 0, 0).n);
    const double s_in = static_cast<double>(slot(k, 0, 1).n);
    const double s_bd = static_cast<double>(slot(k, 0, 2).n);
    row.inner_empty = s_in == 0.0;
    const double s_rel = s / s_bd, s_in_rel = s_in / s_bd;
    auto& f = row.features;
    f.reserve(names.size());
    f.insert(f.end(), {s, s_in, s_bd, s_rel, s_in_rel});
    for (std::size_t c = 0; c < classes; ++c) f.push_back(prob_sum[k * classes + c] / s);
    for (std::size_t m = 0; m < n_maps; ++m) {
      const Moments &all = slot(k, m, 0), &in = slot(k, m, 1), &bd = slot(k, m, 2);
      f.insert(f.end(), {all.mean(), in.mean(), bd.mean(), all.mean() * s_rel, in.mean() * s_in_rel});
      if (m >= 2) {
        f.insert(f.end(), {all.variance(), in.variance(), bd.variance(), all.variance() * s_rel,
                           in.variance() * s_in_rel});
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

void write_table_csv(const SegmentTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "image_id,segment_id,class,inner_empty";
  for (const auto& n : table.feature_names) out << ',' << n;
  out << ",iou\n";
  for (const auto& r : table.rows) {
    out << r.image_id << ',' << r.segment_id << ',' << r.cls << ',' << (r.inner_empty ? 1 : 0);
    for (double v : r.features) out << ',' << format_double(v);
    out << ',' << format_double(r.iou) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace pgn
