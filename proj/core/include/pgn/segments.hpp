#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pgn/gradnorm.hpp"
#include "pgn/tensor.hpp"
#include "pgn/toynet.hpp"

namespace pgn {

/// Connected components of a predicted segmentation.
struct SegmentMap {
  LabelMap labels;                   // component id per pixel, 1..count
  std::vector<std::int32_t> class_of;  // class_of[id - 1]
  std::size_t count = 0;
};

/// 8-connected components of equal value. Ids are assigned in raster-scan
/// order of each component's first pixel.
SegmentMap connected_components(const LabelMap& pred);

/// 8-connected components of the nonzero pixels of a mask. Background is 0,
/// components are 1..n in raster-scan order. Returns n.
std::size_t mask_components(const LabelMap& mask, LabelMap& out);

/// 1 for inner pixels (all 8 neighbours inside the image and in the same
/// component), 0 for boundary pixels.
LabelMap inner_boundary_split(const SegmentMap& seg);

struct DispersionMaps {
  Tensor entropy;  // -sum f log f / log C, in [0, 1]
  Tensor margin;   // 1 - p_max + p_second, in [0, 1]
};

DispersionMaps dispersion_maps(const Tensor& probs);

struct IouOptions {
  std::size_t dilation = 32;               // bounding-box margin for the localised union
  std::int32_t ignore_label = kIgnoreLabel;
};

/// IoU of each component with the ground truth of its class. The union is
/// the component plus the class's ground-truth pixels inside the component's
/// bounding box dilated by `dilation`. Ignore-label pixels count in neither
/// intersection nor union. NaN when the component lies entirely on ignored
/// pixels. Indexed by id - 1.
std::vector<double> segment_iou(const SegmentMap& seg, const LabelMap& gt, const IouOptions& options = {});

struct SegmentRow {
  std::size_t image_id = 0;
  std::size_t segment_id = 0;
  std::int32_t cls = 0;
  bool inner_empty = false;
  std::vector<double> features;
  double iou = 0.0;
};

/// One row per predicted segment; columns follow `feature_names`.
struct SegmentTable {
  std::vector<std::string> feature_names;
  std::vector<SegmentRow> rows;

  /// Appends rows of another table with the same columns.
  void append(const SegmentTable& other);
};

/// Number of feature columns: 5 + C + 10 + 10 * heatmaps.
std::size_t feature_count(std::size_t num_classes, std::size_t num_heatmaps);

/// Feature names in column order:
///   S S_in S_bd S_rel S_in_rel,
///   P_0 .. P_{C-1},
///   E_mean E_mean_in E_mean_bd E_mean_rel E_mean_in_rel (same for M),
///   per heatmap <name>_mean, _mean_in, _mean_bd, _mean_rel, _mean_in_rel,
///   _var, _var_in, _var_bd, _var_rel, _var_in_rel.
/// S_rel = S / S_bd, S_in_rel = S_in / S_bd, x_rel = x * S_rel and
/// x_in_rel = x_in * S_in_rel. Variances are population variances. Inner
/// features are 0 when a segment has no inner pixels (inner_empty is set).
SegmentTable build_feature_table(const ForwardTrace& trace, const SegmentMap& seg,
                                 const std::vector<GradientScoreMap>& heatmaps, const LabelMap& gt,
                                 std::size_t image_id = 0, const IouOptions& options = {});

/// CSV header: image_id,segment_id,class,inner_empty,<features...>,iou
void write_table_csv(const SegmentTable& table, const std::filesystem::path& path);

/// Shortest round-trip decimal form; "nan" for NaN.
std::string format_double(double v);

}  // namespace pgn
