#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgn/gradnorm.hpp"
#include "pgn/toynet.hpp"

namespace pgn {

/// Resolves the auxiliary label of `mode` against a trace (one-hot of the
/// prediction, uniform 1/C, or the validated explicit tensor). C x H x W.
Tensor resolve_labels(const ForwardTrace& trace, const LabelMode& mode);

struct PixelLoss {
  double value = 0.0;
  bool clamped = false;  // a labelled class had probability below 1e-12
};

/// -sum_k y_k log softmax_k at pixel (a, b).
PixelLoss pixel_loss(const ForwardTrace& trace, const LabelMode& mode, std::size_t a, std::size_t b);

/// (f(x + eps) - f(x - eps)) / (2 eps)
double central_difference(const std::function<double(double)>& f, double x, double eps);

/// Scalar each finite-difference pass differentiates, per pixel.
///  - PixelLoss:      -sum_k y_k log softmax_k(w), labels frozen at the base point.
///  - LinearizedLoss: sum_k c_k logit_k(w) with c = label_coefficients(base, mode,
///                    LabelFactor::Pgn) frozen at the base point. Its gradient
///                    at the base point is exactly the PGN closed form.
enum class FdTarget { PixelLoss, LinearizedLoss };

std::string_view to_string(FdTarget target);
std::string_view to_string(LabelFactor factor);

/// Number of filter weights of a layer.
std::size_t layer_weight_count(const SegHeadParams& params, Layer layer);

/// Central differences of the target at every pixel w.r.t. every filter weight
/// of `layer`, re-running the forward pass per perturbation. Returns a
/// weights x H x W tensor, weights in filter-bank (row-major) order.
Tensor fd_gradient_all_pixels(const SegHeadParams& params, const Tensor& psi_prev, const LabelMode& mode,
                              Layer layer, double epsilon, FdTarget target = FdTarget::PixelLoss);

/// Same, for one pixel.
std::vector<double> fd_gradient(const SegHeadParams& params, const Tensor& psi_prev, const LabelMode& mode,
                                Layer layer, std::size_t a, std::size_t b, double epsilon,
                                FdTarget target = FdTarget::PixelLoss);

/// A closed-form factor checked against a finite-difference target.
struct OracleRoute {
  LabelFactor closed_form = LabelFactor::Pgn;
  FdTarget target = FdTarget::LinearizedLoss;
};

struct CheckOptions {
  std::vector<LabelMode> modes{LabelMode::one_hot(), LabelMode::uniform()};
  std::vector<Layer> layers{Layer::Last, Layer::Penultimate};
  std::vector<double> ps{0.3, 1.0, 2.0};
  std::vector<OracleRoute> routes{{LabelFactor::Pgn, FdTarget::LinearizedLoss},
                                  {LabelFactor::Exact, FdTarget::PixelLoss}};
  double tolerance = 1e-4;
  double epsilon = 1e-3;
  /// Upper bound on H * W * weight count for a single check.
  std::size_t size_guard = 1'000'000;
};

struct OracleConfigResult {
  OracleRoute route;
  LabelKind mode = LabelKind::OneHot;
  Layer layer = Layer::Last;
  double grad_max_rel_err = 0.0;
  double grad_max_abs_err = 0.0;
  double score_max_rel_err = 0.0;  // over all requested p
  std::size_t pixels_compared = 0;
  std::size_t pixels_excluded = 0;  // near a ReLU kink
};

struct OracleReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_a = 0, worst_b = 0;
  std::size_t worst_weight_index = 0;
  double tolerance = 0.0;
  bool passed = false;
  /// Largest gap between the PGN closed form and the plain pixel loss, for
  /// information; PGN scores are not gradients of that loss.
  double pgn_vs_loss_max_rel_err = 0.0;
  std::vector<OracleConfigResult> configs;

  nlohmann::ordered_json to_json() const;
};

/// Compares closed-form factored scores and materialised gradients with
/// finite differences for every (route, mode, layer) and p. Relative error
/// at a pixel is ||closed - fd||_inf / max(||fd||_inf, 1e-8); for scores it
/// is |closed - fd| / max(fd, 1e-12). Penultimate pixels with any
/// |pre_relu| below eps * max(10, 2 * max|psi_prev| * max|bn scale|) are
/// skipped. Throws SizeGuardError when H * W * weights exceeds the guard.
OracleReport check_closed_form(const SegHeadParams& params, const Tensor& psi_prev,
                               const CheckOptions& options = {});

}  // namespace pgn
