#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pgn/tensor.hpp"
#include "pgn/toynet.hpp"

namespace pgn {

enum class LabelKind { OneHot, Uniform, Explicit };

/// Auxiliary label used in place of ground truth at inference time.
struct LabelMode {
  LabelKind kind = LabelKind::OneHot;
  Tensor labels;  // C x H x W, only for Explicit

  static LabelMode one_hot() { return {LabelKind::OneHot, {}}; }
  static LabelMode uniform() { return {LabelKind::Uniform, {}}; }
  /// Per-pixel distributions; validated when used.
  static LabelMode explicit_labels(Tensor labels) { return {LabelKind::Explicit, std::move(labels)}; }
};

std::string_view to_string(LabelKind kind);  // "oh", "uni", "explicit"
LabelKind parse_label_kind(std::string_view s);

enum class Layer { Last, Penultimate };
std::string_view to_string(Layer layer);  // "last", "penult"
Layer parse_layer(std::string_view s);

/// Which per-class coefficient multiplies d(logit_k)/d(weights).
///  - Pgn:   softmax_k * (1 - y_k). This is the PGN score: zero on the
///           predicted-class slice for one-hot labels, (C-1)/C * softmax_k for
///           uniform labels.
///  - Exact: softmax_k - y_k, the true derivative of the pixel cross entropy
///           -sum_k y_k log softmax_k for normalised y.
/// Both share the same S x Psi factorisation.
enum class LabelFactor { Pgn, Exact };

/// Per-pixel rank-1 factors of the loss gradient: for every pixel,
/// dL/dW[i][j] = S[i][a][b] * Psi[j][a][b], with W flattened in the layer's
/// filter-bank layout (out channel major).
struct GradFactors {
  Tensor S;    // A x H x W
  Tensor Psi;  // B x H x W
};

/// Throws ValidationError unless labels are C x H x W, nonnegative and sum to 1
/// (within 1e-6) at every pixel.
void validate_labels(const Tensor& labels, std::size_t classes, std::size_t height, std::size_t width);

/// g[k][a][b] = coefficient of d(logit_k)/dW for the chosen label and factor.
Tensor label_coefficients(const ForwardTrace& trace, const LabelMode& mode,
                          LabelFactor factor = LabelFactor::Pgn);

/// Last (1x1) layer: S = label coefficients (C x H x W), Psi = trace.psi.
GradFactors last_layer_grad_factors(const ForwardTrace& trace, const LabelMode& mode,
                                    LabelFactor factor = LabelFactor::Pgn);

/// Second-to-last (3x3) layer through ReLU and batch norm:
/// S[f] = (sum_d g[d] K_last[d][f]) * H(pre_relu[f]) * gamma[f]/sqrt(var[f]+eps),
/// Psi = unfold(psi_prev, 3, 1). H(0) = 0.
GradFactors penult_layer_grad_factors(const ForwardTrace& trace, const SegHeadParams& params,
                                      const LabelMode& mode, LabelFactor factor = LabelFactor::Pgn);

/// ||S (x) Psi||_p per pixel computed as ||S||_p * ||Psi||_p. Requires p > 0;
/// for p < 1 this is a seminorm.
Tensor pnorm_factored(const Tensor& S, const Tensor& Psi, double p);

/// The explicit gradient vector at one pixel, length A*B, index i*B + j.
std::vector<double> materialize_gradient(const GradFactors& factors, std::size_t a, std::size_t b);

/// Reference path: materialise the outer product at every pixel and take its
/// flat p-norm. Same result as pnorm_factored, much slower.
Tensor materialized_pnorm(const GradFactors& factors, double p);

/// Flat p-(semi)norm of a vector.
double flat_pnorm(const std::vector<double>& v, double p);

struct GradientScoreMap {
  Tensor scores;  // H x W, >= 0
  LabelKind mode = LabelKind::OneHot;
  Layer layer = Layer::Last;
  double p = 2.0;

  /// e.g. "pgn_uni_last_p0.5"
  std::string name() const;
};

GradientScoreMap pgn_heatmap(const ForwardTrace& trace, const SegHeadParams& params,
                             const LabelMode& mode, Layer layer, double p);

struct BaselineMaps {
  Tensor max_softmax;  // 1 - max_k softmax_k
  Tensor entropy;      // -sum_k p_k log p_k / log C, in [0, 1]
};

BaselineMaps baseline_maps(const ForwardTrace& trace);

/// Formats p the way heatmap names do: shortest round-trip form ("0.5", "2").
std::string format_p(double p);

}  // namespace pgn
