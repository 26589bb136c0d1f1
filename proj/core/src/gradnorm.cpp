#include "pgn/gradnorm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "pgn/errors.hpp"

namespace pgn {

std::string_view to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::OneHot: return "oh";
    case LabelKind::Uniform: return "uni";
    case LabelKind::Explicit: return "explicit";
  }
  return "?";
}

LabelKind parse_label_kind(std::string_view s) {
  if (s == "oh") return LabelKind::OneHot;
  if (s == "uni") return LabelKind::Uniform;
  if (s == "explicit") return LabelKind::Explicit;
  throw ValidationError("unknown label mode '" + std::string(s) + "' (expected oh, uni or explicit)");
}

std::string_view to_string(Layer layer) { return layer == Layer::Last ? "last" : "penult"; }

Layer parse_layer(std::string_view s) {
  if (s == "last") return Layer::Last;
  if (s == "penult") return Layer::Penultimate;
  throw ValidationError("unknown layer '" + std::string(s) + "' (expected last or penult)");
}

std::string format_p(double p) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), p);
  return std::string(buf, end);
}

std::string GradientScoreMap::name() const {
  return "pgn_" + std::string(to_string(mode)) + "_" + std::string(to_string(layer)) + "_p" + format_p(p);
}

void validate_labels(const Tensor& labels, std::size_t classes, std::size_t height, std::size_t width) {
  if (labels.shape() != Shape{classes, height, width}) {
    throw ValidationError("explicit labels must have shape " + to_string(Shape{classes, height, width}) +
                          ", got " + to_string(labels.shape()));
  }
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < plane; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double y = labels[k * plane + i];
      if (!(y >= 0.0)) throw ValidationError("explicit labels must be nonnegative");
      total += y;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ValidationError("explicit labels must sum to 1 at every pixel (pixel " + std::to_string(i) +
                            " sums to " + std::to_string(total) + ")");
    }
  }
}

Tensor label_coefficients(const ForwardTrace& trace, const LabelMode& mode, LabelFactor factor) {
  if (trace.probs.empty()) throw ContractError("trace has no probabilities");
  const std::size_t classes = trace.num_classes(), plane = trace.height() * trace.width();
  if (mode.kind == LabelKind::Explicit) validate_labels(mode.labels, classes, trace.height(), trace.width());

  Tensor g(trace.probs.shape());
  const double uniform = 1.0 / static_cast<double>(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < plane; ++i) {
      double y = 0.0;
      switch (mode.kind) {
        case LabelKind::OneHot: y = trace.pred.labels[i] == static_cast<std::int32_t>(k) ? 1.0 : 0.0; break;
        case LabelKind::Uniform: y = uniform; break;
        case LabelKind::Explicit: y = mode.labels[k * plane + i]; break;
      }
      const double pk = trace.probs[k * plane + i];
      g[k * plane + i] = factor == LabelFactor::Pgn ? pk * (1.0 - y) : pk - y;
    }
  }
  return g;
}

GradFactors last_layer_grad_factors(const ForwardTrace& trace, const LabelMode& mode, LabelFactor factor) {
  if (trace.psi.empty()) throw ContractError("trace has no last-layer input psi");
  return {label_coefficients(trace, mode, factor), trace.psi};
}

GradFactors penult_layer_grad_factors(const ForwardTrace& trace, const SegHeadParams& params,
                                      const LabelMode& mode, LabelFactor factor) {
  if (trace.pre_relu.empty() || trace.psi_prev.empty()) {
    throw ContractError("penultimate gradients need pre_relu and psi_prev in the trace");
  }
  const std::size_t hidden = params.hidden_channels(), classes = trace.num_classes();
  if (trace.pre_relu.dim(0) != hidden || params.num_classes() != classes) {
    throw DimensionError("trace does not match the head parameters");
  }
  const Tensor g = label_coefficients(trace, mode, factor);
  const Tensor scale = params.bn_scale();
  const std::size_t plane = trace.height() * trace.width();

  Tensor S(trace.pre_relu.shape());
  for (std::size_t f = 0; f < hidden; ++f) {
    double* dst = S.data().data() + f * plane;
    for (std::size_t d = 0; d < classes; ++d) {
      const double kw = params.k_last(d, f, 0, 0);
      const double* src = g.data().data() + d * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * kw;
    }
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = trace.pre_relu[f * plane + i] > 0.0 ? dst[i] * scale[f] : 0.0;
    }
  }
  return {std::move(S), unfold(trace.psi_prev, 3, 1)};
}

Tensor pnorm_factored(const Tensor& S, const Tensor& Psi, double p) {
  if (!(p > 0.0)) throw ValidationError("p must be > 0");
  if (S.rank() != 3 || Psi.rank() != 3 || S.dim(1) != Psi.dim(1) || S.dim(2) != Psi.dim(2)) {
    throw DimensionError("pnorm_factored: spatial dims of S " + to_string(S.shape()) + " and Psi " +
                         to_string(Psi.shape()) + " disagree");
  }
  Tensor out = channel_pnorm(S, p);
  const Tensor psi_norm = channel_pnorm(Psi, p);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= psi_norm[i];
  return out;
}

std::vector<double> materialize_gradient(const GradFactors& factors, std::size_t a, std::size_t b) {
  const std::size_t na = factors.S.dim(0), nb = factors.Psi.dim(0);
  std::vector<double> out(na * nb);
  for (std::size_t i = 0; i < na; ++i) {
    const double s = factors.S(i, a, b);
    for (std::size_t j = 0; j < nb; ++j) out[i * nb + j] = s * factors.Psi(j, a, b);
  }
  return out;
}

double flat_pnorm(const std::vector<double>& v, double p) {
  if (!(p > 0.0)) throw ValidationError("p must be > 0");
  double acc = 0.0;
  if (p == 2.0) {
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
  }
  if (p == 1.0) {
    for (double x : v) acc += std::abs(x);
    return acc;
  }
  for (double x : v) acc += std::pow(std::abs(x), p);
  return std::pow(acc, 1.0 / p);
}

Tensor materialized_pnorm(const GradFactors& factors, double p) {
  const std::size_t h = factors.S.dim(1), w = factors.S.dim(2);
  if (factors.Psi.dim(1) != h || factors.Psi.dim(2) != w) throw DimensionError("factor spatial dims disagree");
  Tensor out({h, w});
  for (std::size_t a = 0; a < h; ++a) {
    for (std::size_t b = 0; b < w; ++b) out(a, b) = flat_pnorm(materialize_gradient(factors, a, b), p);
  }
  return out;
}

GradientScoreMap pgn_heatmap(const ForwardTrace& trace, const SegHeadParams& params,
                             const LabelMode& mode, Layer layer, double p) {
  const GradFactors f = layer == Layer::Last ? last_layer_grad_factors(trace, mode)
                                             : penult_layer_grad_factors(trace, params, mode);
  return {pnorm_factored(f.S, f.Psi, p), mode.kind, layer, p};
}

BaselineMaps baseline_maps(const ForwardTrace& trace) {
  const std::size_t classes = trace.num_classes(), h = trace.height(), w = trace.width(), plane = h * w;
  BaselineMaps out{Tensor({h, w}), Tensor({h, w})};
  const double log_c = std::log(static_cast<double>(classes));
  for (std::size_t i = 0; i < plane; ++i) {
    double best = 0.0, ent = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double pk = trace.probs[k * plane + i];
      best = std::max(best, pk);
      if (pk > 0.0) ent -= pk * std::log(pk);
    }
    out.max_softmax[i] = 1.0 - best;
    out.entropy[i] = std::clamp(ent / log_c, 0.0, 1.0);
  }
  return out;
}

}  // namespace pgn
