#include "pgn/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include "pgn/errors.hpp"

namespace pgn {

namespace {

constexpr double kProbFloor = 1e-12;

Tensor& layer_weights(SegHeadParams& params, Layer layer) {
  return layer == Layer::Last ? params.k_last : params.k_penult;
}

// Per-pixel objective values of one forward pass.
std::vector<double> objective(const ForwardTrace& t, const Tensor& frozen, FdTarget target) {
  const std::size_t classes = t.num_classes(), plane = t.height() * t.width();
  std::vector<double> out(plane, 0.0);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double c = frozen[k * plane + i];
      if (target == FdTarget::PixelLoss) {
        if (c != 0.0) out[i] -= c * std::log(std::max(t.probs[k * plane + i], kProbFloor));
      } else {
        out[i] += c * t.logits[k * plane + i];
      }
    }
  }
  return out;
}

struct Comparison {
  double rel = 0.0, abs = 0.0;
  std::size_t a = 0, b = 0, weight = 0;
};

}  // namespace

std::string_view to_string(FdTarget target) {
  return target == FdTarget::PixelLoss ? "pixel_loss" : "linearized_loss";
}

std::string_view to_string(LabelFactor factor) { return factor == LabelFactor::Pgn ? "pgn" : "exact"; }

Tensor resolve_labels(const ForwardTrace& trace, const LabelMode& mode) {
  const std::size_t classes = trace.num_classes(), h = trace.height(), w = trace.width(), plane = h * w;
  switch (mode.kind) {
    case LabelKind::Explicit:
      validate_labels(mode.labels, classes, h, w);
      return mode.labels;
    case LabelKind::Uniform:
      return Tensor::filled({classes, h, w}, 1.0 / static_cast<double>(classes));
    case LabelKind::OneHot: {
      Tensor y({classes, h, w});
      for (std::size_t i = 0; i < plane; ++i) y[static_cast<std::size_t>(trace.pred.labels[i]) * plane + i] = 1.0;
      return y;
    }
  }
  throw ValidationError("unknown label mode");
}

PixelLoss pixel_loss(const ForwardTrace& trace, const LabelMode& mode, std::size_t a, std::size_t b) {
  if (a >= trace.height() || b >= trace.width()) throw DimensionError("pixel index out of range");
  const Tensor y = resolve_labels(trace, mode);
  PixelLoss out;
  for (std::size_t k = 0; k < trace.num_classes(); ++k) {
    const double yk = y(k, a, b);
    if (yk == 0.0) continue;
    double pk = trace.probs(k, a, b);
    if (pk < kProbFloor) {
      pk = kProbFloor;
      out.clamped = true;
    }
    out.value -= yk * std::log(pk);
  }
  return out;
}

double central_difference(const std::function<double(double)>& f, double x, double eps) {
  if (!(eps > 0.0)) throw ValidationError("epsilon must be > 0");
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

std::size_t layer_weight_count(const SegHeadParams& params, Layer layer) {
  return layer == Layer::Last ? params.k_last.size() : params.k_penult.size();
}

Tensor fd_gradient_all_pixels(const SegHeadParams& params, const Tensor& psi_prev, const LabelMode& mode,
                              Layer layer, double epsilon, FdTarget target) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  const ForwardTrace base = forward(params, psi_prev);
  const Tensor frozen = target == FdTarget::PixelLoss ? resolve_labels(base, mode)
                                                      : label_coefficients(base, mode, LabelFactor::Pgn);
  const std::size_t weights = layer_weight_count(params, layer);
  const std::size_t h = base.height(), w = base.width(), plane = h * w;

  Tensor grad({weights, h, w});
  SegHeadParams perturbed = params;
  Tensor& kernel = layer_weights(perturbed, layer);
  for (std::size_t idx = 0; idx < weights; ++idx) {
    const double original = kernel[idx];
    kernel[idx] = original + epsilon;
    const auto up = objective(forward(perturbed, psi_prev), frozen, target);
    kernel[idx] = original - epsilon;
    const auto down = objective(forward(perturbed, psi_prev), frozen, target);
    kernel[idx] = original;
    for (std::size_t i = 0; i < plane; ++i) grad[idx * plane + i] = (up[i] - down[i]) / (2.0 * epsilon);
  }
  return grad;
}

std::vector<double> fd_gradient(const SegHeadParams& params, const Tensor& psi_prev, const LabelMode& mode,
                                Layer layer, std::size_t a, std::size_t b, double epsilon, FdTarget target) {
  const Tensor all = fd_gradient_all_pixels(params, psi_prev, mode, layer, epsilon, target);
  if (a >= all.dim(1) || b >= all.dim(2)) throw DimensionError("pixel index out of range");
  std::vector<double> out(all.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = all(i, a, b);
  return out;
}

nlohmann::ordered_json OracleReport::to_json() const {
  nlohmann::ordered_json j;
  j["passed"] = passed;
  j["tolerance"] = tolerance;
  j["max_rel_err"] = max_rel_err;
  j["max_abs_err"] = max_abs_err;
  j["worst_pixel"] = {worst_a, worst_b};
  j["worst_weight_index"] = worst_weight_index;
  j["pgn_vs_loss_max_rel_err"] = pgn_vs_loss_max_rel_err;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : configs) {
    nlohmann::ordered_json e;
    e["closed_form"] = to_string(c.route.closed_form);
    e["fd_target"] = to_string(c.route.target);
    e["mode"] = to_string(c.mode);
    e["layer"] = to_string(c.layer);
    e["grad_max_rel_err"] = c.grad_max_rel_err;
    e["grad_max_abs_err"] = c.grad_max_abs_err;
    e["score_max_rel_err"] = c.score_max_rel_err;
    e["pixels_compared"] = c.pixels_compared;
    e["pixels_excluded"] = c.pixels_excluded;
    arr.push_back(e);
  }
  j["configs"] = arr;
  return j;
}

OracleReport check_closed_form(const SegHeadParams& params, const Tensor& psi_prev, const CheckOptions& options) {
  if (!(options.tolerance >= 0.0)) throw ValidationError("tolerance must be >= 0");
  for (double p : options.ps) {
    if (!(p > 0.0)) throw ValidationError("p must be > 0");
  }
  params.validate();
  const std::size_t h = psi_prev.dim(1), w = psi_prev.dim(2), plane = h * w;
  for (Layer layer : options.layers) {
    const std::size_t work = plane * layer_weight_count(params, layer);
    if (work > options.size_guard) {
      throw SizeGuardError("oracle instance too large: H*W*weights = " + std::to_string(work) + " exceeds " +
                           std::to_string(options.size_guard));
    }
  }

  const ForwardTrace base = forward(params, psi_prev);
  const Tensor scale = params.bn_scale();
  double psi_max = 0.0, scale_max = 0.0;
  for (double v : psi_prev.data()) psi_max = std::max(psi_max, std::abs(v));
  for (double v : scale.data()) scale_max = std::max(scale_max, std::abs(v));
  // One perturbation moves a pre-activation by at most eps * |psi| * |scale|.
  const double kink = options.epsilon * std::max(10.0, 2.0 * psi_max * scale_max);

  std::vector<bool> near_kink(plane, false);
  for (std::size_t f = 0; f < base.pre_relu.dim(0); ++f) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (std::abs(base.pre_relu[f * plane + i]) < kink) near_kink[i] = true;
    }
  }

  OracleReport report;
  report.tolerance = options.tolerance;

  auto compare = [&](const GradFactors& closed, const Tensor& fd, Layer layer, Comparison& worst,
                     double* score_err, std::size_t* compared, std::size_t* excluded) {
    const std::size_t weights = fd.dim(0);
    std::vector<Tensor> cf_scores;
    if (score_err) {
      for (double p : options.ps) cf_scores.push_back(pnorm_factored(closed.S, closed.Psi, p));
    }
    for (std::size_t a = 0; a < h; ++a) {
      for (std::size_t b = 0; b < w; ++b) {
        const std::size_t i = a * w + b;
        if (layer == Layer::Penultimate && near_kink[i]) {
          if (excluded) ++*excluded;
          continue;
        }
        if (compared) ++*compared;
        const auto g = materialize_gradient(closed, a, b);
        std::vector<double> ref(weights);
        double ref_inf = 0.0, diff_inf = 0.0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < weights; ++k) {
          ref[k] = fd[k * plane + i];
          ref_inf = std::max(ref_inf, std::abs(ref[k]));
          const double d = std::abs(g[k] - ref[k]);
          if (d > diff_inf) {
            diff_inf = d;
            arg = k;
          }
        }
        const double rel = diff_inf / std::max(ref_inf, 1e-8);
        if (rel > worst.rel || (rel == worst.rel && diff_inf > worst.abs)) {
          worst = {rel, std::max(worst.abs, diff_inf), a, b, arg};
        }
        worst.abs = std::max(worst.abs, diff_inf);
        if (score_err) {
          for (std::size_t pi = 0; pi < options.ps.size(); ++pi) {
            const double s_fd = flat_pnorm(ref, options.ps[pi]);
            const double s_cf = cf_scores[pi](a, b);
            *score_err = std::max(*score_err, std::abs(s_cf - s_fd) / std::max(s_fd, 1e-12));
          }
        }
      }
    }
  };

  Comparison overall;
  for (const LabelMode& mode : options.modes) {
    for (Layer layer : options.layers) {
      std::map<FdTarget, Tensor> fd_cache;
      std::map<LabelFactor, GradFactors> cf_cache;
      auto fd_for = [&](FdTarget t) -> const Tensor& {
        auto it = fd_cache.find(t);
        if (it == fd_cache.end()) {
          it = fd_cache.emplace(t, fd_gradient_all_pixels(params, psi_prev, mode, layer, options.epsilon, t)).first;
        }
        return it->second;
      };
      auto cf_for = [&](LabelFactor f) -> const GradFactors& {
        auto it = cf_cache.find(f);
        if (it == cf_cache.end()) {
          GradFactors g = layer == Layer::Last ? last_layer_grad_factors(base, mode, f)
                                               : penult_layer_grad_factors(base, params, mode, f);
          it = cf_cache.emplace(f, std::move(g)).first;
        }
        return it->second;
      };

      for (const OracleRoute& route : options.routes) {
        OracleConfigResult res{route, mode.kind, layer};
        Comparison worst;
        compare(cf_for(route.closed_form), fd_for(route.target), layer, worst, &res.score_max_rel_err,
                &res.pixels_compared, &res.pixels_excluded);
        res.grad_max_rel_err = worst.rel;
        res.grad_max_abs_err = worst.abs;
        report.configs.push_back(res);
        const double err = std::max(res.grad_max_rel_err, res.score_max_rel_err);
        if (err > overall.rel) overall = {err, std::max(overall.abs, worst.abs), worst.a, worst.b, worst.weight};
        overall.abs = std::max(overall.abs, worst.abs);
      }

      if (fd_cache.count(FdTarget::PixelLoss)) {
        Comparison gap;
        compare(cf_for(LabelFactor::Pgn), fd_cache.at(FdTarget::PixelLoss), layer, gap, nullptr, nullptr, nullptr);
        report.pgn_vs_loss_max_rel_err = std::max(report.pgn_vs_loss_max_rel_err, gap.rel);
      }
    }
  }

  report.max_rel_err = overall.rel;
  report.max_abs_err = overall.abs;
  report.worst_a = overall.a;
  report.worst_b = overall.b;
  report.worst_weight_index = overall.weight;
  report.passed = report.max_rel_err <= options.tolerance && !report.configs.empty();
  return report;
}

}  // namespace pgn
