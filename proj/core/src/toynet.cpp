#include "pgn/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pgn/errors.hpp"
#include "pgn/rng.hpp"

namespace pgn {

namespace {

void require_vector(const Tensor& t, std::size_t n, const char* name) {
  if (t.rank() != 1 || t.dim(0) != n) {
    throw DimensionError(std::string(name) + " must have shape (" + std::to_string(n) + ",), got " +
                         to_string(t.shape()));
  }
}

Tensor draw(SplitMix64& rng, Shape shape, double scale, double offset = 0.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = offset + scale * rng.uniform_pm1();
  t.set_dtype(DType::F32);
  return t;
}

}  // namespace

void HeadDims::validate() const {
  if (in_channels == 0 || hidden_channels == 0 || height == 0 || width == 0) {
    throw ValidationError("all head dimensions must be >= 1");
  }
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
}

void SegHeadParams::validate() const {
  if (k_penult.rank() != 4 || k_penult.dim(2) != 3 || k_penult.dim(3) != 3) {
    throw DimensionError("k_penult must be hidden x in x 3 x 3, got " + to_string(k_penult.shape()));
  }
  const std::size_t hidden = k_penult.dim(0);
  require_vector(b_penult, hidden, "b_penult");
  require_vector(bn_gamma, hidden, "bn_gamma");
  require_vector(bn_beta, hidden, "bn_beta");
  require_vector(bn_mean, hidden, "bn_mean");
  require_vector(bn_var, hidden, "bn_var");
  if (k_last.rank() != 4 || k_last.dim(1) != hidden || k_last.dim(2) != 1 || k_last.dim(3) != 1) {
    throw DimensionError("k_last must be classes x " + std::to_string(hidden) + " x 1 x 1, got " +
                         to_string(k_last.shape()));
  }
  if (k_last.dim(0) < 2) throw ValidationError("num_classes must be >= 2");
  require_vector(b_last, k_last.dim(0), "b_last");
  if (!(bn_eps > 0.0)) throw ValidationError("bn_eps must be > 0");
  for (double v : bn_var.data()) {
    if (!(v > 0.0)) throw ValidationError("bn_var must be elementwise > 0");
  }
}

Tensor SegHeadParams::bn_scale() const {
  Tensor out({bn_gamma.dim(0)});
  for (std::size_t f = 0; f < out.size(); ++f) out[f] = bn_gamma[f] / std::sqrt(bn_var[f] + bn_eps);
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 3) throw DimensionError("softmax expects C x H x W, got " + to_string(logits.shape()));
  if (!all_finite(logits)) throw NumericError("softmax: non-finite logits");
  const std::size_t classes = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  Tensor out(logits.shape());
  auto src = logits.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < plane; ++i) {
    double m = src[i];
    for (std::size_t k = 1; k < classes; ++k) m = std::max(m, src[k * plane + i]);
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double e = std::exp(src[k * plane + i] - m);
      dst[k * plane + i] = e;
      z += e;
    }
    for (std::size_t k = 0; k < classes; ++k) dst[k * plane + i] /= z;
  }
  return out;
}

LabelMap argmax_channels(const Tensor& probs) {
  if (probs.rank() != 3) throw DimensionError("argmax expects C x H x W, got " + to_string(probs.shape()));
  const std::size_t classes = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
  LabelMap out(probs.dim(1), probs.dim(2));
  auto src = probs.data();
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
      if (src[k * plane + i] > src[best * plane + i]) best = k;
    }
    out.labels[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

ForwardTrace forward(const SegHeadParams& params, const Tensor& psi_prev) {
  params.validate();
  if (psi_prev.rank() != 3 || psi_prev.dim(0) != params.in_channels()) {
    throw DimensionError("psi_prev must be " + std::to_string(params.in_channels()) + " x H x W, got " +
                         to_string(psi_prev.shape()));
  }
  ForwardTrace t;
  t.psi_prev = psi_prev;
  t.pre_bn = conv2d(psi_prev, params.k_penult, params.b_penult, 1);

  const std::size_t hidden = params.hidden_channels();
  const std::size_t plane = psi_prev.dim(1) * psi_prev.dim(2);
  t.pre_relu = t.pre_bn;
  t.psi = Tensor(t.pre_bn.shape());
  const Tensor scale = params.bn_scale();
  for (std::size_t f = 0; f < hidden; ++f) {
    for (std::size_t i = 0; i < plane; ++i) {
      double& v = t.pre_relu[f * plane + i];
      v = (v - params.bn_mean[f]) * scale[f] + params.bn_beta[f];
      t.psi[f * plane + i] = v > 0.0 ? v : 0.0;
    }
  }
  t.logits = conv2d(t.psi, params.k_last, params.b_last, 0);
  t.probs = softmax(t.logits);
  t.pred = argmax_channels(t.probs);
  return t;
}

SyntheticInstance gen_synthetic(std::uint64_t seed, const HeadDims& dims, double bn_eps) {
  dims.validate();
  if (!(bn_eps > 0.0)) throw ValidationError("bn_eps must be > 0");
  SplitMix64 rng(seed);
  const std::size_t in = dims.in_channels, hidden = dims.hidden_channels, classes = dims.num_classes;

  SyntheticInstance out;
  auto& p = out.params;
  p.k_penult = draw(rng, {hidden, in, 3, 3}, std::sqrt(3.0 / static_cast<double>(in * 9)));
  p.b_penult = draw(rng, {hidden}, 0.1);
  p.bn_gamma = draw(rng, {hidden}, 0.5, 1.0);
  p.bn_beta = draw(rng, {hidden}, 0.2);
  p.bn_mean = draw(rng, {hidden}, 0.1);
  p.bn_var = draw(rng, {hidden}, 0.45, 0.55);
  p.bn_eps = bn_eps;
  p.k_last = draw(rng, {classes, hidden, 1, 1}, 2.0 * std::sqrt(3.0 / static_cast<double>(hidden)));
  p.b_last = draw(rng, {classes}, 0.1);
  out.psi_prev = draw(rng, {in, dims.height, dims.width}, 1.0);
  return out;
}

SyntheticScene gen_scene(std::uint64_t seed, const HeadDims& dims, const SceneOptions& options,
                         double bn_eps) {
  SyntheticInstance base = gen_synthetic(seed, dims, bn_eps);
  SplitMix64 rng(mix64(seed ^ 0x5CE4E5CE4E5CE4E5ULL));

  const std::size_t in = dims.in_channels, h = dims.height, w = dims.width;
  const std::size_t cells = std::max<std::size_t>(1, options.grid_cells);
  Tensor coarse = draw(rng, {in, cells + 1, cells + 1}, 1.0);

  Tensor clean({in, h, w});
  for (std::size_t c = 0; c < in; ++c) {
    for (std::size_t a = 0; a < h; ++a) {
      const double y = h > 1 ? static_cast<double>(a) * static_cast<double>(cells) / static_cast<double>(h - 1) : 0.0;
      const std::size_t y0 = std::min(static_cast<std::size_t>(y), cells - 1);
      const double ty = y - static_cast<double>(y0);
      for (std::size_t b = 0; b < w; ++b) {
        const double x = w > 1 ? static_cast<double>(b) * static_cast<double>(cells) / static_cast<double>(w - 1) : 0.0;
        const std::size_t x0 = std::min(static_cast<std::size_t>(x), cells - 1);
        const double tx = x - static_cast<double>(x0);
        clean(c, a, b) = (1 - ty) * ((1 - tx) * coarse(c, y0, x0) + tx * coarse(c, y0, x0 + 1)) +
                         ty * ((1 - tx) * coarse(c, y0 + 1, x0) + tx * coarse(c, y0 + 1, x0 + 1));
      }
    }
  }
  clean.set_dtype(DType::F32);

  SyntheticScene scene;
  scene.params = std::move(base.params);
  scene.gt = forward(scene.params, clean).pred;
  scene.ood_mask = LabelMap(h, w, 0);

  scene.psi_prev = clean;
  for (auto& v : scene.psi_prev.data()) v += options.noise * rng.uniform_pm1();

  if (options.ood) {
    const auto side_h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(options.ood_side * static_cast<double>(h))));
    const auto side_w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(options.ood_side * static_cast<double>(w))));
    const std::size_t a0 = (h - std::min(h, side_h)) / 2, b0 = (w - std::min(w, side_w)) / 2;
    for (std::size_t a = a0; a < std::min(h, a0 + side_h); ++a) {
      for (std::size_t b = b0; b < std::min(w, b0 + side_w); ++b) {
        scene.ood_mask(a, b) = 1;
        scene.gt(a, b) = kIgnoreLabel;
        for (std::size_t c = 0; c < in; ++c) scene.psi_prev(c, a, b) = options.ood_scale * rng.uniform_pm1();
      }
    }
  }
  scene.psi_prev.set_dtype(DType::F32);
  return scene;
}

}  // namespace pgn
