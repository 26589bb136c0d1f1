#include <gtest/gtest.h>

#include <cmath>

#include "pgn/errors.hpp"
#include "pgn/gradnorm.hpp"
#include "pgn/oracle.hpp"
#include "pgn/toynet.hpp"

using namespace pgn;

namespace {

const HeadDims kToy{4, 6, 5, 8, 8};

ForwardTrace probs_trace(Tensor probs) {
  ForwardTrace t;
  t.pred = argmax_channels(probs);
  t.probs = std::move(probs);
  return t;
}

// Largest |fd - closed| over all pixels and last-layer weights.
double last_layer_discrepancy(const SyntheticInstance& inst, const LabelMode& mode, double eps) {
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  const GradFactors f = last_layer_grad_factors(t, mode, LabelFactor::Exact);
  const Tensor fd = fd_gradient_all_pixels(inst.params, inst.psi_prev, mode, Layer::Last, eps, FdTarget::PixelLoss);
  const std::size_t plane = t.height() * t.width();
  double worst = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const auto g = materialize_gradient(f, i / t.width(), i % t.width());
    for (std::size_t k = 0; k < g.size(); ++k) worst = std::max(worst, std::abs(g[k] - fd[k * plane + i]));
  }
  return worst;
}

}  // namespace

TEST(PixelLoss, OneHotCertain) {
  const ForwardTrace t = probs_trace(Tensor({2, 1, 1}, {1.0, 0.0}));
  const PixelLoss l = pixel_loss(t, LabelMode::one_hot(), 0, 0);
  EXPECT_EQ(l.value, 0.0);
  EXPECT_FALSE(l.clamped);
}

TEST(PixelLoss, UniformHalf) {
  const ForwardTrace t = probs_trace(Tensor({2, 1, 1}, {0.5, 0.5}));
  EXPECT_NEAR(pixel_loss(t, LabelMode::uniform(), 0, 0).value, std::log(2.0), 1e-15);
}

TEST(PixelLoss, ExplicitEqualToProbsIsEntropy) {
  const Tensor p({3, 1, 1}, {0.5, 0.3, 0.2});
  const ForwardTrace t = probs_trace(p);
  const double h = -(0.5 * std::log(0.5) + 0.3 * std::log(0.3) + 0.2 * std::log(0.2));
  EXPECT_NEAR(pixel_loss(t, LabelMode::explicit_labels(p), 0, 0).value, h, 1e-15);
}

TEST(PixelLoss, ZeroProbabilityIsClamped) {
  const ForwardTrace t = probs_trace(Tensor({2, 1, 1}, {1.0, 0.0}));
  const PixelLoss l = pixel_loss(t, LabelMode::uniform(), 0, 0);
  EXPECT_TRUE(l.clamped);
  EXPECT_NEAR(l.value, -0.5 * std::log(1e-12), 1e-9);
}

TEST(CentralDifference, ExactForQuadratics) {
  EXPECT_NEAR(central_difference([](double w) { return w * w; }, 3.0, 1e-3), 6.0, 1e-9);
}

TEST(FdGradient, Seed42LastLayerOneHot) {
  const auto inst = gen_synthetic(42, kToy);
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  for (const auto& [factor, target] : {std::pair{LabelFactor::Pgn, FdTarget::LinearizedLoss},
                                       std::pair{LabelFactor::Exact, FdTarget::PixelLoss}}) {
    const GradFactors f = last_layer_grad_factors(t, LabelMode::one_hot(), factor);
    for (std::size_t a = 0; a < 8; a += 3) {
      for (std::size_t b = 0; b < 8; b += 3) {
        const auto fd = fd_gradient(inst.params, inst.psi_prev, LabelMode::one_hot(), Layer::Last, a, b, 1e-3, target);
        const auto g = materialize_gradient(f, a, b);
        double scale = 0.0, diff = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
          scale = std::max(scale, std::abs(fd[k]));
          diff = std::max(diff, std::abs(fd[k] - g[k]));
        }
        EXPECT_LE(diff / std::max(scale, 1e-8), 1e-4);
      }
    }
  }
}

TEST(FdGradient, DeadPixelPenultimateIsFlat) {
  auto inst = gen_synthetic(42, kToy);
  inst.params.bn_beta = Tensor::filled({6}, -50.0);
  const auto fd = fd_gradient(inst.params, inst.psi_prev, LabelMode::uniform(), Layer::Penultimate, 3, 4, 1e-3);
  for (double v : fd) EXPECT_LT(std::abs(v), 1e-8);
}

TEST(FdGradient, AllPixelsAgreesWithSinglePixel) {
  const auto inst = gen_synthetic(2, kToy);
  const Tensor all = fd_gradient_all_pixels(inst.params, inst.psi_prev, LabelMode::uniform(), Layer::Penultimate, 1e-3);
  const auto one = fd_gradient(inst.params, inst.psi_prev, LabelMode::uniform(), Layer::Penultimate, 5, 2, 1e-3);
  ASSERT_EQ(all.dim(0), one.size());
  for (std::size_t k = 0; k < one.size(); ++k) EXPECT_EQ(all[k * 64 + 5 * 8 + 2], one[k]);
}

TEST(CheckClosedForm, DefaultPasses) {
  const auto inst = gen_synthetic(42, kToy);
  const OracleReport r = check_closed_form(inst.params, inst.psi_prev);
  EXPECT_TRUE(r.passed);
  EXPECT_LE(r.max_rel_err, 1e-4);
  EXPECT_GE(r.max_rel_err, 0.0);
  EXPECT_EQ(r.configs.size(), 8u);
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("worst_pixel"));
  EXPECT_TRUE(j.contains("worst_weight_index"));
}

TEST(CheckClosedForm, ZeroToleranceFails) {
  const auto inst = gen_synthetic(42, kToy);
  CheckOptions opt;
  opt.tolerance = 0.0;
  const OracleReport r = check_closed_form(inst.params, inst.psi_prev, opt);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_err, 0.0);
}

TEST(CheckClosedForm, UnnormalisedExplicitLabelRejected) {
  const auto inst = gen_synthetic(42, kToy);
  CheckOptions opt;
  opt.modes = {LabelMode::explicit_labels(Tensor::filled({5, 8, 8}, 0.3))};
  EXPECT_THROW(check_closed_form(inst.params, inst.psi_prev, opt), ValidationError);
}

TEST(CheckClosedForm, SizeGuard) {
  const auto inst = gen_synthetic(42, kToy);
  CheckOptions opt;
  opt.size_guard = 64 * 30 - 1;
  EXPECT_THROW(check_closed_form(inst.params, inst.psi_prev, opt), SizeGuardError);
}

TEST(CheckClosedForm, ExplicitLabelsPass) {
  const auto inst = gen_synthetic(4, kToy);
  Tensor y = Tensor::filled({5, 8, 8}, 0.1);
  for (std::size_t i = 0; i < 64; ++i) y[(i % 5) * 64 + i] = 0.6;
  CheckOptions opt;
  opt.modes = {LabelMode::explicit_labels(y)};
  EXPECT_TRUE(check_closed_form(inst.params, inst.psi_prev, opt).passed);
}

// The PGN coefficient softmax_k (1 - y_k) is not the derivative of the
// cross entropy (softmax_k - y_k), so comparing it with differences of the
// plain pixel loss does not pass.
TEST(CheckClosedForm, PgnFactorIsNotThePixelLossGradient) {
  const auto inst = gen_synthetic(42, kToy);
  CheckOptions opt;
  opt.routes = {{LabelFactor::Pgn, FdTarget::PixelLoss}};
  const OracleReport r = check_closed_form(inst.params, inst.psi_prev, opt);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.pgn_vs_loss_max_rel_err, 0.1);
}

TEST(FdInvariants, SecondOrderConvergence) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto inst = gen_synthetic(seed, kToy);
    for (const auto& mode : {LabelMode::one_hot(), LabelMode::uniform()}) {
      const double coarse = last_layer_discrepancy(inst, mode, 2e-2);
      const double fine = last_layer_discrepancy(inst, mode, 1e-2);
      const double ratio = coarse / fine;
      EXPECT_GE(ratio, 2.5) << seed;
      EXPECT_LE(ratio, 6.0) << seed;
    }
  }
}

// One central difference of the image-mean loss equals the mean of the
// per-pixel closed-form gradients.
TEST(FdInvariants, MeanLossConsistency) {
  const auto inst = gen_synthetic(42, kToy);
  const ForwardTrace base = forward(inst.params, inst.psi_prev);
  for (const auto& mode : {LabelMode::one_hot(), LabelMode::uniform()}) {
    const LabelMode frozen = LabelMode::explicit_labels(resolve_labels(base, mode));
    const GradFactors f = last_layer_grad_factors(base, mode, LabelFactor::Exact);
    const std::size_t weights = inst.params.k_last.size();
    std::vector<double> mean_closed(weights, 0.0);
    for (std::size_t i = 0; i < 64; ++i) {
      const auto g = materialize_gradient(f, i / 8, i % 8);
      for (std::size_t k = 0; k < weights; ++k) mean_closed[k] += g[k] / 64.0;
    }
    double scale = 0.0, diff = 0.0;
    for (std::size_t k = 0; k < weights; ++k) {
      const double fd = central_difference(
          [&](double v) {
            SegHeadParams p = inst.params;
            p.k_last[k] = v;
            const ForwardTrace t = forward(p, inst.psi_prev);
            double mean = 0.0;
            for (std::size_t i = 0; i < 64; ++i) mean += pixel_loss(t, frozen, i / 8, i % 8).value / 64.0;
            return mean;
          },
          inst.params.k_last[k], 1e-3);
      scale = std::max(scale, std::abs(fd));
      diff = std::max(diff, std::abs(fd - mean_closed[k]));
    }
    EXPECT_LE(diff / scale, 1e-4);
  }
}
