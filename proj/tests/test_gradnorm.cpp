#include <gtest/gtest.h>

#include <cmath>

#include "pgn/errors.hpp"
#include "pgn/gradnorm.hpp"
#include "pgn/oracle.hpp"
#include "pgn/rng.hpp"
#include "pgn/toynet.hpp"

using namespace pgn;

namespace {

const HeadDims kToy{4, 6, 5, 8, 8};

// Trace with given probabilities and last-layer input; other fields filled
// consistently enough for last-layer factors.
ForwardTrace make_trace(const Tensor& probs, const Tensor& psi) {
  ForwardTrace t;
  t.probs = probs;
  t.logits = probs;
  for (auto& v : t.logits.data()) v = std::log(v);
  t.psi = psi;
  t.pre_relu = psi;
  t.pred = argmax_channels(probs);
  return t;
}

// 1 x 1 head: one input, one hidden, two classes with logits (ln 4, 0) so
// that the softmax is (0.8, 0.2) and psi = 1.
SegHeadParams micro_head() {
  SegHeadParams p;
  p.k_penult = Tensor({1, 1, 3, 3});
  p.k_penult(0, 0, 1, 1) = 1.0;
  p.k_penult(0, 0, 0, 0) = 0.7;  // only ever multiplies zero padding
  p.b_penult = Tensor({1});
  p.bn_eps = 1e-5;
  p.bn_gamma = Tensor::filled({1}, 1.0);
  p.bn_beta = Tensor({1});
  p.bn_mean = Tensor({1});
  p.bn_var = Tensor::filled({1}, 1.0 - p.bn_eps);
  p.k_last = Tensor({2, 1, 1, 1}, {std::log(4.0), 0.0});
  p.b_last = Tensor({2});
  return p;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

}  // namespace

TEST(LastLayer, OneHotZeroOnPredictedChannel) {
  const auto inst = gen_synthetic(42, kToy);
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  const GradFactors f = last_layer_grad_factors(t, LabelMode::one_hot());
  for (std::size_t i = 0; i < 64; ++i) {
    const auto c = static_cast<std::size_t>(t.pred.labels[i]);
    EXPECT_EQ(f.S[c * 64 + i], 0.0);
    for (std::size_t k = 0; k < 5; ++k) {
      if (k != c) EXPECT_EQ(f.S[k * 64 + i], t.probs[k * 64 + i]);
    }
  }
  EXPECT_EQ(f.Psi, t.psi);
}

TEST(LastLayer, UniformTwoClassExample) {
  const ForwardTrace t = make_trace(Tensor({2, 1, 1}, {0.8, 0.2}), Tensor({1, 1, 1}, {1.0}));
  const GradFactors f = last_layer_grad_factors(t, LabelMode::uniform());
  const auto g = materialize_gradient(f, 0, 0);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_NEAR(g[0], 0.4, 1e-15);
  EXPECT_NEAR(g[1], 0.1, 1e-15);
}

// The same numbers from finite differences on a real head: the linearised
// target reproduces the closed form, the plain pixel loss gives p - y.
TEST(LastLayer, UniformTwoClassFiniteDifferences) {
  const SegHeadParams params = micro_head();
  const Tensor x({1, 1, 1}, {1.0});
  const ForwardTrace t = forward(params, x);
  ASSERT_NEAR(t.probs[0], 0.8, 1e-12);
  ASSERT_NEAR(t.psi[0], 1.0, 1e-12);
  const auto lin = fd_gradient(params, x, LabelMode::uniform(), Layer::Last, 0, 0, 1e-3, FdTarget::LinearizedLoss);
  EXPECT_NEAR(lin[0], 0.4, 1e-9);
  EXPECT_NEAR(lin[1], 0.1, 1e-9);
  const auto loss = fd_gradient(params, x, LabelMode::uniform(), Layer::Last, 0, 0, 1e-3, FdTarget::PixelLoss);
  EXPECT_NEAR(loss[0], 0.3, 1e-6);
  EXPECT_NEAR(loss[1], -0.3, 1e-6);
  const auto exact = materialize_gradient(last_layer_grad_factors(t, LabelMode::uniform(), LabelFactor::Exact), 0, 0);
  EXPECT_NEAR(exact[0], 0.3, 1e-12);
  EXPECT_NEAR(exact[1], -0.3, 1e-12);
}

TEST(LastLayer, UniformPrefactorNineteenClasses) {
  Tensor probs({19, 1, 1});
  SplitMix64 rng(3);
  double s = 0.0;
  for (auto& v : probs.data()) s += (v = 0.1 + rng.uniform01());
  for (auto& v : probs.data()) v /= s;
  const GradFactors f = last_layer_grad_factors(make_trace(probs, Tensor({1, 1, 1}, {1.0})), LabelMode::uniform());
  for (std::size_t k = 0; k < 19; ++k) EXPECT_NEAR(f.S[k], probs[k] * 18.0 / 19.0, 1e-16);
}

TEST(LastLayer, ExplicitLabels) {
  const Tensor probs({3, 1, 1}, {0.5, 0.3, 0.2});
  const Tensor y({3, 1, 1}, {0.2, 0.8, 0.0});
  const GradFactors f = last_layer_grad_factors(make_trace(probs, Tensor({1, 1, 1}, {2.0})),
                                                LabelMode::explicit_labels(y));
  EXPECT_NEAR(f.S[0], 0.4, 1e-15);
  EXPECT_NEAR(f.S[1], 0.06, 1e-15);
  EXPECT_NEAR(f.S[2], 0.2, 1e-15);
}

TEST(LastLayer, ExplicitLabelValidation) {
  const ForwardTrace t = make_trace(Tensor({2, 1, 1}, {0.5, 0.5}), Tensor({1, 1, 1}, {1.0}));
  EXPECT_THROW(last_layer_grad_factors(t, LabelMode::explicit_labels(Tensor({2, 1, 1}, {0.7, 0.7}))),
               ValidationError);
  EXPECT_THROW(last_layer_grad_factors(t, LabelMode::explicit_labels(Tensor({2, 1, 1}, {1.5, -0.5}))),
               ValidationError);
  EXPECT_THROW(last_layer_grad_factors(t, LabelMode::explicit_labels(Tensor({3, 1, 1}, {1.0, 0.0, 0.0}))),
               ValidationError);
}

TEST(Penultimate, DeadReluGivesZero) {
  const auto inst = gen_synthetic(42, kToy);
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  const GradFactors f = penult_layer_grad_factors(t, inst.params, LabelMode::uniform());
  for (std::size_t fch = 0; fch < 6; ++fch) {
    for (std::size_t i = 0; i < 64; ++i) {
      if (t.pre_relu[fch * 64 + i] <= 0.0) EXPECT_EQ(f.S[fch * 64 + i], 0.0);
    }
  }
  // A pixel where every pre-activation is negative scores 0.
  auto params = inst.params;
  params.bn_beta = Tensor::filled({6}, -100.0);
  const ForwardTrace dead = forward(params, inst.psi_prev);
  const auto map = pgn_heatmap(dead, params, LabelMode::uniform(), Layer::Penultimate, 2.0);
  EXPECT_EQ(max_abs(map.scores), 0.0);
}

TEST(Penultimate, ZeroGammaGivesZero) {
  auto inst = gen_synthetic(11, kToy);
  inst.params.bn_gamma = Tensor({6});
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  for (double p : {0.5, 1.0, 2.0}) {
    EXPECT_EQ(max_abs(pgn_heatmap(t, inst.params, LabelMode::one_hot(), Layer::Penultimate, p).scores), 0.0);
  }
}

TEST(Penultimate, PsiIsUnfoldedInput) {
  const auto inst = gen_synthetic(12, kToy);
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  const GradFactors f = penult_layer_grad_factors(t, inst.params, LabelMode::one_hot());
  EXPECT_EQ(f.Psi, unfold(inst.psi_prev, 3, 1));
  EXPECT_EQ(f.S.shape(), (Shape{6, 8, 8}));
}

// Micro instance: one input, one hidden channel, two classes, one pixel.
// The exact factor matches central differences of the pixel loss; the PGN
// factor matches the linearised target.
TEST(Penultimate, MicroInstanceFiniteDifferences) {
  const SegHeadParams params = micro_head();
  const Tensor x({1, 1, 1}, {1.0});
  const ForwardTrace t = forward(params, x);
  for (const LabelMode& mode : {LabelMode::one_hot(), LabelMode::uniform()}) {
    const auto routes = {std::pair{LabelFactor::Exact, FdTarget::PixelLoss},
                         std::pair{LabelFactor::Pgn, FdTarget::LinearizedLoss}};
    for (const auto& [factor, target] : routes) {
      const auto closed = materialize_gradient(penult_layer_grad_factors(t, params, mode, factor), 0, 0);
      const auto fd = fd_gradient(params, x, mode, Layer::Penultimate, 0, 0, 1e-3, target);
      ASSERT_EQ(closed.size(), 9u);
      ASSERT_EQ(fd.size(), 9u);
      double scale = 0.0;
      for (double v : fd) scale = std::max(scale, std::abs(v));
      for (std::size_t j = 0; j < 9; ++j) EXPECT_LE(std::abs(closed[j] - fd[j]), 1e-4 * scale) << j;
      for (std::size_t j = 0; j < 9; ++j) {
        if (j != 4) EXPECT_EQ(closed[j], 0.0);
      }
    }
  }
}

TEST(Pnorm, WorkedExample) {
  const Tensor S({2, 1, 1}, {3, 4});
  const Tensor Psi({2, 1, 1}, {1, 2});
  const double expected = 5.0 * std::sqrt(5.0);
  EXPECT_NEAR(pnorm_factored(S, Psi, 2.0)[0], expected, 1e-12);
  EXPECT_NEAR(flat_pnorm({3, 6, 4, 8}, 2.0), std::sqrt(125.0), 1e-12);
  EXPECT_NEAR(expected, 11.18034, 1e-5);
  EXPECT_NEAR(materialized_pnorm({S, Psi}, 2.0)[0], expected, 1e-12);
  const auto g = materialize_gradient({S, Psi}, 0, 0);
  EXPECT_EQ(g, (std::vector<double>{3, 6, 4, 8}));
}

TEST(Pnorm, ZeroPsi) {
  EXPECT_EQ(pnorm_factored(Tensor({2, 1, 1}, {3, 4}), Tensor({3, 1, 1}), 0.5)[0], 0.0);
}

TEST(Pnorm, PEqualsOneDistributes) {
  const Tensor S({3, 1, 1}, {0.5, 1.5, 2.0});
  const Tensor Psi({2, 1, 1}, {0.25, 4.0});
  EXPECT_NEAR(pnorm_factored(S, Psi, 1.0)[0], 4.0 * 4.25, 1e-12);
}

TEST(Pnorm, RejectsNonPositiveP) {
  const Tensor S({1, 1, 1}, {1.0});
  EXPECT_THROW(pnorm_factored(S, S, 0.0), ValidationError);
  EXPECT_THROW(pnorm_factored(S, S, -1.0), ValidationError);
}

TEST(Pnorm, FactorizationIdentityRandom) {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t a = 1 + rng.below(20), b = 1 + rng.below(30);
    Tensor S({a, 1, 1}), Psi({b, 1, 1});
    for (auto& v : S.data()) v = rng.uniform_pm1();
    for (auto& v : Psi.data()) v = rng.uniform_pm1();
    const auto g = materialize_gradient({S, Psi}, 0, 0);
    for (double p : {0.1, 0.3, 0.5, 1.0, 2.0}) {
      EXPECT_LE(rel_err(pnorm_factored(S, Psi, p)[0], flat_pnorm(g, p)), 1e-6);
    }
  }
}

TEST(Heatmap, UniformProbsOneHotDependsOnPsiNormOnly) {
  Tensor probs = Tensor::filled({4, 2, 2}, 0.25);
  // Same multiset of psi entries at every pixel, in different orders.
  Tensor psi({3, 2, 2}, {1, 2, 3, 1, 2, 3, 1, 3, 3, 1, 2, 2});
  ForwardTrace t = make_trace(probs, psi);
  SegHeadParams unused;
  const auto map = pgn_heatmap(t, unused, LabelMode::one_hot(), Layer::Last, 2.0);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_DOUBLE_EQ(map.scores[i], map.scores[0]);
}

TEST(Heatmap, SharpProbsScoreVanishes) {
  double prev = INFINITY;
  for (double logit : {5.0, 10.0, 20.0, 40.0}) {
    ForwardTrace t = make_trace(softmax(Tensor({3, 1, 1}, {logit, 0.0, 0.0})), Tensor({2, 1, 1}, {1.0, 1.0}));
    const double s = pgn_heatmap(t, {}, LabelMode::one_hot(), Layer::Last, 2.0).scores[0];
    EXPECT_LT(s, prev);
    prev = s;
  }
  EXPECT_LT(prev, 1e-16);
}

TEST(Heatmap, NamesAndMetadata) {
  const auto inst = gen_synthetic(42, kToy);
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  const auto m = pgn_heatmap(t, inst.params, LabelMode::uniform(), Layer::Last, 0.5);
  EXPECT_EQ(m.name(), "pgn_uni_last_p0.5");
  EXPECT_EQ(m.scores.shape(), (Shape{8, 8}));
  EXPECT_EQ(pgn_heatmap(t, inst.params, LabelMode::one_hot(), Layer::Penultimate, 2.0).name(), "pgn_oh_penult_p2");
  EXPECT_EQ(format_p(0.1), "0.1");
  EXPECT_EQ(format_p(1.0), "1");
}

TEST(Heatmap, NonNegativeAllConfigs) {
  const auto inst = gen_synthetic(5, kToy);
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  for (const auto& mode : {LabelMode::one_hot(), LabelMode::uniform()})
    for (Layer layer : {Layer::Last, Layer::Penultimate})
      for (double p : {0.1, 0.3, 0.5, 1.0, 2.0}) {
        const auto map = pgn_heatmap(t, inst.params, mode, layer, p);
        for (double v : map.scores.data()) EXPECT_GE(v, 0.0);
      }
}

// Brute force: per-pixel finite-difference gradient of the linearised target,
// flattened and normed.
TEST(Heatmap, Seed42UniformHalfNormMatchesBruteForce) {
  const auto inst = gen_synthetic(42, kToy);
  const ForwardTrace t = forward(inst.params, inst.psi_prev);
  const auto map = pgn_heatmap(t, inst.params, LabelMode::uniform(), Layer::Last, 0.5);
  const Tensor fd = fd_gradient_all_pixels(inst.params, inst.psi_prev, LabelMode::uniform(), Layer::Last, 1e-3,
                                           FdTarget::LinearizedLoss);
  const std::size_t n = fd.dim(0);
  for (std::size_t i = 0; i < 64; ++i) {
    std::vector<double> g(n);
    for (std::size_t w = 0; w < n; ++w) g[w] = fd[w * 64 + i];
    EXPECT_LE(rel_err(map.scores[i], flat_pnorm(g, 0.5)), 1e-4);
  }
}

TEST(Heatmap, UniformDominatesScaledOneHot) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto inst = gen_synthetic(seed, kToy);
    const ForwardTrace t = forward(inst.params, inst.psi_prev);
    for (double p : {1.0, 2.0, 3.0}) {
      const auto uni = pgn_heatmap(t, inst.params, LabelMode::uniform(), Layer::Last, p);
      const auto oh = pgn_heatmap(t, inst.params, LabelMode::one_hot(), Layer::Last, p);
      for (std::size_t i = 0; i < 64; ++i) EXPECT_GE(uni.scores[i], 0.8 * oh.scores[i] * (1 - 1e-12));
    }
  }
}

TEST(Heatmap, LastLayerScaleCovariance) {
  const auto inst = gen_synthetic(7, kToy);
  ForwardTrace t = forward(inst.params, inst.psi_prev);
  const auto base = pgn_heatmap(t, inst.params, LabelMode::uniform(), Layer::Last, 0.5);
  t.psi *= 2.5;
  const auto scaled = pgn_heatmap(t, inst.params, LabelMode::uniform(), Layer::Last, 0.5);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(scaled.scores[i], 2.5 * base.scores[i], 1e-12);
}

TEST(Baselines, UniformOneHotAndWorkedValue) {
  const ForwardTrace uni = make_trace(Tensor::filled({4, 1, 1}, 0.25), Tensor({1, 1, 1}, {1.0}));
  auto b = baseline_maps(uni);
  EXPECT_NEAR(b.entropy[0], 1.0, 1e-15);
  EXPECT_NEAR(b.max_softmax[0], 0.75, 1e-15);

  ForwardTrace oh;
  oh.probs = Tensor({3, 1, 1}, {0.0, 1.0, 0.0});
  b = baseline_maps(oh);
  EXPECT_EQ(b.entropy[0], 0.0);
  EXPECT_EQ(b.max_softmax[0], 0.0);

  ForwardTrace two;
  two.probs = Tensor({2, 1, 1}, {0.8, 0.2});
  b = baseline_maps(two);
  EXPECT_NEAR(b.entropy[0], 0.7219280948873623, 1e-12);
  EXPECT_NEAR(b.max_softmax[0], 0.2, 1e-15);
}

TEST(Parse, ModesAndLayers) {
  EXPECT_EQ(parse_label_kind("oh"), LabelKind::OneHot);
  EXPECT_EQ(parse_label_kind("uni"), LabelKind::Uniform);
  EXPECT_EQ(parse_label_kind("explicit"), LabelKind::Explicit);
  EXPECT_THROW(parse_label_kind("soft"), ValidationError);
  EXPECT_EQ(parse_layer("penult"), Layer::Penultimate);
  EXPECT_THROW(parse_layer("first"), ValidationError);
}
