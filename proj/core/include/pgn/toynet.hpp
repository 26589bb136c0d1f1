#pragma once

#include <cstddef>
#include <cstdint>

#include "pgn/tensor.hpp"

namespace pgn {

/// Sizes of the reference head: conv3x3(in -> hidden) -> BN -> ReLU ->
/// conv1x1(hidden -> classes) -> softmax, applied to an in x H x W input.
struct HeadDims {
  std::size_t in_channels = 4;
  std::size_t hidden_channels = 6;
  std::size_t num_classes = 5;
  std::size_t height = 8;
  std::size_t width = 8;

  void validate() const;
  bool operator==(const HeadDims&) const = default;
};

/// Weights of the two-layer head. Batch norm is used in inference mode with
/// stored running statistics.
struct SegHeadParams {
  Tensor k_penult;  // hidden x in x 3 x 3
  Tensor b_penult;  // hidden
  Tensor bn_gamma;  // hidden
  Tensor bn_beta;   // hidden
  Tensor bn_mean;   // hidden
  Tensor bn_var;    // hidden, > 0
  double bn_eps = 1e-5;
  Tensor k_last;    // classes x hidden x 1 x 1
  Tensor b_last;    // classes

  std::size_t in_channels() const { return k_penult.dim(1); }
  std::size_t hidden_channels() const { return k_penult.dim(0); }
  std::size_t num_classes() const { return k_last.dim(0); }

  /// Throws DimensionError / ValidationError if the tensors are inconsistent.
  void validate() const;

  /// gamma / sqrt(var + eps) per hidden channel: the derivative of the
  /// inference-mode batch norm.
  Tensor bn_scale() const;
};

/// Every intermediate of one forward pass.
struct ForwardTrace {
  Tensor psi_prev;  // in x H x W
  Tensor pre_bn;    // hidden x H x W
  Tensor pre_relu;  // hidden x H x W (batch norm output)
  Tensor psi;       // hidden x H x W (ReLU output, input of the last conv)
  Tensor logits;    // classes x H x W
  Tensor probs;     // classes x H x W
  LabelMap pred;    // H x W, argmax of probs

  std::size_t num_classes() const { return probs.dim(0); }
  std::size_t height() const { return probs.dim(1); }
  std::size_t width() const { return probs.dim(2); }
};

/// Per-pixel softmax over the class axis, max-subtracted. Throws NumericError
/// on non-finite logits.
Tensor softmax(const Tensor& logits);

/// Argmax over the class axis; ties resolve to the lowest class index.
LabelMap argmax_channels(const Tensor& probs);

ForwardTrace forward(const SegHeadParams& params, const Tensor& psi_prev);

struct SyntheticInstance {
  SegHeadParams params;
  Tensor psi_prev;
};

/// Deterministic random head and input. One SplitMix64 stream seeded with
/// `seed` is consumed in this order, each tensor in row-major order
/// (u = uniform in [-1, 1)):
///
///   k_penult = u * sqrt(3 / (in * 9))
///   b_penult = 0.1 u
///   bn_gamma = 1 + 0.5 u
///   bn_beta  = 0.2 u
///   bn_mean  = 0.1 u
///   bn_var   = 0.55 + 0.45 u          (in [0.1, 1))
///   k_last   = 2 u * sqrt(3 / hidden)
///   b_last   = 0.1 u
///   psi_prev = u
///
/// All values are rounded to float. Throws ValidationError if C < 2 or any
/// size is zero.
SyntheticInstance gen_synthetic(std::uint64_t seed, const HeadDims& dims, double bn_eps = 1e-5);

struct SceneOptions {
  std::size_t grid_cells = 4;  // coarse cells per side of the smooth field
  double noise = 0.35;         // amplitude of the i.i.d. input noise
  bool ood = false;            // insert an out-of-distribution box
  double ood_scale = 8.0;      // activation magnitude inside the box
  double ood_side = 0.35;      // box side as a fraction of H and W
};

inline constexpr std::int32_t kIgnoreLabel = 255;

struct SyntheticScene {
  SegHeadParams params;
  Tensor psi_prev;
  LabelMap gt;        // prediction on the noise-free field; kIgnoreLabel inside the OoD box
  LabelMap ood_mask;  // 1 inside the OoD box, else 0
};

/// A scene with spatial structure: the head from gen_synthetic(seed), an input
/// that is a bilinearly upsampled coarse random field plus noise, and a ground
/// truth given by the head's prediction on the clean field. With `ood` set, a
/// centred box is replaced by uniform activations scaled by `ood_scale`.
SyntheticScene gen_scene(std::uint64_t seed, const HeadDims& dims, const SceneOptions& options = {},
                         double bn_eps = 1e-5);

}  // namespace pgn
