#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pgn {

using Shape = std::vector<std::size_t>;

/// Element type a tensor is stored as on disk. In memory every tensor holds
/// doubles; an F32 tensor only ever contains values representable as float.
enum class DType { F32, F64 };

std::string to_string(const Shape& shape);

/// Dense row-major tensor. Feature maps are channels-first (C x H x W),
/// filter banks are Cout x Cin x k x k.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::F64);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::F64);

  static Tensor filled(Shape shape, double value, DType dtype = DType::F64);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  DType dtype() const noexcept { return dtype_; }
  /// Switching to F32 rounds every element to float precision.
  void set_dtype(DType dtype);

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-specific accessors; no bounds checks beyond debug asserts.
  double& operator()(std::size_t i, std::size_t j);
  double operator()(std::size_t i, std::size_t j) const;
  double& operator()(std::size_t c, std::size_t i, std::size_t j);
  double operator()(std::size_t c, std::size_t i, std::size_t j) const;
  double& operator()(std::size_t o, std::size_t c, std::size_t i, std::size_t j);
  double operator()(std::size_t o, std::size_t c, std::size_t i, std::size_t j) const;

  Tensor reshaped(Shape shape) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F64;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

double sum(const Tensor& t);
double max_abs(const Tensor& t);
double max_value(const Tensor& t);
bool all_finite(const Tensor& t);

/// Per-pixel p-(semi)norm over the leading (channel) axis of a C x H x W
/// tensor: out[a][b] = (sum_c |t[c][a][b]|^p)^(1/p). Requires p > 0.
Tensor channel_pnorm(const Tensor& t, double p);

/// Same-size 2-D cross-correlation with zero padding.
/// out[d][a][b] = sum_j sum_{p,q} K[d][j][p+s][q+s] * in[j][a+p][b+q] + bias[d]
/// `padding` must equal s = (k-1)/2. Accumulates in double.
Tensor conv2d(const Tensor& input, const Tensor& filters, const Tensor& bias,
              std::size_t padding);

/// k x k patch extraction with zero padding; output channel index is
/// c*k*k + (p+s)*k + (q+s), matching the flattened filter layout of conv2d.
Tensor unfold(const Tensor& input, std::size_t k, std::size_t padding);

/// H x W map of integer labels (predictions, ground truth, masks).
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {}

  std::int32_t& operator()(std::size_t a, std::size_t b) { return labels[a * width + b]; }
  std::int32_t operator()(std::size_t a, std::size_t b) const { return labels[a * width + b]; }
  std::size_t size() const noexcept { return labels.size(); }

  bool operator==(const LabelMap&) const = default;
};

}  // namespace pgn
