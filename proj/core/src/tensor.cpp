#include "pgn/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <numeric>

#include "pgn/errors.hpp"

namespace pgn {

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimension sizes must be >= 1, got " + to_string(shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  check_shape(shape_);
  data_.assign(element_count(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  check_shape(shape_);
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)) + " elements, got " +
                         std::to_string(data_.size()));
  }
  if (dtype_ == DType::F32) set_dtype(DType::F32);
}

Tensor Tensor::filled(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  std::fill(t.data_.begin(), t.data_.end(), value);
  if (dtype == DType::F32) t.set_dtype(DType::F32);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape_));
  }
  return shape_[axis];
}

void Tensor::set_dtype(DType dtype) {
  dtype_ = dtype;
  if (dtype == DType::F32) {
    for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
  }
}

double& Tensor::operator()(std::size_t i, std::size_t j) {
  assert(rank() == 2);
  return data_[i * shape_[1] + j];
}
double Tensor::operator()(std::size_t i, std::size_t j) const {
  assert(rank() == 2);
  return data_[i * shape_[1] + j];
}
double& Tensor::operator()(std::size_t c, std::size_t i, std::size_t j) {
  assert(rank() == 3);
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}
double Tensor::operator()(std::size_t c, std::size_t i, std::size_t j) const {
  assert(rank() == 3);
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}
double& Tensor::operator()(std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
  assert(rank() == 4);
  return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
}
double Tensor::operator()(std::size_t o, std::size_t c, std::size_t i, std::size_t j) const {
  assert(rank() == 4);
  return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_, dtype_);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

double sum(const Tensor& t) {
  return std::accumulate(t.data().begin(), t.data().end(), 0.0);
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_value(const Tensor& t) {
  if (t.empty()) throw DimensionError("max of empty tensor");
  return *std::max_element(t.data().begin(), t.data().end());
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

Tensor channel_pnorm(const Tensor& t, double p) {
  if (!(p > 0.0)) throw ValidationError("p-norm requires p > 0");
  if (t.rank() != 3) throw DimensionError("channel_pnorm expects C x H x W, got " + to_string(t.shape()));
  const std::size_t channels = t.dim(0), plane = t.dim(1) * t.dim(2);
  Tensor out({t.dim(1), t.dim(2)});
  auto src = t.data();
  auto dst = out.data();
  if (p == 2.0) {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[c * plane + i] * src[c * plane + i];
    for (auto& v : dst) v = std::sqrt(v);
  } else if (p == 1.0) {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) dst[i] += std::abs(src[c * plane + i]);
  } else {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) dst[i] += std::pow(std::abs(src[c * plane + i]), p);
    for (auto& v : dst) v = std::pow(v, 1.0 / p);
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& filters, const Tensor& bias,
              std::size_t padding) {
  if (input.rank() != 3) throw DimensionError("conv2d input must be C x H x W, got " + to_string(input.shape()));
  if (filters.rank() != 4) throw DimensionError("conv2d filters must be Cout x Cin x k x k, got " + to_string(filters.shape()));
  const std::size_t c_in = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t c_out = filters.dim(0), k = filters.dim(2);
  if (filters.dim(1) != c_in) {
    throw DimensionError("conv2d: input has " + std::to_string(c_in) + " channels but filters expect " +
                         std::to_string(filters.dim(1)));
  }
  if (filters.dim(3) != k || k % 2 == 0) throw DimensionError("conv2d: filter must be square with odd extent");
  if (padding != k / 2) throw DimensionError("conv2d: padding must equal (k-1)/2");
  if (bias.rank() != 1 || bias.dim(0) != c_out) {
    throw DimensionError("conv2d: bias must have " + std::to_string(c_out) + " entries");
  }

  const auto s = static_cast<std::ptrdiff_t>(padding);
  const auto h = static_cast<std::ptrdiff_t>(height), w = static_cast<std::ptrdiff_t>(width);
  Tensor out({c_out, height, width});
  auto in = input.data();
  auto dst = out.data();

  for (std::size_t d = 0; d < c_out; ++d) {
    double* plane = dst.data() + d * height * width;
    std::fill(plane, plane + height * width, bias[d]);
    for (std::size_t j = 0; j < c_in; ++j) {
      const double* src = in.data() + j * height * width;
      for (std::ptrdiff_t p = -s; p <= s; ++p) {
        for (std::ptrdiff_t q = -s; q <= s; ++q) {
          const double kw = filters(d, j, static_cast<std::size_t>(p + s), static_cast<std::size_t>(q + s));
          if (kw == 0.0) continue;
          const std::ptrdiff_t b_lo = std::max<std::ptrdiff_t>(0, -q);
          const std::ptrdiff_t b_hi = std::min<std::ptrdiff_t>(w, w - q);
          for (std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, -p); a < std::min<std::ptrdiff_t>(h, h - p); ++a) {
            double* row = plane + a * w;
            const double* src_row = src + (a + p) * w + q;
            for (std::ptrdiff_t b = b_lo; b < b_hi; ++b) row[b] += kw * src_row[b];
          }
        }
      }
    }
  }
  return out;
}

Tensor unfold(const Tensor& input, std::size_t k, std::size_t padding) {
  if (input.rank() != 3) throw DimensionError("unfold input must be C x H x W, got " + to_string(input.shape()));
  if (k % 2 == 0) throw DimensionError("unfold: k must be odd");
  if (padding != k / 2) throw DimensionError("unfold: padding must equal (k-1)/2");
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const auto s = static_cast<std::ptrdiff_t>(padding);
  const auto h = static_cast<std::ptrdiff_t>(height), w = static_cast<std::ptrdiff_t>(width);
  Tensor out({channels * k * k, height, width});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::ptrdiff_t p = -s; p <= s; ++p) {
      for (std::ptrdiff_t q = -s; q <= s; ++q) {
        const std::size_t oc = c * k * k + static_cast<std::size_t>(p + s) * k + static_cast<std::size_t>(q + s);
        for (std::ptrdiff_t a = 0; a < h; ++a) {
          if (a + p < 0 || a + p >= h) continue;
          for (std::ptrdiff_t b = 0; b < w; ++b) {
            if (b + q < 0 || b + q >= w) continue;
            out(oc, static_cast<std::size_t>(a), static_cast<std::size_t>(b)) =
                input(c, static_cast<std::size_t>(a + p), static_cast<std::size_t>(b + q));
          }
        }
      }
    }
  }
  return out;
}

}  // namespace pgn
