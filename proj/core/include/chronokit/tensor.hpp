#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace chronokit {

// Thrown by every operation that receives incompatible extents.
class shape_error : public std::runtime_error {
public:
  explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a computation produces non-finite values (CLI exit code 2).
class numeric_error : public std::runtime_error {
public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& s);

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

// Dense row-major N-d array, last axis fastest. Storage is always double;
// the dtype tag controls on-disk STV1 width. Immutable by convention once an
// operation has produced it.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  DType dtype() const { return dtype_; }
  void set_dtype(DType d) { dtype_ = d; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  template <typename... Ix>
  double& operator()(Ix... ix) {
    return data_[offset({static_cast<std::size_t>(ix)...})];
  }
  template <typename... Ix>
  double operator()(Ix... ix) const {
    return data_[offset({static_cast<std::size_t>(ix)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> ix) const;
  std::size_t offset(const std::vector<std::size_t>& ix) const;

  Tensor reshaped(Shape new_shape) const;

  double min() const;
  double max() const;
  double sum() const;
  bool all_finite() const;

private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F64;
};

// product(shape); throws on zero extents
std::size_t shape_numel(const Shape& s);

void check_shape(bool cond, const std::string& msg);

// mean over H and W per (b, c, t):  [B,C,T,H,W] -> [B,C,T]
Tensor squeeze_spatial(const Tensor& a);
// scatters d(squeeze)/d(a): upstream [B,C,T] -> [B,C,T,H,W]
Tensor squeeze_spatial_backward(const Tensor& upstream, const Shape& input_shape);

// a[b,c,t,h,w] * h[b,c,t] broadcast over the spatial axes
Tensor broadcast_mul_spatial(const Tensor& a, const Tensor& per_frame);

// channel-axis concatenation of two [B,C,T,H,W] volumes
Tensor concat_channels(const Tensor& first, const Tensor& second);
void split_channels_grad(const Tensor& upstream, std::size_t c_first,
                         Tensor& grad_first, Tensor& grad_second);

// ---- STV1 binary tensor files ----
// magic "STV1", u8 dtype (0=f32, 1=f64), u8 rank, rank x u32le extents,
// little-endian scalars row-major.
void write_stv1(const std::string& path, const Tensor& t);
Tensor read_stv1(const std::string& path);

}  // namespace chronokit
