#include "chronokit/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace chronokit {

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) {
    if (e == 0) throw shape_error("zero extent in shape " + shape_to_string(s));
    n *= e;
  }
  return n;
}

void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw shape_error(msg);
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size())
    throw shape_error("data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_to_string(shape_));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> ix) const {
  if (ix.size() != shape_.size())
    throw shape_error("index rank " + std::to_string(ix.size()) +
                      " vs tensor rank " + std::to_string(shape_.size()));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : ix) {
    if (i >= shape_[axis])
      throw shape_error("index " + std::to_string(i) + " out of range for axis " +
                        std::to_string(axis) + " of " + shape_to_string(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

std::size_t Tensor::offset(const std::vector<std::size_t>& ix) const {
  if (ix.size() != shape_.size())
    throw shape_error("index rank mismatch");
  std::size_t off = 0;
  for (std::size_t axis = 0; axis < ix.size(); ++axis) {
    if (ix[axis] >= shape_[axis]) throw shape_error("index out of range");
    off = off * shape_[axis] + ix[axis];
  }
  return off;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw shape_error("reshape " + shape_to_string(shape_) + " -> " +
                      shape_to_string(new_shape) + " changes element count");
  Tensor out(std::move(new_shape), data_);
  out.set_dtype(dtype_);
  return out;
}

double Tensor::min() const {
  return *std::min_element(data_.begin(), data_.end());
}
double Tensor::max() const {
  return *std::max_element(data_.begin(), data_.end());
}
double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}
bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor squeeze_spatial(const Tensor& a) {
  check_shape(a.rank() == 5, "squeeze_spatial expects [B,C,T,H,W], got " +
                                 shape_to_string(a.shape()));
  const std::size_t B = a.extent(0), C = a.extent(1), T = a.extent(2);
  const std::size_t HW = a.extent(3) * a.extent(4);
  Tensor out({B, C, T});
  const double* src = a.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < B * C * T; ++i) {
    double acc = 0.0;
    const double* p = src + i * HW;
    for (std::size_t j = 0; j < HW; ++j) acc += p[j];
    dst[i] = acc / static_cast<double>(HW);
  }
  return out;
}

Tensor squeeze_spatial_backward(const Tensor& upstream, const Shape& input_shape) {
  check_shape(input_shape.size() == 5, "squeeze_spatial_backward expects rank-5 input shape");
  check_shape(upstream.rank() == 3 && upstream.extent(0) == input_shape[0] &&
                  upstream.extent(1) == input_shape[1] &&
                  upstream.extent(2) == input_shape[2],
              "upstream shape mismatch in squeeze_spatial_backward");
  const std::size_t HW = input_shape[3] * input_shape[4];
  Tensor grad(input_shape);
  const double inv = 1.0 / static_cast<double>(HW);
  for (std::size_t i = 0; i < upstream.numel(); ++i) {
    const double g = upstream[i] * inv;
    double* p = grad.data() + i * HW;
    for (std::size_t j = 0; j < HW; ++j) p[j] = g;
  }
  return grad;
}

Tensor broadcast_mul_spatial(const Tensor& a, const Tensor& per_frame) {
  check_shape(a.rank() == 5, "broadcast_mul_spatial expects [B,C,T,H,W]");
  check_shape(per_frame.rank() == 3 && per_frame.extent(0) == a.extent(0) &&
                  per_frame.extent(1) == a.extent(1) &&
                  per_frame.extent(2) == a.extent(2),
              "per-frame tensor must be [B,C,T] matching the volume");
  const std::size_t HW = a.extent(3) * a.extent(4);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < per_frame.numel(); ++i) {
    const double m = per_frame[i];
    const double* src = a.data() + i * HW;
    double* dst = out.data() + i * HW;
    for (std::size_t j = 0; j < HW; ++j) dst[j] = src[j] * m;
  }
  return out;
}

Tensor concat_channels(const Tensor& first, const Tensor& second) {
  check_shape(first.rank() == 5 && second.rank() == 5,
              "concat_channels expects [B,C,T,H,W] inputs");
  for (std::size_t axis : {0u, 2u, 3u, 4u})
    check_shape(first.extent(axis) == second.extent(axis),
                "concat_channels extents differ outside the channel axis");
  const std::size_t B = first.extent(0);
  const std::size_t C1 = first.extent(1), C2 = second.extent(1);
  const std::size_t inner = first.extent(2) * first.extent(3) * first.extent(4);
  Tensor out({B, C1 + C2, first.extent(2), first.extent(3), first.extent(4)});
  for (std::size_t b = 0; b < B; ++b) {
    std::memcpy(out.data() + (b * (C1 + C2)) * inner,
                first.data() + b * C1 * inner, C1 * inner * sizeof(double));
    std::memcpy(out.data() + (b * (C1 + C2) + C1) * inner,
                second.data() + b * C2 * inner, C2 * inner * sizeof(double));
  }
  return out;
}

void split_channels_grad(const Tensor& upstream, std::size_t c_first,
                         Tensor& grad_first, Tensor& grad_second) {
  check_shape(upstream.rank() == 5, "split_channels_grad expects rank-5 upstream");
  const std::size_t B = upstream.extent(0), C = upstream.extent(1);
  check_shape(c_first <= C, "channel split exceeds channel count");
  const std::size_t c_second = C - c_first;
  const std::size_t inner = upstream.extent(2) * upstream.extent(3) * upstream.extent(4);
  grad_first = Tensor({B, std::max<std::size_t>(c_first, 1), upstream.extent(2),
                       upstream.extent(3), upstream.extent(4)});
  grad_second = Tensor({B, std::max<std::size_t>(c_second, 1), upstream.extent(2),
                        upstream.extent(3), upstream.extent(4)});
  for (std::size_t b = 0; b < B; ++b) {
    if (c_first)
      std::memcpy(grad_first.data() + b * c_first * inner,
                  upstream.data() + b * C * inner, c_first * inner * sizeof(double));
    if (c_second)
      std::memcpy(grad_second.data() + b * c_second * inner,
                  upstream.data() + (b * C + c_first) * inner,
                  c_second * inner * sizeof(double));
  }
}

namespace {

void put_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
void put_scalar_le(std::ostream& os, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = std::bit_cast<U>(v);
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_scalar_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<U>(b[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void write_stv1(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("STV1", 4);
  const unsigned char dtype = static_cast<unsigned char>(t.dtype());
  os.put(static_cast<char>(dtype));
  if (t.rank() > 255) throw shape_error("STV1 rank limit exceeded");
  os.put(static_cast<char>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max())
      throw shape_error("STV1 extent exceeds u32");
    put_u32le(os, static_cast<std::uint32_t>(e));
  }
  if (t.dtype() == DType::F32) {
    for (std::size_t i = 0; i < t.numel(); ++i)
      put_scalar_le<float>(os, static_cast<float>(t[i]));
  } else {
    for (std::size_t i = 0; i < t.numel(); ++i) put_scalar_le<double>(os, t[i]);
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

Tensor read_stv1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "STV1", 4) != 0)
    throw std::runtime_error(path + " is not an STV1 file");
  const int dtype_code = is.get();
  if (dtype_code != 0 && dtype_code != 1)
    throw std::runtime_error("unknown STV1 dtype code " + std::to_string(dtype_code));
  const int rank = is.get();
  if (rank < 0) throw std::runtime_error("truncated STV1 header");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& e : shape) e = get_u32le(is);
  Tensor t(shape);
  if (dtype_code == 0) {
    for (std::size_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<double>(get_scalar_le<float>(is));
    t.set_dtype(DType::F32);
  } else {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_scalar_le<double>(is);
    t.set_dtype(DType::F64);
  }
  if (!is) throw std::runtime_error("truncated STV1 payload in " + path);
  return t;
}

}  // namespace chronokit
