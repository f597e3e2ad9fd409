// Dense NCHW tensor used for batched feature maps and convolution kernels.

#ifndef GABORNET_TENSOR_HPP_
#define GABORNET_TENSOR_HPP_

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gabornet/common.hpp"

namespace gabornet {

template <typename Scalar>
class Tensor4 {
 public:
  using ChannelMap = Eigen::Map<MatrixX<Scalar>>;
  using ConstChannelMap = Eigen::Map<const MatrixX<Scalar>>;

  Tensor4() = default;
  Tensor4(int n, int c, int h, int w, Scalar fill = Scalar(0))
      : dims_{n, c, h, w} {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      throw ContractViolation("Tensor4: negative dimension");
    data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }

  int batch() const { return dims_[0]; }
  int channels() const { return dims_[1]; }
  int height() const { return dims_[2]; }
  int width() const { return dims_[3]; }
  const std::array<int, 4>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  bool same_shape(const Tensor4& o) const { return dims_ == o.dims_; }

  Scalar& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  Scalar operator()(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  // One (h x w) plane as an Eigen matrix view.
  ChannelMap channel(int n, int c) {
    return ChannelMap(data_.data() + index(n, c, 0, 0), dims_[2], dims_[3]);
  }
  ConstChannelMap channel(int n, int c) const {
    return ConstChannelMap(data_.data() + index(n, c, 0, 0), dims_[2], dims_[3]);
  }

  // All channels of sample n as a (c x h*w) matrix view.
  Eigen::Map<MatrixX<Scalar>> sample(int n) {
    return {data_.data() + index(n, 0, 0, 0), dims_[1],
            static_cast<Eigen::Index>(dims_[2]) * dims_[3]};
  }
  Eigen::Map<const MatrixX<Scalar>> sample(int n) const {
    return {data_.data() + index(n, 0, 0, 0), dims_[1],
            static_cast<Eigen::Index>(dims_[2]) * dims_[3]};
  }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(dims_[0], dims_[1], dims_[2], dims_[3]);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.storage()[i] = static_cast<Other>(data_[i]);
    return out;
  }

  std::string shape_string() const {
    return "(" + std::to_string(dims_[0]) + "," + std::to_string(dims_[1]) + "," +
           std::to_string(dims_[2]) + "," + std::to_string(dims_[3]) + ")";
  }

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + h) *
               dims_[3] +
           w;
  }

  std::array<int, 4> dims_{0, 0, 0, 0};
  std::vector<Scalar> data_;
};

}  // namespace gabornet

#endif  // GABORNET_TENSOR_HPP_
