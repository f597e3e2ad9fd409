// Phase-induced Gabor kernels: synthesis from four parameters, analytic
// element gradients, and aggregation of element gradients into parameter
// gradients.
//
// Kernel matrices are indexed (row, col) = (y + h, x + h) with h = (k - 1) / 2,
// so the centre element is the origin of the filter.

#ifndef GABORNET_GABOR_KERNEL_HPP_
#define GABORNET_GABOR_KERNEL_HPP_

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "gabornet/common.hpp"

namespace gabornet {

// Lower bound applied to sigma after every optimizer update.
inline constexpr double kSigmaMin = 0.1;

template <typename Scalar>
struct GaborParams {
  Scalar theta{0};  // orientation of the angular frequency, radians
  Scalar omega{0};  // frequency magnitude, radians / pixel
  Scalar sigma{1};  // Gaussian scale, pixels
  Scalar phase{0};  // kernel phase P, radians

  Scalar omega_x() const { return omega * std::cos(theta); }
  Scalar omega_y() const { return omega * std::sin(theta); }

  bool finite() const {
    return std::isfinite(theta) && std::isfinite(omega) &&
           std::isfinite(sigma) && std::isfinite(phase);
  }

  GaborParams with_phase(Scalar p) const {
    GaborParams out = *this;
    out.phase = p;
    return out;
  }

  template <typename Other>
  GaborParams<Other> cast() const {
    return {static_cast<Other>(theta), static_cast<Other>(omega),
            static_cast<Other>(sigma), static_cast<Other>(phase)};
  }

  bool operator==(const GaborParams&) const = default;
};

// Gradient of a scalar loss with respect to each field of GaborParams.
template <typename Scalar>
using GaborGradient = GaborParams<Scalar>;

template <typename Scalar>
void clamp_sigma(GaborParams<Scalar>& p) {
  if (!(p.sigma > Scalar(kSigmaMin))) p.sigma = Scalar(kSigmaMin);
}

// Centred integer sampling grid of odd size k >= 3.
class KernelGrid {
 public:
  explicit KernelGrid(int size) : size_(size) {
    if (size < 3 || size % 2 == 0) {
      throw ConfigError("kernel size must be odd and >= 3, got " +
                        std::to_string(size));
    }
  }

  int size() const { return size_; }
  int half() const { return (size_ - 1) / 2; }

  // (x, y) pairs in row-major kernel order.
  std::vector<std::pair<int, int>> coords() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<std::size_t>(size_) * size_);
    for (int y = -half(); y <= half(); ++y)
      for (int x = -half(); x <= half(); ++x) out.emplace_back(x, y);
    return out;
  }

  // x coordinate of every element.
  template <typename Scalar>
  MatrixX<Scalar> xs() const {
    MatrixX<Scalar> m(size_, size_);
    for (int r = 0; r < size_; ++r)
      for (int c = 0; c < size_; ++c) m(r, c) = Scalar(c - half());
    return m;
  }

  template <typename Scalar>
  MatrixX<Scalar> ys() const {
    return xs<Scalar>().transpose();
  }

  // Coordinates along one axis, -h..h.
  template <typename Scalar>
  VectorX<Scalar> axis() const {
    return VectorX<Scalar>::LinSpaced(size_, Scalar(-half()), Scalar(half()));
  }

 private:
  int size_;
};

inline KernelGrid coordinate_grid(int k) { return KernelGrid(k); }

namespace detail {

template <typename Scalar>
void check_params(const GaborParams<Scalar>& p) {
  if (!p.finite()) throw ContractViolation("Gabor parameters must be finite");
  if (!(p.sigma > Scalar(0)))
    throw ContractViolation("Gabor sigma must be positive");
}

// Envelope K and the harmonic argument M + P over the grid.
template <typename Scalar>
std::pair<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
          Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
envelope_and_argument(const GaborParams<Scalar>& p, const KernelGrid& g) {
  check_params(p);
  const MatrixX<Scalar> xm = g.xs<Scalar>();
  const MatrixX<Scalar> ym = g.ys<Scalar>();
  const auto x = xm.array();
  const auto y = ym.array();
  const Scalar s2 = p.sigma * p.sigma;
  const Scalar norm = Scalar(1) / (Scalar(2) * std::numbers::pi_v<Scalar> * s2);
  auto envelope = (norm * (-(x.square() + y.square()) / (Scalar(2) * s2)).exp())
                      .eval();
  auto argument = (x * p.omega_x() + y * p.omega_y() + p.phase).eval();
  return {std::move(envelope), std::move(argument)};
}

}  // namespace detail

// G(x, y) = K cos(x w_x + y w_y + P) with the normalised isotropic envelope K.
template <typename Scalar>
MatrixX<Scalar> evaluate_kernel(const GaborParams<Scalar>& p,
                                const KernelGrid& g) {
  auto [env, arg] = detail::envelope_and_argument(p, g);
  return (env * arg.cos()).matrix();
}

// Real and imaginary parts of the complex kernel K exp(j(M + P)).
template <typename Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> evaluate_complex_parts(
    const GaborParams<Scalar>& p, const KernelGrid& g) {
  auto [env, arg] = detail::envelope_and_argument(p, g);
  return {(env * arg.cos()).matrix(), (env * arg.sin()).matrix()};
}

template <typename Scalar>
struct KernelGradients {
  MatrixX<Scalar> d_phase;
  MatrixX<Scalar> d_theta;
  MatrixX<Scalar> d_omega;
  MatrixX<Scalar> d_sigma;
};

// Element-wise derivatives of the kernel with respect to P, theta, omega and
// sigma. The theta and omega terms scale dG/dP by dM/dtheta and dM/domega;
// the sigma term scales G itself.
template <typename Scalar>
KernelGradients<Scalar> kernel_gradients(const GaborParams<Scalar>& p,
                                         const KernelGrid& g) {
  auto [env, arg] = detail::envelope_and_argument(p, g);
  const MatrixX<Scalar> xm = g.xs<Scalar>();
  const MatrixX<Scalar> ym = g.ys<Scalar>();
  const auto x = xm.array();
  const auto y = ym.array();
  const Scalar c = std::cos(p.theta);
  const Scalar s = std::sin(p.theta);

  KernelGradients<Scalar> out;
  const auto d_phase = (-env * arg.sin()).eval();
  out.d_phase = d_phase.matrix();
  out.d_theta = (d_phase * (-x * p.omega_y() + y * p.omega_x())).matrix();
  out.d_omega = (d_phase * (x * c + y * s)).matrix();
  const Scalar sig = p.sigma;
  out.d_sigma = (env * arg.cos() *
                 ((x.square() + y.square()) / (sig * sig * sig) - Scalar(2) / sig))
                    .matrix();
  return out;
}

// The four 1-D factors of G = g_cp(x) g_c(y) - g_sp(x) g_s(y), each sampled
// at x (or y) = -h..h. The phase is carried by the x factors.
template <typename Scalar>
struct SeparableComponents {
  VectorX<Scalar> cos_phase_x;
  VectorX<Scalar> cos_y;
  VectorX<Scalar> sin_phase_x;
  VectorX<Scalar> sin_y;

  // Rebuild the k x k kernel (rows indexed by y, columns by x).
  MatrixX<Scalar> recombine() const {
    return cos_y * cos_phase_x.transpose() - sin_y * sin_phase_x.transpose();
  }
};

template <typename Scalar>
SeparableComponents<Scalar> separable_decomposition(const GaborParams<Scalar>& p,
                                                    const KernelGrid& g) {
  detail::check_params(p);
  const VectorX<Scalar> tv = g.axis<Scalar>();
  const auto t = tv.array();
  const Scalar norm =
      Scalar(1) / (std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>) * p.sigma);
  const auto env =
      (norm * (-t.square() / (Scalar(2) * p.sigma * p.sigma)).exp()).eval();
  const auto arg_x = (t * p.omega_x() + p.phase).eval();
  const auto arg_y = (t * p.omega_y()).eval();

  SeparableComponents<Scalar> out;
  out.cos_phase_x = (env * arg_x.cos()).matrix();
  out.sin_phase_x = (env * arg_x.sin()).matrix();
  out.cos_y = (env * arg_y.cos()).matrix();
  out.sin_y = (env * arg_y.sin()).matrix();
  return out;
}

// Chain rule from kernel elements to parameters: sum of the Hadamard product
// of the element gradient with each kernel-gradient matrix.
template <typename Scalar, typename Derived>
GaborGradient<Scalar> aggregate_param_gradients(
    const Eigen::MatrixBase<Derived>& elem_grads,
    const KernelGradients<Scalar>& kg) {
  const auto rows = elem_grads.rows();
  const auto cols = elem_grads.cols();
  for (const auto* m : {&kg.d_phase, &kg.d_theta, &kg.d_omega, &kg.d_sigma}) {
    if (m->rows() != rows || m->cols() != cols)
      throw ContractViolation("aggregate_param_gradients: shape mismatch");
  }
  GaborGradient<Scalar> out;
  out.phase = elem_grads.cwiseProduct(kg.d_phase).sum();
  out.theta = elem_grads.cwiseProduct(kg.d_theta).sum();
  out.omega = elem_grads.cwiseProduct(kg.d_omega).sum();
  out.sigma = elem_grads.cwiseProduct(kg.d_sigma).sum();
  return out;
}

}  // namespace gabornet

#endif  // GABORNET_GABOR_KERNEL_HPP_
