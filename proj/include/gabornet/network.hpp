// Gabor-Net assembly: CV blocks (Conv1 -> ReLU -> Conv2 -> BN) whose kernels
// are synthesised from Gabor parameters on every forward pass, an FC block
// (global average pool -> FC -> ReLU -> FC), Adam training and evaluation.
//
// The same class also runs the regular-CNN baseline, where kernel elements
// are the learnables, and the two phase ablations.

#ifndef GABORNET_NETWORK_HPP_
#define GABORNET_NETWORK_HPP_

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "gabornet/common.hpp"
#include "gabornet/data.hpp"
#include "gabornet/gabor_kernel.hpp"
#include "gabornet/nn.hpp"
#include "gabornet/tensor.hpp"

namespace gabornet {

enum class KernelMode {
  kGabor,           // all four Gabor parameters learned, P0 ~ U[0, 2pi)
  kRegular,         // plain k x k kernels
  kGaborPZeroInit,  // P learned but initialised to 0
  kGaborNoP,        // P frozen at 0 and not learned
};

std::string to_string(KernelMode mode);
KernelMode parse_kernel_mode(std::string_view text);

inline bool is_gabor(KernelMode m) { return m != KernelMode::kRegular; }

struct CvBlockConfig {
  int n_theta{4};
  int n_mag{4};
  int kernel_size{5};

  int n_out() const { return n_theta * n_mag; }
  bool operator==(const CvBlockConfig&) const = default;
};

struct NetworkConfig {
  KernelMode mode{KernelMode::kGabor};
  std::vector<CvBlockConfig> blocks;
  int n_classes{9};
  int input_bands{103};
  int patch_size{15};
  double learning_rate{0.0076};
  double lr_decay{0.995};
  int epochs{300};
  int batch_size{100};
  std::uint64_t seed{1};

  void validate() const;

  // Block schedule used in the experiments: the first block has n_theta
  // orientations and each further block doubles it; n_mag stays fixed.
  static std::vector<CvBlockConfig> doubling_schedule(int n_blocks, int kernel_size,
                                                      int n_theta = 4, int n_mag = 4);
};

// Learnable scalars of a CV block: Conv1 (with per-output bias), Conv2 and BN.
std::int64_t count_block_parameters(KernelMode mode, int n_in, const CvBlockConfig& block);
// Learnable scalars of the FC block for n_in pooled features.
std::int64_t count_fc_parameters(int n_in, int n_classes);
std::int64_t count_parameters(const NetworkConfig& config);

// Identifies one learnable scalar in declaration order.
struct ParamId {
  std::string_view tensor;  // e.g. "conv1.theta", "bn.gamma", "fc2.bias"
  int block{-1};            // CV block index, -1 for the FC block
  std::size_t index{0};     // position within the tensor
  nn::ParamRole role{nn::ParamRole::kFree};

  std::string name() const {
    std::string out = block >= 0 ? "block" + std::to_string(block + 1) + "." : "";
    return out + std::string(tensor) + "[" + std::to_string(index) + "]";
  }
};

template <typename Scalar>
struct ConvLayer {
  KernelMode mode{KernelMode::kGabor};
  int n_in{0};
  int n_out{0};
  KernelGrid grid{3};

  // Gabor modes: filters[o * n_in + i] generates kernel (o, i); the n_in
  // filters of output o form one kernel bank.
  std::vector<GaborParams<Scalar>> filters;
  std::vector<GaborParams<Scalar>> initial_filters;
  std::vector<GaborGradient<Scalar>> filter_grads;
  // Regular mode: (n_out, n_in, k, k) elements.
  std::vector<Scalar> weights;
  std::vector<Scalar> weight_grads;
  // Empty when the layer has no bias.
  std::vector<Scalar> bias;
  std::vector<Scalar> bias_grads;

  int kernel_size() const { return grid.size(); }
  bool learns_phase() const { return mode == KernelMode::kGabor || mode == KernelMode::kGaborPZeroInit; }

  std::span<const GaborParams<Scalar>> bank(int o) const {
    return std::span<const GaborParams<Scalar>>(filters).subspan(
        static_cast<std::size_t>(o) * n_in, n_in);
  }

  Tensor4<Scalar> synthesize() const {
    const int k = kernel_size();
    Tensor4<Scalar> out(n_out, n_in, k, k);
    if (!is_gabor(mode)) {
      std::copy(weights.begin(), weights.end(), out.data().begin());
      return out;
    }
    for (int o = 0; o < n_out; ++o)
      for (int i = 0; i < n_in; ++i)
        out.channel(o, i) = evaluate_kernel(filters[static_cast<std::size_t>(o) * n_in + i], grid);
    return out;
  }

  void zero_grads() {
    std::fill(filter_grads.begin(), filter_grads.end(), GaborGradient<Scalar>{0, 0, 0, 0});
    std::fill(weight_grads.begin(), weight_grads.end(), Scalar(0));
    std::fill(bias_grads.begin(), bias_grads.end(), Scalar(0));
  }

  // Folds loss gradients with respect to kernel elements into the learnables.
  void accumulate(const nn::ConvGradients<Scalar>& g) {
    for (std::size_t o = 0; o < bias_grads.size(); ++o) bias_grads[o] += g.bias[o];
    if (!is_gabor(mode)) {
      const auto src = g.kernels.data();
      for (std::size_t j = 0; j < weight_grads.size(); ++j) weight_grads[j] += src[j];
      return;
    }
    for (int o = 0; o < n_out; ++o) {
      for (int i = 0; i < n_in; ++i) {
        const std::size_t f = static_cast<std::size_t>(o) * n_in + i;
        const auto kg = kernel_gradients(filters[f], grid);
        const auto d = aggregate_param_gradients(g.kernels.channel(o, i), kg);
        auto& acc = filter_grads[f];
        acc.theta += d.theta;
        acc.omega += d.omega;
        acc.sigma += d.sigma;
        acc.phase += d.phase;
      }
    }
  }

  template <typename Self, typename F>
  static void visit(Self& self, std::string_view prefix, int block, F&& f) {
    static constexpr std::string_view kConv1[] = {"conv1.theta", "conv1.omega", "conv1.sigma",
                                                  "conv1.phase", "conv1.weight", "conv1.bias"};
    static constexpr std::string_view kConv2[] = {"conv2.theta", "conv2.omega", "conv2.sigma",
                                                  "conv2.phase", "conv2.weight", "conv2.bias"};
    const auto& names = prefix == "conv1" ? kConv1 : kConv2;
    using nn::ParamRole;
    if (is_gabor(self.mode)) {
      const bool phase = self.learns_phase();
      for (std::size_t j = 0; j < self.filters.size(); ++j) {
        auto& p = self.filters[j];
        auto& g = self.filter_grads[j];
        f(ParamId{names[0], block, j, ParamRole::kFree}, p.theta, g.theta);
        f(ParamId{names[1], block, j, ParamRole::kFree}, p.omega, g.omega);
        f(ParamId{names[2], block, j, ParamRole::kScale}, p.sigma, g.sigma);
        if (phase) f(ParamId{names[3], block, j, ParamRole::kFree}, p.phase, g.phase);
      }
    } else {
      for (std::size_t j = 0; j < self.weights.size(); ++j)
        f(ParamId{names[4], block, j, ParamRole::kFree}, self.weights[j], self.weight_grads[j]);
    }
    for (std::size_t j = 0; j < self.bias.size(); ++j)
      f(ParamId{names[5], block, j, ParamRole::kFree}, self.bias[j], self.bias_grads[j]);
  }
};

template <typename Scalar>
struct CvBlock {
  ConvLayer<Scalar> conv1;
  ConvLayer<Scalar> conv2;
  nn::BatchNormState<Scalar> bn;
  std::vector<Scalar> gamma_grads;
  std::vector<Scalar> beta_grads;
};

template <typename Scalar>
struct FcBlock {
  MatrixX<Scalar> w1, w1_grad;  // (2 N_i, N_i)
  VectorX<Scalar> b1, b1_grad;
  MatrixX<Scalar> w2, w2_grad;  // (N_c, 2 N_i)
  VectorX<Scalar> b2, b2_grad;
};

template <typename Scalar>
struct ForwardCache {
  struct Block {
    Tensor4<Scalar> input;
    Tensor4<Scalar> kernels1;
    Tensor4<Scalar> pre_relu;
    Tensor4<Scalar> post_relu;
    Tensor4<Scalar> kernels2;
    nn::BatchNormCache<Scalar> bn;
  };
  std::vector<Block> blocks;
  std::array<int, 4> last_dims{};
  MatrixX<Scalar> pooled;
  MatrixX<Scalar> hidden_pre;
  MatrixX<Scalar> hidden;
};

struct StepResult {
  double loss{0};
  int correct{0};
  int count{0};
};

// One row of the learned-frequency dump.
struct FrequencyRecord {
  int out{0};
  int in{0};
  double theta0{0}, omega0{0};
  double theta{0}, omega{0}, sigma{0}, phase{0};
};

template <typename Scalar>
class GaborNet {
 public:
  static GaborNet initialize(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  std::vector<CvBlock<Scalar>>& blocks() { return blocks_; }
  const std::vector<CvBlock<Scalar>>& blocks() const { return blocks_; }
  FcBlock<Scalar>& fc() { return fc_; }
  const FcBlock<Scalar>& fc() const { return fc_; }
  nn::AdamState<Scalar>& optimizer() { return adam_; }

  int conv_layer_count() const { return 2 * static_cast<int>(blocks_.size()); }
  // 1-based over all convolution layers: block b holds layers 2b-1 and 2b.
  const ConvLayer<Scalar>& conv_layer(int layer) const;

  // Logits (N, N_c). Train mode uses batch statistics in BN and updates its
  // running estimates; eval mode is read-only.
  MatrixX<Scalar> forward(const Tensor4<Scalar>& batch, nn::Mode mode,
                          ForwardCache<Scalar>* cache = nullptr);
  MatrixX<Scalar> predict(const Tensor4<Scalar>& batch) const;

  // Train-mode loss with freshly computed gradients for every learnable.
  StepResult compute_gradients(const Tensor4<Scalar>& batch, std::span<const int> labels);
  // Train-mode loss only; gradients untouched.
  double loss(const Tensor4<Scalar>& batch, std::span<const int> labels);
  // compute_gradients followed by one Adam update and the sigma clamp.
  StepResult backward_and_step(const Tensor4<Scalar>& batch, std::span<const int> labels);
  void apply_optimizer_step();
  void zero_grads();

  // Calls f(ParamId, Scalar& value, Scalar& grad) for every learnable scalar
  // in declaration order.
  template <typename F>
  void visit_parameters(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit_parameters(F&& f) const {
    visit_impl(*this, f);
  }
  std::int64_t parameter_count() const;

  // BN running statistics in declaration order (mean then var per block).
  std::vector<Scalar> state_values() const;
  void set_state_values(std::span<const Scalar> values);

  std::vector<FrequencyRecord> dump_learned_frequencies(int layer) const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f);

  void check_batch(const Tensor4<Scalar>& batch) const;

  NetworkConfig config_;
  std::vector<CvBlock<Scalar>> blocks_;
  FcBlock<Scalar> fc_;
  nn::AdamState<Scalar> adam_;
};

template <typename Scalar>
GaborNet<Scalar> initialize(const NetworkConfig& config, std::uint64_t seed) {
  return GaborNet<Scalar>::initialize(config, seed);
}

template <typename Scalar>
GaborNet<Scalar> GaborNet<Scalar>::initialize(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  GaborNet net;
  net.config_ = config;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2 * std::numbers::pi;
  auto uniform_weights = [&](std::size_t n, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<Scalar> w(n);
    for (auto& v : w) v = static_cast<Scalar>((2 * unit(rng) - 1) * limit);
    return w;
  };

  auto make_layer = [&](int n_in, const CvBlockConfig& bc, bool with_bias) {
    ConvLayer<Scalar> layer;
    layer.mode = config.mode;
    layer.n_in = n_in;
    layer.n_out = bc.n_out();
    layer.grid = KernelGrid(bc.kernel_size);
    const int k = bc.kernel_size;
    const std::size_t n_filters = static_cast<std::size_t>(layer.n_out) * n_in;
    if (is_gabor(config.mode)) {
      layer.filters.resize(n_filters);
      for (int t = 0; t < bc.n_theta; ++t) {
        for (int m = 0; m < bc.n_mag; ++m) {
          const int o = t * bc.n_mag + m;
          const double theta0 = t * std::numbers::pi / bc.n_theta;
          const double omega0 = (std::numbers::pi / 2) * std::pow(0.5, m);
          for (int i = 0; i < n_in; ++i) {
            auto& p = layer.filters[static_cast<std::size_t>(o) * n_in + i];
            p.theta = static_cast<Scalar>(theta0);
            p.omega = static_cast<Scalar>(omega0);
            p.sigma = static_cast<Scalar>(k / 8.0);
          }
        }
      }
      // Phases are drawn per filter in (o, i) order after the deterministic
      // fields so the draw sequence does not depend on the bank layout.
      for (auto& p : layer.filters)
        p.phase = config.mode == KernelMode::kGabor ? static_cast<Scalar>(two_pi * unit(rng))
                                                    : Scalar(0);
      layer.initial_filters = layer.filters;
      layer.filter_grads.assign(n_filters, GaborGradient<Scalar>{0, 0, 0, 0});
    } else {
      layer.weights = uniform_weights(n_filters * k * k, double(n_in) * k * k,
                                      double(layer.n_out) * k * k);
      layer.weight_grads.assign(layer.weights.size(), Scalar(0));
    }
    if (with_bias) {
      layer.bias.assign(layer.n_out, Scalar(0));
      layer.bias_grads.assign(layer.n_out, Scalar(0));
    }
    return layer;
  };

  int n_in = config.input_bands;
  for (const auto& bc : config.blocks) {
    CvBlock<Scalar> block;
    block.conv1 = make_layer(n_in, bc, true);
    block.conv2 = make_layer(bc.n_out(), bc, false);
    block.bn = nn::BatchNormState<Scalar>(bc.n_out());
    block.bn.reset_running_stats();
    block.gamma_grads.assign(bc.n_out(), Scalar(0));
    block.beta_grads.assign(bc.n_out(), Scalar(0));
    net.blocks_.push_back(std::move(block));
    n_in = bc.n_out();
  }

  const int hidden = 2 * n_in;
  auto fill_matrix = [&](MatrixX<Scalar>& m, int rows, int cols) {
    const auto w = uniform_weights(static_cast<std::size_t>(rows) * cols, cols, rows);
    m = Eigen::Map<const MatrixX<Scalar>>(w.data(), rows, cols);
  };
  fill_matrix(net.fc_.w1, hidden, n_in);
  net.fc_.b1 = VectorX<Scalar>::Zero(hidden);
  fill_matrix(net.fc_.w2, config.n_classes, hidden);
  net.fc_.b2 = VectorX<Scalar>::Zero(config.n_classes);
  net.fc_.w1_grad = MatrixX<Scalar>::Zero(hidden, n_in);
  net.fc_.b1_grad = VectorX<Scalar>::Zero(hidden);
  net.fc_.w2_grad = MatrixX<Scalar>::Zero(config.n_classes, hidden);
  net.fc_.b2_grad = VectorX<Scalar>::Zero(config.n_classes);

  net.adam_ = nn::AdamState<Scalar>(static_cast<std::size_t>(net.parameter_count()));
  net.adam_.learning_rate = static_cast<Scalar>(config.learning_rate);
  return net;
}

template <typename Scalar>
template <typename Self, typename F>
void GaborNet<Scalar>::visit_impl(Self& self, F& f) {
  using nn::ParamRole;
  for (std::size_t b = 0; b < self.blocks_.size(); ++b) {
    auto& block = self.blocks_[b];
    const int bi = static_cast<int>(b);
    ConvLayer<Scalar>::visit(block.conv1, "conv1", bi, f);
    ConvLayer<Scalar>::visit(block.conv2, "conv2", bi, f);
    for (std::size_t c = 0; c < block.bn.gamma.size(); ++c)
      f(ParamId{"bn.gamma", bi, c, ParamRole::kFree}, block.bn.gamma[c], block.gamma_grads[c]);
    for (std::size_t c = 0; c < block.bn.beta.size(); ++c)
      f(ParamId{"bn.beta", bi, c, ParamRole::kFree}, block.bn.beta[c], block.beta_grads[c]);
  }
  auto& fc = self.fc_;
  auto visit_dense = [&](std::string_view name, auto& values, auto& grads) {
    for (Eigen::Index j = 0; j < values.size(); ++j)
      f(ParamId{name, -1, static_cast<std::size_t>(j), ParamRole::kFree}, values.data()[j],
        grads.data()[j]);
  };
  visit_dense("fc1.weight", fc.w1, fc.w1_grad);
  visit_dense("fc1.bias", fc.b1, fc.b1_grad);
  visit_dense("fc2.weight", fc.w2, fc.w2_grad);
  visit_dense("fc2.bias", fc.b2, fc.b2_grad);
}

template <typename Scalar>
std::int64_t GaborNet<Scalar>::parameter_count() const {
  std::int64_t n = 0;
  visit_parameters([&](const ParamId&, const Scalar&, const Scalar&) { ++n; });
  return n;
}

template <typename Scalar>
const ConvLayer<Scalar>& GaborNet<Scalar>::conv_layer(int layer) const {
  if (layer < 1 || layer > conv_layer_count())
    throw ConfigError("layer " + std::to_string(layer) + " out of range 1.." +
                      std::to_string(conv_layer_count()));
  const auto& block = blocks_[(layer - 1) / 2];
  return layer % 2 == 1 ? block.conv1 : block.conv2;
}

template <typename Scalar>
void GaborNet<Scalar>::check_batch(const Tensor4<Scalar>& batch) const {
  if (batch.channels() != config_.input_bands || batch.height() != config_.patch_size ||
      batch.width() != config_.patch_size)
    throw ContractViolation("network input " + batch.shape_string() + " does not match (N," +
                            std::to_string(config_.input_bands) + "," +
                            std::to_string(config_.patch_size) + "," +
                            std::to_string(config_.patch_size) + ")");
}

template <typename Scalar>
MatrixX<Scalar> GaborNet<Scalar>::forward(const Tensor4<Scalar>& batch, nn::Mode mode,
                                          ForwardCache<Scalar>* cache) {
  check_batch(batch);
  using nn::Padding;
  if (cache) cache->blocks.assign(blocks_.size(), {});
  Tensor4<Scalar> x = batch;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& block = blocks_[b];
    auto k1 = block.conv1.synthesize();
    auto pre = nn::conv2d_forward(x, k1, std::span<const Scalar>(block.conv1.bias), Padding::kSame);
    auto act = nn::relu_forward(pre);
    auto k2 = block.conv2.synthesize();
    auto mixed = nn::conv2d_forward(act, k2, std::span<const Scalar>{}, Padding::kSame);
    auto* bn_cache = cache ? &cache->blocks[b].bn : nullptr;
    auto out = nn::batchnorm_forward(mixed, block.bn, mode, bn_cache);
    if (cache) {
      auto& c = cache->blocks[b];
      c.input = std::move(x);
      c.kernels1 = std::move(k1);
      c.pre_relu = std::move(pre);
      c.post_relu = std::move(act);
      c.kernels2 = std::move(k2);
    }
    x = std::move(out);
  }
  auto pooled = nn::global_avg_pool(x);
  auto hidden_pre = nn::fully_connected_forward(pooled, fc_.w1, fc_.b1);
  MatrixX<Scalar> hidden = hidden_pre.cwiseMax(Scalar(0));
  auto logits = nn::fully_connected_forward(hidden, fc_.w2, fc_.b2);
  if (cache) {
    cache->last_dims = x.dims();
    cache->pooled = std::move(pooled);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return logits;
}

template <typename Scalar>
MatrixX<Scalar> GaborNet<Scalar>::predict(const Tensor4<Scalar>& batch) const {
  check_batch(batch);
  using nn::Padding;
  Tensor4<Scalar> x = batch;
  for (const auto& block : blocks_) {
    auto pre = nn::conv2d_forward(x, block.conv1.synthesize(),
                                  std::span<const Scalar>(block.conv1.bias), Padding::kSame);
    auto act = nn::relu_forward(pre);
    auto mixed = nn::conv2d_forward(act, block.conv2.synthesize(), std::span<const Scalar>{},
                                    Padding::kSame);
    x = nn::batchnorm_inference(mixed, block.bn);
  }
  auto hidden = nn::fully_connected_forward(nn::global_avg_pool(x), fc_.w1, fc_.b1)
                    .cwiseMax(Scalar(0))
                    .eval();
  return nn::fully_connected_forward(hidden, fc_.w2, fc_.b2);
}

template <typename Scalar>
void GaborNet<Scalar>::zero_grads() {
  for (auto& block : blocks_) {
    block.conv1.zero_grads();
    block.conv2.zero_grads();
    std::fill(block.gamma_grads.begin(), block.gamma_grads.end(), Scalar(0));
    std::fill(block.beta_grads.begin(), block.beta_grads.end(), Scalar(0));
  }
  fc_.w1_grad.setZero();
  fc_.b1_grad.setZero();
  fc_.w2_grad.setZero();
  fc_.b2_grad.setZero();
}

namespace detail {

template <typename Scalar>
int count_correct(const MatrixX<Scalar>& logits, std::span<const int> labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    if (arg == labels[i]) ++correct;
  }
  return correct;
}

}  // namespace detail

template <typename Scalar>
StepResult GaborNet<Scalar>::compute_gradients(const Tensor4<Scalar>& batch,
                                               std::span<const int> labels) {
  ForwardCache<Scalar> cache;
  const auto logits = forward(batch, nn::Mode::kTrain, &cache);
  const auto ce = nn::softmax_cross_entropy(logits, labels);
  if (!std::isfinite(ce.loss)) throw RuntimeFailure("training loss is not finite");
  zero_grads();

  const auto g2 = nn::fully_connected_backward(ce.grad_logits, cache.hidden, fc_.w2);
  fc_.w2_grad += g2.weights;
  fc_.b2_grad += g2.bias;
  const MatrixX<Scalar> grad_hidden =
      (cache.hidden_pre.array() > Scalar(0)).select(g2.input, Scalar(0));
  const auto g1 = nn::fully_connected_backward(grad_hidden, cache.pooled, fc_.w1);
  fc_.w1_grad += g1.weights;
  fc_.b1_grad += g1.bias;
  auto grad = nn::global_avg_pool_backward(g1.input, cache.last_dims);

  using nn::Padding;
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    auto& block = blocks_[b];
    auto& c = cache.blocks[b];
    const auto gbn = nn::batchnorm_backward(grad, c.bn, block.bn);
    for (std::size_t j = 0; j < block.gamma_grads.size(); ++j) {
      block.gamma_grads[j] += gbn.gamma[j];
      block.beta_grads[j] += gbn.beta[j];
    }
    const auto gc2 = nn::conv2d_backward(gbn.input, c.post_relu, c.kernels2, Padding::kSame);
    block.conv2.accumulate(gc2);
    const auto grad_pre = nn::relu_backward(gc2.input, c.pre_relu);
    auto gc1 = nn::conv2d_backward(grad_pre, c.input, c.kernels1, Padding::kSame);
    block.conv1.accumulate(gc1);
    grad = std::move(gc1.input);
  }
  return {static_cast<double>(ce.loss), detail::count_correct(logits, labels),
          static_cast<int>(labels.size())};
}

template <typename Scalar>
double GaborNet<Scalar>::loss(const Tensor4<Scalar>& batch, std::span<const int> labels) {
  return static_cast<double>(nn::softmax_cross_entropy(forward(batch, nn::Mode::kTrain), labels).loss);
}

template <typename Scalar>
void GaborNet<Scalar>::apply_optimizer_step() {
  const auto n = static_cast<std::size_t>(parameter_count());
  std::vector<Scalar> values, grads;
  std::vector<nn::ParamRole> roles;
  values.reserve(n);
  grads.reserve(n);
  roles.reserve(n);
  visit_parameters([&](const ParamId& id, Scalar& v, Scalar& g) {
    values.push_back(v);
    grads.push_back(g);
    roles.push_back(id.role);
  });
  nn::adam_step<Scalar>(values, grads, adam_, roles, static_cast<Scalar>(kSigmaMin));
  std::size_t j = 0;
  visit_parameters([&](const ParamId&, Scalar& v, Scalar&) { v = values[j++]; });
}

template <typename Scalar>
StepResult GaborNet<Scalar>::backward_and_step(const Tensor4<Scalar>& batch,
                                               std::span<const int> labels) {
  const auto r = compute_gradients(batch, labels);
  apply_optimizer_step();
  return r;
}

template <typename Scalar>
std::vector<Scalar> GaborNet<Scalar>::state_values() const {
  std::vector<Scalar> out;
  for (const auto& block : blocks_) {
    out.insert(out.end(), block.bn.running_mean.begin(), block.bn.running_mean.end());
    out.insert(out.end(), block.bn.running_var.begin(), block.bn.running_var.end());
  }
  return out;
}

template <typename Scalar>
void GaborNet<Scalar>::set_state_values(std::span<const Scalar> values) {
  std::size_t need = 0;
  for (const auto& block : blocks_) need += 2 * block.bn.gamma.size();
  if (values.size() != need) throw ContractViolation("BN state length mismatch");
  std::size_t j = 0;
  for (auto& block : blocks_) {
    const std::size_t c = block.bn.gamma.size();
    block.bn.running_mean.assign(values.begin() + j, values.begin() + j + c);
    j += c;
    block.bn.running_var.assign(values.begin() + j, values.begin() + j + c);
    j += c;
  }
}

template <typename Scalar>
std::vector<FrequencyRecord> GaborNet<Scalar>::dump_learned_frequencies(int layer) const {
  if (!is_gabor(config_.mode))
    throw RuntimeFailure("learned frequencies are only defined for Gabor modes");
  const auto& conv = conv_layer(layer);
  std::vector<FrequencyRecord> out;
  out.reserve(conv.filters.size());
  for (int o = 0; o < conv.n_out; ++o)
    for (int i = 0; i < conv.n_in; ++i) {
      const std::size_t f = static_cast<std::size_t>(o) * conv.n_in + i;
      const auto& p = conv.filters[f];
      const auto& p0 = conv.initial_filters[f];
      out.push_back({o, i, double(p0.theta), double(p0.omega), double(p.theta),
                     double(p.omega), double(p.sigma), double(p.phase)});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Training and evaluation loops.

struct EpochRecord {
  int epoch{0};  // 1-based
  double loss{0};
  double train_accuracy{0};
  double learning_rate{0};
};

struct FitOptions {
  int epochs{300};
  int batch_size{100};
  double learning_rate{0.0076};
  double lr_decay{0.995};
  std::uint64_t shuffle_seed{1};
  // Stops after the epoch for which it returns true.
  std::function<bool(const EpochRecord&)> stop;
  std::function<void(const EpochRecord&)> on_epoch;

  static FitOptions from(const NetworkConfig& c) {
    FitOptions o;
    o.epochs = c.epochs;
    o.batch_size = c.batch_size;
    o.learning_rate = c.learning_rate;
    o.lr_decay = c.lr_decay;
    o.shuffle_seed = c.seed;
    return o;
  }
};

// Epoch e (0-based) runs at lr0 * decay^e. The recorded loss and accuracy are
// sample-weighted averages of the train-mode minibatch results.
template <typename Scalar>
std::vector<EpochRecord> fit(GaborNet<Scalar>& net, const data::PatchDataset& train,
                             const FitOptions& options) {
  if (options.epochs < 0) throw ConfigError("epochs must be >= 0");
  std::vector<EpochRecord> history;
  if (options.epochs == 0) return history;
  if (train.size() == 0) throw RuntimeFailure("fit: empty training set");
  for (int e = 0; e < options.epochs; ++e) {
    const double lr = nn::decayed_learning_rate(options.learning_rate, options.lr_decay, e);
    net.optimizer().learning_rate = static_cast<Scalar>(lr);
    data::BatchIterator<Scalar> it(train, options.batch_size,
                                   options.shuffle_seed * 1000003ULL + static_cast<std::uint64_t>(e));
    double loss_sum = 0;
    long correct = 0, seen = 0;
    while (auto batch = it.next()) {
      const auto r = net.backward_and_step(batch->patches, batch->labels);
      loss_sum += r.loss * r.count;
      correct += r.correct;
      seen += r.count;
    }
    EpochRecord rec{e + 1, loss_sum / seen, double(correct) / seen, lr};
    history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop && options.stop(rec)) break;
  }
  return history;
}

struct EvalResult {
  double overall_accuracy{0};
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the test set
  // confusion[true][predicted], zero-based class ids.
  std::vector<std::vector<std::int64_t>> confusion;
  std::int64_t total{0};
};

template <typename Scalar>
EvalResult evaluate(const GaborNet<Scalar>& net, const data::PatchDataset& test,
                    int batch_size = 100, int threads = 1) {
  if (test.size() == 0) throw RuntimeFailure("evaluate: empty test set");
  const int nc = net.config().n_classes;
  using Confusion = std::vector<std::vector<std::int64_t>>;
  auto empty = [nc] { return Confusion(nc, std::vector<std::int64_t>(nc, 0)); };

  data::BatchIterator<Scalar> it(test, batch_size, std::nullopt);
  std::vector<data::Batch<Scalar>> batches;
  auto run = [&](const data::Batch<Scalar>& b, Confusion& conf) {
    const auto logits = net.predict(b.patches);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg;
      logits.row(i).maxCoeff(&arg);
      const int truth = b.labels[i];
      if (truth < 0 || truth >= nc) throw ContractViolation("evaluate: label out of range");
      ++conf[truth][arg];
    }
  };

  Confusion confusion = empty();
  if (threads <= 1) {
    while (auto b = it.next()) run(*b, confusion);
  } else {
    // Batches are independent in eval mode; counts merge exactly.
    while (auto b = it.next()) batches.push_back(std::move(*b));
    std::vector<Confusion> partial(threads, empty());
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t j = t; j < batches.size(); j += threads) run(batches[j], partial[t]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (const auto& p : partial)
      for (int a = 0; a < nc; ++a)
        for (int b = 0; b < nc; ++b) confusion[a][b] += p[a][b];
  }

  EvalResult r;
  r.confusion = std::move(confusion);
  std::int64_t correct = 0;
  for (int a = 0; a < nc; ++a) {
    std::int64_t row = 0;
    for (int b = 0; b < nc; ++b) row += r.confusion[a][b];
    correct += r.confusion[a][a];
    r.total += row;
    r.per_class_accuracy.push_back(row ? double(r.confusion[a][a]) / row
                                       : std::numeric_limits<double>::quiet_NaN());
  }
  r.overall_accuracy = double(correct) / r.total;
  return r;
}

}  // namespace gabornet

#endif  // GABORNET_NETWORK_HPP_
