#include "gabornet/network.hpp"

namespace gabornet {

std::string to_string(KernelMode mode) {
  switch (mode) {
    case KernelMode::kGabor: return "gabor";
    case KernelMode::kRegular: return "regular";
    case KernelMode::kGaborPZeroInit: return "gabor_p_zero_init";
    case KernelMode::kGaborNoP: return "gabor_no_p";
  }
  return "unknown";
}

KernelMode parse_kernel_mode(std::string_view text) {
  if (text == "gabor") return KernelMode::kGabor;
  if (text == "regular") return KernelMode::kRegular;
  if (text == "gabor_p_zero_init") return KernelMode::kGaborPZeroInit;
  if (text == "gabor_no_p") return KernelMode::kGaborNoP;
  throw ConfigError("unknown mode '" + std::string(text) +
                    "' (expected gabor, regular, gabor_p_zero_init or gabor_no_p)");
}

void NetworkConfig::validate() const {
  if (blocks.empty()) throw ConfigError("network needs at least one CV block");
  for (const auto& b : blocks) {
    if (b.n_theta < 1 || b.n_mag < 1) throw ConfigError("n_theta and n_mag must be >= 1");
    KernelGrid check(b.kernel_size);
  }
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  if (input_bands < 1) throw ConfigError("input_bands must be >= 1");
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("lr must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::vector<CvBlockConfig> NetworkConfig::doubling_schedule(int n_blocks, int kernel_size,
                                                            int n_theta, int n_mag) {
  if (n_blocks < 1) throw ConfigError("blocks must be >= 1");
  std::vector<CvBlockConfig> out;
  for (int b = 0; b < n_blocks; ++b) out.push_back({n_theta << b, n_mag, kernel_size});
  return out;
}

std::int64_t count_block_parameters(KernelMode mode, int n_in, const CvBlockConfig& block) {
  const std::int64_t k = block.kernel_size;
  const std::int64_t per_filter = mode == KernelMode::kRegular  ? k * k
                                  : mode == KernelMode::kGaborNoP ? 3
                                                                  : 4;
  const std::int64_t ni = n_in, no = block.n_out();
  return per_filter * ni * no + no   // Conv1 with bias
         + per_filter * no * no      // Conv2
         + 2 * no;                   // BN gamma, beta
}

std::int64_t count_fc_parameters(int n_in, int n_classes) {
  const std::int64_t ni = n_in, nc = n_classes;
  return 2 * ni * ni + 2 * ni + 2 * ni * nc + nc;
}

std::int64_t count_parameters(const NetworkConfig& config) {
  config.validate();
  std::int64_t total = 0;
  int n_in = config.input_bands;
  for (const auto& b : config.blocks) {
    total += count_block_parameters(config.mode, n_in, b);
    n_in = b.n_out();
  }
  return total + count_fc_parameters(n_in, config.n_classes);
}

}  // namespace gabornet
