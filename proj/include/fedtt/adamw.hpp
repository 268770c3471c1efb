#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

namespace fedtt {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Moments and step count for one parameter tensor.
struct AdamWSlot {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  void reset() {
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    step = 0;
  }
};

// Decoupled weight decay (param *= 1 - lr*wd) followed by the bias-corrected
// Adam update. Throws NumericError on a non-finite gradient, leaving param
// and slot untouched.
void adamw_step(const AdamWConfig& cfg, AdamWSlot& slot, std::span<double> param,
                std::span<const double> grad);

// One slot per parameter tensor, in a fixed order.
class AdamWState {
 public:
  AdamWState() = default;
  AdamWState(AdamWConfig cfg, std::span<const std::size_t> sizes);

  const AdamWConfig& config() const { return cfg_; }
  AdamWConfig& config() { return cfg_; }
  std::size_t slot_count() const { return slots_.size(); }
  AdamWSlot& slot(std::size_t i) { return slots_.at(i); }
  const AdamWSlot& slot(std::size_t i) const { return slots_.at(i); }

  void step(std::size_t i, std::span<double> param, std::span<const double> grad) {
    adamw_step(cfg_, slots_.at(i), param, grad);
  }

 private:
  AdamWConfig cfg_;
  std::vector<AdamWSlot> slots_;
};

}  // namespace fedtt
