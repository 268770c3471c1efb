#include "fedtt/adamw.hpp"

#include <cmath>
#include <string>

#include "fedtt/error.hpp"

namespace fedtt {

void adamw_step(const AdamWConfig& cfg, AdamWSlot& slot, std::span<double> param,
                std::span<const double> grad) {
  if (param.size() != grad.size())
    throw ShapeError("adamw: parameter has " + std::to_string(param.size()) +
                     " values, gradient " + std::to_string(grad.size()));
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NumericError("adamw: non-finite gradient at element " + std::to_string(i));
  if (slot.m.size() != param.size()) {
    slot.m.assign(param.size(), 0.0);
    slot.v.assign(param.size(), 0.0);
    slot.step = 0;
  }
  ++slot.step;
  const double t = static_cast<double>(slot.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
    slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = slot.m[i] / bc1;
    const double vhat = slot.v[i] / bc2;
    param[i] = param[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

AdamWState::AdamWState(AdamWConfig cfg, std::span<const std::size_t> sizes) : cfg_(cfg) {
  slots_.resize(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    slots_[i].m.assign(sizes[i], 0.0);
    slots_[i].v.assign(sizes[i], 0.0);
  }
}

}  // namespace fedtt
