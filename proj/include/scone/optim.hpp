#pragma once

#include "scone/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>

namespace scone {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a flat parameter buffer of fixed size.
class Adam {
 public:
  Adam(std::size_t size, AdamConfig config = {});

  void step(std::span<double> params, std::span<const double> grads);

  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
  std::uint64_t steps() const noexcept { return t_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(m_.size()); }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  AdamConfig config_;
  Vector m_;
  Vector v_;
  std::uint64_t t_ = 0;
};

}  // namespace scone
