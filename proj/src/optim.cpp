#include "scone/optim.hpp"

#include "scone/binary_io.hpp"
#include "scone/error.hpp"

#include <cmath>

namespace scone {

Adam::Adam(std::size_t size, AdamConfig config)
    : config_(config),
      m_(Vector::Zero(static_cast<Eigen::Index>(size))),
      v_(Vector::Zero(static_cast<Eigen::Index>(size))) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != size() || grads.size() != size())
    throw ConfigError("Adam: parameter/gradient size mismatch");
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double g = grads[k];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double m_hat = m_[i] / correction1;
    const double v_hat = v_[i] / correction2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

void Adam::save(std::ostream& out) const {
  io::write_u32(out, static_cast<std::uint32_t>(size()));
  io::write_u32(out, static_cast<std::uint32_t>(t_ & 0xffffffffu));
  io::write_u32(out, static_cast<std::uint32_t>(t_ >> 32));
  for (Eigen::Index i = 0; i < m_.size(); ++i) io::write_f64(out, m_[i]);
  for (Eigen::Index i = 0; i < v_.size(); ++i) io::write_f64(out, v_[i]);
}

void Adam::load(std::istream& in) {
  const auto n = io::read_u32(in);
  if (n != size()) throw IoError("optimizer state size mismatch");
  const std::uint64_t lo = io::read_u32(in);
  const std::uint64_t hi = io::read_u32(in);
  t_ = lo | (hi << 32);
  for (Eigen::Index i = 0; i < m_.size(); ++i) m_[i] = io::read_f64(in);
  for (Eigen::Index i = 0; i < v_.size(); ++i) v_[i] = io::read_f64(in);
}

}  // namespace scone
