#include "scone/losses.hpp"

#include "scone/error.hpp"

#include <cmath>

namespace scone {

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

BprResult bpr_loss(const RowMatrix& users, const RowMatrix& pos, const RowMatrix& neg) {
  const auto rows = users.rows();
  if (rows == 0 || pos.rows() != rows || neg.rows() != rows || pos.cols() != users.cols() ||
      neg.cols() != users.cols())
    throw ConfigError("BPR inputs must be nonempty and equally shaped");
  BprResult r;
  r.grad_user.resize(rows, users.cols());
  r.grad_pos.resize(rows, users.cols());
  r.grad_neg.resize(rows, users.cols());
  const double inv = 1.0 / static_cast<double>(rows);
  for (Eigen::Index k = 0; k < rows; ++k) {
    const double margin = users.row(k).dot(pos.row(k)) - users.row(k).dot(neg.row(k));
    r.loss += softplus(-margin);
    // d softplus(−x)/dx = −σ(−x)
    const double coeff = -inv / (1.0 + std::exp(margin));
    r.grad_user.row(k) = coeff * (pos.row(k) - neg.row(k));
    r.grad_pos.row(k) = coeff * users.row(k);
    r.grad_neg.row(k) = -coeff * users.row(k);
  }
  r.loss *= inv;
  return r;
}

InfoNceResult infonce_loss(const RowMatrix& views_a, const RowMatrix& views_b, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  const auto rows = views_a.rows();
  if (rows == 0 || views_b.rows() != rows || views_b.cols() != views_a.cols())
    throw ConfigError("InfoNCE views must be nonempty and equally shaped");

  const Vector norm_a = views_a.rowwise().norm();
  const Vector norm_b = views_b.rowwise().norm();
  if (norm_a.minCoeff() < 1e-12 || norm_b.minCoeff() < 1e-12)
    throw Error("InfoNCE: zero-norm row, cosine similarity undefined");
  const RowMatrix unit_a = norm_a.cwiseInverse().asDiagonal() * views_a;
  const RowMatrix unit_b = norm_b.cwiseInverse().asDiagonal() * views_b;

  RowMatrix logits = (unit_a * unit_b.transpose()) / tau;
  InfoNceResult r;
  // softmax rows in place; logits.row(i) becomes p_i
  for (Eigen::Index i = 0; i < rows; ++i) {
    auto row = logits.row(i);
    const double m = row.maxCoeff();
    row.array() = (row.array() - m).exp();
    const double z = row.sum();
    r.loss += std::log(z) + m - (std::log(row(i)) + m);
    row /= z;
  }
  RowMatrix d_logits = std::move(logits);
  d_logits.diagonal().array() -= 1.0;
  d_logits /= tau;

  const RowMatrix d_unit_a = d_logits * unit_b;
  const RowMatrix d_unit_b = d_logits.transpose() * unit_a;
  // d(x/|x|) = (g − u (u·g)) / |x|
  r.grad_a = d_unit_a - (unit_a.array().colwise() * (unit_a.cwiseProduct(d_unit_a).rowwise().sum().array())).matrix();
  r.grad_a = norm_a.cwiseInverse().asDiagonal() * r.grad_a;
  r.grad_b = d_unit_b - (unit_b.array().colwise() * (unit_b.cwiseProduct(d_unit_b).rowwise().sum().array())).matrix();
  r.grad_b = norm_b.cwiseInverse().asDiagonal() * r.grad_b;
  return r;
}

}  // namespace scone
