#pragma once

#include "scone/types.hpp"

namespace scone {

struct BprResult {
  double loss = 0.0;
  RowMatrix grad_user;
  RowMatrix grad_pos;
  RowMatrix grad_neg;
};

/// Mean over rows of −ln σ(e_u·e_pos − e_u·e_neg), computed as
/// softplus(−x) so that saturated margins stay finite.
BprResult bpr_loss(const RowMatrix& users, const RowMatrix& pos, const RowMatrix& neg);

struct InfoNceResult {
  double loss = 0.0;
  RowMatrix grad_a;
  RowMatrix grad_b;
};

/// Σ_i −log softmax_j(cos(a_i, b_j)/τ)[i]. Rows with norm below 1e-12 throw.
InfoNceResult infonce_loss(const RowMatrix& views_a, const RowMatrix& views_b, double tau);

/// log(1 + e^x) without overflow.
double softplus(double x);

}  // namespace scone
