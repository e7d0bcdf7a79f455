#include "support.hpp"

#include "scone/error.hpp"
#include "scone/losses.hpp"
#include "scone/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace scone;
using namespace scone::testing;

TEST_CASE("softplus is stable at both ends") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(softplus(-800.0) < 1e-300);
  CHECK(softplus(3.0) == doctest::Approx(std::log1p(std::exp(3.0))));
}

TEST_CASE("equal scores cost ln 2 per triplet") {
  Rng rng(1);
  const RowMatrix u = random_matrix(4, 3, rng);
  const RowMatrix p = random_matrix(4, 3, rng);
  CHECK(bpr_loss(u, p, p).loss == doctest::Approx(0.6931472).epsilon(1e-7));
}

TEST_CASE("saturated margins cost nothing and stay finite") {
  RowMatrix u(1, 1), p(1, 1), n(1, 1);
  u << 1e3;
  p << 1e3;
  n << -1e3;
  const auto r = bpr_loss(u, p, n);
  CHECK(r.loss == 0.0);
  CHECK(r.grad_user.allFinite());
  const auto flipped = bpr_loss(u, n, p);
  CHECK(std::isfinite(flipped.loss));
  CHECK(flipped.loss == doctest::Approx(2e6));
}

TEST_CASE("BPR matches the textbook form") {
  Rng rng(2);
  const RowMatrix u = random_matrix(6, 4, rng);
  const RowMatrix p = random_matrix(6, 4, rng);
  const RowMatrix n = random_matrix(6, 4, rng);
  double expect = 0.0;
  for (int r = 0; r < 6; ++r) {
    const double x = u.row(r).dot(p.row(r)) - u.row(r).dot(n.row(r));
    expect += -std::log(1.0 / (1.0 + std::exp(-x)));
  }
  CHECK(bpr_loss(u, p, n).loss == doctest::Approx(expect / 6.0).epsilon(1e-12));
}

TEST_CASE("BPR gradients match finite differences on 5 triplets in dim 8") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) CHECK(bpr_gradient_error(rng) < 1e-4);
}

TEST_CASE("InfoNCE: single aligned pair costs nothing") {
  RowMatrix a(1, 3);
  a << 0.3, -1.0, 2.0;
  CHECK(infonce_loss(a, a, 0.2).loss == doctest::Approx(0.0));
}

TEST_CASE("InfoNCE: two aligned orthogonal pairs at tau 0.2") {
  RowMatrix a(2, 2);
  a << 1.0, 0.0, 0.0, 1.0;
  const double expect = 2.0 * std::log1p(std::exp(-5.0));
  CHECK(std::abs(expect - 0.0134307) < 1e-7);
  CHECK(infonce_loss(a, a, 0.2).loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("InfoNCE is invariant to row scaling") {
  Rng rng(4);
  const RowMatrix a = random_matrix(5, 3, rng);
  const RowMatrix b = random_matrix(5, 3, rng);
  RowMatrix a2 = a;
  a2.row(2) *= 7.5;
  RowMatrix b2 = b;
  b2.row(0) *= 0.01;
  CHECK(infonce_loss(a2, b2, 0.3).loss == doctest::Approx(infonce_loss(a, b, 0.3).loss).epsilon(1e-12));
}

TEST_CASE("InfoNCE rejects zero rows and mismatched shapes") {
  RowMatrix a = RowMatrix::Ones(2, 3);
  RowMatrix b = a;
  b.row(1).setZero();
  CHECK_THROWS_AS(infonce_loss(a, b, 0.2), Error);
  CHECK_THROWS_AS(infonce_loss(a, RowMatrix::Ones(3, 3), 0.2), ConfigError);
}

TEST_CASE("InfoNCE gradients match finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) CHECK(infonce_gradient_error(rng) < 1e-4);
}

TEST_CASE("Adam converges on a convex quadratic") {
  // f(x) = Σ c_k (x_k − m_k)², minimizer m
  Vector x = Vector::Zero(5);
  Vector c(5), m(5);
  c << 1.0, 4.0, 0.5, 10.0, 2.0;
  m << 0.3, -0.7, 0.1, 0.05, -0.2;
  Adam adam(5, AdamConfig{0.01});
  for (int it = 0; it < 2000; ++it) {
    const Vector g = 2.0 * c.cwiseProduct(x - m);
    adam.step({x.data(), 5}, {g.data(), 5});
  }
  CHECK(adam.steps() == 2000);
  CHECK((x - m).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("Adam first step moves each coordinate by the learning rate") {
  Vector x = Vector::Zero(3);
  Vector g(3);
  g << 5.0, -0.001, 0.0;
  Adam adam(3, AdamConfig{0.1});
  adam.step({x.data(), 3}, {g.data(), 3});
  CHECK(x[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(x[2] == 0.0);
}

TEST_CASE("Adam state round-trips and size is enforced") {
  Vector x = Vector::Ones(4);
  const Vector g = Vector::LinSpaced(4, -1.0, 2.0);
  Adam a(4, AdamConfig{0.05});
  for (int k = 0; k < 7; ++k) a.step({x.data(), 4}, {g.data(), 4});
  std::stringstream buf;
  a.save(buf);
  Adam b(4, AdamConfig{0.05});
  b.load(buf);
  Vector xa = x, xb = x;
  a.step({xa.data(), 4}, {g.data(), 4});
  b.step({xb.data(), 4}, {g.data(), 4});
  CHECK(xa == xb);
  CHECK(b.steps() == 8);
  CHECK_THROWS(a.step({x.data(), 3}, {g.data(), 3}));
}
