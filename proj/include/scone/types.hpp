#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace scone {

/// Row-major dense matrix; one embedding vector per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

using index_t = std::uint32_t;

}  // namespace scone
