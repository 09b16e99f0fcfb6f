#pragma once

#include <Eigen/Dense>

namespace ovv {

// Row-major throughout: token rows are contiguous feature vectors.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ColumnVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

}  // namespace ovv
