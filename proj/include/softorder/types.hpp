#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace softorder {

#ifdef SOFTORDER_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

using Index = Eigen::Index;

using ArrayXs = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using VectorXs = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatrixXs = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using RowMatrixXs = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixXs>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXs>;

} // namespace softorder
