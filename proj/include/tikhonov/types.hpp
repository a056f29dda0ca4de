#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace tikhonov {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

}  // namespace tikhonov
