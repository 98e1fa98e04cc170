#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace carrierscope {

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mat = MatX<double>;
using Vec = VecX<double>;
using MatF = MatX<float>;
using VecF = VecX<float>;
using MatI = MatX<int>;

using Index = Eigen::Index;

}  // namespace carrierscope
