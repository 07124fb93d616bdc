#pragma once

#include <Eigen/Core>

namespace qtb {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

}  // namespace qtb
