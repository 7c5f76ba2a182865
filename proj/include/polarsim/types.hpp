// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace polarsim {

using cd = std::complex<double>;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat2c = Eigen::Matrix2cd;
using VecXc = Eigen::VectorXcd;
using MatXc = Eigen::MatrixXcd;
using VecX = Eigen::VectorXd;

/// Complex 2-vector of (V, H) element weights; see polar_channel.hpp and codebook.hpp.
using PolarVec = Eigen::Vector2cd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kSpeedOfLight = 299792458.0;

/// Algorithmic failure (rank deficiency, failed bracketing, ...). Precondition
/// violations use std::invalid_argument instead.
class Error : public std::runtime_error
{
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace polarsim
