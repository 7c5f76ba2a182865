// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "polarsim/types.hpp"

namespace polarsim {

/// Reduce an angle into [0, 2*pi). Throws std::invalid_argument if not finite.
double wrap_angle(double radians);

/// Rotation angles about the global x, y and z axes. Stored wrapped into [0, 2*pi).
class RotationAngles
{
  public:
    RotationAngles() = default;
    RotationAngles(double alpha, double beta, double gamma);

    double alpha() const { return alpha_; }
    double beta() const { return beta_; }
    double gamma() const { return gamma_; }
    Vec3 as_vector() const { return {alpha_, beta_, gamma_}; }

    friend bool operator==(const RotationAngles&, const RotationAngles&) = default;

  private:
    double alpha_ = 0.0;
    double beta_ = 0.0;
    double gamma_ = 0.0;
};

/// Position (global frame, meters) and rotation of one BS subarray.
struct SubarrayPose
{
    Vec3 q = Vec3::Zero();
    RotationAngles u;
};

/// Local antenna offsets of one subarray, in its own frame (meters).
class SubarrayLayout
{
  public:
    explicit SubarrayLayout(std::vector<Vec3> offsets);

    /// Near-square planar grid of `count` elements in the local x'-y' plane,
    /// centered at the origin. For a perfect square count this is the
    /// sqrt(N) x sqrt(N) UPA; otherwise rows = floor(sqrt(N)) and the grid
    /// is filled row by row.
    static SubarrayLayout planar(int count, double spacing);

    int size() const { return static_cast<int>(offsets_.size()); }
    const std::vector<Vec3>& offsets() const { return offsets_; }

  private:
    std::vector<Vec3> offsets_;
};

/// Spherical angles: theta is elevation in [-pi/2, pi/2], phi azimuth in [-pi, pi].
struct Direction
{
    double theta = 0.0;
    double phi = 0.0;
};

Mat3 rotation_matrix(const RotationAngles& u);

/// Angles u with rotation_matrix(u) == r for a proper rotation r. At
/// beta = +-pi/2 alpha and gamma are coupled; alpha is set to 0 there.
RotationAngles rotation_angles(const Mat3& r);

/// Global antenna positions q + R(u) * r_n for each local offset r_n.
std::vector<Vec3> antenna_positions(const SubarrayPose& pose, const SubarrayLayout& layout);

/// Unit vector for (theta, phi). Rejects angles outside their ranges.
Vec3 pointing_vector(double theta, double phi);
Vec3 pointing_vector(const Direction& d);

/// Inverse of pointing_vector for an arbitrary nonzero vector.
Direction direction_of(const Vec3& f);

/// Angles of R(u)^-1 f in the rotated frame. At the poles phi is 0.
Direction local_direction(const RotationAngles& u, const Vec3& f);

/// Rotated local +z axis (array boresight).
Vec3 subarray_normal(const RotationAngles& u);

/// Rotation whose boresight equals the unit vector `normal`; gamma spins the
/// array about its boresight.
RotationAngles rotation_for_boresight(const Vec3& normal, double gamma = 0.0);

bool inside_cube(const Vec3& q, double side);

} // namespace polarsim
