// SPDX-License-Identifier: Apache-2.0
#include "polarsim/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace polarsim {

double wrap_angle(double radians)
{
    if (!std::isfinite(radians))
        throw std::invalid_argument("wrap_angle: angle is not finite");
    double r = std::fmod(radians, kTwoPi);
    if (r < 0.0)
        r += kTwoPi;
    // fmod of a tiny negative value can round back up to exactly 2*pi
    if (r >= kTwoPi)
        r = 0.0;
    return r;
}

RotationAngles::RotationAngles(double alpha, double beta, double gamma)
    : alpha_(wrap_angle(alpha)), beta_(wrap_angle(beta)), gamma_(wrap_angle(gamma))
{
}

SubarrayLayout::SubarrayLayout(std::vector<Vec3> offsets) : offsets_(std::move(offsets))
{
    if (offsets_.empty())
        throw std::invalid_argument("SubarrayLayout: at least one antenna is required");
}

SubarrayLayout SubarrayLayout::planar(int count, double spacing)
{
    if (count < 1)
        throw std::invalid_argument("SubarrayLayout::planar: count must be >= 1");
    if (!(spacing > 0.0))
        throw std::invalid_argument("SubarrayLayout::planar: spacing must be positive");

    const int rows = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(count)))));
    const int cols = (count + rows - 1) / rows;
    const int used_rows = (count + cols - 1) / cols;

    std::vector<Vec3> offsets;
    offsets.reserve(count);
    const double x0 = 0.5 * (cols - 1) * spacing;
    const double y0 = 0.5 * (used_rows - 1) * spacing;
    for (int i = 0; i < count; ++i) {
        const int r = i / cols;
        const int c = i % cols;
        offsets.emplace_back(c * spacing - x0, r * spacing - y0, 0.0);
    }
    return SubarrayLayout(std::move(offsets));
}

Mat3 rotation_matrix(const RotationAngles& u)
{
    const double ca = std::cos(u.alpha()), sa = std::sin(u.alpha());
    const double cb = std::cos(u.beta()), sb = std::sin(u.beta());
    const double cg = std::cos(u.gamma()), sg = std::sin(u.gamma());

    Mat3 r;
    r << cb * cg, cb * sg, -sb,
         sb * sa * cg - ca * sg, sb * sa * sg + ca * cg, cb * sa,
         ca * sb * cg + sa * sg, ca * sb * sg - sa * cg, ca * cb;
    return r;
}

RotationAngles rotation_angles(const Mat3& r)
{
    const double beta = std::asin(std::clamp(-r(0, 2), -1.0, 1.0));
    if (std::hypot(r(1, 2), r(2, 2)) < 1e-12) {
        // gimbal lock: only gamma - sin(beta) alpha is identifiable
        return {0.0, beta, std::atan2(-r(1, 0), r(1, 1))};
    }
    return {std::atan2(r(1, 2), r(2, 2)), beta, std::atan2(r(0, 1), r(0, 0))};
}

std::vector<Vec3> antenna_positions(const SubarrayPose& pose, const SubarrayLayout& layout)
{
    const Mat3 r = rotation_matrix(pose.u);
    std::vector<Vec3> out;
    out.reserve(layout.offsets().size());
    for (const auto& off : layout.offsets())
        out.push_back(pose.q + r * off);
    return out;
}

Vec3 pointing_vector(double theta, double phi)
{
    constexpr double slack = 1e-12;
    if (!(theta >= -kPi / 2 - slack && theta <= kPi / 2 + slack))
        throw std::invalid_argument("pointing_vector: elevation outside [-pi/2, pi/2]");
    if (!(phi >= -kPi - slack && phi <= kPi + slack))
        throw std::invalid_argument("pointing_vector: azimuth outside [-pi, pi]");
    const double ct = std::cos(theta);
    return {ct * std::cos(phi), ct * std::sin(phi), std::sin(theta)};
}

Vec3 pointing_vector(const Direction& d) { return pointing_vector(d.theta, d.phi); }

Direction direction_of(const Vec3& f)
{
    const double n = f.norm();
    if (!(n > 0.0))
        throw std::invalid_argument("direction_of: zero vector");
    const Vec3 g = f / n;
    Direction d;
    d.theta = std::asin(std::clamp(g.z(), -1.0, 1.0));
    d.phi = std::hypot(g.x(), g.y()) < 1e-15 ? 0.0 : std::atan2(g.y(), g.x());
    return d;
}

Direction local_direction(const RotationAngles& u, const Vec3& f)
{
    return direction_of(rotation_matrix(u).transpose() * f);
}

Vec3 subarray_normal(const RotationAngles& u) { return rotation_matrix(u).col(2); }

RotationAngles rotation_for_boresight(const Vec3& normal, double gamma)
{
    const double n = normal.norm();
    if (!(n > 0.0))
        throw std::invalid_argument("rotation_for_boresight: zero normal");
    const Vec3 b = normal / n;
    // third column of R(u) is [-sin(beta), cos(beta) sin(alpha), cos(alpha) cos(beta)]
    const double beta = std::asin(std::clamp(-b.x(), -1.0, 1.0));
    const double alpha = std::hypot(b.y(), b.z()) < 1e-15 ? 0.0 : std::atan2(b.y(), b.z());
    return {alpha, beta, gamma};
}

bool inside_cube(const Vec3& q, double side)
{
    const double h = 0.5 * side;
    return (q.array().abs() <= h + 1e-12).all();
}

} // namespace polarsim
