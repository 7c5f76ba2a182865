// SPDX-License-Identifier: Apache-2.0
#include "polarsim/polar_channel.hpp"

#include <algorithm>
#include <cmath>

namespace polarsim {

double GainPattern::gain_dbi(const Vec3& local_dir) const
{
    if (kind == Kind::isotropic)
        return 0.0;

    // Re-express the direction in the usual element-pattern frame whose
    // boresight is +x: (x, y, z) -> (z, y, -x) is a proper rotation.
    const Vec3 d = local_dir.normalized();
    const double zenith_deg = std::acos(std::clamp(-d.x(), -1.0, 1.0)) * 180.0 / kPi;
    const double azimuth_deg = std::atan2(d.y(), d.z()) * 180.0 / kPi;

    const double vert = -std::min(12.0 * std::pow((zenith_deg - 90.0) / hpbw_deg, 2), sla_v_db);
    const double horiz = -std::min(12.0 * std::pow(azimuth_deg / hpbw_deg, 2), a_max_db);
    return g_max_dbi - std::min(-(vert + horiz), a_max_db);
}

UserState UserState::at(const Vec3& position, const RotationAngles& rotation)
{
    const Direction d = direction_of(position);
    UserState u;
    u.theta = d.theta;
    u.phi = d.phi;
    u.distance = position.norm();
    u.rotation = rotation;
    return u;
}

VecXc steering_vector(const SubarrayPose& pose, const SubarrayLayout& layout, const Vec3& f,
                      double lambda)
{
    const auto positions = antenna_positions(pose, layout);
    const double k0 = kTwoPi / lambda;
    VecXc a(static_cast<Eigen::Index>(positions.size()));
    for (std::size_t n = 0; n < positions.size(); ++n)
        a[static_cast<Eigen::Index>(n)] = std::polar(1.0, -k0 * f.dot(positions[n]));
    return a;
}

double effective_gain(const RotationAngles& u, const Vec3& f, const GainPattern& pattern)
{
    if (pattern.kind == GainPattern::Kind::isotropic)
        return 1.0;
    const Vec3 local = rotation_matrix(u).transpose() * f;
    return std::pow(10.0, pattern.gain_dbi(local) / 10.0);
}

VecXc unpolarformed_los_channel(const UserState& user, const SubarrayPose& pose,
                                const SubarrayLayout& layout, const PhysicalConstants& consts,
                                const GainPattern& pattern)
{
    if (!(user.distance > 1.0))
        throw std::invalid_argument("unpolarformed_los_channel: user distance must exceed the 1 m reference");
    const Vec3 f = user.direction();
    const double nu = consts.epsilon0 / (user.distance * user.distance);
    const double g = effective_gain(pose.u, f, pattern);
    const cd scale = std::sqrt(nu * g) * std::polar(1.0, -kTwoPi * user.distance / consts.lambda);
    return scale * steering_vector(pose, layout, f, consts.lambda);
}

std::pair<Vec3, Vec3> polarization_basis(double theta, double phi)
{
    const double st = std::sin(theta), ct = std::cos(theta);
    const double sp = std::sin(phi), cp = std::cos(phi);
    return {Vec3(st * sp, -ct, st * cp), Vec3(cp, 0.0, -sp)};
}

DualPolResponse dual_pol_response(const RotationAngles& u_bs, const RotationAngles& u_user,
                                  double theta, double phi)
{
    const Vec3 ev(0.0, 1.0, 0.0);
    const Vec3 eh(1.0, 0.0, 0.0);
    const auto [z, zbar] = polarization_basis(theta, phi);

    const Mat3 rb = rotation_matrix(u_bs);
    const Vec3 tv = rb * ev, th = rb * eh;
    const Mat3 ru = rotation_matrix(u_user);
    const Vec3 rv = ru * ev, rh = ru * eh;

    DualPolResponse out;
    out.tx_projection << tv.dot(z), th.dot(z),
                         tv.dot(zbar), th.dot(zbar);
    out.rx_projection << z.dot(rv), zbar.dot(rv),
                         z.dot(rh), zbar.dot(rh);
    out.response = out.rx_projection * out.tx_projection;
    return out;
}

VecXc polarformed_channel(const VecXc& h_unpol, const Mat2c& response, const PolarVec& v,
                          const PolarVec& w)
{
    const cd eta = v.dot(response * w); // Eigen's dot conjugates the left operand
    return h_unpol * eta;
}

ChannelFactors::ChannelFactors(int users, int subarrays, int antennas)
    : users_(users), subarrays_(subarrays), antennas_(antennas)
{
    if (users < 1 || subarrays < 1 || antennas < 1)
        throw std::invalid_argument("ChannelFactors: dimensions must be positive");
    los_.assign(static_cast<std::size_t>(users) * subarrays, VecXc::Zero(antennas));
    response_.assign(static_cast<std::size_t>(users) * subarrays, Mat2c::Zero());
}

VecXc ChannelFactors::stacked(int k, const std::vector<PolarVec>& v, const PolarVec& w) const
{
    VecXc h(static_cast<Eigen::Index>(subarrays_) * antennas_);
    for (int b = 0; b < subarrays_; ++b)
        h.segment(static_cast<Eigen::Index>(b) * antennas_, antennas_) =
            los(k, b) * v[b].dot(response(k, b) * w);
    return h;
}

MatXc ChannelFactors::user_matrix(int k, const std::vector<PolarVec>& v) const
{
    MatXc m(static_cast<Eigen::Index>(subarrays_) * antennas_, 2);
    for (int b = 0; b < subarrays_; ++b) {
        const Eigen::RowVector2cd row = v[b].adjoint() * response(k, b);
        m.block(static_cast<Eigen::Index>(b) * antennas_, 0, antennas_, 2) = los(k, b) * row;
    }
    return m;
}

ChannelFactors build_channel_factors(const std::vector<UserState>& users,
                                     const std::vector<SubarrayPose>& poses,
                                     const SubarrayLayout& layout,
                                     const PhysicalConstants& consts, const GainPattern& pattern)
{
    ChannelFactors cf(static_cast<int>(users.size()), static_cast<int>(poses.size()), layout.size());
    for (int k = 0; k < cf.users(); ++k) {
        const auto& user = users[k];
        for (int b = 0; b < cf.subarrays(); ++b) {
            cf.los(k, b) = unpolarformed_los_channel(user, poses[b], layout, consts, pattern);
            cf.response(k, b) = dual_pol_response(poses[b].u, user.rotation, user.theta, user.phi).response;
        }
    }
    return cf;
}

VecXc stacked_channel(const UserState& user, const std::vector<SubarrayPose>& poses,
                      const SubarrayLayout& layout, const std::vector<PolarVec>& v,
                      const PolarVec& w, const PhysicalConstants& consts,
                      const GainPattern& pattern)
{
    if (poses.empty())
        throw std::invalid_argument("stacked_channel: at least one subarray is required");
    if (v.size() != poses.size())
        throw std::invalid_argument("stacked_channel: one polarforming vector per subarray is required");
    const auto n = static_cast<Eigen::Index>(layout.size());
    VecXc h(n * static_cast<Eigen::Index>(poses.size()));
    for (std::size_t b = 0; b < poses.size(); ++b) {
        const VecXc los = unpolarformed_los_channel(user, poses[b], layout, consts, pattern);
        const Mat2c a = dual_pol_response(poses[b].u, user.rotation, user.theta, user.phi).response;
        h.segment(static_cast<Eigen::Index>(b) * n, n) = polarformed_channel(los, a, v[b], w);
    }
    return h;
}

} // namespace polarsim
