// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "polarsim/geometry.hpp"

namespace polarsim {

/// Element radiation pattern used for the effective gain of a BS subarray.
/// Boresight is the local +z axis.
struct GainPattern
{
    enum class Kind { isotropic, three_gpp };

    Kind kind = Kind::isotropic;
    double g_max_dbi = 8.0;
    double hpbw_deg = 65.0;  ///< half-power beamwidth, both planes
    double a_max_db = 30.0;  ///< front-to-back attenuation floor A_m
    double sla_v_db = 30.0;  ///< vertical side-lobe limit

    static GainPattern isotropic() { return {}; }
    static GainPattern three_gpp() { return {Kind::three_gpp}; }

    /// Gain in dBi for a unit direction given in the subarray's local frame.
    double gain_dbi(const Vec3& local_dir) const;
};

/// Location and orientation of a single-antenna user. Angles are the DoA at
/// the BS center; distance is measured from the BS center.
struct UserState
{
    double theta = 0.0;
    double phi = 0.0;
    double distance = 2.0;
    RotationAngles rotation;

    Vec3 direction() const { return pointing_vector(theta, phi); }
    Vec3 position() const { return distance * direction(); }

    static UserState at(const Vec3& position, const RotationAngles& rotation = {});
};

struct PhysicalConstants
{
    double lambda = kSpeedOfLight / 24e9;
    double epsilon0 = 1.0;  ///< linear channel power at 1 m
    double sigma2 = 1.0;    ///< receiver noise power
    double zeta = 1.0;      ///< total BS transmit power
};

/// Field projection matrices between one BS subarray and one user.
/// `response` = rx_projection * tx_projection.
struct DualPolResponse
{
    Mat2c tx_projection;
    Mat2c rx_projection;
    Mat2c response;
};

/// exp(-j 2 pi / lambda * f^T r_n) for every antenna of the subarray.
VecXc steering_vector(const SubarrayPose& pose, const SubarrayLayout& layout, const Vec3& f,
                      double lambda);

/// Linear gain of a subarray rotated by u toward the global unit direction f.
double effective_gain(const RotationAngles& u, const Vec3& f, const GainPattern& pattern);

/// sqrt(nu) e^{-j 2 pi d / lambda} sqrt(g) a, with nu = epsilon0 / d^2.
/// Rejects users at or inside the 1 m reference distance.
VecXc unpolarformed_los_channel(const UserState& user, const SubarrayPose& pose,
                                const SubarrayLayout& layout, const PhysicalConstants& consts,
                                const GainPattern& pattern);

/// Wave polarization basis (z, z_bar) for a DoA.
std::pair<Vec3, Vec3> polarization_basis(double theta, double phi);

DualPolResponse dual_pol_response(const RotationAngles& u_bs, const RotationAngles& u_user,
                                  double theta, double phi);

/// h_unpol * (v^H A w).
VecXc polarformed_channel(const VecXc& h_unpol, const Mat2c& response, const PolarVec& v,
                          const PolarVec& w);

/// Unpolarformed channel and dual-pol response for every (user, subarray) pair.
/// These are the quantities that stay fixed while polarforming changes.
class ChannelFactors
{
  public:
    ChannelFactors(int users, int subarrays, int antennas);

    int users() const { return users_; }
    int subarrays() const { return subarrays_; }
    int antennas() const { return antennas_; }

    VecXc& los(int k, int b) { return los_[index(k, b)]; }
    const VecXc& los(int k, int b) const { return los_[index(k, b)]; }
    Mat2c& response(int k, int b) { return response_[index(k, b)]; }
    const Mat2c& response(int k, int b) const { return response_[index(k, b)]; }

    /// Stacked NB-vector of user k for the given polarforming.
    VecXc stacked(int k, const std::vector<PolarVec>& v, const PolarVec& w) const;

    /// NB x 2 matrix M_k with stacked(k, v, w) = M_k w.
    MatXc user_matrix(int k, const std::vector<PolarVec>& v) const;

  private:
    std::size_t index(int k, int b) const { return static_cast<std::size_t>(k) * subarrays_ + b; }

    int users_;
    int subarrays_;
    int antennas_;
    std::vector<VecXc> los_;
    std::vector<Mat2c> response_;
};

ChannelFactors build_channel_factors(const std::vector<UserState>& users,
                                     const std::vector<SubarrayPose>& poses,
                                     const SubarrayLayout& layout,
                                     const PhysicalConstants& consts, const GainPattern& pattern);

/// Per-subarray polarformed channels of one user, concatenated.
VecXc stacked_channel(const UserState& user, const std::vector<SubarrayPose>& poses,
                      const SubarrayLayout& layout, const std::vector<PolarVec>& v,
                      const PolarVec& w, const PhysicalConstants& consts,
                      const GainPattern& pattern);

} // namespace polarsim
