// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "polarsim/codebook.hpp"
#include "polarsim/polar_channel.hpp"

namespace polarsim {

/// Dense L x N x P complex array.
class Tensor3
{
  public:
    Tensor3() = default;
    Tensor3(int l, int n, int p);

    int dim_l() const { return l_; }
    int dim_n() const { return n_; }
    int dim_p() const { return p_; }

    cd& operator()(int l, int n, int p) { return data_[index(l, n, p)]; }
    cd operator()(int l, int n, int p) const { return data_[index(l, n, p)]; }

    double squared_norm() const;

  private:
    std::size_t index(int l, int n, int p) const
    {
        return (static_cast<std::size_t>(p) * n_ + n) * l_ + l;
    }

    int l_ = 0;
    int n_ = 0;
    int p_ = 0;
    std::vector<cd> data_;
};

/// Column-wise Kronecker product: column k is kron(a_k, b_k).
MatXc khatri_rao(const MatXc& a, const MatXc& b);

/// Matrix unfoldings of an L x N x P tensor.
///   mode 1: (P N) x L, row n*P + p
///   mode 2: (L P) x N, row p*L + l
///   mode 3: (N L) x P, row l*N + n
MatXc unfold(const Tensor3& z, int mode);
Tensor3 fold(const MatXc& m, int mode, int l, int n, int p);

/// Noiseless tensor sum_k X(l,k) H(k,n) Omega(p,k).
Tensor3 parafac_tensor(const MatXc& x, const MatXc& h, const MatXc& omega);

/// Known quantities of the localization training phase.
struct PilotPattern
{
    MatXc pilots;                              ///< L x K, orthonormal columns
    std::vector<std::vector<PolarVec>> user_pf; ///< [k][p] user polarforming per block
    std::vector<SubarrayPose> poses;           ///< M training poses
    PolarVec bs_pf = PolarVec::Constant(kBsPolarScale);

    int users() const { return static_cast<int>(pilots.cols()); }
    int slots() const { return static_cast<int>(pilots.rows()); }
    int blocks() const { return user_pf.empty() ? 0 : static_cast<int>(user_pf.front().size()); }
    int poses_count() const { return static_cast<int>(poses.size()); }
};

/// L x K DFT columns scaled to unit norm. Requires L >= K.
MatXc semi_unitary_pilots(int slots, int users);

/// w_{k,p} = (1/sqrt 2) [1, e^{j 2 pi p / P}] for every user.
std::vector<std::vector<PolarVec>> dft_user_polarforming(int users, int blocks);

/// M poses on the faces of a cube of side `side`, boresight along the outward
/// face normal. Faces are visited in the order +x, -x, +y, -y, +z, -z; later
/// rounds use off-center points on the faces.
std::vector<SubarrayPose> training_poses(int count, double side);

PilotPattern make_pilot_pattern(int users, int slots, int blocks, int poses, double side);

struct PilotObservation
{
    std::vector<Tensor3> received;     ///< Y_m
    std::vector<MatXc> channels;       ///< true H_m (K x N)
    std::vector<MatXc> coefficients;   ///< true Omega_m (P x K)
};

/// True factors of the pilot model for the given users.
PilotObservation pilot_factors(const std::vector<UserState>& users, const PilotPattern& pattern,
                               const SubarrayLayout& layout, const PhysicalConstants& consts,
                               const GainPattern& gain);

/// Y_{m,p} = X diag(Omega_m[p,:]) H_m + W_{m,p}, W i.i.d. CN(0, sigma2).
PilotObservation simulate_pilot_rx(const std::vector<UserState>& users,
                                   const PilotPattern& pattern, const SubarrayLayout& layout,
                                   const PhysicalConstants& consts, const GainPattern& gain,
                                   double sigma2, std::mt19937_64& rng);

/// Received power per tensor entry of one user's noiseless contribution,
/// averaged over users. The received SNR of a trial is this over sigma2.
double mean_user_signal_power(const PilotObservation& obs);

struct AlsOptions
{
    double kappa = 1e-6;
    int max_iterations = 200;
};

struct AlsResult
{
    MatXc channels;      ///< K x N
    MatXc coefficients;  ///< P x K
    int iterations = 0;
    bool converged = false;
    /// ||Y2 - (Omega o X) H||_F^2 after every half-update (H then Omega).
    std::vector<double> objective;
};

/// Alternating least squares for the known-pilot PARAFAC model of one pose.
/// Throws polarsim::Error naming the mode if a Khatri-Rao factor loses rank.
AlsResult als_parafac(const Tensor3& y, const MatXc& pilots, int users, const AlsOptions& opts = {});

std::vector<AlsResult> als_parafac(const std::vector<Tensor3>& y, const MatXc& pilots, int users,
                                   const AlsOptions& opts = {});

/// Per-entry error variance of each estimated channel row, from the fit
/// residual and the least-squares covariance of the mode-2 solve.
VecX channel_error_variance(const Tensor3& y, const MatXc& pilots, const AlsResult& r);

/// Scale each coefficient column to unit norm and move the scale into H.
void normalize_scaling(AlsResult& r);

/// Per-user complex scale fitted against known true coefficients.
void resolve_scale_genie(AlsResult& r, const MatXc& true_coefficients);

/// Unit-norm coefficients rescaled to the designed energy P * eta_power;
/// only the modulus of each factor is resolved.
void resolve_scale_eta(AlsResult& r, double eta_power);

/// Monte-Carlo mean |v^H A w|^2 over uniformly random user rotations and
/// directions, for the designed pilot polarforming.
double designed_eta_power(const PilotPattern& pattern, std::mt19937_64& rng, int samples = 4000);

struct MusicOptions
{
    double grid_deg = 2.0;
    bool gain_weighted = true;
    bool refine = true;
    double window_deg = 4.0;  ///< half-width of the seeded search window
    double fine_deg = 0.05;   ///< grid step inside the window
};

struct MusicResult
{
    std::vector<Vec3> directions;  ///< best first
    std::vector<double> spectrum;  ///< pseudo-spectrum value at each direction
    int peaks_found = 0;
    std::string warning;
};

/// Stacked steering over all training poses, optionally weighted by sqrt(gain).
VecXc stacked_steering(const Vec3& f, const std::vector<SubarrayPose>& poses,
                       const SubarrayLayout& layout, double lambda, const GainPattern& gain,
                       bool gain_weighted);

/// MUSIC over the stacked channel estimates H_m (each K x N).
MusicResult music_doa(const std::vector<MatXc>& channels, const std::vector<SubarrayPose>& poses,
                      const SubarrayLayout& layout, double lambda, const GainPattern& gain,
                      int users, const MusicOptions& opts = {});

/// MUSIC restricted to a window around each seed direction; returns one
/// refined direction per seed. The spectrum of a large sparse aperture is far
/// too narrow-lobed for a global grid, so seeds come from noncoherent_doa.
std::vector<Vec3> music_doa_seeded(const std::vector<MatXc>& channels,
                                   const std::vector<SubarrayPose>& poses,
                                   const SubarrayLayout& layout, double lambda,
                                   const GainPattern& gain, int users,
                                   const std::vector<Vec3>& seeds, const MusicOptions& opts = {});

/// Per-user direction search that tolerates an unknown phase per pose:
/// maximizes sum_m |a_m(f)^H h_m|^2 / N over the grid. Used when only the
/// modulus of the ALS scale is known.
Vec3 noncoherent_doa(const std::vector<VecXc>& per_pose, const std::vector<SubarrayPose>& poses,
                     const SubarrayLayout& layout, double lambda, const MusicOptions& opts = {});

/// Closed-form least-squares range from per-pose channel norms and gains.
double estimate_distance(const std::vector<double>& h_norms, const std::vector<double>& gains,
                         double epsilon0, int antennas);

enum class ScaleMode { genie, eta_calibrated };

struct LocalizationSetup
{
    PilotPattern pattern;
    SubarrayLayout layout = SubarrayLayout::planar(4, 0.5 * kSpeedOfLight / 24e9);
    PhysicalConstants consts;
    GainPattern gain = GainPattern::three_gpp();
    AlsOptions als;
    MusicOptions music;
    ScaleMode scale = ScaleMode::genie;
    double eta_power = 0.0; ///< required for ScaleMode::eta_calibrated
    /// Subtract the estimated noise energy from ||h_m||^2 before ranging.
    /// Skipped, with a warning, when the fit leaves no residual degrees of freedom.
    bool debias_range = true;
};

struct UserEstimate
{
    Vec3 direction = Vec3::UnitX();
    double distance = 0.0;
    Vec3 position = Vec3::Zero();
    double error = 0.0; ///< ||p_hat - p|| in meters
};

struct LocalizationReport
{
    std::vector<UserEstimate> users;
    std::string warning;
};

/// Pilot simulation, ALS, DoA and range for all users of one trial.
LocalizationReport localize_users(const std::vector<UserState>& users,
                                  const LocalizationSetup& setup, double sigma2,
                                  std::mt19937_64& rng);

/// Same pipeline on an existing observation.
LocalizationReport localize_from_observation(const std::vector<UserState>& users,
                                             const PilotObservation& obs,
                                             const LocalizationSetup& setup);

} // namespace polarsim
