// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "polarsim/fast_opt.hpp"

namespace polarsim {

/// Slack used by the orientation tests of the feasibility check, so that
/// coplanar subarrays on one cube face are not flagged by rounding.
inline constexpr double kFeasibilityTolerance = 1e-9;

/// s = [q_1..q_B, u_1..u_B] as a 6B vector.
VecX pose_vector(const std::vector<SubarrayPose>& poses);
std::vector<SubarrayPose> poses_from_vector(const VecX& s);

/// Everything the slow timescale knows: sensed user locations and the
/// static system parameters. consts.sigma2 and consts.zeta set the rate model.
struct SlowProblem
{
    std::vector<Vec3> user_positions;
    int subarrays = 4;
    SubarrayLayout layout = SubarrayLayout::planar(2, 0.5 * kSpeedOfLight / 24e9);
    PhysicalConstants consts;
    GainPattern gain = GainPattern::three_gpp();
    Codebook codebook{1, 3};
    std::vector<double> weights;
    double side = 1.0;   ///< cube side A
    double d_min = 0.02; ///< minimum subarray spacing

    int users() const { return static_cast<int>(user_positions.size()); }
    void validate() const;
};

/// One random realization of all user rotations.
using ChannelSample = std::vector<RotationAngles>;

std::vector<ChannelSample> sample_channels(int users, int count, std::mt19937_64& rng);

struct Violations
{
    int spacing = 0;     ///< unordered pairs closer than d_min
    int facing = 0;      ///< ordered pairs (n, b) with b in front of n
    int inward = 0;      ///< subarrays whose boresight points into the cube

    int count() const { return spacing + facing + inward; }
};

Violations penalty_violations(const std::vector<SubarrayPose>& poses, double d_min);

/// Weighted sum rate of one channel sample at a candidate pose.
class RateEvaluator
{
  public:
    virtual ~RateEvaluator() = default;
    virtual double rate(const SlowProblem& problem, const std::vector<SubarrayPose>& poses,
                        const ChannelSample& sample) const = 0;
};

/// Runs the fast-timescale solver on each sample.
class PddRateEvaluator : public RateEvaluator
{
  public:
    explicit PddRateEvaluator(PddConfig cfg) : cfg_(cfg) {}
    double rate(const SlowProblem& problem, const std::vector<SubarrayPose>& poses,
                const ChannelSample& sample) const override;

  private:
    PddConfig cfg_;
};

/// Fixed polarforming with MRT precoding.
class FixedPolarRateEvaluator : public RateEvaluator
{
  public:
    FixedPolarRateEvaluator(std::vector<PolarVec> w, std::vector<PolarVec> v)
        : w_(std::move(w)), v_(std::move(v))
    {
    }
    double rate(const SlowProblem& problem, const std::vector<SubarrayPose>& poses,
                const ChannelSample& sample) const override;

  private:
    std::vector<PolarVec> w_;
    std::vector<PolarVec> v_;
};

/// Build the fast-timescale instance of one sample at the given pose.
FastProblem make_fast_problem(const SlowProblem& problem, const std::vector<SubarrayPose>& poses,
                              const ChannelSample& sample);

struct PsoConfig
{
    int swarm = 20;
    int iterations = 30;
    double omega = 0.7;
    double c1 = 1.5;
    double c2 = 1.5;
    double tau = 10.0;
    double kappa_exponent = 0.2; ///< kappa_i = i^-exponent
    int total_samples = 40;      ///< L_bar
    int batch_size = 4;          ///< L_S
    int init_attempts = 100;
    double init_velocity = 0.05; ///< fraction of A (positions) and of pi (rotations)

    int batches() const { return total_samples / batch_size; }
    void validate() const;
};

/// Recursive-sampling surrogate J = (1 - kappa) J_prev + kappa * mean rate over
/// the batch, and the penalized value J - tau |Q|.
struct Fitness
{
    double surrogate = 0.0;
    double penalized = 0.0;
    int violations = 0;
};

Fitness fitness(const SlowProblem& problem, const VecX& s, const std::vector<ChannelSample>& batch,
                double prev_j, double kappa, double tau, const RateEvaluator& evaluator);

struct Particle
{
    VecX s;
    VecX m;
    VecX best;              ///< local best position
    double best_value = 0.0;
    Fitness current;
};

/// Velocity and position update with clamping of the 3B position components
/// to [-A/2, A/2] and wrapping of the rotation components.
void pso_step(std::vector<Particle>& swarm, const VecX& global_best, const PsoConfig& cfg,
              double side, std::mt19937_64& rng);

/// Random pose with every subarray on the cube surface facing outward.
std::vector<SubarrayPose> face_mounted_pose(int subarrays, double side, double d_min,
                                            std::mt19937_64& rng);

struct PsoResult
{
    std::vector<SubarrayPose> poses; ///< global best
    double fitness = 0.0;            ///< recorded penalized fitness of the global best
    int violations = 0;
    std::vector<double> trace;       ///< global best after init and after each iteration
    int fallback_particles = 0;      ///< particles seeded by face_mounted_pose
};

PsoResult rs_pso_solve(const SlowProblem& problem, const PsoConfig& cfg,
                       const RateEvaluator& evaluator, std::mt19937_64& rng,
                       const std::vector<std::vector<SubarrayPose>>& seeds = {});

} // namespace polarsim
