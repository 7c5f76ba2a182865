// SPDX-License-Identifier: Apache-2.0
#include "polarsim/slow_opt.hpp"

#include <algorithm>
#include <cmath>

namespace polarsim {

VecX pose_vector(const std::vector<SubarrayPose>& poses)
{
    const auto b = static_cast<Eigen::Index>(poses.size());
    VecX s(6 * b);
    for (Eigen::Index i = 0; i < b; ++i) {
        s.segment(3 * i, 3) = poses[i].q;
        s.segment(3 * b + 3 * i, 3) = poses[i].u.as_vector();
    }
    return s;
}

std::vector<SubarrayPose> poses_from_vector(const VecX& s)
{
    if (s.size() == 0 || s.size() % 6 != 0)
        throw std::invalid_argument("poses_from_vector: length must be a positive multiple of 6");
    const Eigen::Index b = s.size() / 6;
    std::vector<SubarrayPose> poses;
    poses.reserve(b);
    for (Eigen::Index i = 0; i < b; ++i) {
        const Vec3 u = s.segment(3 * b + 3 * i, 3);
        poses.push_back({s.segment(3 * i, 3), RotationAngles(u.x(), u.y(), u.z())});
    }
    return poses;
}

void SlowProblem::validate() const
{
    if (user_positions.empty())
        throw std::invalid_argument("SlowProblem: at least one user is required");
    if (subarrays < 1)
        throw std::invalid_argument("SlowProblem: at least one subarray is required");
    if (static_cast<int>(weights.size()) != users())
        throw std::invalid_argument("SlowProblem: one rate weight per user is required");
    if (!(side > 0.0) || !(d_min > 0.0))
        throw std::invalid_argument("SlowProblem: side and d_min must be positive");
    if (!(consts.sigma2 > 0.0) || !(consts.zeta > 0.0))
        throw std::invalid_argument("SlowProblem: noise and transmit power must be positive");
}

std::vector<ChannelSample> sample_channels(int users, int count, std::mt19937_64& rng)
{
    if (users < 1 || count < 0)
        throw std::invalid_argument("sample_channels: invalid counts");
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    std::vector<ChannelSample> out(count);
    for (auto& sample : out) {
        sample.reserve(users);
        for (int k = 0; k < users; ++k) {
            const double a = angle(rng);
            const double b = angle(rng);
            const double g = angle(rng);
            sample.emplace_back(a, b, g);
        }
    }
    return out;
}

Violations penalty_violations(const std::vector<SubarrayPose>& poses, double d_min)
{
    Violations v;
    const std::size_t b = poses.size();
    std::vector<Vec3> normals;
    normals.reserve(b);
    for (const auto& p : poses)
        normals.push_back(subarray_normal(p.u));
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t m = n + 1; m < b; ++m)
            if ((poses[n].q - poses[m].q).norm() < d_min)
                ++v.spacing;
        for (std::size_t m = 0; m < b; ++m)
            if (m != n && normals[n].dot(poses[m].q - poses[n].q) > kFeasibilityTolerance)
                ++v.facing;
        if (normals[n].dot(poses[n].q) < -kFeasibilityTolerance)
            ++v.inward;
    }
    return v;
}

FastProblem make_fast_problem(const SlowProblem& problem, const std::vector<SubarrayPose>& poses,
                              const ChannelSample& sample)
{
    if (static_cast<int>(sample.size()) != problem.users())
        throw std::invalid_argument("make_fast_problem: one rotation per user is required");
    std::vector<UserState> users;
    users.reserve(sample.size());
    for (int k = 0; k < problem.users(); ++k)
        users.push_back(UserState::at(problem.user_positions[k], sample[k]));
    return FastProblem{build_channel_factors(users, poses, problem.layout, problem.consts, problem.gain),
                       problem.codebook, problem.weights, problem.consts.sigma2, problem.consts.zeta};
}

double PddRateEvaluator::rate(const SlowProblem& problem, const std::vector<SubarrayPose>& poses,
                              const ChannelSample& sample) const
{
    return pdd_solve(make_fast_problem(problem, poses, sample), cfg_).weighted_rate;
}

double FixedPolarRateEvaluator::rate(const SlowProblem& problem,
                                     const std::vector<SubarrayPose>& poses,
                                     const ChannelSample& sample) const
{
    const FastProblem fp = make_fast_problem(problem, poses, sample);
    if (static_cast<int>(w_.size()) != fp.users() || static_cast<int>(v_.size()) != fp.subarrays())
        throw std::invalid_argument("FixedPolarRateEvaluator: polarforming does not match the instance");
    const auto h = effective_channels(fp, w_, v_);
    return weighted_sum(user_rates(fp, w_, v_, mrt_precoders(h, fp.zeta)), fp.weights);
}

void PsoConfig::validate() const
{
    if (swarm < 1 || iterations < 0)
        throw std::invalid_argument("PsoConfig: swarm >= 1 and iterations >= 0 are required");
    if (batch_size < 1 || total_samples < batch_size || total_samples % batch_size != 0)
        throw std::invalid_argument("PsoConfig: total_samples must be a positive multiple of batch_size");
    if (!(tau >= 0.0) || !(kappa_exponent >= 0.0) || init_attempts < 1)
        throw std::invalid_argument("PsoConfig: tau, kappa exponent and attempts must be non-negative");
}

Fitness fitness(const SlowProblem& problem, const VecX& s, const std::vector<ChannelSample>& batch,
                double prev_j, double kappa, double tau, const RateEvaluator& evaluator)
{
    if (batch.empty())
        throw std::invalid_argument("fitness: mini-batch must not be empty");
    if (!(kappa >= 0.0 && kappa <= 1.0))
        throw std::invalid_argument("fitness: kappa must lie in [0, 1]");
    const auto poses = poses_from_vector(s);
    double mean = 0.0;
    for (const auto& sample : batch)
        mean += evaluator.rate(problem, poses, sample);
    mean /= static_cast<double>(batch.size());

    Fitness f;
    f.violations = penalty_violations(poses, problem.d_min).count();
    f.surrogate = (1.0 - kappa) * prev_j + kappa * mean;
    f.penalized = f.surrogate - tau * f.violations;
    return f;
}

void pso_step(std::vector<Particle>& swarm, const VecX& global_best, const PsoConfig& cfg,
              double side, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double half = 0.5 * side;
    for (auto& p : swarm) {
        const double t1 = unit(rng);
        const double t2 = unit(rng);
        p.m = cfg.omega * p.m + cfg.c1 * t1 * (p.best - p.s) + cfg.c2 * t2 * (global_best - p.s);
        p.s += p.m;
        const Eigen::Index b3 = p.s.size() / 2;
        for (Eigen::Index i = 0; i < b3; ++i)
            p.s[i] = std::clamp(p.s[i], -half, half);
        for (Eigen::Index i = b3; i < p.s.size(); ++i)
            p.s[i] = wrap_angle(p.s[i]);
    }
}

std::vector<SubarrayPose> face_mounted_pose(int subarrays, double side, double d_min,
                                            std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> face(0, 5);
    std::uniform_real_distribution<double> coord(-0.5 * side, 0.5 * side);
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    std::vector<SubarrayPose> poses;
    for (int attempt = 0; attempt < 100; ++attempt) {
        poses.clear();
        for (int b = 0; b < subarrays; ++b) {
            const int f = face(rng);
            const int axis = f / 2;
            const double sign = f % 2 == 0 ? 1.0 : -1.0;
            Vec3 q(coord(rng), coord(rng), coord(rng));
            q[axis] = sign * 0.5 * side;
            Vec3 n = Vec3::Zero();
            n[axis] = sign;
            poses.push_back({q, rotation_for_boresight(n, angle(rng))});
        }
        if (penalty_violations(poses, d_min).count() == 0)
            break;
    }
    return poses;
}

namespace {

std::vector<SubarrayPose> uniform_pose(int subarrays, double side, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> coord(-0.5 * side, 0.5 * side);
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    std::vector<SubarrayPose> poses;
    for (int b = 0; b < subarrays; ++b) {
        const Vec3 q(coord(rng), coord(rng), coord(rng));
        const double a = angle(rng);
        const double be = angle(rng);
        const double g = angle(rng);
        poses.push_back({q, RotationAngles(a, be, g)});
    }
    return poses;
}

} // namespace

PsoResult rs_pso_solve(const SlowProblem& problem, const PsoConfig& cfg,
                       const RateEvaluator& evaluator, std::mt19937_64& rng,
                       const std::vector<std::vector<SubarrayPose>>& seeds)
{
    problem.validate();
    cfg.validate();
    const int b = problem.subarrays;
    for (const auto& seed : seeds)
        if (static_cast<int>(seed.size()) != b)
            throw std::invalid_argument("rs_pso_solve: seed pose has the wrong subarray count");

    const auto samples = sample_channels(problem.users(), cfg.total_samples, rng);
    const auto batch = [&](int index) {
        const auto first = samples.begin() + static_cast<std::ptrdiff_t>(index % cfg.batches()) * cfg.batch_size;
        return std::vector<ChannelSample>(first, first + cfg.batch_size);
    };

    PsoResult res;
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<Particle> swarm(cfg.swarm);
    for (int j = 0; j < cfg.swarm; ++j) {
        std::vector<SubarrayPose> poses;
        if (j < static_cast<int>(seeds.size())) {
            poses = seeds[j];
        } else {
            bool feasible = false;
            for (int attempt = 0; attempt < cfg.init_attempts && !feasible; ++attempt) {
                poses = uniform_pose(b, problem.side, rng);
                feasible = penalty_violations(poses, problem.d_min).count() == 0;
            }
            if (!feasible) {
                poses = face_mounted_pose(b, problem.side, problem.d_min, rng);
                ++res.fallback_particles;
            }
        }
        Particle& p = swarm[j];
        p.s = pose_vector(poses);
        p.m.resize(p.s.size());
        for (Eigen::Index i = 0; i < p.s.size(); ++i)
            p.m[i] = cfg.init_velocity * unit(rng) * (i < 3 * b ? problem.side : kPi);
    }

    // initial fitness: pure average over the first mini-batch
    const auto first = batch(0);
    int best_j = 0;
    for (int j = 0; j < cfg.swarm; ++j) {
        Particle& p = swarm[j];
        p.current = fitness(problem, p.s, first, 0.0, 1.0, cfg.tau, evaluator);
        p.best = p.s;
        p.best_value = p.current.penalized;
        if (p.best_value > swarm[best_j].best_value)
            best_j = j;
    }
    VecX global = swarm[best_j].best;
    double global_value = swarm[best_j].best_value;
    res.trace.push_back(global_value);

    for (int i = 1; i <= cfg.iterations; ++i) {
        std::vector<VecX> previous;
        previous.reserve(swarm.size());
        for (const auto& p : swarm)
            previous.push_back(p.s);
        pso_step(swarm, global, cfg, problem.side, rng);

        const double kappa = std::pow(static_cast<double>(i), -cfg.kappa_exponent);
        const auto mini = batch(i - 1);
        for (std::size_t j = 0; j < swarm.size(); ++j) {
            Particle& p = swarm[j];
            const Fitness before = p.current;
            p.current = fitness(problem, p.s, mini, before.surrogate, kappa, cfg.tau, evaluator);
            // local best is the better of the current and the previous position
            if (p.current.penalized > before.penalized) {
                p.best = p.s;
                p.best_value = p.current.penalized;
            } else {
                p.best = previous[j];
                p.best_value = before.penalized;
            }
            if (p.best_value > global_value) {
                global_value = p.best_value;
                global = p.best;
            }
        }
        res.trace.push_back(global_value);
    }

    res.poses = poses_from_vector(global);
    res.fitness = global_value;
    res.violations = penalty_violations(res.poses, problem.d_min).count();
    return res;
}

} // namespace polarsim
