// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "polarsim/codebook.hpp"
#include "polarsim/polar_channel.hpp"

namespace polarsim {

/// One instantaneous downlink instance: channel factors at a fixed BS pose and
/// fixed user rotations, plus the budget and the polarforming alphabet.
struct FastProblem
{
    ChannelFactors factors;
    Codebook codebook{1, 3};
    std::vector<double> weights; ///< rate weight per user
    double sigma2 = 1.0;
    double zeta = 1.0;

    int users() const { return factors.users(); }
    int subarrays() const { return factors.subarrays(); }
    int antennas() const { return factors.antennas(); }
    int total_antennas() const { return factors.subarrays() * factors.antennas(); }

    void validate() const;
};

struct FastState
{
    std::vector<PolarVec> w, w_bar, t;         ///< per user
    std::vector<PolarVec> v, v_bar, t_bar;     ///< per subarray
    std::vector<cd> xi;                        ///< equalizers
    std::vector<double> eps;                   ///< MSE weights
    std::vector<VecXc> c;                      ///< precoders
    double mu = 1.0;
};

/// How the user-side dual variable is advanced after each inner loop.
enum class DualUpdate {
    residual, ///< t += (w - w_bar) / mu, same form as the BS side
    literal,  ///< t += (w - t) / mu
};

struct PddConfig
{
    double mu0 = 1.0;
    double varpi = 0.7;
    double eps_in = 1e-4;
    double eps_out = 1e-4;
    int max_inner = 100;
    int max_outer = 300;
    DualUpdate dual = DualUpdate::residual;

    void validate() const;
};

/// log2(1 + |h^H c_k|^2 / (sum_{j != k} |h^H c_j|^2 + sigma2)).
double user_rate(const VecXc& h, const std::vector<VecXc>& c, int k, double sigma2);

/// |xi|^2 (sum_j |h^H c_j|^2 + sigma2) - 2 Re{xi^* h^H c_k} + 1.
double mse(const VecXc& h, const std::vector<VecXc>& c, int k, cd xi, double sigma2);

/// Stacked channels h_k = M_k(v) w_k for the given polarforming.
std::vector<VecXc> effective_channels(const FastProblem& p, const std::vector<PolarVec>& w,
                                      const std::vector<PolarVec>& v);

void update_equalizers(const FastProblem& p, FastState& s);

/// eps_k = 1 / e_k. Throws polarsim::Error when some e_k is not positive.
void update_weights(const FastProblem& p, FastState& s);

/// Closed-form w_k = C_k^{-1} b_k for every user.
void update_user_polarforming(const FastProblem& p, FastState& s);

/// Closed-form v_b = Cbar_b^{-1} bbar_b, swept over b = 0..B-1 with the
/// other subarrays held at their latest values.
void update_bs_polarforming(const FastProblem& p, FastState& s);

/// w_bar = proj_F(w + mu t), v_bar = proj_{F/sqrt2}(v + mu t_bar).
void project_auxiliaries(const FastProblem& p, FastState& s);

struct PrecoderSolution
{
    std::vector<VecXc> c;
    double multiplier = 0.0; ///< power-constraint multiplier; 0 when inactive
    double power = 0.0;
    int bisection_steps = 0;
};

/// Weighted-MSE precoders under sum power zeta. Throws polarsim::Error if the
/// multiplier cannot be bracketed.
PrecoderSolution solve_precoders(const std::vector<VecXc>& h, const std::vector<double>& weights,
                                 const std::vector<double>& eps, const std::vector<cd>& xi,
                                 double zeta);

void update_precoders(const FastProblem& p, FastState& s);

/// sum rho_k (eps_k e_k - ln eps_k) + penalty terms of the split constraints.
double augmented_lagrangian(const FastProblem& p, const FastState& s);

/// max(||w - w_bar||_inf, ||v - v_bar||_inf)
double constraint_violation(const FastState& s);

FastState initial_state(const FastProblem& p, const PddConfig& cfg);

struct PddResult
{
    FastState state;
    std::vector<double> lagrangian;    ///< after each inner sweep
    std::vector<int> lagrangian_outer; ///< outer index of each entry above
    std::vector<double> violation;     ///< after each inner loop
    std::vector<double> rates;         ///< per user at (w_bar, v_bar, c)
    double weighted_rate = 0.0;
    int outer_iterations = 0;
    int sweeps = 0;
    bool converged = false;
};

PddResult pdd_solve(const FastProblem& p, const PddConfig& cfg = {});

/// Per-user rates and the weighted sum for explicit polarforming and precoders.
std::vector<double> user_rates(const FastProblem& p, const std::vector<PolarVec>& w,
                               const std::vector<PolarVec>& v, const std::vector<VecXc>& c);
double weighted_sum(const std::vector<double>& rates, const std::vector<double>& weights);

/// c_k = sqrt(zeta / K) h_k / ||h_k|| (zero for a zero channel).
std::vector<VecXc> mrt_precoders(const std::vector<VecXc>& h, double zeta);

/// Uniformly random codewords for every user (F) and subarray (F / sqrt 2).
void random_polarforming(const Codebook& cb, int users, int subarrays, std::mt19937_64& rng,
                         std::vector<PolarVec>& w, std::vector<PolarVec>& v);

} // namespace polarsim
