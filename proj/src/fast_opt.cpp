// SPDX-License-Identifier: Apache-2.0
#include "polarsim/fast_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace polarsim {

void FastProblem::validate() const
{
    if (static_cast<int>(weights.size()) != users())
        throw std::invalid_argument("FastProblem: one rate weight per user is required");
    for (double r : weights)
        if (!(r >= 0.0))
            throw std::invalid_argument("FastProblem: rate weights must be non-negative");
    if (!(sigma2 > 0.0))
        throw std::invalid_argument("FastProblem: noise power must be positive");
    if (!(zeta > 0.0))
        throw std::invalid_argument("FastProblem: transmit power must be positive");
}

void PddConfig::validate() const
{
    if (!(mu0 > 0.0))
        throw std::invalid_argument("PddConfig: mu0 must be positive");
    if (!(varpi > 0.0 && varpi < 1.0))
        throw std::invalid_argument("PddConfig: varpi must lie in (0, 1)");
    if (!(eps_in > 0.0) || !(eps_out > 0.0))
        throw std::invalid_argument("PddConfig: tolerances must be positive");
    if (max_inner < 1 || max_outer < 1)
        throw std::invalid_argument("PddConfig: iteration caps must be positive");
}

double user_rate(const VecXc& h, const std::vector<VecXc>& c, int k, double sigma2)
{
    if (!(sigma2 > 0.0))
        throw std::invalid_argument("user_rate: noise power must be positive");
    double interference = sigma2;
    double signal = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) {
        const double g = std::norm(h.dot(c[j]));
        if (static_cast<int>(j) == k)
            signal = g;
        else
            interference += g;
    }
    return std::log2(1.0 + signal / interference);
}

double mse(const VecXc& h, const std::vector<VecXc>& c, int k, cd xi, double sigma2)
{
    double total = sigma2;
    for (const auto& cj : c)
        total += std::norm(h.dot(cj));
    return std::norm(xi) * total - 2.0 * (std::conj(xi) * h.dot(c[k])).real() + 1.0;
}

std::vector<VecXc> effective_channels(const FastProblem& p, const std::vector<PolarVec>& w,
                                      const std::vector<PolarVec>& v)
{
    std::vector<VecXc> h;
    h.reserve(p.users());
    for (int k = 0; k < p.users(); ++k)
        h.push_back(p.factors.stacked(k, v, w[k]));
    return h;
}

void update_equalizers(const FastProblem& p, FastState& s)
{
    const auto h = effective_channels(p, s.w, s.v);
    s.xi.resize(p.users());
    for (int k = 0; k < p.users(); ++k) {
        double total = p.sigma2;
        for (const auto& cj : s.c)
            total += std::norm(h[k].dot(cj));
        s.xi[k] = h[k].dot(s.c[k]) / total;
    }
}

void update_weights(const FastProblem& p, FastState& s)
{
    const auto h = effective_channels(p, s.w, s.v);
    s.eps.resize(p.users());
    for (int k = 0; k < p.users(); ++k) {
        const double e = mse(h[k], s.c, k, s.xi[k], p.sigma2);
        if (!(e > 0.0))
            throw Error("update_weights: MSE of user " + std::to_string(k) + " is " + std::to_string(e) +
                        "; weights need e > 0");
        s.eps[k] = 1.0 / e;
    }
}

void update_user_polarforming(const FastProblem& p, FastState& s)
{
    const double inv_mu = 1.0 / s.mu;
    for (int k = 0; k < p.users(); ++k) {
        const MatXc m = p.factors.user_matrix(k, s.v);
        const double a = 2.0 * p.weights[k] * s.eps[k];
        Mat2c c = inv_mu * Mat2c::Identity();
        for (const auto& cj : s.c) {
            const PolarVec g = m.adjoint() * cj;
            c += a * std::norm(s.xi[k]) * g * g.adjoint();
        }
        const PolarVec b = a * std::conj(s.xi[k]) * (m.adjoint() * s.c[k]) +
                           inv_mu * (s.w_bar[k] - s.mu * s.t[k]);
        s.w[k] = c.ldlt().solve(b);
    }
}

void update_bs_polarforming(const FastProblem& p, FastState& s)
{
    const int kk = p.users(), bb = p.subarrays(), n = p.antennas();
    const double inv_mu = 1.0 / s.mu;

    // e[(k*K + j)*B + b] = los_{k,b}^H c_{j,b}; fixed during the sweep
    std::vector<cd> e(static_cast<std::size_t>(kk) * kk * bb);
    for (int k = 0; k < kk; ++k)
        for (int j = 0; j < kk; ++j)
            for (int b = 0; b < bb; ++b)
                e[(static_cast<std::size_t>(k) * kk + j) * bb + b] =
                    p.factors.los(k, b).dot(s.c[j].segment(static_cast<Eigen::Index>(b) * n, n));
    const auto at = [&](int k, int j, int b) { return e[(static_cast<std::size_t>(k) * kk + j) * bb + b]; };

    std::vector<PolarVec> d(static_cast<std::size_t>(kk) * bb);
    for (int k = 0; k < kk; ++k)
        for (int b = 0; b < bb; ++b)
            d[static_cast<std::size_t>(k) * bb + b] = p.factors.response(k, b) * s.w[k];
    const auto dhat = [&](int k, int b) -> const PolarVec& { return d[static_cast<std::size_t>(k) * bb + b]; };

    for (int b = 0; b < bb; ++b) {
        Mat2c c = inv_mu * Mat2c::Identity();
        PolarVec rhs = inv_mu * (s.v_bar[b] - s.mu * s.t_bar[b]);
        for (int k = 0; k < kk; ++k) {
            const double a = 2.0 * p.weights[k] * s.eps[k];
            const double x2 = std::norm(s.xi[k]);
            const PolarVec& dk = dhat(k, b);
            double coupling = 0.0;
            for (int j = 0; j < kk; ++j) {
                // h_k^H c_j with subarray b removed
                cd r = 0.0;
                for (int o = 0; o < bb; ++o)
                    if (o != b)
                        r += at(k, j, o) * dhat(k, o).dot(s.v[o]);
                coupling += std::norm(at(k, j, b));
                rhs -= a * x2 * std::conj(at(k, j, b)) * r * dk;
            }
            c += a * x2 * coupling * dk * dk.adjoint();
            rhs += a * s.xi[k] * std::conj(at(k, k, b)) * dk;
        }
        s.v[b] = c.ldlt().solve(rhs);
    }
}

void project_auxiliaries(const FastProblem& p, FastState& s)
{
    for (int k = 0; k < p.users(); ++k)
        s.w_bar[k] = project_polarforming(s.w[k] + s.mu * s.t[k], p.codebook);
    for (int b = 0; b < p.subarrays(); ++b)
        s.v_bar[b] = project_polarforming(s.v[b] + s.mu * s.t_bar[b], p.codebook, kBsPolarScale);
}

PrecoderSolution solve_precoders(const std::vector<VecXc>& h, const std::vector<double>& weights,
                                 const std::vector<double>& eps, const std::vector<cd>& xi,
                                 double zeta)
{
    if (!(zeta > 0.0))
        throw std::invalid_argument("solve_precoders: transmit power must be positive");
    if (h.empty() || weights.size() != h.size() || eps.size() != h.size() || xi.size() != h.size())
        throw std::invalid_argument("solve_precoders: inconsistent user counts");
    const auto dim = h.front().size();
    const int kk = static_cast<int>(h.size());

    MatXc phi = MatXc::Zero(dim, dim);
    MatXc rhs(dim, kk);
    for (int j = 0; j < kk; ++j) {
        phi += weights[j] * eps[j] * std::norm(xi[j]) * h[j] * h[j].adjoint();
        rhs.col(j) = weights[j] * eps[j] * xi[j] * h[j];
    }
    Eigen::SelfAdjointEigenSolver<MatXc> es(phi);
    const VecX lambda = es.eigenvalues().cwiseMax(0.0);
    const MatXc proj = es.eigenvectors().adjoint() * rhs;
    const VecX a = proj.rowwise().squaredNorm();
    const double floor = 1e-12 * std::max(lambda.maxCoeff(), std::numeric_limits<double>::min());

    // sum_i a_i / (m + lambda_i)^2, pseudo-inverse on the null space at m = 0
    const auto power = [&](double m) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < lambda.size(); ++i) {
            const double den = m + lambda[i];
            if (m == 0.0 && lambda[i] <= floor)
                continue;
            total += a[i] / (den * den);
        }
        return total;
    };
    const auto build = [&](double m) {
        VecX scale(lambda.size());
        for (Eigen::Index i = 0; i < lambda.size(); ++i)
            scale[i] = (m == 0.0 && lambda[i] <= floor) ? 0.0 : 1.0 / (m + lambda[i]);
        const MatXc c = es.eigenvectors() * scale.asDiagonal() * proj;
        std::vector<VecXc> out;
        for (int j = 0; j < kk; ++j)
            out.push_back(c.col(j));
        return out;
    };

    PrecoderSolution sol;
    sol.power = power(0.0);
    if (sol.power <= zeta) {
        sol.c = build(0.0);
        return sol;
    }

    double lo = 0.0;
    double hi = std::sqrt(a.sum() / zeta);
    if (!(power(hi) <= zeta))
        throw Error("solve_precoders: bisection failed to bracket the multiplier (P(0) = " +
                    std::to_string(sol.power) + ", P(hi) = " + std::to_string(power(hi)) +
                    ", zeta = " + std::to_string(zeta) + ")");
    double m = hi;
    double pm = power(hi);
    // stop on the feasible side, well inside the 1e-8 relative tolerance
    for (int it = 0; it < 300 && zeta - pm > 0.5e-8 * zeta; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double pmid = power(mid);
        if (pmid > zeta) {
            lo = mid;
        } else {
            hi = mid;
            m = mid;
            pm = pmid;
        }
        sol.bisection_steps = it + 1;
        if (hi - lo <= 1e-16 * hi)
            break;
    }
    sol.multiplier = m;
    sol.power = pm;
    sol.c = build(m);
    return sol;
}

void update_precoders(const FastProblem& p, FastState& s)
{
    const auto h = effective_channels(p, s.w, s.v);
    s.c = solve_precoders(h, p.weights, s.eps, s.xi, p.zeta).c;
}

double augmented_lagrangian(const FastProblem& p, const FastState& s)
{
    const auto h = effective_channels(p, s.w, s.v);
    double total = 0.0;
    for (int k = 0; k < p.users(); ++k)
        total += p.weights[k] * (s.eps[k] * mse(h[k], s.c, k, s.xi[k], p.sigma2) - std::log(s.eps[k]));
    const double half_inv = 0.5 / s.mu;
    for (int k = 0; k < p.users(); ++k)
        total += half_inv * (s.w[k] - s.w_bar[k] + s.mu * s.t[k]).squaredNorm();
    for (int b = 0; b < p.subarrays(); ++b)
        total += half_inv * (s.v[b] - s.v_bar[b] + s.mu * s.t_bar[b]).squaredNorm();
    return total;
}

double constraint_violation(const FastState& s)
{
    double worst = 0.0;
    for (std::size_t k = 0; k < s.w.size(); ++k)
        worst = std::max(worst, (s.w[k] - s.w_bar[k]).cwiseAbs().maxCoeff());
    for (std::size_t b = 0; b < s.v.size(); ++b)
        worst = std::max(worst, (s.v[b] - s.v_bar[b]).cwiseAbs().maxCoeff());
    return worst;
}

std::vector<VecXc> mrt_precoders(const std::vector<VecXc>& h, double zeta)
{
    if (!(zeta > 0.0) || h.empty())
        throw std::invalid_argument("mrt_precoders: need users and positive power");
    const double amp = std::sqrt(zeta / static_cast<double>(h.size()));
    std::vector<VecXc> c;
    for (const auto& hk : h) {
        const double nrm = hk.norm();
        c.push_back(nrm > 0.0 ? VecXc(amp * hk / nrm) : VecXc(VecXc::Zero(hk.size())));
    }
    return c;
}

FastState initial_state(const FastProblem& p, const PddConfig& cfg)
{
    const PolarVec start = kBsPolarScale * PolarVec(1.0, std::polar(1.0, kPi / 4));
    FastState s;
    s.mu = cfg.mu0;
    s.w.assign(p.users(), project_polarforming(start, p.codebook));
    s.w_bar = s.w;
    s.t.assign(p.users(), PolarVec::Zero());
    s.v.assign(p.subarrays(), project_polarforming(start, p.codebook, kBsPolarScale));
    s.v_bar = s.v;
    s.t_bar.assign(p.subarrays(), PolarVec::Zero());
    s.c = mrt_precoders(effective_channels(p, s.w, s.v), p.zeta);
    update_equalizers(p, s);
    update_weights(p, s);
    return s;
}

std::vector<double> user_rates(const FastProblem& p, const std::vector<PolarVec>& w,
                               const std::vector<PolarVec>& v, const std::vector<VecXc>& c)
{
    const auto h = effective_channels(p, w, v);
    std::vector<double> r;
    for (int k = 0; k < p.users(); ++k)
        r.push_back(user_rate(h[k], c, k, p.sigma2));
    return r;
}

double weighted_sum(const std::vector<double>& rates, const std::vector<double>& weights)
{
    if (rates.size() != weights.size())
        throw std::invalid_argument("weighted_sum: size mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < rates.size(); ++k)
        s += weights[k] * rates[k];
    return s;
}

PddResult pdd_solve(const FastProblem& p, const PddConfig& cfg)
{
    p.validate();
    cfg.validate();

    PddResult res;
    res.state = initial_state(p, cfg);
    FastState& s = res.state;

    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        double prev = augmented_lagrangian(p, s);
        for (int inner = 0; inner < cfg.max_inner; ++inner) {
            update_user_polarforming(p, s);
            project_auxiliaries(p, s);
            update_bs_polarforming(p, s);
            project_auxiliaries(p, s);
            update_equalizers(p, s);
            update_weights(p, s);
            update_precoders(p, s);

            const double now = augmented_lagrangian(p, s);
            res.lagrangian.push_back(now);
            res.lagrangian_outer.push_back(outer);
            ++res.sweeps;
            const bool settled = std::abs(prev - now) <= cfg.eps_in * std::max(std::abs(prev), 1e-300);
            prev = now;
            if (settled)
                break;
        }

        const double viol = constraint_violation(s);
        res.violation.push_back(viol);
        res.outer_iterations = outer + 1;
        if (viol < cfg.eps_out) {
            res.converged = true;
            break;
        }
        for (int k = 0; k < p.users(); ++k) {
            const PolarVec step = cfg.dual == DualUpdate::residual ? PolarVec(s.w[k] - s.w_bar[k])
                                                                   : PolarVec(s.w[k] - s.t[k]);
            s.t[k] += step / s.mu;
        }
        for (int b = 0; b < p.subarrays(); ++b)
            s.t_bar[b] += (s.v[b] - s.v_bar[b]) / s.mu;
        s.mu *= cfg.varpi;
    }

    res.rates = user_rates(p, s.w_bar, s.v_bar, s.c);
    res.weighted_rate = weighted_sum(res.rates, p.weights);
    return res;
}

void random_polarforming(const Codebook& cb, int users, int subarrays, std::mt19937_64& rng,
                         std::vector<PolarVec>& w, std::vector<PolarVec>& v)
{
    const auto words = cb.codewords();
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    w.assign(users, PolarVec::Zero());
    v.assign(subarrays, PolarVec::Zero());
    for (auto& x : w)
        x = PolarVec(words[pick(rng)], words[pick(rng)]);
    for (auto& x : v)
        x = kBsPolarScale * PolarVec(words[pick(rng)], words[pick(rng)]);
}

} // namespace polarsim
