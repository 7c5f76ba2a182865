// SPDX-License-Identifier: Apache-2.0
#include "polarsim/codebook.hpp"

#include <cmath>
#include <limits>

namespace polarsim {

namespace {

double circular_distance(double a, double b)
{
    double d = std::fmod(std::abs(a - b), kTwoPi);
    return std::min(d, kTwoPi - d);
}

} // namespace

Codebook::Codebook(int q_rho, int q_theta) : q_rho_(q_rho), q_theta_(q_theta)
{
    if (q_rho < 0 || q_theta < 0)
        throw std::invalid_argument("Codebook: bit counts must be non-negative");
    if (q_rho > 16 || q_theta > 16)
        throw std::invalid_argument("Codebook: bit counts above 16 are not supported");

    const int d = 1 << q_theta;
    phases_.reserve(d);
    for (int i = 0; i < d; ++i)
        phases_.push_back(kTwoPi * i / d);

    const int a = 1 << q_rho;
    amplitudes_.reserve(a);
    for (int i = 1; i <= a; ++i)
        amplitudes_.push_back(static_cast<double>(i) / a);
}

std::vector<cd> Codebook::codewords() const
{
    std::vector<cd> out;
    out.reserve(phases_.size() * amplitudes_.size());
    for (double p : phases_)
        for (double r : amplitudes_)
            out.push_back(std::polar(r, p));
    return out;
}

Codebook build_codebook(int q_rho, int q_theta) { return Codebook(q_rho, q_theta); }

cd project_to_codebook(cd x, const Codebook& cb)
{
    const double mag = std::abs(x);
    if (mag == 0.0)
        return std::polar(cb.amplitudes().front(), 0.0);

    const double arg = std::arg(x);
    double best_phase = cb.phases().front();
    double best_dist = std::numeric_limits<double>::infinity();
    // phases are ascending, so strict '<' keeps the smaller phase on ties
    for (double p : cb.phases()) {
        const double d = circular_distance(p, arg);
        if (d < best_dist - 1e-15) {
            best_dist = d;
            best_phase = p;
        }
    }

    // |rho e^{j psi} - x|^2 = rho^2 - 2 rho Re{x e^{-j psi}} + |x|^2
    const double along = (x * std::polar(1.0, -best_phase)).real();
    double best_rho = cb.amplitudes().front();
    double best_cost = std::numeric_limits<double>::infinity();
    for (double r : cb.amplitudes()) {
        const double cost = r * r - 2.0 * r * along;
        if (cost <= best_cost + 1e-15) {
            best_cost = std::min(cost, best_cost);
            best_rho = r;
        }
    }
    return std::polar(best_rho, best_phase);
}

cd nearest_codeword_exhaustive(cd x, const Codebook& cb)
{
    cd best = 0.0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (cd c : cb.codewords()) {
        const double d = std::norm(c - x);
        if (d < best_dist) {
            best_dist = d;
            best = c;
        }
    }
    return best;
}

PolarVec project_polarforming(const PolarVec& x, const Codebook& cb, double scale)
{
    if (!(scale > 0.0))
        throw std::invalid_argument("project_polarforming: scale must be positive");
    PolarVec out;
    for (int i = 0; i < 2; ++i)
        out[i] = scale * project_to_codebook(x[i] / scale, cb);
    return out;
}

PolarVec user_polarforming(double rho1, double psi1, double rho2, double psi2)
{
    if (rho1 < 0.0 || rho1 > 1.0 || rho2 < 0.0 || rho2 > 1.0)
        throw std::invalid_argument("polarforming amplitude outside [0, 1]");
    return PolarVec(std::polar(rho1, -psi1), std::polar(rho2, -psi2));
}

PolarVec bs_polarforming(double rho1, double psi1, double rho2, double psi2)
{
    return kBsPolarScale * user_polarforming(rho1, psi1, rho2, psi2);
}

} // namespace polarsim
