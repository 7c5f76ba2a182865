// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "polarsim/types.hpp"

namespace polarsim {

/// Discrete amplitude/phase alphabet for polarforming weights.
///
/// Phases are the D = 2^q_theta points 2*pi*d/D. Amplitudes are the
/// 2^q_rho points i / 2^q_rho, i = 1..2^q_rho, so q_rho = 0 gives {1}.
class Codebook
{
  public:
    Codebook(int q_rho, int q_theta);

    int q_rho() const { return q_rho_; }
    int q_theta() const { return q_theta_; }
    const std::vector<double>& phases() const { return phases_; }
    const std::vector<double>& amplitudes() const { return amplitudes_; }

    /// All |S| * |A| codewords, phase-major.
    std::vector<cd> codewords() const;

  private:
    int q_rho_;
    int q_theta_;
    std::vector<double> phases_;
    std::vector<double> amplitudes_;
};

Codebook build_codebook(int q_rho, int q_theta);

/// Two-stage projection: nearest phase in circular distance (ties toward the
/// smaller phase), then the amplitude closest to x along that phase (ties
/// toward the larger amplitude). x = 0 maps to the smallest amplitude at phase 0.
cd project_to_codebook(cd x, const Codebook& cb);

/// Joint nearest codeword by enumeration of all codewords. Reference
/// implementation used to cross-check project_to_codebook.
cd nearest_codeword_exhaustive(cd x, const Codebook& cb);

/// Entrywise projection onto (scale * F)^2. BS vectors use scale = 1/sqrt(2).
PolarVec project_polarforming(const PolarVec& x, const Codebook& cb, double scale = 1.0);

/// User polarforming [rho1 e^{-j psi1}, rho2 e^{-j psi2}].
PolarVec user_polarforming(double rho1, double psi1, double rho2, double psi2);

/// BS subarray polarforming, same as the user form scaled by 1/sqrt(2).
PolarVec bs_polarforming(double rho1, double psi1, double rho2, double psi2);

inline constexpr double kBsPolarScale = 0.70710678118654752440;

} // namespace polarsim
