// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include <polarsim/codebook.hpp>

#include "support/oracles.hpp"

using namespace polarsim;

namespace {

cd enumerate_nearest(cd x, int q_rho, int q_theta)
{
    const int na = 1 << q_rho, np = 1 << q_theta;
    cd best = 0.0;
    double dist = 1e300;
    for (int i = 1; i <= na; ++i)
        for (int d = 0; d < np; ++d) {
            const cd c = std::polar(static_cast<double>(i) / na, kTwoPi * d / np);
            if (std::abs(x - c) < dist) {
                dist = std::abs(x - c);
                best = c;
            }
        }
    return best;
}

} // namespace

TEST_CASE("codebook alphabets")
{
    const Codebook cb(1, 2);
    REQUIRE(cb.amplitudes().size() == 2);
    CHECK(cb.amplitudes()[0] == 0.5);
    CHECK(cb.amplitudes()[1] == 1.0);
    REQUIRE(cb.phases().size() == 4);
    for (int d = 0; d < 4; ++d)
        CHECK(cb.phases()[d] == doctest::Approx(d * kPi / 2));
    CHECK(cb.codewords().size() == 8);

    const auto single = build_codebook(0, 0).codewords();
    REQUIRE(single.size() == 1);
    CHECK(std::abs(single[0] - cd(1, 0)) == 0.0);

    for (int qr = 0; qr < 4; ++qr)
        for (int qt = 0; qt < 5; ++qt) {
            const Codebook c(qr, qt);
            CHECK(c.amplitudes().size() == static_cast<std::size_t>(1 << qr));
            CHECK(c.phases().size() == static_cast<std::size_t>(1 << qt));
            for (cd w : c.codewords())
                CHECK(std::abs(w) <= 1.0 + 1e-15);
        }
    CHECK_THROWS_AS(Codebook(-1, 2), std::invalid_argument);
}

TEST_CASE("project_to_codebook fixed values")
{
    const Codebook cb(0, 1);
    CHECK(std::abs(project_to_codebook(std::polar(0.9, 0.1), cb) - cd(1, 0)) < 1e-15);
    CHECK(std::abs(project_to_codebook(cd(-1, 0), cb) - cd(-1, 0)) < 1e-15);
    // zero maps to the smallest amplitude at phase 0
    CHECK(std::abs(project_to_codebook(0.0, Codebook(2, 3)) - cd(0.25, 0)) < 1e-15);
    // phase tie between 0 and pi/2 goes to the smaller phase
    CHECK(std::abs(project_to_codebook(std::polar(1.0, kPi / 4), Codebook(0, 2)) - cd(1, 0)) < 1e-15);
    // amplitude tie between 0.5 and 1 goes to the larger one
    CHECK(std::abs(project_to_codebook(cd(0.75, 0), Codebook(1, 2)) - cd(1, 0)) < 1e-15);
}

TEST_CASE("codewords are fixed points")
{
    for (int qr = 0; qr < 3; ++qr)
        for (int qt = 0; qt < 4; ++qt) {
            const Codebook cb(qr, qt);
            for (cd w : cb.codewords())
                CHECK(std::abs(project_to_codebook(w, cb) - w) < 1e-12);
        }
}

TEST_CASE("two-stage projection equals enumeration")
{
    std::mt19937_64 rng(20);
    for (int qr = 0; qr <= 3; ++qr)
        for (int qt = 0; qt <= 4; ++qt) {
            const Codebook cb(qr, qt);
            for (int i = 0; i < 300; ++i) {
                const cd x = std::polar(oracle::uniform(rng, 0.0, 1.5), oracle::uniform(rng, -kPi, kPi));
                const cd p = project_to_codebook(x, cb);
                CHECK(std::abs(p - enumerate_nearest(x, qr, qt)) < 1e-12);
                CHECK(std::abs(p - nearest_codeword_exhaustive(x, cb)) < 1e-12);
                CHECK(std::abs(p) <= 1.0 + 1e-15);
            }
        }
}

TEST_CASE("polarforming vectors")
{
    const PolarVec u = user_polarforming(0.5, 0.3, 1.0, -1.2);
    CHECK(std::abs(u[0] - std::polar(0.5, -0.3)) < 1e-15);
    CHECK(std::abs(u[1] - std::polar(1.0, 1.2)) < 1e-15);
    CHECK((bs_polarforming(0.5, 0.3, 1.0, -1.2) - kBsPolarScale * u).norm() < 1e-15);

    std::mt19937_64 rng(21);
    const Codebook cb(1, 3);
    for (int i = 0; i < 100; ++i) {
        const PolarVec x = oracle::cvector(rng, 2);
        const PolarVec p = project_polarforming(x, cb, kBsPolarScale);
        for (int e = 0; e < 2; ++e)
            CHECK(std::abs(p[e] - kBsPolarScale * project_to_codebook(x[e] / kBsPolarScale, cb)) < 1e-15);
        const PolarVec q = project_polarforming(PolarVec(x[1], x[0]), cb);
        const PolarVec r = project_polarforming(x, cb);
        CHECK(std::abs(q[0] - r[1]) == 0.0);
        CHECK(std::abs(q[1] - r[0]) == 0.0);
    }
}
