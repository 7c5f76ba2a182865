// SPDX-License-Identifier: Apache-2.0
#include "polarsim/localization.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace polarsim {

// ---------------------------------------------------------------------------
// Tensors and unfoldings
// ---------------------------------------------------------------------------

Tensor3::Tensor3(int l, int n, int p) : l_(l), n_(n), p_(p)
{
    if (l < 1 || n < 1 || p < 1)
        throw std::invalid_argument("Tensor3: dimensions must be positive");
    data_.assign(static_cast<std::size_t>(l) * n * p, cd(0.0, 0.0));
}

double Tensor3::squared_norm() const
{
    double s = 0.0;
    for (const cd& v : data_)
        s += std::norm(v);
    return s;
}

MatXc khatri_rao(const MatXc& a, const MatXc& b)
{
    if (a.cols() != b.cols())
        throw std::invalid_argument("khatri_rao: column counts differ");
    MatXc out(a.rows() * b.rows(), a.cols());
    for (Eigen::Index k = 0; k < a.cols(); ++k)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out.col(k).segment(i * b.rows(), b.rows()) = a(i, k) * b.col(k);
    return out;
}

MatXc unfold(const Tensor3& z, int mode)
{
    const int l = z.dim_l(), n = z.dim_n(), p = z.dim_p();
    MatXc m;
    switch (mode) {
    case 1:
        m.resize(static_cast<Eigen::Index>(p) * n, l);
        for (int ll = 0; ll < l; ++ll)
            for (int nn = 0; nn < n; ++nn)
                for (int pp = 0; pp < p; ++pp)
                    m(nn * p + pp, ll) = z(ll, nn, pp);
        break;
    case 2:
        m.resize(static_cast<Eigen::Index>(l) * p, n);
        for (int ll = 0; ll < l; ++ll)
            for (int nn = 0; nn < n; ++nn)
                for (int pp = 0; pp < p; ++pp)
                    m(pp * l + ll, nn) = z(ll, nn, pp);
        break;
    case 3:
        m.resize(static_cast<Eigen::Index>(n) * l, p);
        for (int ll = 0; ll < l; ++ll)
            for (int nn = 0; nn < n; ++nn)
                for (int pp = 0; pp < p; ++pp)
                    m(ll * n + nn, pp) = z(ll, nn, pp);
        break;
    default:
        throw std::invalid_argument("unfold: mode must be 1, 2 or 3");
    }
    return m;
}

Tensor3 fold(const MatXc& m, int mode, int l, int n, int p)
{
    Tensor3 z(l, n, p);
    const auto check = [&](Eigen::Index rows, Eigen::Index cols) {
        if (m.rows() != rows || m.cols() != cols)
            throw std::invalid_argument("fold: matrix shape does not match the tensor dimensions");
    };
    switch (mode) {
    case 1:
        check(static_cast<Eigen::Index>(p) * n, l);
        break;
    case 2:
        check(static_cast<Eigen::Index>(l) * p, n);
        break;
    case 3:
        check(static_cast<Eigen::Index>(n) * l, p);
        break;
    default:
        throw std::invalid_argument("fold: mode must be 1, 2 or 3");
    }
    for (int ll = 0; ll < l; ++ll)
        for (int nn = 0; nn < n; ++nn)
            for (int pp = 0; pp < p; ++pp) {
                if (mode == 1)
                    z(ll, nn, pp) = m(nn * p + pp, ll);
                else if (mode == 2)
                    z(ll, nn, pp) = m(pp * l + ll, nn);
                else
                    z(ll, nn, pp) = m(ll * n + nn, pp);
            }
    return z;
}

Tensor3 parafac_tensor(const MatXc& x, const MatXc& h, const MatXc& omega)
{
    const auto k = x.cols();
    if (h.rows() != k || omega.cols() != k)
        throw std::invalid_argument("parafac_tensor: factor ranks differ");
    const int l = static_cast<int>(x.rows()), n = static_cast<int>(h.cols()),
              p = static_cast<int>(omega.rows());
    Tensor3 z(l, n, p);
    for (int pp = 0; pp < p; ++pp) {
        const MatXc slice = x * omega.row(pp).asDiagonal() * h;
        for (int ll = 0; ll < l; ++ll)
            for (int nn = 0; nn < n; ++nn)
                z(ll, nn, pp) = slice(ll, nn);
    }
    return z;
}

// ---------------------------------------------------------------------------
// Pilot design and simulation
// ---------------------------------------------------------------------------

MatXc semi_unitary_pilots(int slots, int users)
{
    if (users < 1 || slots < users)
        throw std::invalid_argument("semi_unitary_pilots: need slots >= users >= 1");
    MatXc x(slots, users);
    const double s = 1.0 / std::sqrt(static_cast<double>(slots));
    for (int l = 0; l < slots; ++l)
        for (int k = 0; k < users; ++k)
            x(l, k) = std::polar(s, -kTwoPi * l * k / slots);
    return x;
}

std::vector<std::vector<PolarVec>> dft_user_polarforming(int users, int blocks)
{
    if (users < 1 || blocks < 1)
        throw std::invalid_argument("dft_user_polarforming: dimensions must be positive");
    std::vector<PolarVec> row;
    row.reserve(blocks);
    for (int p = 0; p < blocks; ++p)
        row.emplace_back(kBsPolarScale * PolarVec(1.0, std::polar(1.0, kTwoPi * p / blocks)));
    return std::vector<std::vector<PolarVec>>(users, row);
}

std::vector<SubarrayPose> training_poses(int count, double side)
{
    if (count < 1)
        throw std::invalid_argument("training_poses: count must be positive");
    static const Vec3 normals[6] = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(),
                                    -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
    static const double offsets[4][2] = {{0.25, 0.25}, {-0.25, -0.25}, {0.25, -0.25}, {-0.25, 0.25}};

    const double h = 0.5 * side;
    std::vector<SubarrayPose> poses;
    poses.reserve(count);
    for (int m = 0; m < count; ++m) {
        const Vec3& n = normals[m % 6];
        const int round = m / 6;
        // two in-face axes orthogonal to n
        const int axis = n.cwiseAbs().maxCoeff() == std::abs(n.x()) ? 0 : (std::abs(n.y()) > 0.5 ? 1 : 2);
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        Vec3 q = h * n;
        if (round > 0) {
            const auto& o = offsets[(round - 1) % 4];
            q[a1] += o[0] * side;
            q[a2] += o[1] * side;
        }
        poses.push_back({q, rotation_for_boresight(n)});
    }
    return poses;
}

PilotPattern make_pilot_pattern(int users, int slots, int blocks, int poses, double side)
{
    PilotPattern pat;
    pat.pilots = semi_unitary_pilots(slots, users);
    pat.user_pf = dft_user_polarforming(users, blocks);
    pat.poses = training_poses(poses, side);
    return pat;
}

PilotObservation pilot_factors(const std::vector<UserState>& users, const PilotPattern& pattern,
                               const SubarrayLayout& layout, const PhysicalConstants& consts,
                               const GainPattern& gain)
{
    const int k_count = static_cast<int>(users.size());
    if (k_count != pattern.users())
        throw std::invalid_argument("pilot_factors: pilot matrix does not match the user count");
    if (static_cast<int>(pattern.user_pf.size()) != k_count)
        throw std::invalid_argument("pilot_factors: user polarforming does not match the user count");

    const int n = layout.size();
    const int p = pattern.blocks();
    PilotObservation obs;
    for (const auto& pose : pattern.poses) {
        MatXc h(k_count, n);
        MatXc omega(p, k_count);
        for (int k = 0; k < k_count; ++k) {
            const auto& u = users[k];
            h.row(k) = unpolarformed_los_channel(u, pose, layout, consts, gain).transpose();
            const Mat2c a = dual_pol_response(pose.u, u.rotation, u.theta, u.phi).response;
            for (int pp = 0; pp < p; ++pp)
                omega(pp, k) = pattern.bs_pf.dot(a * pattern.user_pf[k][pp]);
        }
        obs.received.push_back(parafac_tensor(pattern.pilots, h, omega));
        obs.channels.push_back(std::move(h));
        obs.coefficients.push_back(std::move(omega));
    }
    return obs;
}

PilotObservation simulate_pilot_rx(const std::vector<UserState>& users,
                                   const PilotPattern& pattern, const SubarrayLayout& layout,
                                   const PhysicalConstants& consts, const GainPattern& gain,
                                   double sigma2, std::mt19937_64& rng)
{
    if (!(sigma2 >= 0.0))
        throw std::invalid_argument("simulate_pilot_rx: noise power must be non-negative");
    PilotObservation obs = pilot_factors(users, pattern, layout, consts, gain);
    if (sigma2 == 0.0)
        return obs;
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * sigma2));
    for (auto& y : obs.received)
        for (int p = 0; p < y.dim_p(); ++p)
            for (int n = 0; n < y.dim_n(); ++n)
                for (int l = 0; l < y.dim_l(); ++l) {
                    const double re = normal(rng);
                    const double im = normal(rng);
                    y(l, n, p) += cd(re, im);
                }
    return obs;
}

double mean_user_signal_power(const PilotObservation& obs)
{
    double total = 0.0;
    double entries = 0.0;
    double users = 1.0;
    for (std::size_t m = 0; m < obs.channels.size(); ++m) {
        const MatXc& h = obs.channels[m];
        const MatXc& omega = obs.coefficients[m];
        const auto& y = obs.received[m];
        // with orthonormal pilot columns ||Z_{m,p}||^2 = sum_k |Omega_pk|^2 ||h_k||^2
        for (Eigen::Index p = 0; p < omega.rows(); ++p)
            for (Eigen::Index k = 0; k < omega.cols(); ++k)
                total += std::norm(omega(p, k)) * h.row(k).squaredNorm();
        entries += static_cast<double>(y.dim_l()) * y.dim_n() * y.dim_p();
        users = static_cast<double>(omega.cols());
    }
    return entries > 0.0 ? total / (entries * users) : 0.0;
}

// ---------------------------------------------------------------------------
// ALS
// ---------------------------------------------------------------------------

namespace {

MatXc unitary_dft(int k)
{
    MatXc f(k, k);
    const double s = 1.0 / std::sqrt(static_cast<double>(k));
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            f(i, j) = std::polar(s, -kTwoPi * i * j / k);
    return f;
}

// Dominant eigenvectors of a Gram matrix G = B^H B, conjugated so that their
// span matches the column space of the underlying factor, and mixed by a
// unitary DFT so every column overlaps every dominant direction.
MatXc dominant_subspace_init(const MatXc& gram, int k)
{
    Eigen::SelfAdjointEigenSolver<MatXc> es(gram);
    const auto dim = gram.rows();
    const auto take = std::min<Eigen::Index>(dim, k);
    MatXc u = MatXc::Zero(dim, k);
    for (Eigen::Index i = 0; i < take; ++i)
        u.col(i) = es.eigenvectors().col(dim - 1 - i).conjugate();
    return u * unitary_dft(k);
}

MatXc least_squares(const MatXc& a, const MatXc& b, int rank, const char* mode)
{
    Eigen::ColPivHouseholderQR<MatXc> qr(a);
    qr.setThreshold(1e-12);
    if (qr.rank() < rank)
        throw Error(std::string("als_parafac: ") + mode + " Khatri-Rao factor is rank deficient (rank " +
                    std::to_string(qr.rank()) + " < " + std::to_string(rank) + ")");
    return qr.solve(b);
}

double relative_change(const MatXc& now, const MatXc& before)
{
    const double denom = now.squaredNorm();
    if (denom == 0.0)
        return before.squaredNorm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (now - before).squaredNorm() / denom;
}

} // namespace

AlsResult als_parafac(const Tensor3& y, const MatXc& pilots, int users, const AlsOptions& opts)
{
    const int l = y.dim_l(), n = y.dim_n(), p = y.dim_p();
    if (users < 1 || pilots.cols() != users || pilots.rows() != l)
        throw std::invalid_argument("als_parafac: pilot matrix must be L x K");
    if (l < users || l * p < users || l * n < users)
        throw std::invalid_argument("als_parafac: need L >= K, LP >= K and LN >= K");
    if (!(opts.kappa > 0.0) || opts.max_iterations < 1)
        throw std::invalid_argument("als_parafac: invalid stopping options");

    const MatXc y2 = unfold(y, 2);
    const MatXc y3 = unfold(y, 3);

    AlsResult r;
    r.coefficients = dominant_subspace_init(y3.adjoint() * y3, users);
    r.channels = dominant_subspace_init(y2.adjoint() * y2, users).transpose();

    for (int it = 1; it <= opts.max_iterations; ++it) {
        const MatXc a2 = khatri_rao(r.coefficients, pilots);
        const MatXc h = least_squares(a2, y2, users, "mode-2");
        r.objective.push_back((y2 - a2 * h).squaredNorm());

        const MatXc a3 = khatri_rao(pilots, h.transpose());
        const MatXc omega = least_squares(a3, y3, users, "mode-3").transpose();
        r.objective.push_back((y2 - khatri_rao(omega, pilots) * h).squaredNorm());

        const double dh = relative_change(h, r.channels);
        const double dw = relative_change(omega, r.coefficients);
        r.channels = h;
        r.coefficients = omega;
        r.iterations = it;
        if (dh <= opts.kappa && dw <= opts.kappa) {
            r.converged = true;
            break;
        }
    }
    return r;
}

std::vector<AlsResult> als_parafac(const std::vector<Tensor3>& y, const MatXc& pilots, int users,
                                   const AlsOptions& opts)
{
    std::vector<AlsResult> out;
    out.reserve(y.size());
    for (const auto& ym : y)
        out.push_back(als_parafac(ym, pilots, users, opts));
    return out;
}

VecX channel_error_variance(const Tensor3& y, const MatXc& pilots, const AlsResult& r)
{
    const auto k = r.coefficients.cols();
    const double entries = static_cast<double>(y.dim_l()) * y.dim_n() * y.dim_p();
    const double dof = entries - static_cast<double>(k) * (y.dim_n() + y.dim_p() - 1);
    if (dof <= 0.0)
        throw std::invalid_argument("channel_error_variance: model has no residual degrees of freedom");
    const MatXc a2 = khatri_rao(r.coefficients, pilots);
    const double sigma2 = (unfold(y, 2) - a2 * r.channels).squaredNorm() / dof;
    const MatXc gram = a2.adjoint() * a2;
    const MatXc inv = gram.ldlt().solve(MatXc::Identity(k, k));
    return sigma2 * inv.diagonal().real();
}

void normalize_scaling(AlsResult& r)
{
    for (Eigen::Index k = 0; k < r.coefficients.cols(); ++k) {
        const double s = r.coefficients.col(k).norm();
        if (s == 0.0)
            continue;
        r.coefficients.col(k) /= s;
        r.channels.row(k) *= s;
    }
}

void resolve_scale_genie(AlsResult& r, const MatXc& true_coefficients)
{
    if (true_coefficients.rows() != r.coefficients.rows() ||
        true_coefficients.cols() != r.coefficients.cols())
        throw std::invalid_argument("resolve_scale_genie: coefficient shapes differ");
    for (Eigen::Index k = 0; k < r.coefficients.cols(); ++k) {
        const double e = r.coefficients.col(k).squaredNorm();
        if (e == 0.0)
            continue;
        const cd c = r.coefficients.col(k).dot(true_coefficients.col(k)) / e;
        if (std::abs(c) == 0.0)
            continue;
        r.coefficients.col(k) *= c;
        r.channels.row(k) /= c;
    }
}

void resolve_scale_eta(AlsResult& r, double eta_power)
{
    if (!(eta_power > 0.0))
        throw std::invalid_argument("resolve_scale_eta: designed eta power must be positive");
    normalize_scaling(r);
    const double s = std::sqrt(static_cast<double>(r.coefficients.rows()) * eta_power);
    r.coefficients *= s;
    r.channels /= s;
}

double designed_eta_power(const PilotPattern& pattern, std::mt19937_64& rng, int samples)
{
    if (samples < 1 || pattern.poses.empty() || pattern.user_pf.empty())
        throw std::invalid_argument("designed_eta_power: empty pattern");
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double acc = 0.0;
    long count = 0;
    for (int s = 0; s < samples; ++s) {
        const double theta = std::asin(unit(rng));
        const double phi = angle(rng) - kPi;
        const RotationAngles ur(angle(rng), angle(rng), angle(rng));
        const auto& pose = pattern.poses[static_cast<std::size_t>(s) % pattern.poses.size()];
        const Mat2c a = dual_pol_response(pose.u, ur, theta, phi).response;
        for (const auto& w : pattern.user_pf.front()) {
            acc += std::norm(pattern.bs_pf.dot(a * w));
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Direction finding
// ---------------------------------------------------------------------------

namespace {

// Global antenna positions and inverse rotations of the training poses.
struct PoseArray
{
    std::vector<std::vector<Vec3>> positions;
    std::vector<Mat3> inverse_rotation;
    int antennas = 0;

    PoseArray(const std::vector<SubarrayPose>& poses, const SubarrayLayout& layout)
        : antennas(layout.size())
    {
        for (const auto& pose : poses) {
            positions.push_back(antenna_positions(pose, layout));
            inverse_rotation.push_back(rotation_matrix(pose.u).transpose());
        }
    }

    int poses() const { return static_cast<int>(positions.size()); }

    void steering(const Vec3& f, double lambda, const GainPattern* gain, VecXc& out) const
    {
        const double k0 = kTwoPi / lambda;
        out.resize(static_cast<Eigen::Index>(poses()) * antennas);
        for (int m = 0; m < poses(); ++m) {
            double amp = 1.0;
            if (gain != nullptr && gain->kind != GainPattern::Kind::isotropic)
                amp = std::sqrt(std::pow(10.0, gain->gain_dbi(inverse_rotation[m] * f) / 10.0));
            for (int n = 0; n < antennas; ++n)
                out[m * antennas + n] = std::polar(amp, -k0 * f.dot(positions[m][n]));
        }
    }
};

using Score = std::function<double(const Vec3&)>;

struct Peak
{
    Direction dir;
    double value = 0.0;
};

double clamp_theta(double t) { return std::clamp(t, -kPi / 2, kPi / 2); }

double wrap_phi(double p)
{
    p = std::fmod(p + kPi, kTwoPi);
    if (p < 0.0)
        p += kTwoPi;
    return p - kPi;
}

double eval(const Score& score, const Direction& d) { return score(pointing_vector(d.theta, d.phi)); }

std::vector<Peak> grid_local_maxima(const Score& score, double grid_deg)
{
    const double step = grid_deg * kPi / 180.0;
    const int nt = std::max(2, static_cast<int>(std::lround(180.0 / grid_deg)));
    const int np = std::max(4, static_cast<int>(std::lround(360.0 / grid_deg)));
    const double dt = kPi / nt;
    const double dp = kTwoPi / np;
    (void)step;

    std::vector<double> values(static_cast<std::size_t>(nt) * np);
    for (int i = 0; i < nt; ++i) {
        const double theta = -kPi / 2 + (i + 0.5) * dt;
        for (int j = 0; j < np; ++j)
            values[static_cast<std::size_t>(i) * np + j] = eval(score, {theta, -kPi + j * dp});
    }

    std::vector<Peak> peaks;
    for (int i = 0; i < nt; ++i)
        for (int j = 0; j < np; ++j) {
            const double v = values[static_cast<std::size_t>(i) * np + j];
            bool is_max = true;
            for (int di = -1; di <= 1 && is_max; ++di) {
                const int ii = i + di;
                if (ii < 0 || ii >= nt)
                    continue;
                for (int dj = -1; dj <= 1; ++dj) {
                    if (di == 0 && dj == 0)
                        continue;
                    const int jj = (j + dj + np) % np;
                    if (values[static_cast<std::size_t>(ii) * np + jj] > v) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max)
                peaks.push_back({{-kPi / 2 + (i + 0.5) * dt, -kPi + j * dp}, v});
        }
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.value > b.value; });
    return peaks;
}

// Compass search with step halving, then a separable parabolic step.
Peak refine_peak(const Score& score, Peak start, double initial_step)
{
    Peak best = start;
    double step = initial_step;
    int guard = 0;
    while (step > 1e-9 && guard++ < 400) {
        const double phi_step = step / std::max(std::cos(best.dir.theta), 0.05);
        const Direction trial[4] = {{clamp_theta(best.dir.theta + step), best.dir.phi},
                                    {clamp_theta(best.dir.theta - step), best.dir.phi},
                                    {best.dir.theta, wrap_phi(best.dir.phi + phi_step)},
                                    {best.dir.theta, wrap_phi(best.dir.phi - phi_step)}};
        Peak cand = best;
        for (const auto& t : trial) {
            const double v = eval(score, t);
            if (v > cand.value)
                cand = {t, v};
        }
        if (cand.value > best.value)
            best = cand;
        else
            step *= 0.5;
    }

    // quadratic interpolation along each axis on a small stencil
    const double h = 1e-6;
    const double f0 = best.value;
    const double ft_p = eval(score, {clamp_theta(best.dir.theta + h), best.dir.phi});
    const double ft_m = eval(score, {clamp_theta(best.dir.theta - h), best.dir.phi});
    const double fp_p = eval(score, {best.dir.theta, wrap_phi(best.dir.phi + h)});
    const double fp_m = eval(score, {best.dir.theta, wrap_phi(best.dir.phi - h)});
    Direction q = best.dir;
    const double ct = ft_m - 2 * f0 + ft_p;
    const double cp = fp_m - 2 * f0 + fp_p;
    if (ct < 0.0)
        q.theta = clamp_theta(q.theta + 0.5 * h * (ft_m - ft_p) / ct);
    if (cp < 0.0)
        q.phi = wrap_phi(q.phi + 0.5 * h * (fp_m - fp_p) / cp);
    const double vq = eval(score, q);
    if (vq > best.value)
        best = {q, vq};
    return best;
}

double angular_distance(const Direction& a, const Direction& b)
{
    const double c = pointing_vector(a.theta, a.phi).dot(pointing_vector(b.theta, b.phi));
    return std::acos(std::clamp(c, -1.0, 1.0));
}

std::vector<Peak> top_peaks(const Score& score, int count, const MusicOptions& opts)
{
    if (!(opts.grid_deg > 0.0 && opts.grid_deg <= 45.0))
        throw std::invalid_argument("MUSIC grid resolution must lie in (0, 45] degrees");
    const double res = opts.grid_deg * kPi / 180.0;
    auto coarse = grid_local_maxima(score, opts.grid_deg);
    const std::size_t candidates = std::min<std::size_t>(coarse.size(), std::max(3 * count, count + 6));
    coarse.resize(candidates);

    std::vector<Peak> refined;
    for (const auto& c : coarse)
        refined.push_back(opts.refine ? refine_peak(score, c, 0.5 * res) : c);
    std::sort(refined.begin(), refined.end(), [](const Peak& a, const Peak& b) { return a.value > b.value; });

    std::vector<Peak> distinct;
    for (const auto& p : refined) {
        const bool dup = std::any_of(distinct.begin(), distinct.end(),
                                     [&](const Peak& d) { return angular_distance(d.dir, p.dir) < res; });
        if (!dup)
            distinct.push_back(p);
        if (static_cast<int>(distinct.size()) == count)
            break;
    }
    return distinct;
}

} // namespace

VecXc stacked_steering(const Vec3& f, const std::vector<SubarrayPose>& poses,
                       const SubarrayLayout& layout, double lambda, const GainPattern& gain,
                       bool gain_weighted)
{
    PoseArray arr(poses, layout);
    VecXc a;
    arr.steering(f, lambda, gain_weighted ? &gain : nullptr, a);
    return a;
}

namespace {

// Normalized MUSIC pseudo-spectrum over the stacked channel estimates.
class MusicSpectrum
{
  public:
    MusicSpectrum(const std::vector<MatXc>& channels, const std::vector<SubarrayPose>& poses,
                  const SubarrayLayout& layout, double lambda, const GainPattern& gain, int users,
                  bool gain_weighted)
        : arr_(poses, layout), lambda_(lambda), gain_(gain_weighted ? &gain : nullptr)
    {
        if (channels.size() != poses.size() || channels.empty())
            throw std::invalid_argument("music_doa: one channel estimate per training pose is required");
        const int n = layout.size();
        const int m = static_cast<int>(poses.size());
        if (m * n <= users)
            throw std::invalid_argument("music_doa: need M*N > K for a nonempty noise subspace");

        MatXc stacked(static_cast<Eigen::Index>(m) * n, users);
        for (int i = 0; i < m; ++i) {
            if (channels[i].rows() != users || channels[i].cols() != n)
                throw std::invalid_argument("music_doa: channel estimate has the wrong shape");
            stacked.block(static_cast<Eigen::Index>(i) * n, 0, n, users) = channels[i].transpose();
        }
        const MatXc cov = stacked * stacked.adjoint() / static_cast<double>(users);
        Eigen::SelfAdjointEigenSolver<MatXc> es(cov);
        signal_ = es.eigenvectors().rightCols(users);
    }

    double operator()(const Vec3& f) const
    {
        arr_.steering(f, lambda_, gain_, a_);
        const double total = a_.squaredNorm();
        const double in_signal = (signal_.adjoint() * a_).squaredNorm();
        return total / std::max(total - in_signal, 1e-15 * total);
    }

  private:
    PoseArray arr_;
    double lambda_;
    const GainPattern* gain_;
    MatXc signal_;
    mutable VecXc a_;
};

} // namespace

MusicResult music_doa(const std::vector<MatXc>& channels, const std::vector<SubarrayPose>& poses,
                      const SubarrayLayout& layout, double lambda, const GainPattern& gain,
                      int users, const MusicOptions& opts)
{
    const MusicSpectrum spectrum(channels, poses, layout, lambda, gain, users, opts.gain_weighted);
    const Score score = [&](const Vec3& f) { return spectrum(f); };

    const auto peaks = top_peaks(score, users, opts);
    MusicResult out;
    out.peaks_found = static_cast<int>(peaks.size());
    for (const auto& p : peaks) {
        out.directions.push_back(pointing_vector(p.dir.theta, p.dir.phi));
        out.spectrum.push_back(p.value);
    }
    if (out.peaks_found < users)
        out.warning = "music_doa: grid too coarse, found " + std::to_string(out.peaks_found) +
                      " distinct peaks for " + std::to_string(users) + " users";
    return out;
}

std::vector<Vec3> music_doa_seeded(const std::vector<MatXc>& channels,
                                   const std::vector<SubarrayPose>& poses,
                                   const SubarrayLayout& layout, double lambda,
                                   const GainPattern& gain, int users,
                                   const std::vector<Vec3>& seeds, const MusicOptions& opts)
{
    if (!(opts.window_deg > 0.0) || !(opts.fine_deg > 0.0) || opts.fine_deg > opts.window_deg)
        throw std::invalid_argument("music_doa_seeded: need 0 < fine_deg <= window_deg");
    const MusicSpectrum spectrum(channels, poses, layout, lambda, gain, users, opts.gain_weighted);
    const Score score = [&](const Vec3& f) { return spectrum(f); };

    const double w = opts.window_deg * kPi / 180.0;
    const double h = opts.fine_deg * kPi / 180.0;
    const int steps = static_cast<int>(std::ceil(w / h));
    std::vector<Vec3> out;
    out.reserve(seeds.size());
    for (const auto& seed : seeds) {
        const Direction c = direction_of(seed);
        const double phi_scale = 1.0 / std::max(std::cos(c.theta), std::sin(w));
        Peak best{c, eval(score, c)};
        for (int i = -steps; i <= steps; ++i) {
            const double theta = c.theta + i * h;
            if (theta < -kPi / 2 || theta > kPi / 2)
                continue;
            for (int j = -steps; j <= steps; ++j) {
                const Direction d{theta, wrap_phi(c.phi + j * h * phi_scale)};
                const double v = eval(score, d);
                if (v > best.value)
                    best = {d, v};
            }
        }
        if (opts.refine)
            best = refine_peak(score, best, 0.5 * h);
        out.push_back(pointing_vector(best.dir.theta, best.dir.phi));
    }
    return out;
}

Vec3 noncoherent_doa(const std::vector<VecXc>& per_pose, const std::vector<SubarrayPose>& poses,
                     const SubarrayLayout& layout, double lambda, const MusicOptions& opts)
{
    if (per_pose.size() != poses.size() || per_pose.empty())
        throw std::invalid_argument("noncoherent_doa: one channel estimate per training pose is required");
    const PoseArray arr(poses, layout);
    const int n = layout.size();
    VecXc a;
    const Score score = [&](const Vec3& f) {
        arr.steering(f, lambda, nullptr, a);
        double s = 0.0;
        for (int m = 0; m < arr.poses(); ++m)
            s += std::norm(a.segment(static_cast<Eigen::Index>(m) * n, n).dot(per_pose[m]));
        return s / n;
    };
    const auto peaks = top_peaks(score, 1, opts);
    if (peaks.empty())
        throw Error("noncoherent_doa: no spectrum peak found");
    return pointing_vector(peaks.front().dir.theta, peaks.front().dir.phi);
}

double estimate_distance(const std::vector<double>& h_norms, const std::vector<double>& gains,
                         double epsilon0, int antennas)
{
    if (h_norms.size() != gains.size() || h_norms.empty())
        throw std::invalid_argument("estimate_distance: one norm and one gain per pose are required");
    if (!(epsilon0 > 0.0) || antennas < 1)
        throw std::invalid_argument("estimate_distance: epsilon0 and N must be positive");
    double num = 0.0, den = 0.0;
    for (std::size_t m = 0; m < gains.size(); ++m) {
        if (gains[m] < 0.0)
            throw std::invalid_argument("estimate_distance: gains must be non-negative");
        num += gains[m];
        den += h_norms[m] * std::sqrt(gains[m]);
    }
    if (!(num > 0.0))
        throw Error("estimate_distance: user is unobservable (all gains are zero)");
    if (!(den > 0.0))
        throw Error("estimate_distance: all gain-weighted channel norms are zero");
    return std::sqrt(epsilon0 * antennas) * num / den;
}

// ---------------------------------------------------------------------------
// End-to-end
// ---------------------------------------------------------------------------

LocalizationReport localize_from_observation(const std::vector<UserState>& users,
                                             const PilotObservation& obs,
                                             const LocalizationSetup& setup)
{
    const auto& pat = setup.pattern;
    const int k_count = pat.users();
    const int m_count = pat.poses_count();
    const int n = setup.layout.size();
    if (static_cast<int>(users.size()) != k_count)
        throw std::invalid_argument("localize: user count does not match the pilot pattern");

    auto factors = als_parafac(obs.received, pat.pilots, k_count, setup.als);
    std::vector<MatXc> channels;
    for (int m = 0; m < m_count; ++m) {
        if (setup.scale == ScaleMode::genie)
            resolve_scale_genie(factors[m], obs.coefficients[m]);
        else
            resolve_scale_eta(factors[m], setup.eta_power);
        channels.push_back(factors[m].channels);
    }
    LocalizationReport report;
    // the residual has to carry information about the noise level
    const double fitted = static_cast<double>(k_count) * (n + pat.blocks() - 1);
    const bool debias = setup.debias_range && static_cast<double>(pat.slots()) * n * pat.blocks() > fitted;
    if (setup.debias_range && !debias)
        report.warning = "range debiasing skipped: no residual degrees of freedom";
    std::vector<VecX> noise;
    if (debias)
        for (int m = 0; m < m_count; ++m)
            noise.push_back(channel_error_variance(obs.received[m], pat.pilots, factors[m]));

    std::vector<Vec3> user_dir(k_count);
    const double lambda = setup.consts.lambda;

    for (int k = 0; k < k_count; ++k) {
        std::vector<VecXc> per_pose;
        for (int m = 0; m < m_count; ++m)
            per_pose.push_back(channels[m].row(k).transpose());
        user_dir[k] = noncoherent_doa(per_pose, pat.poses, setup.layout, lambda, setup.music);
    }
    // with the complex scale resolved the poses add coherently; sharpen each
    // seed on the MUSIC spectrum of the whole synthetic aperture
    if (setup.scale == ScaleMode::genie)
        user_dir = music_doa_seeded(channels, pat.poses, setup.layout, lambda, setup.gain, k_count,
                                    user_dir, setup.music);

    for (int k = 0; k < k_count; ++k) {
        std::vector<double> norms(m_count), gains(m_count);
        for (int m = 0; m < m_count; ++m) {
            double e2 = channels[m].row(k).squaredNorm();
            if (debias)
                e2 = std::max(0.0, e2 - n * noise[m][k]);
            norms[m] = std::sqrt(e2);
            gains[m] = effective_gain(pat.poses[m].u, user_dir[k], setup.gain);
        }
        UserEstimate est;
        est.direction = user_dir[k];
        est.distance = estimate_distance(norms, gains, setup.consts.epsilon0, n);
        est.position = est.distance * est.direction;
        est.error = (est.position - users[k].position()).norm();
        report.users.push_back(est);
    }
    return report;
}

LocalizationReport localize_users(const std::vector<UserState>& users,
                                  const LocalizationSetup& setup, double sigma2,
                                  std::mt19937_64& rng)
{
    const PilotObservation obs =
        simulate_pilot_rx(users, setup.pattern, setup.layout, setup.consts, setup.gain, sigma2, rng);
    return localize_from_observation(users, obs, setup);
}

} // namespace polarsim
