#ifndef MPK_SYNTH_HPP
#define MPK_SYNTH_HPP

// Synthetic phase-coupled data with known ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "model.hpp"
#include "tensor_file.hpp"

namespace mpk {

/// e^{-x} I0(x) for x >= 0: power series up to 30, asymptotic expansion beyond.
inline double bessel_i0_scaled(double x) {
    x = std::abs(x);
    if (x <= 30.0) {
        const double q = 0.25 * x * x;
        double term = 1.0;
        double sum = 1.0;
        for (int k = 1; k < 500; ++k) {
            term *= q / (static_cast<double>(k) * static_cast<double>(k));
            sum += term;
            if (term < 1e-17 * sum) {
                break;
            }
        }
        return sum * std::exp(-x);
    }
    // I0(x) ~ e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 60; ++k) {
        const double next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * x);
        if (next > term) {
            break;
        }
        term = next;
        sum += term;
        if (term < 1e-17 * sum) {
            break;
        }
    }
    return sum / std::sqrt(2.0 * std::numbers::pi * x);
}

inline double bessel_i0(double x) {
    return bessel_i0_scaled(x) * std::exp(std::abs(x));
}

/// Pairwise von Mises coupling p(theta_i, theta_j) ~ exp(kappa cos(theta_i - theta_j - mu)).
struct VonMisesPair {
    double kappa = 0.0;
    double mu = 0.0;

    void validate() const {
        if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
            throw parameter_error("von Mises concentration must be finite and >= 0");
        }
    }
};

/// Joint density on [-pi, pi)^2: uniform theta_i times a von Mises
/// conditional on the difference.
inline double von_mises_pair_pdf(double theta_i, double theta_j, const VonMisesPair& pair) {
    pair.validate();
    constexpr double two_pi = 2.0 * std::numbers::pi;
    // exp(k cos d) / I0(k) = exp(k (cos d - 1)) / (e^{-k} I0(k))
    const double c = std::cos(theta_i - theta_j - pair.mu);
    return std::exp(pair.kappa * (c - 1.0)) / (two_pi * two_pi * bessel_i0_scaled(pair.kappa));
}

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a + std::numbers::pi, two_pi);
    if (a < 0.0) {
        a += two_pi;
    }
    return a - std::numbers::pi;
}

/// Draws from von Mises(mu, kappa) with the Best-Fisher rejection sampler.
template <typename Rng>
double sample_von_mises(double mu, double kappa, Rng& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    if (kappa < 1e-8) {
        return wrap_angle(mu + 2.0 * std::numbers::pi * uniform(rng));
    }
    const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
    const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
    const double r = (1.0 + rho * rho) / (2.0 * rho);
    for (;;) {
        const double u1 = uniform(rng);
        const double z = std::cos(std::numbers::pi * u1);
        const double f = (1.0 + r * z) / (r + z);
        const double c = kappa * (r - f);
        const double u2 = uniform(rng);
        if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
            const double u3 = uniform(rng);
            const double theta = (u3 > 0.5 ? 1.0 : -1.0) * std::acos(std::clamp(f, -1.0, 1.0));
            return wrap_angle(mu + theta);
        }
    }
}

struct CoupledPair {
    std::size_t i = 0;
    std::size_t j = 0;
    VonMisesPair coupling;
};

/// count x n_subspaces phases in [-pi, pi). Uncoupled phases are uniform;
/// for each pair theta_j = theta_i - mu - delta with delta ~ von Mises(0, kappa).
inline Matrix sample_coupled_phases(const std::vector<CoupledPair>& pairs, std::size_t n_subspaces, std::size_t count,
                                    std::uint64_t seed) {
    std::set<std::size_t> used;
    for (const auto& p : pairs) {
        p.coupling.validate();
        if (p.i >= n_subspaces || p.j >= n_subspaces) {
            throw argument_error("coupled pair index out of range");
        }
        if (p.i == p.j || !used.insert(p.i).second || !used.insert(p.j).second) {
            throw argument_error("coupled pairs must be disjoint");
        }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-std::numbers::pi, std::numbers::pi);
    Matrix phases(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(n_subspaces));
    for (std::size_t k = 0; k < count; ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        for (std::size_t f = 0; f < n_subspaces; ++f) {
            phases(row, static_cast<Eigen::Index>(f)) = uniform(rng);
        }
        for (const auto& p : pairs) {
            const double delta = sample_von_mises(0.0, p.coupling.kappa, rng);
            const double ti = phases(row, static_cast<Eigen::Index>(p.i));
            phases(row, static_cast<Eigen::Index>(p.j)) = wrap_angle(ti - p.coupling.mu - delta);
        }
    }
    return phases;
}

/// Orthonormal even/odd Gabor pairs on a patch_size x patch_size grid.
///
/// Pair k has orientation (k mod 4) * pi/4 and is centred on the k/4-th
/// point of a lattice of quarter positions; all vectors are then
/// orthonormalized by modified Gram-Schmidt in column order. Returns a
/// D x (2 n_pairs) matrix with columns (f*2 + 0, f*2 + 1).
inline Matrix quadrature_basis(std::size_t patch_size, std::size_t n_pairs) {
    const std::size_t D = patch_size * patch_size;
    if (2 * n_pairs > D) {
        throw shape_error("too many quadrature pairs for the patch size");
    }
    const double ps = static_cast<double>(patch_size);
    const double sigma = ps / 4.0;
    const double freq = 2.0 * std::numbers::pi / std::max(2.0, ps / 2.0);
    const std::vector<std::pair<double, double>> centres{
        {0.5, 0.5}, {0.3, 0.3}, {0.7, 0.7}, {0.3, 0.7}, {0.7, 0.3},
        {0.5, 0.3}, {0.5, 0.7}, {0.3, 0.5}, {0.7, 0.5}};
    Matrix basis(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(2 * n_pairs));
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const double angle = static_cast<double>(k % 4) * std::numbers::pi / 4.0;
        const auto& centre = centres[(k / 4) % centres.size()];
        const double cy = centre.first * (ps - 1.0);
        const double cx = centre.second * (ps - 1.0);
        for (std::size_t y = 0; y < patch_size; ++y) {
            for (std::size_t x = 0; x < patch_size; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                const double along = dx * std::cos(angle) + dy * std::sin(angle);
                const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                const auto row = static_cast<Eigen::Index>(y * patch_size + x);
                basis(row, static_cast<Eigen::Index>(2 * k)) = env * std::cos(freq * along);
                basis(row, static_cast<Eigen::Index>(2 * k + 1)) = env * std::sin(freq * along);
            }
        }
    }
    for (Eigen::Index c = 0; c < basis.cols(); ++c) {
        for (Eigen::Index prev = 0; prev < c; ++prev) {
            basis.col(c) -= basis.col(prev).dot(basis.col(c)) * basis.col(prev);
        }
        const double n = basis.col(c).norm();
        if (n < 1e-8) {
            throw data_error("quadrature basis is degenerate at this patch size");
        }
        basis.col(c) /= n;
    }
    return basis;
}

/// patch = sum_f amplitude_f (cos theta_f basis_{f,0} + sin theta_f basis_{f,1}) + noise.
inline Matrix render_quadrature_patches(const Matrix& phases, const Matrix& amplitudes, const Matrix& basis,
                                        double noise_sigma, std::uint64_t seed) {
    if (phases.rows() != amplitudes.rows() || phases.cols() != amplitudes.cols()) {
        throw shape_error("phases and amplitudes must have the same shape");
    }
    if (basis.cols() != 2 * phases.cols()) {
        throw shape_error("basis must have two columns per subspace");
    }
    if (!(noise_sigma >= 0.0)) {
        throw parameter_error("noise sigma must be >= 0");
    }
    Matrix out = Matrix::Zero(phases.rows(), basis.rows());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index k = 0; k < phases.rows(); ++k) {
        for (Eigen::Index f = 0; f < phases.cols(); ++f) {
            const double a = amplitudes(k, f);
            out.row(k) += a * (std::cos(phases(k, f)) * basis.col(2 * f) + std::sin(phases(k, f)) * basis.col(2 * f + 1)).transpose();
        }
        if (noise_sigma > 0.0) {
            for (Eigen::Index i = 0; i < out.cols(); ++i) {
                out(k, i) += noise_sigma * normal(rng);
            }
        }
    }
    return out;
}

/// A rendered dataset with its generating parameters.
struct SynthDataset {
    Matrix patches;
    Matrix phases;
    Matrix amplitudes;
    Matrix basis;
    std::vector<CoupledPair> pairs;
    std::size_t patch_size = 0;

    void write(TensorFile& file) const {
        file.add_matrix("patches", patches);
        file.add_matrix("ground_truth/phases", phases);
        file.add_matrix("ground_truth/amplitudes", amplitudes);
        file.add_matrix("ground_truth/basis", basis);
        Matrix p(static_cast<Eigen::Index>(pairs.size()), 2);
        Vector kappa(static_cast<Eigen::Index>(pairs.size()));
        Vector mu(static_cast<Eigen::Index>(pairs.size()));
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            p(r, 0) = static_cast<double>(pairs[k].i);
            p(r, 1) = static_cast<double>(pairs[k].j);
            kappa(r) = pairs[k].coupling.kappa;
            mu(r) = pairs[k].coupling.mu;
        }
        file.add_matrix("ground_truth/pairs", p);
        file.add_vector("ground_truth/kappa", kappa);
        file.add_vector("ground_truth/mu", mu);
        file.add_scalar("ground_truth/patch_size", static_cast<double>(patch_size));
    }
};

struct SynthOptions {
    std::size_t patch_size = 8;
    std::size_t n_pairs = 8;
    std::size_t count = 20000;
    std::vector<CoupledPair> pairs;
    /// Amplitudes are drawn uniformly from [amplitude_min, amplitude_max].
    double amplitude_min = 0.5;
    double amplitude_max = 1.5;
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
};

inline SynthDataset make_synth_dataset(const SynthOptions& opt) {
    SynthDataset ds;
    ds.patch_size = opt.patch_size;
    ds.pairs = opt.pairs;
    ds.basis = quadrature_basis(opt.patch_size, opt.n_pairs);
    ds.phases = sample_coupled_phases(opt.pairs, opt.n_pairs, opt.count, opt.seed);
    std::mt19937_64 rng(opt.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    std::uniform_real_distribution<double> amp(opt.amplitude_min, opt.amplitude_max);
    ds.amplitudes.resize(ds.phases.rows(), ds.phases.cols());
    for (Eigen::Index k = 0; k < ds.amplitudes.size(); ++k) {
        ds.amplitudes.data()[k] = amp(rng);
    }
    ds.patches = render_quadrature_patches(ds.phases, ds.amplitudes, ds.basis, opt.noise_sigma, opt.seed + 1);
    return ds;
}

} // namespace mpk

#endif
