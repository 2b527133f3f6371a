#ifndef MPK_SELFCHECK_HPP
#define MPK_SELFCHECK_HPP

// Built-in consistency checks run by `mpk check`: gradient check, brute-force
// marginalisation of the hiddens, and HMC on a standard Gaussian.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "energy.hpp"
#include "grad.hpp"
#include "hmc.hpp"
#include "model.hpp"

namespace mpk {

/// -log sum_h exp(-E(v, h)) by enumerating every binary hidden state.
/// Only feasible for N + M + T up to about 20.
inline long double enumerate_free_energy(const Vector& v, const ModelParams& params) {
    using Ext = long double;
    const BasicModelParams<Ext> p = params.cast<Ext>();
    const ModelShape s = params.shape();
    const std::size_t nk = params.phase_enabled ? s.T : 0;
    const std::size_t bits = s.N + s.M + nk;
    if (bits > 24) {
        throw argument_error("too many hidden units to enumerate");
    }
    const VectorT<Ext> ve = v.cast<Ext>();
    std::vector<Ext> neg_e;
    neg_e.reserve(std::size_t{1} << bits);
    VectorT<Ext> hp(static_cast<Eigen::Index>(s.N));
    VectorT<Ext> hm(static_cast<Eigen::Index>(s.M));
    VectorT<Ext> hk = VectorT<Ext>::Zero(static_cast<Eigen::Index>(s.T));
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << bits); ++mask) {
        std::size_t b = 0;
        for (Eigen::Index i = 0; i < hp.size(); ++i) hp(i) = static_cast<Ext>((mask >> b++) & 1U);
        for (Eigen::Index i = 0; i < hm.size(); ++i) hm(i) = static_cast<Ext>((mask >> b++) & 1U);
        for (std::size_t i = 0; i < nk; ++i) hk(static_cast<Eigen::Index>(i)) = static_cast<Ext>((mask >> b++) & 1U);
        neg_e.push_back(-total_energy(ve, hp, hm, hk, p));
    }
    Ext top = -std::numeric_limits<Ext>::infinity();
    for (Ext x : neg_e) top = std::max(top, x);
    Ext sum = 0;
    for (Ext x : neg_e) sum += std::exp(x - top);
    return -(top + std::log(sum));
}

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

/// Largest |F - enumerated F| over random tiny models and visibles.
inline CheckResult check_enumeration(std::size_t models, std::uint64_t seed, double tolerance = 1e-10) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t m = 0; m < models; ++m) {
        const ModelShape shape{4, 2, 2, 3, 3, 3, 3};
        const ModelParams p = random_model(shape, seed + 17 * m);
        Vector v(4);
        for (Eigen::Index i = 0; i < 4; ++i) v(i) = normal(rng);
        const double f = free_energy(v, p);
        const double oracle = static_cast<double>(enumerate_free_energy(v, p));
        worst = std::max(worst, std::abs(f - oracle));
    }
    return {"free-energy enumeration", worst < tolerance, worst, tolerance, std::to_string(models) + " models"};
}

struct GaussianCheck {
    double max_mean_z = 0.0;
    double max_var_z = 0.0;
    double rejection = 0.0;
};

/// Moments of HMC draws from the all-zero model (a standard Gaussian),
/// standardised by per-chain standard errors.
inline GaussianCheck gaussian_hmc_moments(std::size_t D, std::size_t chains, std::size_t burn_in,
                                          std::size_t draws, std::uint64_t seed) {
    const ModelParams target = zero_model({D, 1, 2, 1, 1, 1, 1});
    const FreeEnergyPotential potential(target);
    HmcConfig cfg;
    cfg.seed = seed;
    cfg.step_size = 0.1;
    HmcState state = HmcState::from_config(cfg);
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(chains), static_cast<Eigen::Index>(D));
    x = hmc_chain(x, potential, cfg, state, burn_in, 0);

    const auto C = static_cast<Eigen::Index>(chains);
    Matrix mean = Matrix::Zero(C, static_cast<Eigen::Index>(D));
    Matrix second = Matrix::Zero(C, static_cast<Eigen::Index>(D));
    std::uint64_t acc0 = state.stats.accepted;
    std::uint64_t prop0 = state.stats.proposed;
    for (std::size_t k = 0; k < draws; ++k) {
        x = hmc_chain(x, potential, cfg, state, 1, 1 + k);
        mean += x;
        second += x.cwiseAbs2();
    }
    mean /= static_cast<double>(draws);
    second /= static_cast<double>(draws);
    GaussianCheck out;
    const double n = static_cast<double>(chains);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(D); ++i) {
        const Vector m = mean.col(i);
        const Vector s2 = second.col(i);
        const double mu = m.mean();
        const double se_mu = std::sqrt((m.array() - mu).square().sum() / (n - 1) / n);
        const double var = s2.mean();
        const double se_var = std::sqrt((s2.array() - var).square().sum() / (n - 1) / n);
        out.max_mean_z = std::max(out.max_mean_z, std::abs(mu) / se_mu);
        out.max_var_z = std::max(out.max_var_z, std::abs(var - 1.0) / se_var);
    }
    out.rejection = 1.0 - static_cast<double>(state.stats.accepted - acc0) / static_cast<double>(state.stats.proposed - prop0);
    return out;
}

inline CheckResult check_gaussian_hmc(std::uint64_t seed) {
    const GaussianCheck g = gaussian_hmc_moments(4, 100, 100, 100, seed);
    const double worst = std::max(g.max_mean_z, g.max_var_z);
    return {"hmc standard gaussian", worst < 5.0, worst, 5.0,
            "max |z| of mean and variance, rejection " + std::to_string(g.rejection)};
}

inline std::vector<CheckResult> run_self_checks(std::uint64_t seed, bool inject_gradient_bug = false) {
    std::vector<CheckResult> out;
    GradientCheckOptions opt;
    opt.perturb_analytic = inject_gradient_bug;
    double worst = 0.0;
    bool ok = true;
    std::string detail;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto report = check_gradients({5, 2, 2, 3, 3, 3, 3}, seed + s, 1e-5, opt);
        ok = ok && report.passed;
        for (const auto& e : report.entries) {
            worst = std::max(worst, e.max_rel_error);
        }
        detail += report.to_text();
    }
    out.push_back({"gradient check", ok, worst, 1e-5, detail});
    out.push_back(check_enumeration(20, seed));
    out.push_back(check_gaussian_hmc(seed));
    return out;
}

} // namespace mpk

#endif
