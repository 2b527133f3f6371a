#ifndef MPK_HMC_HPP
#define MPK_HMC_HPP

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "energy.hpp"
#include "error.hpp"
#include "grad.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace mpk {

/// A differentiable potential U(v); HMC samples exp(-U).
template <typename T>
concept Potential = requires(const T& t, const Vector& v) {
    { t.energy(v) } -> std::convertible_to<double>;
    { t.gradient(v) } -> std::convertible_to<Vector>;
};

/// The model free energy as an HMC potential.
class FreeEnergyPotential {
public:
    explicit FreeEnergyPotential(const ModelParams& params) : params_(&params) {}

    double energy(const Vector& v) const { return free_energy(v, *params_); }
    Vector gradient(const Vector& v) const { return grad_free_energy_v(v, *params_); }

private:
    const ModelParams* params_;
};

struct HmcConfig {
    std::size_t n_leapfrog = 20;
    double target_rejection = 0.10;
    double step_size = 0.01;
    double adapt_rate = 0.02;
    bool adapt = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_leapfrog < 1) {
            throw parameter_error("n_leapfrog must be at least 1");
        }
        if (!(target_rejection > 0.0 && target_rejection < 1.0)) {
            throw parameter_error("target_rejection must lie in (0, 1)");
        }
        if (!(step_size > 0.0)) {
            throw parameter_error("step_size must be positive");
        }
        if (!(adapt_rate >= 0.0 && adapt_rate < 1.0)) {
            throw parameter_error("adapt_rate must lie in [0, 1)");
        }
    }
};

/// Cumulative sampler statistics.
struct HmcStats {
    std::uint64_t accepted = 0;
    std::uint64_t proposed = 0;
    /// Trajectories abandoned because H became non-finite.
    std::uint64_t non_finite = 0;
    double current_step_size = 0.0;
    /// Mean finite Delta H of the most recent simulation.
    double mean_delta_H = 0.0;
    double last_rejection_rate = 0.0;

    double rejection_rate() const {
        return proposed == 0 ? 0.0 : 1.0 - static_cast<double>(accepted) / static_cast<double>(proposed);
    }
};

/// One line per simulated batch.
struct HmcBatchRecord {
    double step_size = 0.0;
    double rejection_rate = 0.0;
    double mean_delta_H = 0.0;

    static std::string csv_header() { return "step_size,rejection_rate,mean_delta_H"; }
    std::string csv_line() const {
        std::ostringstream os;
        os.precision(17);
        os << step_size << "," << rejection_rate << "," << mean_delta_H;
        return os.str();
    }
};

/// Adaptive sampler state; the step size carries over between calls.
struct HmcState {
    double step_size = 0.01;
    HmcStats stats;
    std::vector<HmcBatchRecord> history;

    static HmcState from_config(const HmcConfig& config) {
        config.validate();
        HmcState s;
        s.step_size = config.step_size;
        s.stats.current_step_size = config.step_size;
        return s;
    }
};

/// Integrates n leapfrog steps of H = U(v) + |p|^2 / 2 in place.
/// Returns false as soon as the position or force stops being finite.
template <Potential U>
bool leapfrog(Vector& v, Vector& p, const U& target, double step, std::size_t n) {
    Vector force = target.gradient(v);
    if (!force.allFinite()) {
        return false;
    }
    p -= 0.5 * step * force;
    for (std::size_t k = 0; k < n; ++k) {
        v += step * p;
        force = target.gradient(v);
        if (!v.allFinite() || !force.allFinite()) {
            return false;
        }
        p -= (k + 1 == n ? 0.5 : 1.0) * step * force;
    }
    return p.allFinite();
}

namespace detail {

inline std::mt19937_64 row_engine(std::uint64_t seed, std::uint64_t stream, std::uint64_t sim, std::uint64_t row) {
    const auto lo = [](std::uint64_t x) { return static_cast<std::uint32_t>(x); };
    const auto hi = [](std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); };
    std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(sim), hi(sim), lo(row), hi(row)};
    return std::mt19937_64(seq);
}

template <Potential U>
double safe_energy(const U& target, const Vector& v) {
    try {
        return target.energy(v);
    } catch (const numeric_error&) {
        return std::numeric_limits<double>::infinity();
    }
}

} // namespace detail

/// Runs `n_simulations` HMC transitions on every row of `v0`.
///
/// Each transition draws a fresh standard-normal momentum, integrates
/// `n_leapfrog` steps and applies the Metropolis test. After each
/// transition the shared step size grows by (1 + adapt_rate) when the
/// batch rejection rate is below target and shrinks by (1 - adapt_rate)
/// otherwise; a batch with any non-finite trajectory halves it instead.
/// Random streams are keyed by (config.seed, stream, simulation, row).
template <Potential U>
Matrix hmc_chain(const Matrix& v0, const U& target, const HmcConfig& config, HmcState& state,
                 std::size_t n_simulations, std::uint64_t stream = 0) {
    config.validate();
    if (!v0.allFinite()) {
        throw argument_error("HMC start state is not finite");
    }
    Matrix current = v0;
    const auto rows = static_cast<std::size_t>(v0.rows());
    const Eigen::Index D = v0.cols();
    std::vector<char> accepted(rows);
    std::vector<char> finite(rows);
    std::vector<double> delta_h(rows);

    for (std::size_t sim = 0; sim < n_simulations; ++sim) {
        const double step = state.step_size;
        parallel_for(rows, [&](std::size_t r) {
            auto rng = detail::row_engine(config.seed, stream, sim, r);
            std::normal_distribution<double> normal(0.0, 1.0);
            std::uniform_real_distribution<double> uniform(0.0, 1.0);
            Vector v = current.row(static_cast<Eigen::Index>(r)).transpose();
            Vector p(D);
            for (Eigen::Index i = 0; i < D; ++i) {
                p(i) = normal(rng);
            }
            const double h0 = detail::safe_energy(target, v) + 0.5 * p.squaredNorm();
            Vector v1 = v;
            Vector p1 = p;
            bool ok = std::isfinite(h0) && leapfrog(v1, p1, target, step, config.n_leapfrog);
            double h1 = ok ? detail::safe_energy(target, v1) + 0.5 * p1.squaredNorm() : 0.0;
            ok = ok && std::isfinite(h1);
            const double u = uniform(rng);
            finite[r] = ok;
            delta_h[r] = ok ? h1 - h0 : 0.0;
            accepted[r] = ok && (delta_h[r] <= 0.0 || u < std::exp(-delta_h[r]));
            if (accepted[r]) {
                current.row(static_cast<Eigen::Index>(r)) = v1.transpose();
            }
        });

        std::size_t n_acc = 0;
        std::size_t n_bad = 0;
        double sum_dh = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            n_acc += accepted[r] ? 1 : 0;
            if (finite[r]) {
                sum_dh += delta_h[r];
            } else {
                ++n_bad;
            }
        }
        const double rejection = rows == 0 ? 0.0 : 1.0 - static_cast<double>(n_acc) / static_cast<double>(rows);
        state.stats.accepted += n_acc;
        state.stats.proposed += rows;
        state.stats.non_finite += n_bad;
        state.stats.mean_delta_H = rows > n_bad ? sum_dh / static_cast<double>(rows - n_bad) : 0.0;
        state.stats.last_rejection_rate = rejection;
        if (config.adapt && rows > 0) {
            if (n_bad > 0) {
                state.step_size *= 0.5;
            } else if (rejection < config.target_rejection) {
                state.step_size *= 1.0 + config.adapt_rate;
            } else {
                state.step_size *= 1.0 - config.adapt_rate;
            }
        }
        state.stats.current_step_size = state.step_size;
        state.history.push_back({step, rejection, state.stats.mean_delta_H});
    }
    return current;
}

} // namespace mpk

#endif
