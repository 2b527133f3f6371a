#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "mpk/hmc.hpp"
#include "oracles.hpp"

using namespace mpk;

namespace {

/// U(v) = v^4 / 4 - v^2 in one dimension: a double well.
struct DoubleWell {
    double energy(const Vector& v) const { return std::pow(v(0), 4) / 4 - v(0) * v(0); }
    Vector gradient(const Vector& v) const { return Vector::Constant(1, std::pow(v(0), 3) - 2 * v(0)); }
};

/// Finite only on |v| < 1; outside, energy and force are NaN.
struct Cliff {
    double energy(const Vector& v) const {
        return std::abs(v(0)) < 1 ? 0.5 * v.squaredNorm() : std::numeric_limits<double>::quiet_NaN();
    }
    Vector gradient(const Vector& v) const {
        return std::abs(v(0)) < 1 ? v : Vector::Constant(v.size(), std::numeric_limits<double>::quiet_NaN());
    }
};

} // namespace

TEST(Leapfrog, ReversibleOnRandomModels) {
    std::mt19937_64 rng(3);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ModelParams p = oracle::tiny_model({6, 3, 2, 3, 3, 3, 3}, seed, 0.5);
        const FreeEnergyPotential U(p);
        const Vector v0 = oracle::random_vector(6, rng);
        const Vector p0 = oracle::random_vector(6, rng);
        Vector v = v0, mom = p0;
        ASSERT_TRUE(leapfrog(v, mom, U, 0.05, 20));
        mom = -mom;
        ASSERT_TRUE(leapfrog(v, mom, U, 0.05, 20));
        EXPECT_LT((v - v0).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LT((mom + p0).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Leapfrog, PreservesVolume) {
    // Jacobian determinant of the (v, p) -> (v', p') map by central differences.
    const ModelParams p = oracle::tiny_model({3, 1, 2, 2, 2, 2, 2}, 4, 0.5);
    const FreeEnergyPotential U(p);
    Vector z0(6);
    z0 << 0.3, -0.7, 1.1, 0.2, 0.5, -0.4;
    auto flow = [&](const Vector& z) {
        Vector v = z.head(3), m = z.tail(3);
        leapfrog(v, m, U, 0.05, 10);
        Vector out(6);
        out << v, m;
        return out;
    };
    Matrix J(6, 6);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < 6; ++k) {
        Vector a = z0, b = z0;
        a(k) += h;
        b(k) -= h;
        J.col(k) = (flow(a) - flow(b)) / (2 * h);
    }
    EXPECT_NEAR(J.determinant(), 1.0, 1e-6);
}

TEST(Hmc, TinyStepAcceptsEverything) {
    const ModelParams p = oracle::tiny_model({4, 2, 2, 2, 2, 2, 2}, 1, 0.5);
    HmcConfig cfg;
    cfg.step_size = 1e-7;
    cfg.adapt = false;
    HmcState st = HmcState::from_config(cfg);
    std::mt19937_64 rng(1);
    Matrix v0(20, 4);
    for (Eigen::Index r = 0; r < 20; ++r) v0.row(r) = oracle::random_vector(4, rng).transpose();
    const Matrix v1 = hmc_chain(v0, FreeEnergyPotential(p), cfg, st, 1);
    EXPECT_EQ(st.stats.accepted, 20u);
    EXPECT_LT(std::abs(st.stats.mean_delta_H), 1e-9);
    EXPECT_LT((v1 - v0).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Hmc, DeterministicForSeed) {
    const ModelParams p = oracle::tiny_model({4, 2, 2, 2, 2, 2, 2}, 2, 0.5);
    HmcConfig cfg;
    cfg.seed = 99;
    Matrix v0 = Matrix::Ones(8, 4);
    HmcState a = HmcState::from_config(cfg), b = HmcState::from_config(cfg);
    const Matrix x = hmc_chain(v0, FreeEnergyPotential(p), cfg, a, 5, 3);
    const Matrix y = hmc_chain(v0, FreeEnergyPotential(p), cfg, b, 5, 3);
    EXPECT_EQ(x, y);
    EXPECT_EQ(a.step_size, b.step_size);
    HmcState c = HmcState::from_config(cfg);
    EXPECT_NE(hmc_chain(v0, FreeEnergyPotential(p), cfg, c, 5, 4), x);
}

TEST(Hmc, AdaptationRule) {
    const ModelParams p = zero_model({3, 1, 2, 1, 1, 1, 1});
    HmcConfig cfg;
    cfg.step_size = 1e-4;
    HmcState st = HmcState::from_config(cfg);
    hmc_chain(Matrix::Zero(10, 3), FreeEnergyPotential(p), cfg, st, 1);
    // Rejection 0 < target: grow by 2 %.
    EXPECT_DOUBLE_EQ(st.step_size, 1e-4 * 1.02);
    ASSERT_EQ(st.history.size(), 1u);
    EXPECT_EQ(st.history[0].rejection_rate, 0.0);
    EXPECT_EQ(HmcBatchRecord::csv_header(), "step_size,rejection_rate,mean_delta_H");

    HmcConfig big = cfg;
    big.step_size = 3.0;
    HmcState s2 = HmcState::from_config(big);
    Matrix start = Matrix::Constant(50, 3, 2.0);
    hmc_chain(start, FreeEnergyPotential(p), big, s2, 1);
    if (s2.stats.last_rejection_rate >= 0.10) {
        EXPECT_DOUBLE_EQ(s2.step_size, 3.0 * 0.98);
    }
    EXPECT_LE(s2.stats.accepted, s2.stats.proposed);
}

TEST(Hmc, NonFiniteTrajectoriesAreRejectedAndHalveStep) {
    HmcConfig cfg;
    cfg.step_size = 0.5;
    HmcState st = HmcState::from_config(cfg);
    const Matrix v0 = Matrix::Constant(16, 1, 0.9);
    Matrix out;
    ASSERT_NO_THROW(out = hmc_chain(v0, Cliff{}, cfg, st, 1));
    EXPECT_GT(st.stats.non_finite, 0u);
    EXPECT_DOUBLE_EQ(st.step_size, 0.25);
    for (Eigen::Index r = 0; r < 16; ++r) EXPECT_LT(std::abs(out(r, 0)), 1.0);
}

TEST(Hmc, StationaryOnDiscretizedDoubleWell) {
    // Independent chains, fixed step: final states are draws from exp(-U).
    const int chains = 4000;
    HmcConfig cfg;
    cfg.step_size = 0.1;
    cfg.n_leapfrog = 10;
    cfg.adapt = false;
    cfg.seed = 5;
    HmcState st = HmcState::from_config(cfg);
    const Matrix x = hmc_chain(Matrix::Zero(chains, 1), DoubleWell{}, cfg, st, 60);

    const int bins = 20;
    const double lo = -3.0, hi = 3.0, width = (hi - lo) / bins;
    std::vector<double> prob(bins, 0.0);
    double z = 0;
    const int sub = 2000;
    for (int b = 0; b < bins; ++b) {
        for (int k = 0; k < sub; ++k) {
            const double t = lo + width * (b + (k + 0.5) / sub);
            prob[b] += std::exp(-(std::pow(t, 4) / 4 - t * t)) * width / sub;
        }
        z += prob[b];
    }
    std::vector<int> count(bins, 0);
    int inside = 0;
    for (Eigen::Index r = 0; r < chains; ++r) {
        const int b = static_cast<int>(std::floor((x(r, 0) - lo) / width));
        if (b >= 0 && b < bins) {
            ++count[b];
            ++inside;
        }
    }
    double chi2 = 0;
    int used = 0;
    double pooled_e = 0, pooled_o = 0;
    for (int b = 0; b < bins; ++b) {
        const double e = inside * prob[b] / z;
        if (e < 5) {
            pooled_e += e;
            pooled_o += count[b];
            continue;
        }
        chi2 += (count[b] - e) * (count[b] - e) / e;
        ++used;
    }
    if (pooled_e > 0) {
        chi2 += (pooled_o - pooled_e) * (pooled_o - pooled_e) / pooled_e;
        ++used;
    }
    // 0.01 upper quantiles of chi-square for df = 10..19.
    const double crit[] = {23.209, 24.725, 26.217, 27.688, 29.141, 30.578, 32.000, 33.409, 34.805, 36.191};
    const int df = used - 1;
    ASSERT_GE(df, 10);
    ASSERT_LE(df, 19);
    EXPECT_LT(chi2, crit[df - 10]) << "df " << df;
}

TEST(HmcConfig, Validation) {
    HmcConfig c;
    c.n_leapfrog = 0;
    EXPECT_THROW(c.validate(), parameter_error);
    c = {};
    c.target_rejection = 1.0;
    EXPECT_THROW(c.validate(), parameter_error);
    c = {};
    c.step_size = 0;
    EXPECT_THROW(c.validate(), parameter_error);
    HmcState st = HmcState::from_config({});
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(hmc_chain(bad, DoubleWell{}, HmcConfig{}, st, 1), argument_error);
}
