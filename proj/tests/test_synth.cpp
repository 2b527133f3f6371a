#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mpk/energy.hpp"
#include "mpk/synth.hpp"
#include "oracles.hpp"

using namespace mpk;
using std::numbers::pi;

TEST(Bessel, MatchesSeriesOracle) {
    for (double x : {0.0, 0.1, 1.0, 3.0, 7.5, 15.0, 29.0, 31.0, 50.0}) {
        const auto ref = oracle::bessel_i0_series(x);
        EXPECT_LT(std::abs(bessel_i0(x) - static_cast<double>(ref)) / static_cast<double>(ref), 1e-12) << x;
        EXPECT_LT(std::abs(bessel_i0_scaled(x) - static_cast<double>(ref * std::exp(-static_cast<long double>(x)))) /
                      bessel_i0_scaled(x),
                  1e-12)
            << x;
    }
}

TEST(VonMises, PdfValues) {
    const VonMisesPair uniform{0.0, 0.3};
    EXPECT_NEAR(von_mises_pair_pdf(0.4, -2.0, uniform), 1.0 / (4 * pi * pi), 1e-16);
    const VonMisesPair one{1.0, 0.5};
    const double expect = (1 / (2 * pi)) * std::exp(1.0) / (2 * pi * static_cast<double>(oracle::bessel_i0_series(1.0)));
    EXPECT_NEAR(von_mises_pair_pdf(1.2, 0.7, one), expect, 1e-14);
    EXPECT_THROW(von_mises_pair_pdf(0, 0, VonMisesPair{-1.0, 0.0}), parameter_error);
}

TEST(VonMises, PdfIntegratesToOne) {
    for (double kappa : {0.0, 1.0, 3.0, 8.0}) {
        const VonMisesPair vm{kappa, 0.7};
        const int n = 512;
        const double h = 2 * pi / n;
        double sum = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) sum += von_mises_pair_pdf(-pi + i * h, -pi + j * h, vm);
        EXPECT_NEAR(sum * h * h, 1.0, 1e-6) << kappa;
    }
}

TEST(VonMises, PdfSymmetry) {
    const VonMisesPair a{2.5, 0.8}, b{2.5, -0.8};
    for (double ti : {-2.0, 0.1, 1.7})
        for (double tj : {-1.0, 0.5, 3.0}) EXPECT_NEAR(von_mises_pair_pdf(ti, tj, a), von_mises_pair_pdf(tj, ti, b), 1e-15);
}

TEST(CoupledPhases, UncoupledHasNoCorrelation) {
    const Matrix th = sample_coupled_phases({{0, 1, {0.0, 0.0}}}, 2, 10000, 3);
    double c = 0, s = 0;
    for (Eigen::Index r = 0; r < th.rows(); ++r) {
        c += std::cos(th(r, 0) - th(r, 1));
        s += std::sin(th(r, 0) - th(r, 1));
    }
    // Resultant length of a uniform angle has sd ~ 1/sqrt(2n).
    EXPECT_LT(std::hypot(c, s) / 10000, 4 / std::sqrt(2.0 * 10000));
}

TEST(CoupledPhases, ConcentrationMatchesGenerator) {
    for (double mu : {0.0, pi / 2}) {
        const Matrix th = sample_coupled_phases({{0, 2, {5.0, mu}}}, 3, 10000, 11);
        double c = 0, s = 0;
        for (Eigen::Index r = 0; r < th.rows(); ++r) {
            c += std::cos(th(r, 0) - th(r, 2));
            s += std::sin(th(r, 0) - th(r, 2));
        }
        const double mean_dir = std::atan2(s, c);
        EXPECT_LT(std::abs(wrap_angle(mean_dir - mu)), 0.05);
        // kappa MLE: solve I1(k)/I0(k) = Rbar by bisection on the series.
        const double rbar = std::hypot(c, s) / 10000;
        auto ratio = [](double k) {
            long double i0 = 0, i1 = 0, t0 = 1, t1 = k / 2.0;
            for (int m = 0; m < 200; ++m) {
                if (m > 0) {
                    t0 *= (k / 2.0) * (k / 2.0) / (m * m);
                    t1 *= (k / 2.0) * (k / 2.0) / (m * (m + 1.0));
                }
                i0 += t0;
                i1 += t1;
            }
            return static_cast<double>(i1 / i0);
        };
        double lo = 0.01, hi = 50;
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (lo + hi);
            (ratio(mid) < rbar ? lo : hi) = mid;
        }
        EXPECT_NEAR(0.5 * (lo + hi), 5.0, 0.5) << mu;
    }
}

TEST(CoupledPhases, MarginalsUniformKs) {
    const Matrix th = sample_coupled_phases({{0, 1, {3.0, 1.0}}}, 3, 10000, 5);
    for (Eigen::Index c = 0; c < 3; ++c) {
        std::vector<double> x(th.col(c).data(), th.col(c).data() + th.rows());
        std::sort(x.begin(), x.end());
        double d = 0;
        const double n = static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double f = (x[i] + pi) / (2 * pi);
            d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
        }
        // 0.01 critical value of the KS statistic: 1.628 / sqrt(n).
        EXPECT_LT(d, 1.628 / std::sqrt(n)) << "column " << c;
        EXPECT_GE(x.front(), -pi);
        EXPECT_LT(x.back(), pi);
    }
}

TEST(CoupledPhases, RejectsOverlapAndIsDeterministic) {
    EXPECT_THROW(sample_coupled_phases({{0, 1, {1, 0}}, {1, 2, {1, 0}}}, 3, 10, 0), argument_error);
    EXPECT_THROW(sample_coupled_phases({{0, 5, {1, 0}}}, 3, 10, 0), argument_error);
    EXPECT_THROW(sample_coupled_phases({{1, 1, {1, 0}}}, 3, 10, 0), argument_error);
    EXPECT_EQ(sample_coupled_phases({{0, 1, {2, 0}}}, 2, 50, 9), sample_coupled_phases({{0, 1, {2, 0}}}, 2, 50, 9));
}

TEST(Basis, Orthonormal) {
    const Matrix B = quadrature_basis(8, 8);
    EXPECT_EQ(B.rows(), 64);
    EXPECT_EQ(B.cols(), 16);
    EXPECT_LT((B.transpose() * B - Matrix::Identity(16, 16)).norm(), 1e-12);
}

TEST(Render, SimpleCases) {
    const Matrix B = quadrature_basis(6, 3);
    Matrix phases = Matrix::Zero(4, 3);
    Matrix zero_amp = Matrix::Zero(4, 3);
    const Matrix noise_only = render_quadrature_patches(phases, zero_amp, B, 0.1, 1);
    EXPECT_GT(noise_only.norm(), 0.0);
    Matrix amp = Matrix::Zero(1, 3);
    amp(0, 1) = 2.0;
    const Matrix one = render_quadrature_patches(Matrix::Zero(1, 3), amp, B, 0.0, 1);
    EXPECT_LT((one.row(0).transpose() - 2.0 * B.col(2)).norm(), 1e-14);
    EXPECT_THROW(render_quadrature_patches(Matrix::Zero(1, 2), Matrix::Ones(1, 2), B, 0, 1), shape_error);
}

TEST(Render, PhaseAndAmplitudeRoundTrip) {
    const std::size_t n = 4;
    const Matrix B = quadrature_basis(8, n);
    const Matrix th = sample_coupled_phases({}, n, 30, 2);
    Matrix amp(30, static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < amp.size(); ++i) amp.data()[i] = 0.5 + 0.03 * static_cast<double>(i % 17);
    const Matrix patches = render_quadrature_patches(th, amp, B, 0.0, 1);
    ModelParams p = zero_model({64, n, 2, 1, 1, 1, 1}, true);
    p.C = B;
    for (Eigen::Index r = 0; r < 30; ++r) {
        const Vector v = patches.row(r).transpose();
        const auto ph = phase_features(v, p);
        const Vector s = subspace_pool(normalize_visible(v).eval(), p);
        for (Eigen::Index f = 0; f < static_cast<Eigen::Index>(n); ++f) {
            EXPECT_LT(std::abs(wrap_angle(ph.theta(f) - th(r, f))), 1e-6);
            EXPECT_NEAR(s(f) * v.norm(), amp(r, f), 1e-9);
        }
    }
}

TEST(SynthDataset, WritesGroundTruth) {
    SynthOptions o;
    o.count = 100;
    o.pairs = {{0, 1, {3.0, 0.0}}, {2, 3, {3.0, pi / 2}}};
    const SynthDataset ds = make_synth_dataset(o);
    EXPECT_EQ(ds.patches.rows(), 100);
    EXPECT_EQ(ds.patches.cols(), 64);
    TensorFile f;
    ds.write(f);
    EXPECT_TRUE(f.contains("patches"));
    EXPECT_TRUE(f.contains("ground_truth/phases"));
    EXPECT_TRUE(f.contains("ground_truth/kappa"));
    EXPECT_EQ(f.vector("ground_truth/mu")(1), pi / 2);
    EXPECT_EQ(make_synth_dataset(o).patches, ds.patches);
}
