#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "mpk/preprocess.hpp"

using namespace mpk;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mpk_preprocess_tests";
    fs::create_directories(dir);
    return dir / name;
}

Raster ramp(std::size_t w, std::size_t h, std::size_t ch) {
    Raster r{w, h, ch, std::vector<double>(w * h * ch)};
    for (std::size_t k = 0; k < r.data.size(); ++k) r.data[k] = static_cast<double>(k % 251) / 250.0;
    return r;
}

/// Correlated Gaussian rows with a decaying spectrum.
Matrix correlated_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix mix(d, d);
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = g(rng);
    Vector scale(d);
    for (Eigen::Index i = 0; i < d; ++i) scale(i) = std::pow(0.7, static_cast<double>(i));
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return (x * scale.asDiagonal()) * mix + Matrix::Constant(n, d, 3.0);
}

} // namespace

TEST(Pnm, RoundTripGrayAndColor) {
    for (std::size_t ch : {1u, 3u}) {
        Raster r = ramp(7, 5, ch);
        for (auto& v : r.data) v = std::round(v * 255.0) / 255.0;
        const fs::path p = temp_path(ch == 1 ? "g.pgm" : "c.ppm");
        write_pnm(p, r);
        const Raster back = read_pnm(p);
        EXPECT_EQ(back.width, 7u);
        EXPECT_EQ(back.height, 5u);
        EXPECT_EQ(back.channels, ch);
        for (std::size_t k = 0; k < r.data.size(); ++k) EXPECT_NEAR(back.data[k], r.data[k], 1e-12);
    }
}

TEST(Pnm, CommentsAndSixteenBit) {
    const fs::path p = temp_path("wide.pgm");
    {
        std::ofstream os(p, std::ios::binary);
        os << "P5\n# a comment\n2 1\n# another\n65535\n";
        const unsigned char px[] = {0xff, 0xff, 0x80, 0x00};
        os.write(reinterpret_cast<const char*>(px), 4);
    }
    const Raster r = read_pnm(p);
    EXPECT_EQ(r.data[0], 1.0);
    EXPECT_NEAR(r.data[1], 32768.0 / 65535.0, 1e-15);
}

TEST(Pnm, RejectsOtherFormats) {
    const fs::path p = temp_path("ascii.pgm");
    {
        std::ofstream os(p);
        os << "P2\n1 1\n255\n0\n";
    }
    EXPECT_THROW(read_pnm(p), format_error);
    const fs::path q = temp_path("short.ppm");
    {
        std::ofstream os(q, std::ios::binary);
        os << "P6\n4 4\n255\n" << "abc";
    }
    EXPECT_THROW(read_pnm(q), format_error);
}

TEST(Patches, ShapeLayoutAndDeterminism) {
    const Raster img = ramp(20, 12, 3);
    const Matrix a = extract_patches(img, 4, 50, 7);
    EXPECT_EQ(a.rows(), 50);
    EXPECT_EQ(a.cols(), 4 * 4 * 3);
    EXPECT_EQ(a, extract_patches(img, 4, 50, 7));
    EXPECT_NE(a, extract_patches(img, 4, 50, 8));
    // Every patch is some window of the image in (y, x, c) order.
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        bool found = false;
        for (std::size_t y0 = 0; y0 + 4 <= 12 && !found; ++y0) {
            for (std::size_t x0 = 0; x0 + 4 <= 20 && !found; ++x0) {
                bool same = true;
                Eigen::Index col = 0;
                for (std::size_t y = 0; y < 4; ++y)
                    for (std::size_t x = 0; x < 4; ++x)
                        for (std::size_t c = 0; c < 3; ++c) same = same && a(r, col++) == img.at(y0 + y, x0 + x, c);
                found = same;
            }
        }
        EXPECT_TRUE(found) << "row " << r;
    }
    EXPECT_THROW(extract_patches(ramp(3, 3, 1), 4, 1, 0), shape_error);
}

TEST(Whitening, IdentityCovarianceAndFraction) {
    const Matrix raw = correlated_rows(4000, 12, 3);
    for (double frac : {0.9, 0.99, 1.0}) {
        const WhiteningTransform w = fit_whitening(raw, frac);
        EXPECT_GE(w.retained_fraction, frac - 1e-12);
        const Matrix white = w.apply(raw);
        const Matrix centered = white.rowwise() - white.colwise().mean();
        const Matrix cov = centered.transpose() * centered / static_cast<double>(raw.rows() - 1);
        EXPECT_LT((cov - Matrix::Identity(cov.rows(), cov.cols())).norm(), 1e-6) << frac;

        // Fewest components: dropping the last one falls below the target.
        const double total = w.eigenvalues.sum() / w.retained_fraction;
        if (w.dim() > 1) {
            EXPECT_LT((w.eigenvalues.sum() - w.eigenvalues(w.eigenvalues.size() - 1)) / total, frac);
        }
        // inverse * forward is an orthogonal projector.
        const Matrix proj = w.inverse * w.forward;
        EXPECT_LT((proj * proj - proj).norm(), 1e-9);
        EXPECT_LT((proj - proj.transpose()).norm(), 1e-9);
    }
    EXPECT_LT(fit_whitening(raw, 0.9).dim(), 12u);
    EXPECT_EQ(fit_whitening(raw, 1.0).dim(), 12u);
}

TEST(Whitening, UnapplyInvertsOnRetainedSubspace) {
    const Matrix raw = correlated_rows(500, 6, 4);
    const WhiteningTransform w = fit_whitening(raw, 1.0);
    EXPECT_LT((w.unapply(w.apply(raw)) - raw).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Whitening, Errors) {
    EXPECT_THROW(fit_whitening(Matrix::Constant(10, 3, 1.0), 0.99), data_error);
    EXPECT_THROW(fit_whitening(Matrix::Ones(1, 3), 0.99), data_error);
    EXPECT_THROW(fit_whitening(correlated_rows(10, 3, 1), 0.0), parameter_error);
    const WhiteningTransform w = fit_whitening(correlated_rows(50, 3, 1), 1.0);
    EXPECT_THROW(w.apply(Matrix::Zero(2, 4)), shape_error);
}

TEST(Whitening, FileRoundTrip) {
    WhiteningTransform w = fit_whitening(correlated_rows(300, 5, 2), 0.99);
    w.patch_size = 3;
    w.channels = 1;
    TensorFile f;
    w.write(f);
    const WhiteningTransform back = WhiteningTransform::read(TensorFile::decode(f.encode()));
    EXPECT_EQ(back.forward, w.forward);
    EXPECT_EQ(back.inverse, w.inverse);
    EXPECT_EQ(back.mean, w.mean);
    EXPECT_EQ(back.patch_size, 3u);
    const fs::path p = temp_path("patches.mpk");
    const Matrix m = correlated_rows(10, 4, 1);
    save_patches(m, p);
    EXPECT_EQ(load_patches(p), m);
}
