#ifndef MPK_PREPROCESS_HPP
#define MPK_PREPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "error.hpp"
#include "image.hpp"
#include "model.hpp"
#include "tensor_file.hpp"

namespace mpk {

/// Row-major flattened patch_size x patch_size x channels windows at
/// uniformly random offsets, one per row.
inline Matrix extract_patches(const Raster& image, std::size_t patch_size, std::size_t count, std::uint64_t seed) {
    if (image.channels != 1 && image.channels != 3) {
        throw argument_error("images must have 1 or 3 channels");
    }
    if (patch_size == 0 || image.width < patch_size || image.height < patch_size) {
        throw shape_error("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " is smaller than patch size " + std::to_string(patch_size));
    }
    const std::size_t row_len = patch_size * patch_size * image.channels;
    Matrix out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(row_len));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_y(0, image.height - patch_size);
    std::uniform_int_distribution<std::size_t> pick_x(0, image.width - patch_size);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t y0 = pick_y(rng);
        const std::size_t x0 = pick_x(rng);
        Eigen::Index col = 0;
        for (std::size_t y = 0; y < patch_size; ++y) {
            for (std::size_t x = 0; x < patch_size; ++x) {
                for (std::size_t c = 0; c < image.channels; ++c) {
                    out(static_cast<Eigen::Index>(k), col++) = image.at(y0 + y, x0 + x, c);
                }
            }
        }
    }
    return out;
}

/// PCA whitening with dimension reduction.
struct WhiteningTransform {
    Vector mean;          // length D_raw
    Matrix forward;       // D x D_raw
    Matrix inverse;       // D_raw x D
    Vector eigenvalues;   // retained, descending, length D
    double variance_fraction = 1.0;   // requested
    double retained_fraction = 1.0;   // achieved
    /// Raster geometry of the raw patches, when known (0 otherwise).
    std::size_t patch_size = 0;
    std::size_t channels = 0;

    std::size_t dim() const { return static_cast<std::size_t>(forward.rows()); }
    std::size_t raw_dim() const { return static_cast<std::size_t>(forward.cols()); }

    /// Whitens each row of `raw`.
    Matrix apply(const Matrix& raw) const {
        if (raw.cols() != forward.cols()) {
            throw shape_error("raw patch length " + std::to_string(raw.cols()) + " != " + std::to_string(forward.cols()));
        }
        return (raw.rowwise() - mean.transpose()) * forward.transpose();
    }

    /// Maps whitened rows back to raw patch space.
    Matrix unapply(const Matrix& white) const {
        if (white.cols() != inverse.cols()) {
            throw shape_error("whitened length mismatch");
        }
        return (white * inverse.transpose()).rowwise() + mean.transpose();
    }

    void write(TensorFile& file) const {
        file.add_vector("mean", mean);
        file.add_matrix("forward", forward);
        file.add_matrix("inverse", inverse);
        file.add_vector("eigenvalues", eigenvalues);
        file.add_scalar("variance_fraction", variance_fraction);
        file.add_scalar("retained_fraction", retained_fraction);
        file.add_scalar("patch_size", static_cast<double>(patch_size));
        file.add_scalar("channels", static_cast<double>(channels));
    }

    static WhiteningTransform read(const TensorFile& file) {
        WhiteningTransform w;
        w.mean = file.vector("mean");
        w.forward = file.matrix("forward");
        w.inverse = file.matrix("inverse");
        w.eigenvalues = file.contains("eigenvalues") ? file.vector("eigenvalues") : Vector();
        w.variance_fraction = file.scalar("variance_fraction");
        w.retained_fraction = file.contains("retained_fraction") ? file.scalar("retained_fraction") : 0.0;
        w.patch_size = file.contains("patch_size") ? static_cast<std::size_t>(file.scalar("patch_size")) : 0;
        w.channels = file.contains("channels") ? static_cast<std::size_t>(file.scalar("channels")) : 0;
        if (w.mean.size() != w.forward.cols() || w.inverse.rows() != w.forward.cols() ||
            w.inverse.cols() != w.forward.rows()) {
            throw shape_error("inconsistent whitening transform tensors");
        }
        return w;
    }
};

/// Eigenvalues below this fraction of the largest are never retained.
inline constexpr double eigenvalue_floor = 1e-9;

/// Fits PCA whitening on the rows of `raw`, keeping the fewest leading
/// components whose variance reaches `variance_fraction` of the total.
inline WhiteningTransform fit_whitening(const Matrix& raw, double variance_fraction) {
    if (raw.rows() < 2) {
        throw data_error("whitening needs at least 2 patches");
    }
    if (!(variance_fraction > 0.0 && variance_fraction <= 1.0)) {
        throw parameter_error("variance fraction must lie in (0, 1]");
    }
    WhiteningTransform w;
    w.variance_fraction = variance_fraction;
    w.mean = raw.colwise().mean().transpose();
    const Matrix centered = raw.rowwise() - w.mean.transpose();
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(raw.rows() - 1);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw data_error("eigendecomposition of patch covariance failed");
    }
    // Eigen returns ascending order.
    const Vector values = eig.eigenvalues().reverse();
    const Matrix vectors = eig.eigenvectors().rowwise().reverse();
    const double largest = values.size() > 0 ? values(0) : 0.0;
    if (!(largest > 0.0)) {
        throw data_error("patches have zero variance");
    }
    const double floor = eigenvalue_floor * largest;
    const double total = values.cwiseMax(0.0).sum();

    Eigen::Index keep = 0;
    double acc = 0.0;
    while (keep < values.size() && values(keep) >= floor) {
        acc += values(keep);
        ++keep;
        if (acc >= variance_fraction * total * (1.0 - 1e-12)) {
            break;
        }
    }
    if (keep == 0) {
        throw data_error("no eigenvalue above the floor");
    }
    w.eigenvalues = values.head(keep);
    w.retained_fraction = acc / total;
    const Matrix basis = vectors.leftCols(keep);
    w.forward = w.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() * basis.transpose();
    w.inverse = basis * w.eigenvalues.cwiseSqrt().asDiagonal();
    return w;
}

/// Patch matrix container ("patches" tensor, rows are patches).
inline void save_patches(const Matrix& patches, const std::filesystem::path& path) {
    TensorFile file;
    file.add_matrix("patches", patches);
    file.save(path);
}

inline Matrix load_patches(const std::filesystem::path& path) {
    return TensorFile::load(path).matrix("patches");
}

} // namespace mpk

#endif
