#ifndef MPK_EXPORT_HPP
#define MPK_EXPORT_HPP

// Filter mosaics for visual inspection of C, W and the P/Q/R groupings.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "coupling.hpp"
#include "energy.hpp"
#include "error.hpp"
#include "image.hpp"
#include "model.hpp"
#include "preprocess.hpp"

namespace mpk {

enum class ExportKind { C, W, PGroups, QGroups, RGroups, Amplitude, Phase };

inline std::optional<ExportKind> export_kind_from_name(std::string_view s) {
    if (s == "C") return ExportKind::C;
    if (s == "W") return ExportKind::W;
    if (s == "P-groups") return ExportKind::PGroups;
    if (s == "Q-groups") return ExportKind::QGroups;
    if (s == "R-groups") return ExportKind::RGroups;
    if (s == "amplitude") return ExportKind::Amplitude;
    if (s == "phase") return ExportKind::Phase;
    return std::nullopt;
}

/// Raster geometry of one tile. patch_size == 0 lays a vector out as a 1 x n strip.
struct TileGeometry {
    std::size_t patch_size = 0;
    std::size_t channels = 1;
};

enum class TileScaling { MinMax, Unit };

struct Tile {
    Vector values;
    TileScaling scaling = TileScaling::MinMax;
};

/// Grid of optional tiles; rows[r][c].
using TileGrid = std::vector<std::vector<std::optional<Tile>>>;

/// Lays tiles out with a one-pixel black border. MinMax tiles are scaled
/// to [0, 1] individually; Unit tiles are used as-is.
inline Raster compose_mosaic(const TileGrid& grid, const TileGeometry& geom) {
    std::size_t n_rows = grid.size();
    std::size_t n_cols = 0;
    std::size_t tile_len = 0;
    for (const auto& row : grid) {
        n_cols = std::max(n_cols, row.size());
        for (const auto& t : row) {
            if (t) {
                tile_len = static_cast<std::size_t>(t->values.size());
            }
        }
    }
    const std::size_t ch = geom.patch_size == 0 ? 1 : geom.channels;
    const std::size_t th = geom.patch_size == 0 ? 1 : geom.patch_size;
    const std::size_t tw = geom.patch_size == 0 ? tile_len : geom.patch_size;
    if (geom.patch_size != 0 && tile_len != 0 && tile_len != th * tw * ch) {
        throw shape_error("tile length " + std::to_string(tile_len) + " does not match patch geometry");
    }
    Raster img;
    img.channels = ch;
    img.width = n_cols * (tw + 1) + 1;
    img.height = n_rows * (th + 1) + 1;
    img.data.assign(img.width * img.height * img.channels, 0.0);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < grid[r].size(); ++c) {
            const auto& t = grid[r][c];
            if (!t) {
                continue;
            }
            Vector v = t->values;
            if (t->scaling == TileScaling::MinMax) {
                const double lo = v.minCoeff();
                const double hi = v.maxCoeff();
                v = hi > lo ? Vector((v.array() - lo) / (hi - lo)) : Vector(Vector::Constant(v.size(), 0.5));
            }
            const std::size_t y0 = r * (th + 1) + 1;
            const std::size_t x0 = c * (tw + 1) + 1;
            for (std::size_t y = 0; y < th; ++y) {
                for (std::size_t x = 0; x < tw; ++x) {
                    for (std::size_t k = 0; k < ch; ++k) {
                        img.at(y0 + y, x0 + x, k) = v(static_cast<Eigen::Index>((y * tw + x) * ch + k));
                    }
                }
            }
        }
    }
    return img;
}

/// Maps whitened-domain filters (columns) to raw patch space via the
/// whitening inverse; without a transform the filters are returned as-is.
inline Matrix filters_to_raw(const Matrix& filters, const WhiteningTransform* whitening) {
    if (!whitening) {
        return filters;
    }
    if (filters.rows() != whitening->inverse.cols()) {
        throw shape_error("filter dimension does not match the whitening transform");
    }
    return whitening->inverse * filters;
}

/// Per-element sqrt(c1^2 + c2^2).
inline Vector pair_amplitude(const Vector& c1, const Vector& c2) {
    return (c1.array().square() + c2.array().square()).sqrt();
}

/// Per-element atan2(c2, c1) on a cyclic gray ramp: 0 at phase 0, 1 at +-pi.
inline Vector pair_phase_gray(const Vector& c1, const Vector& c2) {
    Vector out(c1.size());
    for (Eigen::Index k = 0; k < c1.size(); ++k) {
        out(k) = std::abs(std::atan2(c2(k), c1(k))) / std::numbers::pi;
    }
    return out;
}

struct ExportOptions {
    std::size_t max_columns = 32;
    std::size_t group_size = 6;
};

namespace detail {

inline TileGrid wrap_tiles(std::vector<Tile> tiles, std::size_t per_row) {
    TileGrid grid;
    per_row = std::max<std::size_t>(1, per_row);
    for (std::size_t k = 0; k < tiles.size(); ++k) {
        if (k % per_row == 0) {
            grid.emplace_back();
        }
        grid.back().push_back(std::move(tiles[k]));
    }
    return grid;
}

/// Column-major group layout: each group occupies `width` adjacent tile
/// columns and one row per member.
inline TileGrid group_columns(const std::vector<std::vector<std::vector<Tile>>>& groups, std::size_t width) {
    std::size_t rows = 0;
    for (const auto& g : groups) {
        rows = std::max(rows, g.size());
    }
    TileGrid grid(rows, std::vector<std::optional<Tile>>(groups.size() * width));
    for (std::size_t c = 0; c < groups.size(); ++c) {
        for (std::size_t r = 0; r < groups[c].size(); ++r) {
            for (std::size_t k = 0; k < groups[c][r].size() && k < width; ++k) {
                grid[r][c * width + k] = groups[c][r][k];
            }
        }
    }
    return grid;
}

} // namespace detail

/// Replicates a grayscale raster into three channels.
inline Raster as_rgb(const Raster& img) {
    if (img.channels == 3) {
        return img;
    }
    Raster out;
    out.width = img.width;
    out.height = img.height;
    out.channels = 3;
    out.data.resize(img.width * img.height * 3);
    for (std::size_t k = 0; k < img.width * img.height; ++k) {
        for (std::size_t c = 0; c < 3; ++c) {
            out.data[3 * k + c] = img.data[k * img.channels];
        }
    }
    return out;
}

/// Builds the mosaic for one export kind.
inline Raster export_filters(const ModelParams& params, const WhiteningTransform* whitening, ExportKind kind,
                             const ExportOptions& opt = {}) {
    TileGeometry geom;
    if (whitening) {
        geom.patch_size = whitening->patch_size;
        geom.channels = whitening->channels == 0 ? 1 : whitening->channels;
    }
    const Matrix C = filters_to_raw(params.C, whitening);
    const auto L = static_cast<Eigen::Index>(params.L);
    const Eigen::Index F = params.C.cols() / L;
    auto filter = [&](Eigen::Index k) { return Tile{C.col(k), TileScaling::MinMax}; };
    auto subspace_tiles = [&](Eigen::Index f) {
        std::vector<Tile> out;
        for (Eigen::Index l = 0; l < L; ++l) {
            out.push_back(filter(f * L + l));
        }
        return out;
    };
    const auto per_row = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(F))));

    switch (kind) {
    case ExportKind::C: {
        std::vector<Tile> tiles;
        for (Eigen::Index k = 0; k < C.cols(); ++k) {
            tiles.push_back(filter(k));
        }
        return compose_mosaic(detail::wrap_tiles(std::move(tiles), per_row * params.L), geom);
    }
    case ExportKind::W: {
        const Matrix W = filters_to_raw(params.W, whitening);
        std::vector<Tile> tiles;
        for (Eigen::Index j = 0; j < W.cols(); ++j) {
            tiles.push_back({W.col(j), TileScaling::MinMax});
        }
        const auto w_row = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(W.cols()))));
        return compose_mosaic(detail::wrap_tiles(std::move(tiles), w_row), geom);
    }
    case ExportKind::Amplitude:
    case ExportKind::Phase: {
        if (params.L != 2) {
            throw unsupported_error("amplitude/phase export requires L = 2");
        }
        std::vector<Tile> tiles;
        for (Eigen::Index f = 0; f < F; ++f) {
            const Vector c1 = C.col(2 * f);
            const Vector c2 = C.col(2 * f + 1);
            if (kind == ExportKind::Amplitude) {
                tiles.push_back({pair_amplitude(c1, c2), TileScaling::MinMax});
            } else {
                tiles.push_back({pair_phase_gray(c1, c2), TileScaling::Unit});
            }
        }
        return compose_mosaic(detail::wrap_tiles(std::move(tiles), per_row), geom);
    }
    case ExportKind::PGroups: {
        std::vector<std::vector<std::vector<Tile>>> groups;
        for (Eigen::Index n = 0; n < params.P.cols() && static_cast<std::size_t>(n) < opt.max_columns; ++n) {
            std::vector<std::vector<Tile>> members;
            for (std::size_t f : top_members(params.P.col(n), opt.group_size)) {
                members.push_back(subspace_tiles(static_cast<Eigen::Index>(f)));
            }
            groups.push_back(std::move(members));
        }
        return compose_mosaic(detail::group_columns(groups, params.L), geom);
    }
    case ExportKind::QGroups: {
        std::vector<std::vector<std::vector<Tile>>> groups;
        for (Eigen::Index g = 0; g < params.Q.cols() && static_cast<std::size_t>(g) < opt.max_columns; ++g) {
            std::vector<std::vector<Tile>> members;
            for (std::size_t k : top_members(params.Q.col(g), opt.group_size)) {
                members.push_back({filter(static_cast<Eigen::Index>(k))});
            }
            groups.push_back(std::move(members));
        }
        return compose_mosaic(detail::group_columns(groups, 1), geom);
    }
    case ExportKind::RGroups: {
        std::vector<std::vector<std::vector<Tile>>> groups;
        for (Eigen::Index t = 0; t < params.R.cols() && static_cast<std::size_t>(t) < opt.max_columns; ++t) {
            const Vector h = Vector::Unit(params.R.cols(), t);
            const Matrix K = phase_coupling_matrix(h, params);
            std::vector<std::vector<Tile>> members;
            for (const auto& e : top_coupling_pairs(K, opt.group_size)) {
                members.push_back({filter(static_cast<Eigen::Index>(e.i)), filter(static_cast<Eigen::Index>(e.j))});
            }
            groups.push_back(std::move(members));
        }
        return compose_mosaic(detail::group_columns(groups, 2), geom);
    }
    }
    throw argument_error("unknown export kind");
}

} // namespace mpk

#endif
