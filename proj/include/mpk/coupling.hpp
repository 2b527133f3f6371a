#ifndef MPK_COUPLING_HPP
#define MPK_COUPLING_HPP

// Ranking helpers for reading structure out of P, Q and the phase
// coupling matrix K.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "model.hpp"

namespace mpk {

/// Indices of the k largest |values|, descending; ties go to the lower index.
inline std::vector<std::size_t> top_members(const Vector& values, std::size_t k) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(values.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(values(static_cast<Eigen::Index>(a))) > std::abs(values(static_cast<Eigen::Index>(b)));
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

struct CouplingEntry {
    std::size_t i = 0;
    std::size_t j = 0;
    double value = 0.0;

    friend bool operator==(const CouplingEntry&, const CouplingEntry&) = default;
};

/// The k largest-magnitude off-diagonal entries of a symmetric matrix,
/// each unordered index pair reported once as (i < j).
inline std::vector<CouplingEntry> top_coupling_pairs(const Matrix& K, std::size_t k) {
    std::vector<CouplingEntry> entries;
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < K.cols(); ++j) {
            entries.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), K(i, j)});
        }
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const CouplingEntry& a, const CouplingEntry& b) { return std::abs(a.value) > std::abs(b.value); });
    entries.resize(std::min(k, entries.size()));
    return entries;
}

/// Subspace pairs (f < g) ranked by the largest |entry| of the
/// corresponding L x L off-diagonal block of K.
inline std::vector<CouplingEntry> rank_subspace_couplings(const Matrix& K, std::size_t L) {
    const auto Li = static_cast<Eigen::Index>(L);
    const Eigen::Index F = K.rows() / Li;
    std::vector<CouplingEntry> out;
    for (Eigen::Index f = 0; f < F; ++f) {
        for (Eigen::Index g = f + 1; g < F; ++g) {
            const double strength = K.block(f * Li, g * Li, Li, Li).cwiseAbs().maxCoeff();
            out.push_back({static_cast<std::size_t>(f), static_cast<std::size_t>(g), strength});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const CouplingEntry& a, const CouplingEntry& b) { return a.value > b.value; });
    return out;
}

} // namespace mpk

#endif
