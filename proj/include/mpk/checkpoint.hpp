#ifndef MPK_CHECKPOINT_HPP
#define MPK_CHECKPOINT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "model.hpp"
#include "tensor_file.hpp"

namespace mpk {

/// Trainer state persisted alongside the parameters. Plain SGD carries no
/// moment estimates, so this is the schedule position and the sampler's
/// adapted step size.
struct TrainingState {
    std::uint64_t iteration = 0;
    std::uint64_t seed = 0;
    double hmc_step_size = 0.01;
    std::uint64_t hmc_accepted = 0;
    std::uint64_t hmc_proposed = 0;

    friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

namespace detail {

inline void expect_dims(const NamedTensor& t, std::initializer_list<std::uint64_t> dims) {
    if (!std::equal(t.dims.begin(), t.dims.end(), dims.begin(), dims.end())) {
        std::string want;
        for (auto d : dims) {
            want += (want.empty() ? "" : "x") + std::to_string(d);
        }
        throw shape_error("tensor '" + t.name + "' does not have dims " + want);
    }
}

inline std::uint64_t exact_count(double x, const char* name) {
    if (!(x >= 0.0) || x != std::floor(x) || x > 9007199254740992.0) {
        throw format_error(std::string("scalar '") + name + "' is not a non-negative integer");
    }
    return static_cast<std::uint64_t>(x);
}

} // namespace detail

inline void write_params(TensorFile& file, const ModelParams& p) {
    const ModelShape s = p.shape();
    file.add_reshaped("C", {s.D, s.F, s.L}, p.C);
    file.add_matrix("P", p.P);
    file.add_matrix("W", p.W);
    file.add_reshaped("Q", {s.F, s.L, s.G}, p.Q);
    file.add_matrix("R", p.R);
    file.add_vector("b_c", p.b_c);
    file.add_vector("b_m", p.b_m);
    file.add_vector("b_k", p.b_k);
    file.add_vector("b_v", p.b_v);
    file.add_scalar("alpha", p.alpha);
    file.add_scalar("L", static_cast<double>(p.L));
    file.add_scalar("phase_enabled", p.phase_enabled ? 1.0 : 0.0);
}

/// Reads parameters, cross-checking every tensor against the dims of C, P, W, Q and R.
inline ModelParams read_params(const TensorFile& file) {
    const auto& c = file.at("C");
    if (c.rank() != 3) {
        throw shape_error("tensor 'C' must be rank 3 (D x F x L)");
    }
    ModelShape s;
    s.D = c.dims[0];
    s.F = c.dims[1];
    s.L = c.dims[2];
    const auto L = detail::exact_count(file.scalar("L"), "L");
    if (L != s.L) {
        throw shape_error("scalar L disagrees with dims of C");
    }
    const auto& p = file.at("P");
    const auto& w = file.at("W");
    const auto& q = file.at("Q");
    const auto& r = file.at("R");
    if (p.rank() != 2 || w.rank() != 2 || q.rank() != 3 || r.rank() != 2) {
        throw shape_error("P, W, R must be rank 2 and Q rank 3");
    }
    s.N = p.dims[1];
    s.M = w.dims[1];
    s.G = q.dims[2];
    s.T = r.dims[1];
    s.validate();
    detail::expect_dims(p, {s.F, s.N});
    detail::expect_dims(w, {s.D, s.M});
    detail::expect_dims(q, {s.F, s.L, s.G});
    detail::expect_dims(r, {s.G, s.T});
    detail::expect_dims(file.at("b_c"), {s.N});
    detail::expect_dims(file.at("b_m"), {s.M});
    detail::expect_dims(file.at("b_k"), {s.T});
    detail::expect_dims(file.at("b_v"), {s.D});

    ModelParams out;
    out.C = file.folded("C", s.D, s.F * s.L);
    out.P = file.matrix("P");
    out.W = file.matrix("W");
    out.Q = file.folded("Q", s.F * s.L, s.G);
    out.R = file.matrix("R");
    out.b_c = file.vector("b_c");
    out.b_m = file.vector("b_m");
    out.b_k = file.vector("b_k");
    out.b_v = file.vector("b_v");
    out.alpha = file.scalar("alpha");
    out.L = s.L;
    out.phase_enabled = file.scalar("phase_enabled") != 0.0;
    out.validate();
    return out;
}

inline void save_checkpoint(const ModelParams& params, const TrainingState& state, const std::filesystem::path& path) {
    TensorFile file;
    write_params(file, params);
    file.add_scalar("state/iteration", static_cast<double>(state.iteration));
    file.add_scalar("state/seed_lo", static_cast<double>(state.seed & 0xffffffffu));
    file.add_scalar("state/seed_hi", static_cast<double>(state.seed >> 32));
    file.add_scalar("state/hmc_step_size", state.hmc_step_size);
    file.add_scalar("state/hmc_accepted", static_cast<double>(state.hmc_accepted));
    file.add_scalar("state/hmc_proposed", static_cast<double>(state.hmc_proposed));
    file.save(path);
}

inline std::pair<ModelParams, TrainingState> load_checkpoint(const std::filesystem::path& path) {
    const TensorFile file = TensorFile::load(path);
    ModelParams params = read_params(file);
    TrainingState state;
    if (file.contains("state/iteration")) {
        state.iteration = detail::exact_count(file.scalar("state/iteration"), "state/iteration");
        state.seed = detail::exact_count(file.scalar("state/seed_lo"), "state/seed_lo") |
                     (detail::exact_count(file.scalar("state/seed_hi"), "state/seed_hi") << 32);
        state.hmc_step_size = file.scalar("state/hmc_step_size");
        state.hmc_accepted = detail::exact_count(file.scalar("state/hmc_accepted"), "state/hmc_accepted");
        state.hmc_proposed = detail::exact_count(file.scalar("state/hmc_proposed"), "state/hmc_proposed");
    }
    return {std::move(params), state};
}

} // namespace mpk

#endif
