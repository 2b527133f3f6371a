#ifndef MPK_TRAINER_HPP
#define MPK_TRAINER_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "checkpoint.hpp"
#include "error.hpp"
#include "grad.hpp"
#include "hmc.hpp"
#include "model.hpp"

namespace mpk {

struct LearningRates {
    double R = 0.0015;
    double Q = 0.1;
    double P = 0.0015;
    double C = 0.15;
    double W = 0.015;
    double b_k = 0.0005;
    double b_c = 0.0015;
    double b_m = 0.0075;
    double b_v = 0.0015;

    double& of(Group g) {
        switch (g) {
        case Group::C: return C;
        case Group::P: return P;
        case Group::W: return W;
        case Group::Q: return Q;
        case Group::R: return R;
        case Group::b_c: return b_c;
        case Group::b_m: return b_m;
        case Group::b_k: return b_k;
        case Group::b_v: return b_v;
        }
        return C;
    }
    double of(Group g) const { return const_cast<LearningRates*>(this)->of(g); }

    static LearningRates uniform(double rate) {
        LearningRates lr;
        for (Group g : all_groups) {
            lr.of(g) = rate;
        }
        return lr;
    }
};

struct TrainerConfig {
    LearningRates rates;
    std::size_t batch_size = 128;
    std::array<std::size_t, 5> stage_iterations{10000, 30000, 20000, 20000, 40000};
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 1000;
    HmcConfig hmc;

    void validate() const {
        for (Group g : all_groups) {
            if (!(rates.of(g) > 0.0)) {
                throw parameter_error("learning rate for " + std::string(group_name(g)) + " must be positive");
            }
        }
        if (batch_size < 1) {
            throw parameter_error("batch_size must be at least 1");
        }
        hmc.validate();
    }
};

/// One phase of the staged schedule.
struct StageSpec {
    std::string name;
    std::size_t iterations = 0;
    GroupSet trainable;
    bool phase_enabled = false;
    /// Reset P to the banded negative identity when the stage begins.
    bool reset_P = false;
    /// Reset R to the banded identity when the stage begins.
    bool reset_R = false;
};

/// The five-stage schedule: mpRBM with P fixed, mpRBM with P free, phase
/// layer Q with R fixed to identity, phase layer R, then everything.
inline std::vector<StageSpec> default_stages(const TrainerConfig& config) {
    const auto& n = config.stage_iterations;
    return {
        {"mprbm-fixed-P", n[0], {Group::C, Group::W, Group::b_c, Group::b_m, Group::b_v}, false, true, false},
        {"mprbm", n[1], {Group::C, Group::P, Group::W, Group::b_c, Group::b_m, Group::b_v}, false, false, false},
        {"phase-Q", n[2], {Group::Q, Group::b_k}, true, false, true},
        {"phase-R", n[3], {Group::R, Group::b_k}, true, false, false},
        {"all", n[4], GroupSet::all(), true, false, false},
    };
}

struct StepMetrics {
    std::uint64_t iteration = 0;
    std::size_t stage = 0;
    double F_data = 0.0;
    double F_model = 0.0;
    double rejection_rate = 0.0;
    double step_size = 0.0;
    /// Norm of (model - data) gradient per group, in Group order.
    std::array<double, 9> grad_norms{};

    static std::string csv_header() {
        std::string h = "iteration,stage,F_data,F_model,rejection_rate,step_size";
        for (Group g : all_groups) {
            h += ",gnorm_";
            h += group_name(g);
        }
        return h;
    }

    std::string csv_line() const {
        std::ostringstream os;
        os.precision(17);
        os << iteration << "," << stage + 1 << "," << F_data << "," << F_model << "," << rejection_rate << ","
           << step_size;
        for (double g : grad_norms) {
            os << "," << g;
        }
        return os.str();
    }
};

/// Applies one CD update given positive (data) and negative (model) samples:
/// Theta += lr * (<dF/dTheta>_model - <dF/dTheta>_data) for trainable
/// groups, then projects the trainable groups onto the constraints.
/// Throws numeric_error naming the tensor if an update is not finite;
/// `params` is left unchanged in that case.
inline StepMetrics cd1_update(const Matrix& data, const Matrix& model_samples, ModelParams& params,
                              const LearningRates& rates, GroupSet trainable) {
    const BatchGradient pos = batch_gradient(data, params);
    const BatchGradient neg = batch_gradient(model_samples, params);
    StepMetrics m;
    m.F_data = pos.mean_free_energy;
    m.F_model = neg.mean_free_energy;

    ModelParams next = params;
    std::size_t slot = 0;
    next.for_each([&](Group g, auto& tensor) {
        pos.grad.for_each([&](Group gp, const auto& gd) {
            if (gp != g) {
                return;
            }
            neg.grad.for_each([&](Group gn, const auto& gm) {
                if (gn != g) {
                    return;
                }
                const auto diff = (gm - gd).eval();
                m.grad_norms[slot] = diff.norm();
                if (trainable.contains(g)) {
                    tensor += rates.of(g) * diff;
                    if (!tensor.allFinite()) {
                        throw numeric_error("update of " + std::string(group_name(g)) + " is not finite");
                    }
                }
            });
        });
        ++slot;
    });
    project_constraints(next, trainable);
    params = std::move(next);
    return m;
}

/// One CD-1 step: a single HMC simulation started at the data supplies the
/// negative phase. `stream` keys the sampler's random numbers.
inline StepMetrics cd1_step(const Matrix& batch, ModelParams& params, const LearningRates& rates,
                            const HmcConfig& hmc_config, HmcState& hmc, GroupSet trainable, std::uint64_t stream) {
    const FreeEnergyPotential target(params);
    const Matrix negative = hmc_chain(batch, target, hmc_config, hmc, 1, stream);
    StepMetrics m = cd1_update(batch, negative, params, rates, trainable);
    m.rejection_rate = hmc.stats.last_rejection_rate;
    m.step_size = hmc.history.empty() ? hmc.step_size : hmc.history.back().step_size;
    hmc.history.clear();
    return m;
}

inline StepMetrics cd1_step(const Matrix& batch, ModelParams& params, const TrainerConfig& config, HmcState& hmc,
                            GroupSet trainable, std::uint64_t stream) {
    return cd1_step(batch, params, config.rates, config.hmc, hmc, trainable, stream);
}

/// Deterministic mini-batch order: epoch e visits a permutation seeded by
/// (seed, e); iteration k maps to a fixed slice, so any iteration's batch
/// can be recomputed after a restart.
class BatchSchedule {
public:
    BatchSchedule(std::size_t rows, std::size_t batch_size, std::uint64_t seed)
        : rows_(rows), batch_(std::min(batch_size, rows)), seed_(seed) {
        if (rows == 0) {
            throw data_error("dataset is empty");
        }
        per_epoch_ = std::max<std::size_t>(1, rows_ / batch_);
    }

    std::vector<std::size_t> indices(std::uint64_t iteration) {
        const std::uint64_t epoch = iteration / per_epoch_;
        if (!cached_epoch_ || *cached_epoch_ != epoch) {
            perm_.resize(rows_);
            std::iota(perm_.begin(), perm_.end(), std::size_t{0});
            std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                              static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
            std::mt19937_64 rng(seq);
            // Fisher-Yates with an explicit draw so the order does not depend on the library's shuffle.
            for (std::size_t i = rows_; i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(rng() % i);
                std::swap(perm_[i - 1], perm_[j]);
            }
            cached_epoch_ = epoch;
        }
        const std::size_t start = static_cast<std::size_t>(iteration % per_epoch_) * batch_;
        return {perm_.begin() + static_cast<std::ptrdiff_t>(start),
                perm_.begin() + static_cast<std::ptrdiff_t>(start + batch_)};
    }

    Matrix batch(const Matrix& data, std::uint64_t iteration) {
        const auto idx = indices(iteration);
        Matrix out(static_cast<Eigen::Index>(idx.size()), data.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out.row(static_cast<Eigen::Index>(k)) = data.row(static_cast<Eigen::Index>(idx[k]));
        }
        return out;
    }

private:
    std::size_t rows_;
    std::size_t batch_;
    std::uint64_t seed_;
    std::size_t per_epoch_ = 1;
    std::optional<std::uint64_t> cached_epoch_;
    std::vector<std::size_t> perm_;
};

struct TrainOptions {
    /// Checkpoint destination; empty disables checkpointing.
    std::filesystem::path checkpoint_path;
    /// Stop after this many total iterations (counted from zero, not from the resume point).
    std::optional<std::uint64_t> max_iterations;
    std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
    ModelParams params;
    TrainingState state;
    std::vector<StepMetrics> log;
    /// Cumulative iteration count at which each stage ends.
    std::vector<std::uint64_t> stage_boundaries;
};

/// Cumulative end iteration of every stage.
inline std::vector<std::uint64_t> stage_boundaries(const std::vector<StageSpec>& stages) {
    std::vector<std::uint64_t> out;
    std::uint64_t acc = 0;
    for (const auto& s : stages) {
        acc += s.iterations;
        out.push_back(acc);
    }
    return out;
}

/// Runs the staged schedule from `state.iteration`, checkpointing every
/// config.checkpoint_every iterations and at the end.
inline TrainResult train(const Matrix& dataset, ModelParams params, const TrainerConfig& config,
                         const std::vector<StageSpec>& stages, TrainingState state = {},
                         const TrainOptions& options = {}) {
    config.validate();
    params.validate();
    if (dataset.cols() != static_cast<Eigen::Index>(params.shape().D)) {
        throw shape_error("dataset has " + std::to_string(dataset.cols()) + " columns, model expects D = " +
                          std::to_string(params.shape().D));
    }
    if (!dataset.allFinite()) {
        throw data_error("dataset contains non-finite values");
    }
    TrainResult result;
    result.stage_boundaries = stage_boundaries(stages);
    const std::uint64_t total = result.stage_boundaries.empty() ? 0 : result.stage_boundaries.back();
    const std::uint64_t stop = std::min(total, options.max_iterations.value_or(total));

    if (state.iteration == 0) {
        state.seed = config.seed;
        state.hmc_step_size = config.hmc.step_size;
    } else if (state.seed != config.seed) {
        throw argument_error("resume seed does not match the configured seed");
    }
    HmcConfig hmc_config = config.hmc;
    hmc_config.seed = config.seed ^ 0x6a09e667f3bcc909ULL;
    HmcState hmc = HmcState::from_config(hmc_config);
    hmc.step_size = state.hmc_step_size;
    hmc.stats.accepted = state.hmc_accepted;
    hmc.stats.proposed = state.hmc_proposed;

    BatchSchedule schedule(static_cast<std::size_t>(dataset.rows()), config.batch_size, config.seed);
    auto save = [&] {
        if (!options.checkpoint_path.empty()) {
            save_checkpoint(params, state, options.checkpoint_path);
        }
    };

    for (std::uint64_t k = state.iteration; k < stop; ++k) {
        std::size_t stage = 0;
        while (k >= result.stage_boundaries[stage]) {
            ++stage;
        }
        const StageSpec& spec = stages[stage];
        const std::uint64_t stage_start = stage == 0 ? 0 : result.stage_boundaries[stage - 1];
        params.phase_enabled = spec.phase_enabled;
        if (k == stage_start) {
            const ModelShape shape = params.shape();
            if (spec.reset_P) {
                params.P = banded_identity(shape.F, shape.N, -1.0);
            }
            if (spec.reset_R) {
                params.R = banded_identity(shape.G, shape.T, 1.0);
            }
        }
        const Matrix batch = schedule.batch(dataset, k);
        StepMetrics m = cd1_step(batch, params, config.rates, hmc_config, hmc, spec.trainable, k);
        m.iteration = k + 1;
        m.stage = stage;
        state.iteration = k + 1;
        state.hmc_step_size = hmc.step_size;
        state.hmc_accepted = hmc.stats.accepted;
        state.hmc_proposed = hmc.stats.proposed;
        if (options.on_step) {
            options.on_step(m);
        }
        result.log.push_back(m);
        if (config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0) {
            save();
        }
    }
    save();
    result.params = std::move(params);
    result.state = state;
    return result;
}

} // namespace mpk

#endif
