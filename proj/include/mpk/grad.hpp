#ifndef MPK_GRAD_HPP
#define MPK_GRAD_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "energy.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace mpk {

namespace detail {

/// Reverse pass through the free energy of one visible vector. Adds
/// dF/dTheta into `pg` when non-null and returns dF/dv.
template <typename Scalar, typename Derived>
VectorT<Scalar> backward(const Forward<Scalar>& fw, const Eigen::MatrixBase<Derived>& v,
                         const BasicModelParams<Scalar>& params, BasicParamTensors<Scalar>* pg) {
    using std::abs, std::pow;
    const auto L = static_cast<Eigen::Index>(params.L);
    const Eigen::Index F = fw.s.size();

    // Pooling hiddens.
    const VectorT<Scalar> sig_p = fw.z_p.unaryExpr([](Scalar y) { return sigmoid(y); });
    const VectorT<Scalar> g_s = Scalar(-0.5) * (params.P * sig_p);
    VectorT<Scalar> g_y = VectorT<Scalar>::Zero(fw.y.size());
    for (Eigen::Index f = 0; f < F; ++f) {
        const Scalar s = fw.s(f);
        if (s <= Scalar(0)) {
            continue;
        }
        for (Eigen::Index l = 0; l < L; ++l) {
            const Scalar y = fw.y(f * L + l);
            if (params.alpha == Scalar(2)) {
                g_y(f * L + l) = g_s(f) * y / s;
            } else if (y != Scalar(0)) {
                const Scalar sign = y > Scalar(0) ? Scalar(1) : Scalar(-1);
                g_y(f * L + l) = g_s(f) * pow(s, Scalar(1) - params.alpha) * pow(abs(y), params.alpha - Scalar(1)) * sign;
            }
        }
    }
    if (pg) {
        pg->b_c -= sig_p;
        pg->P -= Scalar(0.5) * fw.s * sig_p.transpose();
    }

    // Phase-coupling hiddens.
    if (fw.phase) {
        const VectorT<Scalar> sig_k = fw.z_k.unaryExpr([](Scalar y) { return sigmoid(y); });
        const VectorT<Scalar> g_q = -(params.R * sig_k).cwiseProduct(fw.q);
        VectorT<Scalar> xs(2 * F);
        for (Eigen::Index f = 0; f < F; ++f) {
            xs(2 * f) = fw.ph.x(f, 0);
            xs(2 * f + 1) = fw.ph.x(f, 1);
        }
        const VectorT<Scalar> g_x = params.Q * g_q;
        const Scalar er2 = Scalar(eps_r) * Scalar(eps_r);
        for (Eigen::Index f = 0; f < F; ++f) {
            const Scalar a = fw.ph.a(f);
            const Scalar b = fw.ph.b(f);
            const Scalar r = fw.ph.r(f);
            const Scalar r3 = r * r * r;
            const Scalar daa = (b * b + er2) / r3;
            const Scalar dab = -a * b / r3;
            const Scalar dbb = (a * a + er2) / r3;
            g_y(2 * f) += g_x(2 * f) * daa + g_x(2 * f + 1) * dab;
            g_y(2 * f + 1) += g_x(2 * f) * dab + g_x(2 * f + 1) * dbb;
        }
        if (pg) {
            pg->b_k -= sig_k;
            pg->R -= Scalar(0.5) * fw.q.cwiseAbs2() * sig_k.transpose();
            pg->Q += xs * g_q.transpose();
        }
    }

    if (pg) {
        pg->C += fw.u * g_y.transpose();
    }
    const VectorT<Scalar> g_u = params.C * g_y;
    VectorT<Scalar> g_v;
    if (fw.floored) {
        g_v = g_u / Scalar(eps_norm);
    } else {
        g_v = (g_u - fw.u * fw.u.dot(g_u)) / fw.norm;
    }

    // Mean hiddens and the visible quadratic.
    const VectorT<Scalar> sig_m = fw.z_m.unaryExpr([](Scalar y) { return sigmoid(y); });
    g_v -= params.W * sig_m;
    g_v += v - params.b_v;
    if (pg) {
        pg->W -= v * sig_m.transpose();
        pg->b_m -= sig_m;
        pg->b_v -= v;
    }
    return g_v;
}

} // namespace detail

/// dF/dv, the force used by the leapfrog integrator.
template <typename Scalar, typename Derived>
VectorT<Scalar> grad_free_energy_v(const Eigen::MatrixBase<Derived>& v, const BasicModelParams<Scalar>& params) {
    const auto fw = detail::forward(v, params);
    return detail::backward<Scalar>(fw, v, params, nullptr);
}

/// Free energy and dF/dv from a single forward pass.
template <typename Scalar, typename Derived>
std::pair<Scalar, VectorT<Scalar>> free_energy_and_grad_v(const Eigen::MatrixBase<Derived>& v,
                                                          const BasicModelParams<Scalar>& params) {
    const auto fw = detail::forward(v, params);
    return {detail::free_energy_from(fw, v, params), detail::backward<Scalar>(fw, v, params, nullptr)};
}

/// Batch-mean parameter gradient together with the batch-mean free energy.
struct BatchGradient {
    ParamGradient grad;
    double mean_free_energy = 0.0;
};

inline constexpr std::size_t gradient_chunk_rows = 8;

/// Mean of dF/dTheta over the rows of `batch` (rows are visible vectors).
///
/// Rows are processed in fixed chunks whose partial sums are reduced in
/// chunk order, so the result is bit-identical for any worker count.
inline BatchGradient batch_gradient(const Matrix& batch, const ModelParams& params) {
    if (batch.rows() == 0) {
        throw argument_error("empty batch");
    }
    const ModelShape shape = params.shape();
    const auto rows = static_cast<std::size_t>(batch.rows());
    const std::size_t chunks = (rows + gradient_chunk_rows - 1) / gradient_chunk_rows;
    std::vector<ParamGradient> partial(chunks, ParamGradient::zeros(shape));
    std::vector<double> partial_f(chunks, 0.0);
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t end = std::min(rows, (c + 1) * gradient_chunk_rows);
        for (std::size_t r = c * gradient_chunk_rows; r < end; ++r) {
            const Vector v = batch.row(static_cast<Eigen::Index>(r)).transpose();
            const auto fw = detail::forward(v, params);
            detail::backward<double>(fw, v, params, &partial[c]);
            partial_f[c] += detail::free_energy_from(fw, v, params);
        }
    });
    BatchGradient out{ParamGradient::zeros(shape), 0.0};
    for (std::size_t c = 0; c < chunks; ++c) {
        out.grad.for_each([&](Group g, auto& acc) {
            partial[c].for_each([&](Group h, const auto& part) {
                if (g == h) {
                    acc += part;
                }
            });
        });
        out.mean_free_energy += partial_f[c];
    }
    const double inv = 1.0 / static_cast<double>(rows);
    out.grad.for_each([&](Group, auto& t) { t *= inv; });
    out.mean_free_energy *= inv;
    return out;
}

inline ParamGradient grad_free_energy_params(const Matrix& batch, const ModelParams& params) {
    return batch_gradient(batch, params).grad;
}

/// Mean free energy of the rows of a batch.
inline double mean_free_energy(const Matrix& batch, const ModelParams& params) {
    if (batch.rows() == 0) {
        throw argument_error("empty batch");
    }
    double sum = 0.0;
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        sum += free_energy(batch.row(r).transpose(), params);
    }
    return sum / static_cast<double>(batch.rows());
}

/// Model with every tensor drawn at random, for derivative checks. Unlike
/// init_params this gives nonzero gradients for every entry.
inline ModelParams random_model(const ModelShape& shape, std::uint64_t seed, double alpha = 2.0) {
    ModelParams p = init_params(shape, seed, {alpha, shape.L == 2 && alpha == 2.0});
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    p.for_each([&](Group g, auto& t) {
        const double scale = g == Group::P || g == Group::R ? 0.8 : 0.5;
        for (Eigen::Index k = 0; k < t.size(); ++k) {
            t.data()[k] = scale * normal(rng);
        }
    });
    return p;
}

/// Maximum relative error per checked quantity.
struct GradientCheckReport {
    struct Entry {
        std::string name;
        double max_rel_error = 0.0;
    };
    std::vector<Entry> entries;
    double tolerance = 0.0;
    bool passed = false;

    std::string to_text() const {
        std::ostringstream os;
        os << "gradient check (tolerance " << tolerance << "): " << (passed ? "PASS" : "FAIL") << "\n";
        for (const auto& e : entries) {
            os << "  " << e.name << "  max rel err " << e.max_rel_error
               << (e.max_rel_error < tolerance ? "" : "  <-- exceeds tolerance") << "\n";
        }
        return os.str();
    }
};

struct GradientCheckOptions {
    double step = 1e-5;
    std::size_t visible_samples = 5;
    std::size_t batch_rows = 3;
    double alpha = 2.0;
    /// Test hook: corrupts the analytic gradients before comparison.
    bool perturb_analytic = false;
};

/// |a - b| / max(|a|, |b|, 1e-8)
inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares both analytic gradient paths with central finite differences of
/// the free energy. Differences are taken in long double so that round-off
/// in F does not swamp small gradient entries.
inline GradientCheckReport check_gradients(const ModelShape& shape, std::uint64_t seed, double tolerance,
                                           const GradientCheckOptions& options = {}) {
    using Ext = long double;
    const ModelParams params = random_model(shape, seed, options.alpha);
    const BasicModelParams<Ext> ext = params.cast<Ext>();
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto D = static_cast<Eigen::Index>(shape.D);
    const Ext h = static_cast<Ext>(options.step);

    GradientCheckReport report;
    report.tolerance = tolerance;

    double worst_v = 0.0;
    for (std::size_t s = 0; s < options.visible_samples; ++s) {
        Vector v(D);
        for (Eigen::Index i = 0; i < D; ++i) {
            v(i) = normal(rng);
        }
        Vector analytic = grad_free_energy_v(v, params);
        if (options.perturb_analytic) {
            analytic(0) += 1e-3 * (1.0 + std::abs(analytic(0)));
        }
        const VectorT<Ext> ve = v.cast<Ext>();
        for (Eigen::Index i = 0; i < D; ++i) {
            VectorT<Ext> plus = ve;
            VectorT<Ext> minus = ve;
            plus(i) += h;
            minus(i) -= h;
            const auto fd = static_cast<double>((free_energy(plus, ext) - free_energy(minus, ext)) / (2 * h));
            worst_v = std::max(worst_v, relative_error(analytic(i), fd));
        }
    }
    report.entries.push_back({"v", worst_v});

    Matrix batch(static_cast<Eigen::Index>(options.batch_rows), D);
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        for (Eigen::Index i = 0; i < D; ++i) {
            batch(r, i) = normal(rng);
        }
    }
    const MatrixT<Ext> batch_ext = batch.cast<Ext>();
    auto mean_f = [&](const BasicModelParams<Ext>& p) {
        Ext sum = 0;
        for (Eigen::Index r = 0; r < batch_ext.rows(); ++r) {
            sum += free_energy(batch_ext.row(r).transpose(), p);
        }
        return sum / static_cast<Ext>(batch_ext.rows());
    };
    ParamGradient analytic = grad_free_energy_params(batch, params);
    if (options.perturb_analytic) {
        analytic.C(0, 0) += 1e-3 * (1.0 + std::abs(analytic.C(0, 0)));
    }

    for (Group g : all_groups) {
        if (!params.phase_enabled && (g == Group::Q || g == Group::R || g == Group::b_k)) {
            continue;
        }
        double worst = 0.0;
        BasicModelParams<Ext> probe = ext;
        analytic.for_each([&](Group ga, const auto& ta) {
            if (ga != g) {
                return;
            }
            probe.for_each([&](Group gp, auto& tp) {
                if (gp != g) {
                    return;
                }
                for (Eigen::Index k = 0; k < tp.size(); ++k) {
                    const Ext saved = tp.data()[k];
                    tp.data()[k] = saved + h;
                    const Ext f_plus = mean_f(probe);
                    tp.data()[k] = saved - h;
                    const Ext f_minus = mean_f(probe);
                    tp.data()[k] = saved;
                    const auto fd = static_cast<double>((f_plus - f_minus) / (2 * h));
                    worst = std::max(worst, relative_error(ta.data()[k], fd));
                }
            });
        });
        report.entries.push_back({std::string(group_name(g)), worst});
    }

    report.passed = std::all_of(report.entries.begin(), report.entries.end(),
                                [&](const auto& e) { return e.max_rel_error < tolerance; });
    return report;
}

} // namespace mpk

#endif
