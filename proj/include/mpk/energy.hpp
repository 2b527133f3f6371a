#ifndef MPK_ENERGY_HPP
#define MPK_ENERGY_HPP

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "error.hpp"
#include "model.hpp"

namespace mpk {

/// Floor on ||v|| when normalizing visibles.
inline constexpr double eps_norm = 1e-8;
/// Amplitude regularizer of the phase features, r = sqrt(a^2 + b^2 + eps_r^2).
inline constexpr double eps_r = 1e-6;

template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// log(1 + e^y) without overflow.
template <typename Scalar>
Scalar softplus(Scalar y) {
    using std::abs, std::exp, std::log1p, std::max;
    return max(y, Scalar(0)) + log1p(exp(-abs(y)));
}

template <typename Scalar>
Scalar sigmoid(Scalar y) {
    using std::exp;
    if (y >= Scalar(0)) {
        return Scalar(1) / (Scalar(1) + exp(-y));
    }
    const Scalar e = exp(y);
    return e / (Scalar(1) + e);
}

/// v / max(||v||, eps_norm).
template <typename Derived>
auto normalize_visible(const Eigen::MatrixBase<Derived>& v) {
    using Scalar = typename Derived::Scalar;
    using std::max;
    const Scalar n = max(v.norm(), Scalar(eps_norm));
    return VectorT<Scalar>(v / n);
}

/// Per-subspace quadrature features of a visible vector.
template <typename Scalar>
struct BasicPhaseFeatures {
    VectorT<Scalar> a;
    VectorT<Scalar> b;
    VectorT<Scalar> r;
    VectorT<Scalar> theta;
    /// F x 2, rows (cos theta, sin theta) shrunk by the amplitude regularizer.
    MatrixT<Scalar> x;
};
using PhaseFeatures = BasicPhaseFeatures<double>;

template <typename Scalar>
struct BasicHiddenActivations {
    VectorT<Scalar> p_hp;
    VectorT<Scalar> p_hm;
    VectorT<Scalar> p_hk;
};
using HiddenActivations = BasicHiddenActivations<double>;

namespace detail {

template <typename Scalar>
void require_phase_layout(const BasicModelParams<Scalar>& params) {
    if (params.L != 2) {
        throw unsupported_error("phase features require L = 2, got L = " + std::to_string(params.L));
    }
}

template <typename Scalar, typename Derived>
void require_length(const Eigen::MatrixBase<Derived>& x, Eigen::Index n, const char* what) {
    if (x.size() != n) {
        throw shape_error(std::string(what) + " has length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(n));
    }
}

/// Phase features from the projections y (length 2F, layout f*2 + l).
template <typename Scalar>
BasicPhaseFeatures<Scalar> phase_from_projections(const VectorT<Scalar>& y) {
    using std::atan2, std::sqrt;
    const Eigen::Index F = y.size() / 2;
    BasicPhaseFeatures<Scalar> ph;
    ph.a.resize(F);
    ph.b.resize(F);
    ph.r.resize(F);
    ph.theta.resize(F);
    ph.x.resize(F, 2);
    const Scalar er2 = Scalar(eps_r) * Scalar(eps_r);
    for (Eigen::Index f = 0; f < F; ++f) {
        const Scalar a = y(2 * f);
        const Scalar b = y(2 * f + 1);
        const Scalar r = sqrt(a * a + b * b + er2);
        ph.a(f) = a;
        ph.b(f) = b;
        ph.r(f) = r;
        ph.theta(f) = atan2(b, a);
        ph.x(f, 0) = a / r;
        ph.x(f, 1) = b / r;
    }
    return ph;
}

/// Pooled subspace norms s_f = (sum_l |y_fl|^alpha)^(1/alpha).
template <typename Scalar>
VectorT<Scalar> pool_projections(const VectorT<Scalar>& y, std::size_t L, Scalar alpha) {
    using std::abs, std::pow, std::sqrt;
    if (!(alpha > Scalar(0))) {
        throw parameter_error("alpha must be positive");
    }
    const auto F = y.size() / static_cast<Eigen::Index>(L);
    const auto Li = static_cast<Eigen::Index>(L);
    VectorT<Scalar> s(F);
    for (Eigen::Index f = 0; f < F; ++f) {
        Scalar acc = 0;
        if (alpha == Scalar(2)) {
            for (Eigen::Index l = 0; l < Li; ++l) {
                acc += y(f * Li + l) * y(f * Li + l);
            }
            s(f) = sqrt(acc);
        } else {
            for (Eigen::Index l = 0; l < Li; ++l) {
                acc += pow(abs(y(f * Li + l)), alpha);
            }
            s(f) = pow(acc, Scalar(1) / alpha);
        }
    }
    return s;
}

/// Everything the free energy and its gradients need for one visible vector.
template <typename Scalar>
struct Forward {
    VectorT<Scalar> u;      // normalized visible
    Scalar norm = 0;        // ||v||
    bool floored = false;   // ||v|| < eps_norm
    VectorT<Scalar> y;      // C' u, length F*L
    VectorT<Scalar> s;      // pooled norms, length F
    VectorT<Scalar> z_p;    // pooling hidden inputs, length N
    VectorT<Scalar> z_m;    // mean hidden inputs, length M
    bool phase = false;
    BasicPhaseFeatures<Scalar> ph;
    VectorT<Scalar> q;      // Q' x, length G
    VectorT<Scalar> z_k;    // phase hidden inputs, length T
};

template <typename Scalar, typename Derived>
Forward<Scalar> forward(const Eigen::MatrixBase<Derived>& v, const BasicModelParams<Scalar>& params) {
    require_length<Scalar>(v, params.C.rows(), "visible vector");
    Forward<Scalar> fw;
    fw.norm = v.norm();
    fw.floored = fw.norm < Scalar(eps_norm);
    fw.u = v / (fw.floored ? Scalar(eps_norm) : fw.norm);
    fw.y = params.C.transpose() * fw.u;
    fw.s = pool_projections<Scalar>(fw.y, params.L, params.alpha);
    fw.z_p = Scalar(0.5) * (params.P.transpose() * fw.s) + params.b_c;
    fw.z_m = params.W.transpose() * v + params.b_m;
    fw.phase = params.phase_enabled;
    if (fw.phase) {
        require_phase_layout(params);
        fw.ph = phase_from_projections<Scalar>(fw.y);
        // Q rows are ordered f*2 + l.
        VectorT<Scalar> xs(2 * fw.ph.x.rows());
        for (Eigen::Index f = 0; f < fw.ph.x.rows(); ++f) {
            xs(2 * f) = fw.ph.x(f, 0);
            xs(2 * f + 1) = fw.ph.x(f, 1);
        }
        fw.q = params.Q.transpose() * xs;
        fw.z_k = Scalar(0.5) * (params.R.transpose() * fw.q.cwiseAbs2()) + params.b_k;
    }
    return fw;
}

} // namespace detail

/// Pooled subspace norms of an already normalized visible vector.
template <typename Scalar, typename Derived>
VectorT<Scalar> subspace_pool(const Eigen::MatrixBase<Derived>& v, const BasicModelParams<Scalar>& params) {
    detail::require_length<Scalar>(v, params.C.rows(), "visible vector");
    const VectorT<Scalar> y = params.C.transpose() * v;
    return detail::pool_projections<Scalar>(y, params.L, params.alpha);
}

/// Quadrature features of v as given (angles are scale-invariant).
template <typename Scalar, typename Derived>
BasicPhaseFeatures<Scalar> phase_features(const Eigen::MatrixBase<Derived>& v, const BasicModelParams<Scalar>& params) {
    detail::require_phase_layout(params);
    detail::require_length<Scalar>(v, params.C.rows(), "visible vector");
    const VectorT<Scalar> y = params.C.transpose() * v;
    return detail::phase_from_projections<Scalar>(y);
}

/// Subspace pooling energy. v is normalized internally.
template <typename Scalar, typename DV, typename DH>
Scalar energy_p(const Eigen::MatrixBase<DV>& v, const Eigen::MatrixBase<DH>& h_p, const BasicModelParams<Scalar>& params) {
    detail::require_length<Scalar>(h_p, params.P.cols(), "h_p");
    const VectorT<Scalar> s = subspace_pool(normalize_visible(v), params);
    const VectorT<Scalar> h = h_p.template cast<Scalar>();
    return -Scalar(0.5) * h.dot(params.P.transpose() * s) - params.b_c.dot(h);
}

/// Mean-unit energy on the unnormalized visible vector.
template <typename Scalar, typename DV, typename DH>
Scalar energy_m(const Eigen::MatrixBase<DV>& v, const Eigen::MatrixBase<DH>& h_m, const BasicModelParams<Scalar>& params) {
    detail::require_length<Scalar>(v, params.W.rows(), "visible vector");
    detail::require_length<Scalar>(h_m, params.W.cols(), "h_m");
    const VectorT<Scalar> h = h_m.template cast<Scalar>();
    return -h.dot(params.W.transpose() * v) - params.b_m.dot(h);
}

/// Phase-coupling energy; features are taken from the normalized visible vector.
template <typename Scalar, typename DV, typename DH>
Scalar energy_k(const Eigen::MatrixBase<DV>& v, const Eigen::MatrixBase<DH>& h_k, const BasicModelParams<Scalar>& params) {
    detail::require_length<Scalar>(h_k, params.R.cols(), "h_k");
    const auto ph = phase_features(normalize_visible(v), params);
    VectorT<Scalar> xs(2 * ph.x.rows());
    for (Eigen::Index f = 0; f < ph.x.rows(); ++f) {
        xs(2 * f) = ph.x(f, 0);
        xs(2 * f + 1) = ph.x(f, 1);
    }
    const VectorT<Scalar> q = params.Q.transpose() * xs;
    const VectorT<Scalar> h = h_k.template cast<Scalar>();
    return -Scalar(0.5) * h.dot(params.R.transpose() * q.cwiseAbs2()) - params.b_k.dot(h);
}

/// Joint energy of visibles and all three hidden families. The phase term
/// is dropped when the phase component is disabled.
template <typename Scalar, typename DV, typename DP, typename DM, typename DK>
Scalar total_energy(const Eigen::MatrixBase<DV>& v, const Eigen::MatrixBase<DP>& h_p, const Eigen::MatrixBase<DM>& h_m,
                    const Eigen::MatrixBase<DK>& h_k, const BasicModelParams<Scalar>& params) {
    Scalar e = energy_p(v, h_p, params) + energy_m(v, h_m, params);
    if (params.phase_enabled) {
        e += energy_k(v, h_k, params);
    }
    return e + Scalar(0.5) * v.squaredNorm() - params.b_v.dot(v);
}

namespace detail {

template <typename Scalar, typename Derived>
Scalar free_energy_from(const Forward<Scalar>& fw, const Eigen::MatrixBase<Derived>& v,
                        const BasicModelParams<Scalar>& params) {
    using std::isfinite;
    auto check = [](Scalar x, const char* term) {
        if (!isfinite(x)) {
            throw numeric_error(std::string("non-finite ") + term + " term in free energy");
        }
        return x;
    };
    Scalar pool = 0;
    for (Eigen::Index n = 0; n < fw.z_p.size(); ++n) {
        pool += softplus(fw.z_p(n));
    }
    Scalar mean = 0;
    for (Eigen::Index j = 0; j < fw.z_m.size(); ++j) {
        mean += softplus(fw.z_m(j));
    }
    Scalar phase = 0;
    if (fw.phase) {
        for (Eigen::Index t = 0; t < fw.z_k.size(); ++t) {
            phase += softplus(fw.z_k(t));
        }
    }
    const Scalar quad = Scalar(0.5) * v.squaredNorm() - params.b_v.dot(v);
    return -check(pool, "pooling") - check(phase, "phase-coupling") - check(mean, "mean") + check(quad, "visible");
}

} // namespace detail

/// Free energy with all binary hiddens summed out. Throws numeric_error
/// naming the offending term if any part is not finite.
template <typename Scalar, typename Derived>
Scalar free_energy(const Eigen::MatrixBase<Derived>& v, const BasicModelParams<Scalar>& params) {
    return detail::free_energy_from(detail::forward(v, params), v, params);
}

/// Conditional on-probabilities of every hidden unit. p_hk is zero when the
/// phase component is disabled.
template <typename Scalar, typename Derived>
BasicHiddenActivations<Scalar> hidden_conditionals(const Eigen::MatrixBase<Derived>& v, const BasicModelParams<Scalar>& params) {
    const auto fw = detail::forward(v, params);
    BasicHiddenActivations<Scalar> act;
    act.p_hp = fw.z_p.unaryExpr([](Scalar y) { return sigmoid(y); });
    act.p_hm = fw.z_m.unaryExpr([](Scalar y) { return sigmoid(y); });
    if (fw.phase) {
        act.p_hk = fw.z_k.unaryExpr([](Scalar y) { return sigmoid(y); });
    } else {
        act.p_hk = VectorT<Scalar>::Zero(params.R.cols());
    }
    return act;
}

/// Precision matrix of the visibles selected by the pooling hiddens,
/// C diag((P h) repeated over l) C'.
template <typename Scalar, typename Derived>
MatrixT<Scalar> inverse_covariance(const Eigen::MatrixBase<Derived>& h_p, const BasicModelParams<Scalar>& params) {
    detail::require_length<Scalar>(h_p, params.P.cols(), "h_p");
    const VectorT<Scalar> weights = params.P * h_p.template cast<Scalar>();
    const auto L = static_cast<Eigen::Index>(params.L);
    VectorT<Scalar> diag(params.C.cols());
    for (Eigen::Index k = 0; k < diag.size(); ++k) {
        diag(k) = weights(k / L);
    }
    MatrixT<Scalar> out = params.C * diag.asDiagonal() * params.C.transpose();
    return Scalar(0.5) * (out + out.transpose());
}

/// Phase coupling matrix K = Q diag(R h) Q', indexed by f*2 + l.
template <typename Scalar, typename Derived>
MatrixT<Scalar> phase_coupling_matrix(const Eigen::MatrixBase<Derived>& h_k, const BasicModelParams<Scalar>& params) {
    detail::require_length<Scalar>(h_k, params.R.cols(), "h_k");
    const VectorT<Scalar> weights = params.R * h_k.template cast<Scalar>();
    MatrixT<Scalar> out = params.Q * weights.asDiagonal() * params.Q.transpose();
    return Scalar(0.5) * (out + out.transpose());
}

} // namespace mpk

#endif
