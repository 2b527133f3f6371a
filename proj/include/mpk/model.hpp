#ifndef MPK_MODEL_HPP
#define MPK_MODEL_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace mpk {

/// Structural sizes of a model.
///
/// D visible units, F subspaces of dimension L, N pooling hiddens, M mean
/// hiddens, G phase factors and T phase hiddens.
struct ModelShape {
    std::size_t D = 0;
    std::size_t F = 0;
    std::size_t L = 2;
    std::size_t N = 0;
    std::size_t M = 0;
    std::size_t G = 0;
    std::size_t T = 0;

    std::size_t factors() const noexcept { return F * L; }

    void validate() const {
        const std::array<std::pair<const char*, std::size_t>, 7> dims{{
            {"D", D}, {"F", F}, {"L", L}, {"N", N}, {"M", M}, {"G", G}, {"T", T}}};
        for (const auto& [name, value] : dims) {
            if (value == 0) {
                throw shape_error(std::string("dimension ") + name + " must be positive");
            }
        }
    }

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Learnable tensor groups, in checkpoint order.
enum class Group : unsigned { C, P, W, Q, R, b_c, b_m, b_k, b_v };

inline constexpr std::array<Group, 9> all_groups{
    Group::C, Group::P, Group::W, Group::Q, Group::R, Group::b_c, Group::b_m, Group::b_k, Group::b_v};

inline constexpr std::string_view group_name(Group g) noexcept {
    switch (g) {
    case Group::C: return "C";
    case Group::P: return "P";
    case Group::W: return "W";
    case Group::Q: return "Q";
    case Group::R: return "R";
    case Group::b_c: return "b_c";
    case Group::b_m: return "b_m";
    case Group::b_k: return "b_k";
    case Group::b_v: return "b_v";
    }
    return "?";
}

inline std::optional<Group> group_from_name(std::string_view name) noexcept {
    for (Group g : all_groups) {
        if (group_name(g) == name) {
            return g;
        }
    }
    return std::nullopt;
}

/// Small bitset over Group.
class GroupSet {
public:
    constexpr GroupSet() = default;
    constexpr GroupSet(std::initializer_list<Group> groups) {
        for (Group g : groups) {
            insert(g);
        }
    }

    static constexpr GroupSet all() {
        GroupSet s;
        s.bits_ = (1u << all_groups.size()) - 1u;
        return s;
    }

    constexpr void insert(Group g) { bits_ |= bit(g); }
    constexpr void erase(Group g) { bits_ &= ~bit(g); }
    constexpr bool contains(Group g) const { return (bits_ & bit(g)) != 0; }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr unsigned bits() const { return bits_; }

    friend constexpr bool operator==(GroupSet, GroupSet) = default;

private:
    static constexpr unsigned bit(Group g) { return 1u << static_cast<unsigned>(g); }
    unsigned bits_ = 0;
};

/// The nine learnable tensors.
///
/// C is stored flattened as D x (F*L) with column f*L + l, and Q as
/// (F*L) x G with row f*L + l. Row-major iteration over these matrices is
/// the row-major order of the D x F x L and F x L x G tensors.
template <typename Scalar>
struct BasicParamTensors {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix C;
    Matrix P;
    Matrix W;
    Matrix Q;
    Matrix R;
    Vector b_c;
    Vector b_m;
    Vector b_k;
    Vector b_v;

    static BasicParamTensors zeros(const ModelShape& s) {
        BasicParamTensors t;
        const auto i = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
        t.C = Matrix::Zero(i(s.D), i(s.F * s.L));
        t.P = Matrix::Zero(i(s.F), i(s.N));
        t.W = Matrix::Zero(i(s.D), i(s.M));
        t.Q = Matrix::Zero(i(s.F * s.L), i(s.G));
        t.R = Matrix::Zero(i(s.G), i(s.T));
        t.b_c = Vector::Zero(i(s.N));
        t.b_m = Vector::Zero(i(s.M));
        t.b_k = Vector::Zero(i(s.T));
        t.b_v = Vector::Zero(i(s.D));
        return t;
    }

    /// Calls fn(group, tensor) for every tensor in checkpoint order.
    template <typename Fn>
    void for_each(Fn&& fn) {
        fn(Group::C, C);
        fn(Group::P, P);
        fn(Group::W, W);
        fn(Group::Q, Q);
        fn(Group::R, R);
        fn(Group::b_c, b_c);
        fn(Group::b_m, b_m);
        fn(Group::b_k, b_k);
        fn(Group::b_v, b_v);
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        fn(Group::C, C);
        fn(Group::P, P);
        fn(Group::W, W);
        fn(Group::Q, Q);
        fn(Group::R, R);
        fn(Group::b_c, b_c);
        fn(Group::b_m, b_m);
        fn(Group::b_k, b_k);
        fn(Group::b_v, b_v);
    }

    /// Name of the first tensor holding a NaN or Inf, if any.
    std::optional<Group> first_non_finite() const {
        std::optional<Group> bad;
        for_each([&](Group g, const auto& t) {
            if (!bad && !t.allFinite()) {
                bad = g;
            }
        });
        return bad;
    }

    friend bool operator==(const BasicParamTensors& a, const BasicParamTensors& b) {
        bool same = true;
        a.for_each([&](Group g, const auto& t) {
            b.for_each([&](Group h, const auto& u) {
                if (g == h) {
                    same = same && t.rows() == u.rows() && t.cols() == u.cols() && t == u;
                }
            });
        });
        return same;
    }
};

/// All model parameters plus the structural hyperparameters.
template <typename Scalar>
struct BasicModelParams : BasicParamTensors<Scalar> {
    /// Subspace norm exponent.
    Scalar alpha = Scalar(2);
    /// Subspace dimensionality.
    std::size_t L = 2;
    /// Whether the phase-coupling hiddens contribute to the energy.
    bool phase_enabled = true;

    ModelShape shape() const {
        ModelShape s;
        s.D = static_cast<std::size_t>(this->C.rows());
        s.L = L;
        s.F = L == 0 ? 0 : static_cast<std::size_t>(this->C.cols()) / L;
        s.N = static_cast<std::size_t>(this->P.cols());
        s.M = static_cast<std::size_t>(this->W.cols());
        s.G = static_cast<std::size_t>(this->Q.cols());
        s.T = static_cast<std::size_t>(this->R.cols());
        return s;
    }

    /// Throws shape_error or parameter_error if tensors are inconsistent.
    void validate() const {
        if (L == 0 || this->C.cols() % static_cast<Eigen::Index>(L) != 0) {
            throw shape_error("C column count is not a multiple of L");
        }
        const ModelShape s = shape();
        s.validate();
        const auto i = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
        auto expect = [](bool ok, const char* what) {
            if (!ok) {
                throw shape_error(what);
            }
        };
        expect(this->P.rows() == i(s.F), "P rows != F");
        expect(this->W.rows() == i(s.D), "W rows != D");
        expect(this->Q.rows() == i(s.F * s.L), "Q rows != F*L");
        expect(this->R.rows() == i(s.G), "R rows != G");
        expect(this->b_c.size() == i(s.N), "b_c length != N");
        expect(this->b_m.size() == i(s.M), "b_m length != M");
        expect(this->b_k.size() == i(s.T), "b_k length != T");
        expect(this->b_v.size() == i(s.D), "b_v length != D");
        if (!(alpha > Scalar(0))) {
            throw parameter_error("alpha must be positive");
        }
        if (phase_enabled && (L != 2 || alpha != Scalar(2))) {
            throw unsupported_error("phase coupling requires L = 2 and alpha = 2");
        }
    }

    template <typename Other>
    BasicModelParams<Other> cast() const {
        BasicModelParams<Other> out;
        out.C = this->C.template cast<Other>();
        out.P = this->P.template cast<Other>();
        out.W = this->W.template cast<Other>();
        out.Q = this->Q.template cast<Other>();
        out.R = this->R.template cast<Other>();
        out.b_c = this->b_c.template cast<Other>();
        out.b_m = this->b_m.template cast<Other>();
        out.b_k = this->b_k.template cast<Other>();
        out.b_v = this->b_v.template cast<Other>();
        out.alpha = static_cast<Other>(alpha);
        out.L = L;
        out.phase_enabled = phase_enabled;
        return out;
    }

    friend bool operator==(const BasicModelParams& a, const BasicModelParams& b) {
        return static_cast<const BasicParamTensors<Scalar>&>(a) ==
                   static_cast<const BasicParamTensors<Scalar>&>(b) &&
               a.alpha == b.alpha && a.L == b.L && a.phase_enabled == b.phase_enabled;
    }
};

using ModelParams = BasicModelParams<double>;
using ParamGradient = BasicParamTensors<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Banded identity pattern with unit-norm columns.
///
/// Entry (r, c) is `sign` when r == c mod rows or c == r mod cols, so every
/// row and column receives support for any aspect ratio and the pattern
/// reduces to sign * I for square matrices.
inline Matrix banded_identity(std::size_t rows, std::size_t cols, double sign) {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c % rows == r || r % cols == c) {
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sign;
            }
        }
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m.col(c) /= m.col(c).norm();
    }
    return m;
}

/// Every tensor zero: the free energy reduces to |v|^2 / 2 plus a constant.
inline ModelParams zero_model(const ModelShape& shape, bool phase_enabled = false) {
    shape.validate();
    ModelParams p;
    static_cast<ParamGradient&>(p) = ParamGradient::zeros(shape);
    p.L = shape.L;
    p.phase_enabled = phase_enabled;
    return p;
}

struct InitOptions {
    double alpha = 2.0;
    /// Defaults to true iff L == 2 and alpha == 2.
    std::optional<bool> phase_enabled;
};

/// Draws initial parameters. Pure function of (shape, seed, options).
inline ModelParams init_params(const ModelShape& shape, std::uint64_t seed, const InitOptions& options = {}) {
    shape.validate();
    if (!(options.alpha > 0.0)) {
        throw parameter_error("alpha must be positive");
    }
    ModelParams p;
    static_cast<ParamGradient&>(p) = ParamGradient::zeros(shape);
    p.alpha = options.alpha;
    p.L = shape.L;
    p.phase_enabled = options.phase_enabled.value_or(shape.L == 2 && options.alpha == 2.0);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (Eigen::Index c = 0; c < p.C.cols(); ++c) {
        for (Eigen::Index i = 0; i < p.C.rows(); ++i) {
            p.C(i, c) = normal(rng);
        }
        const double n = p.C.col(c).norm();
        if (n > 0.0) {
            p.C.col(c) /= n;
        }
    }
    const double w_sd = std::sqrt(0.05);
    for (Eigen::Index j = 0; j < p.W.cols(); ++j) {
        for (Eigen::Index i = 0; i < p.W.rows(); ++i) {
            p.W(i, j) = w_sd * normal(rng);
        }
    }
    const double q_sd = std::sqrt(0.1);
    for (Eigen::Index g = 0; g < p.Q.cols(); ++g) {
        for (Eigen::Index k = 0; k < p.Q.rows(); ++k) {
            p.Q(k, g) = q_sd * normal(rng);
        }
    }
    p.P = banded_identity(shape.F, shape.N, -1.0);
    p.R = banded_identity(shape.G, shape.T, 1.0);
    p.b_c.setConstant(2.0);
    p.b_m.setConstant(-2.0);
    p.b_k.setZero();
    p.b_v.setZero();
    p.validate();
    return p;
}

/// Columns left at zero by the projection (normalizing them is undefined).
struct ProjectionReport {
    std::vector<std::size_t> zero_p_columns;
    std::vector<std::size_t> zero_r_columns;

    bool clean() const noexcept { return zero_p_columns.empty() && zero_r_columns.empty(); }
};

namespace detail {

inline void normalize_columns(Matrix& m, std::vector<std::size_t>& zero_columns) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double n = m.col(c).norm();
        if (n > 0.0) {
            m.col(c) /= n;
        } else {
            zero_columns.push_back(static_cast<std::size_t>(c));
        }
    }
}

} // namespace detail

/// Applies the post-update constraints in place, restricted to `groups`.
///
/// P: positive entries clamped to zero, then unit-norm columns.
/// C: every filter vector rescaled to the mean of the current lengths.
/// R: unit-norm columns.
inline ProjectionReport project_constraints(ModelParams& params, GroupSet groups = GroupSet::all()) {
    ProjectionReport report;
    if (groups.contains(Group::P)) {
        params.P = params.P.cwiseMin(0.0);
        detail::normalize_columns(params.P, report.zero_p_columns);
    }
    if (groups.contains(Group::C) && params.C.cols() > 0) {
        const Eigen::RowVectorXd lengths = params.C.colwise().norm();
        const double target = lengths.mean();
        for (Eigen::Index c = 0; c < params.C.cols(); ++c) {
            if (lengths(c) > 0.0) {
                params.C.col(c) *= target / lengths(c);
            }
        }
    }
    if (groups.contains(Group::R)) {
        detail::normalize_columns(params.R, report.zero_r_columns);
    }
    return report;
}

inline ModelParams projected(ModelParams params) {
    project_constraints(params);
    return params;
}

} // namespace mpk

#endif
