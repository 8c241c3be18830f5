#pragma once

// Regression losses for the four pose representations plus the
// cross-entropy confidence terms, with analytic gradients with respect to the
// raw head outputs (regression values and softmax logits).

#include <array>
#include <cmath>

#include "itn/phantom.hpp"
#include "itn/predictor.hpp"
#include "itn/transform.hpp"

namespace itn {

struct LossWeights {
    double alpha = 1.0;  // translation
    double beta = 1.0;   // rotation
    double gamma = 1.0;  // translation classification
    double delta = 1.0;  // rotation classification
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Regression targets for one sample, in every representation.
struct RegressionTarget {
    Vec3 t;
    std::array<double, 4> q{};
    std::array<double, 3> euler_rad{};
    std::array<double, 9> r{};
    std::array<double, 9> anchors{};
    ClassLabels labels;
};

inline RegressionTarget make_target(const RigidTransform& delta_gt, const ClassLabels& labels, int plane_size) {
    RegressionTarget target;
    target.t = delta_gt.translation;
    target.q = delta_gt.rotation.components();  // w >= 0 by construction
    const EulerAngles e = quat_to_euler(delta_gt.rotation, EulerConvention::XYZ);
    for (size_t a = 0; a < 3; ++a) target.euler_rad[a] = e.deg[a] * kDegToRad;
    target.r = quat_to_matrix(delta_gt.rotation).m;
    target.anchors = transform_to_anchors(delta_gt, plane_size).flat();
    target.labels = labels;
    return target;
}

inline RegressionTarget make_target(const TrainingSample& sample, int plane_size) {
    return make_target(sample.delta_gt, sample.labels, plane_size);
}

struct LossTerms {
    double translation = 0.0;
    double rotation = 0.0;  // anchors mode: the whole anchor loss
    double ce_translation = 0.0;
    double ce_rotation = 0.0;
    double total = 0.0;
};

/// Gradient with respect to the raw outputs. `rotation` holds
/// rotation_width(representation) meaningful entries.
struct OutputGradient {
    std::array<double, 3> t{};
    std::array<double, 9> rotation{};
    std::array<double, 6> p_logits{};
    std::array<double, 6> q_logits{};
};

struct LossResult {
    LossTerms terms;
    OutputGradient grad;
};

namespace detail {

template <size_t N>
double squared_error(const std::array<double, N>& target, const double* pred, double weight, double* grad, size_t n = N) {
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double e = target[i] - pred[i];
        sum += e * e;
        grad[i] = -2.0 * weight * e;
    }
    return weight * sum;
}

inline double cross_entropy(const Probabilities& p, AxisClass label, double weight, std::array<double, 6>& grad_logits) {
    const size_t c = class_index(label);
    for (size_t i = 0; i < 6; ++i) grad_logits[i] = weight * (p[i] - (i == c ? 1.0 : 0.0));
    return -weight * std::log(std::max(p[c], kProbabilityFloor));
}

}  // namespace detail

/// Per-representation losses:
///   quat:    a|t* - t|^2 + b|q* - q/|q||^2
///   euler:   a|t* - t|^2 + b|theta* - theta|^2      (radians, xyz)
///   matrix:  a|t* - t|^2 + b|R* - R|_F^2
///   anchors: sum_i |A_i* - A_i|^2
/// plus -g log P[c*] and -d log Q[k*] when those heads are enabled.
inline LossResult compute_loss(const PredictorOutput& out, const RegressionTarget& target, const LossWeights& w,
                               Representation mode, Heads heads) {
    LossResult res;
    auto& g = res.grad;
    const std::array<double, 3> t_target{target.t.x, target.t.y, target.t.z};
    const std::array<double, 3> t_pred{out.t.x, out.t.y, out.t.z};

    if (mode != Representation::Anchors) {
        res.terms.translation = detail::squared_error(t_target, t_pred.data(), w.alpha, g.t.data());
    }
    switch (mode) {
        case Representation::Quat: {
            const auto& q = out.q_raw;
            const double n = std::max(std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]), 1e-12);
            std::array<double, 4> u{};
            for (size_t i = 0; i < 4; ++i) u[i] = q[i] / n;
            std::array<double, 4> du{};
            res.terms.rotation = detail::squared_error(target.q, u.data(), w.beta, du.data());
            // d(q/|q|)/dq = (I - u u^T) / |q|
            const double proj = du[0] * u[0] + du[1] * u[1] + du[2] * u[2] + du[3] * u[3];
            for (size_t i = 0; i < 4; ++i) g.rotation[i] = (du[i] - proj * u[i]) / n;
            break;
        }
        case Representation::Euler:
            res.terms.rotation = detail::squared_error(target.euler_rad, out.euler_rad.data(), w.beta, g.rotation.data());
            break;
        case Representation::Matrix:
            res.terms.rotation = detail::squared_error(target.r, out.r_raw.data(), w.beta, g.rotation.data());
            break;
        case Representation::Anchors:
            res.terms.rotation = detail::squared_error(target.anchors, out.anchors_raw.data(), 1.0, g.rotation.data());
            break;
    }
    if (heads.p) {
        if (!out.P) throw Error(ErrorKind::InputShape, "P head enabled but output has no P");
        res.terms.ce_translation = detail::cross_entropy(*out.P, target.labels.translation, w.gamma, g.p_logits);
    }
    if (heads.q) {
        if (!out.Q) throw Error(ErrorKind::InputShape, "Q head enabled but output has no Q");
        res.terms.ce_rotation = detail::cross_entropy(*out.Q, target.labels.rotation, w.delta, g.q_logits);
    }
    res.terms.total = res.terms.translation + res.terms.rotation + res.terms.ce_translation + res.terms.ce_rotation;
    return res;
}

inline LossResult compute_loss(const PredictorOutput& out, const TrainingSample& sample, const LossWeights& w,
                               Representation mode, Heads heads, int plane_size) {
    return compute_loss(out, make_target(sample, plane_size), w, mode, heads);
}

template <typename Scalar, size_t N>
std::array<double, N> softmax(const std::array<Scalar, N>& logits) {
    Scalar m = logits[0];
    for (Scalar v : logits) m = std::max(m, v);
    std::array<double, N> p{};
    double sum = 0.0;
    for (size_t i = 0; i < N; ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - static_cast<double>(m));
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

}  // namespace itn
