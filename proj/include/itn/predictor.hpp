#pragma once

// Predictor interface and the ground-truth oracles used to exercise the
// inference machinery independently of learning.

#include <array>
#include <mutex>
#include <optional>
#include <span>
#include <string>

#include "itn/phantom.hpp"
#include "itn/rng.hpp"
#include "itn/transform.hpp"
#include "itn/volume.hpp"

namespace itn {

/// Which rotation parameterization the regression head produces.
enum class Representation : std::uint8_t { Quat = 0, Euler = 1, Matrix = 2, Anchors = 3 };

inline const char* to_string(Representation r) {
    switch (r) {
        case Representation::Quat: return "quat";
        case Representation::Euler: return "euler";
        case Representation::Matrix: return "matrix";
        case Representation::Anchors: return "anchors";
    }
    return "?";
}

inline Representation parse_representation(const std::string& s) {
    if (s == "quat") return Representation::Quat;
    if (s == "euler") return Representation::Euler;
    if (s == "matrix") return Representation::Matrix;
    if (s == "anchors") return Representation::Anchors;
    throw Error(ErrorKind::Config, "unknown representation '" + s + "'");
}

/// Number of raw rotation outputs (anchors: all nine coordinates).
constexpr int rotation_width(Representation r) {
    switch (r) {
        case Representation::Quat: return 4;
        case Representation::Euler: return 3;
        case Representation::Matrix: return 9;
        case Representation::Anchors: return 9;
    }
    return 0;
}

/// Model variants: M1 = (t, q), M2 adds P, M3 adds Q, M4 adds both,
/// M4+ is M4 fed three orthogonal planes.
struct Heads {
    bool p = false;
    bool q = false;
    bool triplet = false;

    friend bool operator==(const Heads&, const Heads&) = default;
};

inline Heads parse_heads(const std::string& s) {
    if (s == "M1") return {false, false, false};
    if (s == "M2") return {true, false, false};
    if (s == "M3") return {false, true, false};
    if (s == "M4") return {true, true, false};
    if (s == "M4+") return {true, true, true};
    throw Error(ErrorKind::Config, "unknown heads selection '" + s + "' (expected M1, M2, M3, M4 or M4+)");
}

inline std::string to_string(const Heads& h) {
    if (h.triplet) return "M4+";
    if (h.p && h.q) return "M4";
    if (h.q) return "M3";
    if (h.p) return "M2";
    return "M1";
}

using Probabilities = std::array<double, 6>;

/// Raw predictor output. Which regression fields are meaningful depends on
/// `representation`; P and Q are post-softmax, indexed by AxisClass.
struct PredictorOutput {
    Representation representation = Representation::Quat;
    Vec3 t;
    std::array<double, 4> q_raw{1.0, 0.0, 0.0, 0.0};
    std::array<double, 3> euler_rad{};  // xyz convention
    std::array<double, 9> r_raw{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<double, 9> anchors_raw{};
    std::optional<Probabilities> P;
    std::optional<Probabilities> Q;
};

inline Probabilities one_hot(AxisClass c, double epsilon = 0.0) {
    Probabilities p;
    p.fill(epsilon / 5.0);
    p[class_index(c)] = 1.0 - epsilon;
    return p;
}

/// What a predictor sees each iteration. The current pose is exposed so that
/// oracles can work; learned predictors only look at `images`.
struct PredictionContext {
    const Volume& volume;
    const RigidTransform& current;
    std::span<const PlaneImage> images;
    int plane_size;
};

/// Implementations must be callable concurrently from several inference runs.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual InputMode input_mode() const = 0;
    virtual PredictorOutput predict(const PredictionContext& ctx) const = 0;
};

struct OracleCap {
    std::optional<double> max_translation;  // tau, voxels
    std::optional<double> max_rotation_deg;  // rho, degrees
};

/// Clips translation to norm <= tau and rotation geodesically to <= rho.
inline RigidTransform cap_step(const RigidTransform& step, const OracleCap& cap) {
    RigidTransform out = step;
    if (cap.max_translation) {
        const double n = norm(out.translation);
        if (n > *cap.max_translation) out.translation = out.translation * (*cap.max_translation / n);
    }
    if (cap.max_rotation_deg) {
        const double limit = *cap.max_rotation_deg * kDegToRad;
        if (out.rotation.angle() > limit) out.rotation = UnitQuaternion::from_axis_angle(out.rotation.vec(), limit);
    }
    return out;
}

/// Returns the exact step to the target plane (optionally capped), with
/// one-hot P and Q at the step's own class labels.
class ExactOracle : public Predictor {
public:
    explicit ExactOracle(RigidTransform gt, OracleCap cap = {}) : gt_(gt), cap_(cap) {}

    InputMode input_mode() const override { return InputMode::None; }

    PredictorOutput predict(const PredictionContext& ctx) const override {
        const RigidTransform step = cap_step(inverse_compose(gt_, ctx.current), cap_);
        const ClassLabels labels = compute_class_labels(step);
        PredictorOutput out;
        out.representation = Representation::Quat;
        out.t = step.translation;
        out.q_raw = step.rotation.components();
        out.P = one_hot(labels.translation);
        out.Q = one_hot(labels.rotation);
        return out;
    }

private:
    RigidTransform gt_;
    OracleCap cap_;
};

struct OracleNoise {
    double sigma_t = 0.0;          // voxels, per axis
    double sigma_theta_deg = 0.0;  // magnitude of a random-axis rotation
    double epsilon = 0.0;          // probability mass moved off the correct class
    std::uint64_t seed = 0;
};

/// Exact oracle output perturbed by Gaussian noise. Holds a private RNG
/// behind a mutex; outputs are reproducible for a fixed call order.
class NoisyOracle : public Predictor {
public:
    NoisyOracle(RigidTransform gt, OracleNoise noise, OracleCap cap = {})
        : exact_(gt, cap), noise_(noise), rng_(derive_seed(noise.seed, 0)) {}

    InputMode input_mode() const override { return InputMode::None; }

    PredictorOutput predict(const PredictionContext& ctx) const override {
        PredictorOutput out = exact_.predict(ctx);
        const ClassLabels labels =
            compute_class_labels({out.t, UnitQuaternion::from_components(out.q_raw[0], out.q_raw[1], out.q_raw[2], out.q_raw[3])});

        std::lock_guard lock(mutex_);
        if (noise_.sigma_t > 0.0) {
            std::normal_distribution<double> g(0.0, noise_.sigma_t);
            out.t = out.t + Vec3{g(rng_), g(rng_), g(rng_)};
        }
        if (noise_.sigma_theta_deg > 0.0) {
            std::normal_distribution<double> axis_g(0.0, 1.0);
            std::normal_distribution<double> angle_g(0.0, noise_.sigma_theta_deg * kDegToRad);
            const Vec3 axis{axis_g(rng_), axis_g(rng_), axis_g(rng_)};
            const UnitQuaternion exact = normalize_quat(out.q_raw);
            out.q_raw = (exact * UnitQuaternion::from_axis_angle(axis, angle_g(rng_))).components();
        }
        out.P = one_hot(labels.translation, noise_.epsilon);
        out.Q = one_hot(labels.rotation, noise_.epsilon);
        return out;
    }

private:
    ExactOracle exact_;
    OracleNoise noise_;
    mutable std::mutex mutex_;
    mutable Rng rng_;
};

}  // namespace itn
