#pragma once

// Iterative plane inference: extract the current plane, ask the predictor
// for a relative step, compose, repeat. Optionally weights each step by the
// predictor's axis confidences, and averages several random starts.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "itn/error.hpp"
#include "itn/parallel.hpp"
#include "itn/phantom.hpp"
#include "itn/predictor.hpp"
#include "itn/transform.hpp"
#include "itn/volume.hpp"

namespace itn {

struct InferenceConfig {
    int iterations = 10;  // N
    int plane_size = 32;  // s
    int init_count = 5;   // K
    std::uint64_t seed = 0;
    bool log_trajectory = true;
    /// Weight steps by P / Q when the predictor supplies them.
    bool use_translation_confidence = true;
    bool use_rotation_confidence = true;
    /// When set and at least three runs stay in the volume, runs farther than
    /// this from the medoid run (|dt| in voxels + angle in degrees) are dropped
    /// before averaging.
    std::optional<double> consensus_radius;
    int jobs = 1;
    /// Per-iteration plane images are written here as PGM when set.
    std::optional<std::filesystem::path> dump_dir;

    void validate() const {
        if (iterations < 1) throw Error(ErrorKind::Config, "iteration count must be at least 1");
        if (init_count < 1) throw Error(ErrorKind::Config, "init count must be at least 1");
        if (plane_size < 2) throw Error(ErrorKind::Config, "plane size must be at least 2");
        if (consensus_radius && !(*consensus_radius >= 0.0))
            throw Error(ErrorKind::Config, "consensus radius must be non-negative");
    }
};

struct TrajectoryPoint {
    int iteration = 0;
    RigidTransform pose;
    /// Distances to the target plane; filled in by annotate_trajectory.
    std::optional<double> dx;
    std::optional<double> dtheta;
};

using Trajectory = std::vector<TrajectoryPoint>;

struct PlaneResult {
    RigidTransform pose;
    Trajectory trajectory;  // N + 1 points when logging, else empty
    RigidTransform last_step;
};

/// Magnitude of a step, mixing units at 1 voxel ~ 1 degree.
inline double step_norm(const RigidTransform& step) {
    return norm(step.translation) + step.rotation.angle() * kRadToDeg;
}

/// Per-axis translation weighting: t_i * max(P[i+], P[i-]).
inline Vec3 confidence_translation(const Vec3& t, const Probabilities& P) {
    Vec3 out;
    for (int a = 0; a < 3; ++a) out[a] = std::max(P[static_cast<size_t>(2 * a)], P[static_cast<size_t>(2 * a + 1)]) * t[a];
    return out;
}

/// Rotation about the single most confident axis only. The angle is the
/// leading angle of the Euler decomposition that starts with that axis,
/// scaled by the winning probability. Ties go to the earlier class.
inline UnitQuaternion confidence_rotation(const UnitQuaternion& q, const Probabilities& Q) {
    size_t best = 0;
    for (size_t i = 1; i < 6; ++i) {
        if (Q[i] > Q[best]) best = i;
    }
    const int axis = static_cast<int>(best / 2);
    const EulerAngles e = quat_to_euler(q, convention_starting_with(axis));
    const double theta = e.deg[static_cast<size_t>(axis)] * kDegToRad;
    return UnitQuaternion::about_axis(axis, Q[best] * theta);
}

inline RigidTransform confidence_update(const Vec3& t, const UnitQuaternion& q, const Probabilities& P,
                                        const Probabilities& Q) {
    return {confidence_translation(t, P), confidence_rotation(q, Q)};
}

/// Projects a raw output onto a valid rigid step for its representation.
inline RigidTransform plain_step(const PredictorOutput& out, int plane_size) {
    switch (out.representation) {
        case Representation::Quat: return {out.t, normalize_quat(out.q_raw)};
        case Representation::Euler: {
            EulerAngles e;
            e.convention = EulerConvention::XYZ;
            for (size_t a = 0; a < 3; ++a) e.deg[a] = out.euler_rad[a] * kRadToDeg;
            return {out.t, euler_to_quat(e)};
        }
        case Representation::Matrix: return {out.t, matrix_to_quat(orthogonalize_matrix(out.r_raw))};
        case Representation::Anchors: return anchors_to_transform(AnchorPoints::from_flat(out.anchors_raw), plane_size);
    }
    throw Error(ErrorKind::Predictor, "unknown representation");
}

inline RigidTransform delta_from_output(const PredictorOutput& out, const InferenceConfig& cfg) {
    RigidTransform step = plain_step(out, cfg.plane_size);
    if (cfg.use_translation_confidence && out.P) step.translation = confidence_translation(step.translation, *out.P);
    if (cfg.use_rotation_confidence && out.Q) step.rotation = confidence_rotation(step.rotation, *out.Q);
    return step;
}

inline std::filesystem::path dump_path(const std::filesystem::path& dir, int run, int iteration, size_t channel) {
    std::string name = "run" + std::to_string(run) + "_iter" + std::to_string(iteration);
    if (channel > 0) name += "_c" + std::to_string(channel);
    return dir / (name + ".pgm");
}

/// One inference run from `init`. Never sees the target pose; oracles carry
/// it inside the predictor.
inline PlaneResult infer_plane(const Volume& volume, const Predictor& predictor, const InferenceConfig& cfg,
                               const RigidTransform& init, int run_id = 0) {
    cfg.validate();
    PlaneResult res;
    res.pose = init;
    if (cfg.log_trajectory) res.trajectory.push_back({0, init, {}, {}});
    for (int i = 0; i < cfg.iterations; ++i) {
        try {
            const auto images = extract_inputs(volume, res.pose, cfg.plane_size, predictor.input_mode());
            if (cfg.dump_dir) {
                const auto shown = images.empty() ? std::vector<PlaneImage>{extract_plane(volume, res.pose, cfg.plane_size)}
                                                  : images;
                for (size_t c = 0; c < shown.size(); ++c) save_pgm16(shown[c], dump_path(*cfg.dump_dir, run_id, i, c));
            }
            const PredictorOutput out = predictor.predict(PredictionContext{volume, res.pose, images, cfg.plane_size});
            res.last_step = delta_from_output(out, cfg);
        } catch (const Error& e) {
            throw Error(e.kind(), "iteration " + std::to_string(i) + ": " + e.what());
        }
        res.pose = compose(res.pose, res.last_step);
        if (cfg.log_trajectory) res.trajectory.push_back({i + 1, res.pose, {}, {}});
    }
    return res;
}

/// Centre distance (voxels) and geodesic rotation angle (degrees).
struct PoseError {
    double dx = 0.0;
    double dtheta = 0.0;
};

inline PoseError pose_error(const RigidTransform& a, const RigidTransform& b) {
    return {norm(a.translation - b.translation), geodesic_angle(a.rotation, b.rotation)};
}

inline void annotate_trajectory(Trajectory& trajectory, const RigidTransform& gt) {
    for (auto& p : trajectory) {
        const PoseError e = pose_error(p.pose, gt);
        p.dx = e.dx;
        p.dtheta = e.dtheta;
    }
}

/// Translation mean and sign-aligned normalized quaternion mean.
inline RigidTransform average_transforms(const std::vector<RigidTransform>& poses) {
    if (poses.empty()) throw Error(ErrorKind::EmptyInput, "nothing to average");
    if (poses.size() == 1) return poses.front();
    Vec3 t;
    std::array<double, 4> q{};
    const UnitQuaternion& ref = poses.front().rotation;
    for (const auto& p : poses) {
        t = t + p.translation;
        const double sign = dot(p.rotation, ref) < 0.0 ? -1.0 : 1.0;
        const auto c = p.rotation.components();
        for (size_t i = 0; i < 4; ++i) q[i] += sign * c[i];
    }
    return {t * (1.0 / static_cast<double>(poses.size())), normalize_quat(q)};
}

struct MultiInitResult {
    RigidTransform pose;
    std::vector<RigidTransform> inits;
    std::vector<PlaneResult> runs;
    std::vector<bool> excluded;  // final centre left the volume
    std::vector<bool> outlier;   // in the volume but far from the medoid run
    bool low_confidence = false;
    double seconds = 0.0;
};

inline RigidTransform initial_pose(const Volume& volume, std::uint64_t seed, int k) {
    Rng rng = make_rng(seed, 0x1000 + static_cast<std::uint64_t>(k));
    return sample_random_transform(volume, rng);
}

inline double pose_distance(const RigidTransform& a, const RigidTransform& b) {
    return norm(a.translation - b.translation) + geodesic_angle(a.rotation, b.rotation);
}

/// Flags the non-excluded poses farther than radius from their medoid. Fewer
/// than three candidates give no medoid worth trusting, so nothing is flagged.
inline std::vector<bool> consensus_outliers(const std::vector<RigidTransform>& poses, const std::vector<bool>& excluded,
                                            double radius) {
    std::vector<size_t> inside;
    for (size_t i = 0; i < poses.size(); ++i)
        if (!excluded[i]) inside.push_back(i);
    std::vector<bool> outlier(poses.size(), false);
    if (inside.size() < 3) return outlier;
    size_t medoid = inside.front();
    double best = std::numeric_limits<double>::infinity();
    for (size_t i : inside) {
        double sum = 0.0;
        for (size_t j : inside) sum += pose_distance(poses[i], poses[j]);
        if (sum < best) best = sum, medoid = i;
    }
    for (size_t i : inside) outlier[i] = pose_distance(poses[medoid], poses[i]) > radius;
    return outlier;
}

/// Runs K independent inferences from random starts and averages the runs
/// whose final centre stays inside the volume, optionally minus outliers. If
/// none stays inside, the run with the smallest final step is returned and
/// flagged low-confidence.
inline MultiInitResult multi_init_infer(const Volume& volume, const Predictor& predictor, const InferenceConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    MultiInitResult res;
    const size_t k = static_cast<size_t>(cfg.init_count);
    for (size_t i = 0; i < k; ++i) res.inits.push_back(initial_pose(volume, cfg.seed, static_cast<int>(i)));
    res.runs.resize(k);
    parallel_for(k, cfg.jobs, [&](size_t i) {
        res.runs[i] = infer_plane(volume, predictor, cfg, res.inits[i], static_cast<int>(i));
    });

    std::vector<size_t> inside;
    res.excluded.assign(k, false);
    res.outlier.assign(k, false);
    for (size_t i = 0; i < k; ++i) {
        res.excluded[i] = !volume.contains(res.runs[i].pose.translation);
        if (!res.excluded[i]) inside.push_back(i);
    }
    if (cfg.consensus_radius) {
        std::vector<RigidTransform> finals;
        for (const auto& r : res.runs) finals.push_back(r.pose);
        res.outlier = consensus_outliers(finals, res.excluded, *cfg.consensus_radius);
    }
    std::vector<RigidTransform> kept;
    for (size_t i : inside)
        if (!res.outlier[i]) kept.push_back(res.runs[i].pose);
    if (kept.empty()) {
        size_t best = 0;
        for (size_t i = 1; i < k; ++i) {
            if (step_norm(res.runs[i].last_step) < step_norm(res.runs[best].last_step)) best = i;
        }
        res.pose = res.runs[best].pose;
        res.low_confidence = true;
    } else {
        res.pose = average_transforms(kept);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

inline void write_trajectories(const std::vector<Trajectory>& runs, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "run_id,iter,tx,ty,tz,qw,qx,qy,qz,dx,dtheta\n";
    out.precision(17);
    for (size_t r = 0; r < runs.size(); ++r) {
        for (const auto& p : runs[r]) {
            const auto q = p.pose.rotation.components();
            out << r << ',' << p.iteration << ',' << p.pose.translation.x << ',' << p.pose.translation.y << ','
                << p.pose.translation.z << ',' << q[0] << ',' << q[1] << ',' << q[2] << ',' << q[3] << ',';
            if (p.dx) out << *p.dx;
            out << ',';
            if (p.dtheta) out << *p.dtheta;
            out << '\n';
        }
    }
}

}  // namespace itn
