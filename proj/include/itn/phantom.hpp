#pragma once

// Synthetic volumes with a known target plane, pose sampling and training
// sample construction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "itn/error.hpp"
#include "itn/rng.hpp"
#include "itn/transform.hpp"
#include "itn/volume.hpp"

namespace itn {

/// Gaussian blob placed in the target plane's frame. The standard deviation
/// along target-frame axis a is width * elongation[a].
struct Blob {
    Vec3 offset;
    double amplitude = 1.0;
    double width = 3.0;
    Vec3 elongation{1.0, 1.0, 1.0};
};

struct PhantomSpec {
    std::array<int, 3> dims{64, 64, 64};
    std::uint64_t seed = 0;
    std::string layout = "default";
    double noise_sigma = 0.01;
    /// Ellipsoid mask semi-axes as a fraction of the half-dimensions.
    double mask_fraction = 0.95;
    /// Overrides the named layout when non-empty.
    std::vector<Blob> blobs;
    /// Pins the ground-truth pose instead of sampling it (tests, diagnostics).
    std::optional<RigidTransform> forced_gt;
};

/// Named blob constellations. Both are asymmetric: distinct amplitudes and
/// several off-plane blobs so every pose gives a different image.
inline std::vector<Blob> layout_blobs(const std::string& layout) {
    if (layout == "default") {
        return {
            {{0, 0, 0}, 1.00, 4.0},    {{10, 4, 0}, 0.80, 3.0},    {{-8, 9, 0}, 0.60, 3.5},
            {{-12, -7, 0}, 0.90, 2.5}, {{5, -12, 0}, 0.50, 4.5},   {{3, 14, 6}, 0.70, 5.0},
            {{-15, 2, -8}, 0.40, 5.0}, {{14, -5, -5}, 0.30, 4.0},  {{-4, -3, 11}, 0.65, 5.0},
        };
    }
    if (layout == "alternate") {
        return {
            {{0, 0, 0}, 0.90, 3.5},    {{-11, 3, 0}, 1.00, 3.0},   {{7, 10, 0}, 0.55, 4.0},
            {{12, -9, 0}, 0.75, 2.5},  {{-4, -13, 0}, 0.45, 4.5},  {{-9, 12, -7}, 0.60, 5.0},
            {{16, 4, 6}, 0.35, 5.0},   {{-14, -8, 5}, 0.50, 4.0},  {{2, 6, -12}, 0.70, 5.0},
        };
    }
    if (layout == "elongated") {
        return {
            {{0, 0, 0}, 1.00, 3.0, {2.5, 1, 1}},     {{10, 4, 0}, 0.80, 2.5, {1, 2.5, 1}},
            {{-8, 9, 0}, 0.60, 3.0, {1, 1, 2.5}},    {{-12, -7, 0}, 0.90, 2.0, {3, 1, 1}},
            {{5, -12, 0}, 0.50, 3.0, {1, 2.5, 1}},   {{3, 14, 6}, 0.70, 3.0, {2, 1, 2}},
            {{-15, 2, -8}, 0.40, 3.5, {1, 2, 1}},    {{14, -5, -5}, 0.30, 3.0, {1, 1, 2.5}},
            {{-4, -3, 11}, 0.65, 3.5, {2, 2, 1}},
        };
    }
    if (layout == "dense" || layout == "dense-iso") {
        // Fixed pseudo-random constellation filling the head; the same for every phantom.
        std::vector<Blob> blobs = layout_blobs("elongated");
        Rng rng(0xB10B5);
        std::uniform_real_distribution<double> u(-1.0, 1.0), amp(0.3, 1.0), width(2.0, 3.5);
        std::uniform_int_distribution<int> axis(0, 2);
        constexpr int extra = 30;
        while (static_cast<int>(blobs.size()) < 9 + extra) {
            const Vec3 o{26 * u(rng), 26 * u(rng), 26 * u(rng)};
            if (norm(o) > 26) continue;
            Blob b{o, amp(rng), width(rng), {1, 1, 1}};
            if (layout == "dense") b.elongation[axis(rng)] = 2.5;
            blobs.push_back(b);
        }
        return blobs;
    }
    throw Error(ErrorKind::InvalidPhantomSpec, "unknown layout '" + layout + "'");
}

inline std::vector<Blob> resolve_blobs(const PhantomSpec& spec) {
    return spec.blobs.empty() ? layout_blobs(spec.layout) : spec.blobs;
}

/// Centre in the middle 60% of each axis, rotation within +-45 degrees about
/// each axis (xyz Euler convention).
inline RigidTransform sample_random_transform(const std::array<int, 3>& dims, Rng& rng) {
    RigidTransform t;
    for (int a = 0; a < 3; ++a) {
        const double half = 0.3 * dims[static_cast<size_t>(a)];
        std::uniform_real_distribution<double> u(-half, half);
        t.translation[a] = u(rng);
    }
    std::uniform_real_distribution<double> angle(-45.0, 45.0);
    EulerAngles e;
    e.convention = EulerConvention::XYZ;
    for (double& d : e.deg) d = angle(rng);
    t.rotation = euler_to_quat(e);
    return t;
}

inline RigidTransform sample_random_transform(const Volume& volume, Rng& rng) {
    return sample_random_transform(volume.dims(), rng);
}

struct Phantom {
    Volume volume;
    RigidTransform gt;
};

inline Phantom generate_phantom(const PhantomSpec& spec) {
    for (int d : spec.dims) {
        if (d < 32) throw Error(ErrorKind::InvalidPhantomSpec, "each dimension must be at least 32");
    }
    if (!(spec.noise_sigma >= 0.0)) throw Error(ErrorKind::InvalidPhantomSpec, "noise_sigma must be >= 0");
    if (!(spec.mask_fraction > 0.0)) throw Error(ErrorKind::InvalidPhantomSpec, "mask_fraction must be > 0");
    const std::vector<Blob> blobs = resolve_blobs(spec);
    if (blobs.empty()) throw Error(ErrorKind::InvalidPhantomSpec, "no blobs");
    for (const Blob& b : blobs) {
        if (!(b.width > 0.0)) throw Error(ErrorKind::InvalidPhantomSpec, "blob width must be > 0");
        for (int a = 0; a < 3; ++a) {
            if (!(b.elongation[a] > 0.0)) throw Error(ErrorKind::InvalidPhantomSpec, "blob elongation must be > 0");
        }
    }

    Rng pose_rng = make_rng(spec.seed, 0);
    const RigidTransform gt = spec.forced_gt ? *spec.forced_gt : sample_random_transform(spec.dims, pose_rng);

    Volume volume(spec.dims);
    const Vec3 centre = volume.centre();
    const Vec3 semi = spec.mask_fraction * centre;
    auto inside_mask = [&](Vec3 idx) {
        const Vec3 d = idx - centre;
        const double r = (d.x * d.x) / (semi.x * semi.x) + (d.y * d.y) / (semi.y * semi.y) +
                         (d.z * d.z) / (semi.z * semi.z);
        return r <= 1.0;
    };

    struct Placed {
        Vec3 index;
        double amplitude;
        Vec3 inv_two_var;  // per target-frame axis
    };
    // Rows are the target-frame axes in index space.
    const RotationMatrix frame = quat_to_matrix(gt.rotation.inverse());
    std::vector<Placed> placed;
    bool any_inside = false;
    for (const Blob& b : blobs) {
        const Vec3 idx = volume.world_to_index(gt.apply(b.offset));
        any_inside = any_inside || inside_mask(idx);
        Vec3 inv;
        for (int a = 0; a < 3; ++a) {
            const double sd = b.width * b.elongation[a];
            inv[a] = 1.0 / (2.0 * sd * sd);
        }
        placed.push_back({idx, b.amplitude, inv});
    }
    if (!any_inside) throw Error(ErrorKind::InvalidPhantomSpec, "blob constellation lies outside the head mask");

    Rng noise_rng = make_rng(spec.seed, 1);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    const auto& dims = spec.dims;
    for (int k = 0; k < dims[2]; ++k) {
        for (int j = 0; j < dims[1]; ++j) {
            for (int i = 0; i < dims[0]; ++i) {
                const Vec3 p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
                double value = 0.0;
                for (const Placed& b : placed) {
                    const Vec3 d = frame.apply(p - b.index);
                    value += b.amplitude * std::exp(-(d.x * d.x * b.inv_two_var.x + d.y * d.y * b.inv_two_var.y +
                                                      d.z * d.z * b.inv_two_var.z));
                }
                // Draw noise for every voxel so the stream does not depend on the mask.
                if (spec.noise_sigma > 0.0) value += noise(noise_rng);
                volume.at(i, j, k) = inside_mask(p) ? value : 0.0;
            }
        }
    }
    return {std::move(volume), gt};
}

// ---------------------------------------------------------------------------
// Class labels.

/// Signed axis classes in the order (+x, -x, +y, -y, +z, -z), i.e.
/// (c1+, c1-, c2+, c2-, c3+, c3-) for translation and (k1+, ..., k3-) for
/// rotation.
enum class AxisClass : int { XPos = 0, XNeg, YPos, YNeg, ZPos, ZNeg };

constexpr int axis_of(AxisClass c) { return static_cast<int>(c) / 2; }
constexpr bool is_positive(AxisClass c) { return static_cast<int>(c) % 2 == 0; }
constexpr AxisClass make_class(int axis, bool positive) { return static_cast<AxisClass>(2 * axis + (positive ? 0 : 1)); }
constexpr size_t class_index(AxisClass c) { return static_cast<size_t>(c); }

inline std::string translation_class_name(AxisClass c) {
    return "c" + std::to_string(axis_of(c) + 1) + (is_positive(c) ? "+" : "-");
}
inline std::string rotation_class_name(AxisClass c) {
    return "k" + std::to_string(axis_of(c) + 1) + (is_positive(c) ? "+" : "-");
}

struct ClassLabels {
    AxisClass translation = AxisClass::XPos;
    AxisClass rotation = AxisClass::XPos;
    bool translation_degenerate = false;
    bool rotation_degenerate = false;

    bool degenerate() const { return translation_degenerate || rotation_degenerate; }
};

/// First-axis angle (degrees) of `q` under the convention that starts with
/// each axis: x from xyz, y from yxz, z from zxy.
inline std::array<double, 3> leading_axis_angles(const UnitQuaternion& q) {
    std::array<double, 3> out{};
    for (int axis = 0; axis < 3; ++axis) {
        out[static_cast<size_t>(axis)] = quat_to_euler(q, convention_starting_with(axis)).deg[static_cast<size_t>(axis)];
    }
    return out;
}

namespace detail {

/// Largest |v[a]|, ties to the lower axis; zero counts as positive.
inline AxisClass dominant_signed_axis(const std::array<double, 3>& v, bool& all_zero) {
    int best = 0;
    for (int a = 1; a < 3; ++a) {
        if (std::abs(v[static_cast<size_t>(a)]) > std::abs(v[static_cast<size_t>(best)])) best = a;
    }
    all_zero = v[static_cast<size_t>(best)] == 0.0;
    return make_class(best, !(v[static_cast<size_t>(best)] < 0.0));
}

}  // namespace detail

inline ClassLabels compute_class_labels(const RigidTransform& delta) {
    ClassLabels labels;
    const std::array<double, 3> t{delta.translation.x, delta.translation.y, delta.translation.z};
    labels.translation = detail::dominant_signed_axis(t, labels.translation_degenerate);
    labels.rotation = detail::dominant_signed_axis(leading_axis_angles(delta.rotation), labels.rotation_degenerate);
    return labels;
}

// ---------------------------------------------------------------------------
// Training samples.

enum class InputMode { None, Single, Triplet };

inline std::vector<PlaneImage> extract_inputs(const Volume& volume, const RigidTransform& t, int plane_size,
                                              InputMode mode) {
    switch (mode) {
        case InputMode::None: return {};
        case InputMode::Single: return {extract_plane(volume, t, plane_size)};
        case InputMode::Triplet: {
            auto trip = extract_orthogonal_triplet(volume, t, plane_size);
            return {std::move(trip[0]), std::move(trip[1]), std::move(trip[2])};
        }
    }
    return {};
}

struct TrainingSample {
    std::vector<PlaneImage> images;
    RigidTransform pose;      // T, the sampled plane
    RigidTransform delta_gt;  // moves T onto the target plane, in T's frame
    ClassLabels labels;
};

inline TrainingSample make_training_sample_at(const Volume& volume, const RigidTransform& gt,
                                              const RigidTransform& pose, int plane_size,
                                              InputMode mode = InputMode::Single) {
    TrainingSample s;
    s.images = extract_inputs(volume, pose, plane_size, mode);
    s.pose = pose;
    s.delta_gt = inverse_compose(gt, pose);
    s.labels = compute_class_labels(s.delta_gt);
    return s;
}

inline TrainingSample make_training_sample(const Volume& volume, const RigidTransform& gt, int plane_size, Rng& rng,
                                           InputMode mode = InputMode::Single) {
    const RigidTransform pose = sample_random_transform(volume, rng);
    return make_training_sample_at(volume, gt, pose, plane_size, mode);
}

// ---------------------------------------------------------------------------
// JSON and manifest I/O.

inline void to_json(nlohmann::json& j, const Blob& b) {
    j = {{"offset", {b.offset.x, b.offset.y, b.offset.z}},
         {"amplitude", b.amplitude},
         {"width", b.width},
         {"elongation", {b.elongation.x, b.elongation.y, b.elongation.z}}};
}

inline void from_json(const nlohmann::json& j, Blob& b) {
    const auto o = j.at("offset").get<std::array<double, 3>>();
    b.offset = {o[0], o[1], o[2]};
    b.amplitude = j.at("amplitude").get<double>();
    b.width = j.at("width").get<double>();
    if (j.contains("elongation")) {
        const auto e = j.at("elongation").get<std::array<double, 3>>();
        b.elongation = {e[0], e[1], e[2]};
    } else {
        b.elongation = {1.0, 1.0, 1.0};
    }
}

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = nlohmann::json{{"dims", s.dims},
                       {"seed", s.seed},
                       {"layout", s.layout},
                       {"noise_sigma", s.noise_sigma},
                       {"mask_fraction", s.mask_fraction}};
    if (!s.blobs.empty()) j["blobs"] = s.blobs;
}

inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
    PhantomSpec d;
    s.dims = j.value("dims", d.dims);
    s.seed = j.value("seed", d.seed);
    s.layout = j.value("layout", d.layout);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.mask_fraction = j.value("mask_fraction", d.mask_fraction);
    s.blobs = j.contains("blobs") ? j.at("blobs").get<std::vector<Blob>>() : std::vector<Blob>{};
}

struct ManifestEntry {
    std::string id;
    std::string volume_path;  // relative to the manifest directory unless absolute
    RigidTransform gt;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "id,volume_path,transform\n";
    for (const auto& e : entries) out << e.id << "," << e.volume_path << "," << to_record(e.gt) << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot read manifest " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "id,volume_path,transform") throw Error(ErrorKind::Io, "unexpected manifest header in " + path.string());
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto a = line.find(',');
        const auto b = line.find(',', a == std::string::npos ? a : a + 1);
        if (a == std::string::npos || b == std::string::npos) throw Error(ErrorKind::Io, "malformed manifest row '" + line + "'");
        entries.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), parse_record(line.substr(b + 1))});
    }
    return entries;
}

inline std::filesystem::path resolve_volume_path(const std::filesystem::path& manifest, const ManifestEntry& e) {
    const std::filesystem::path p(e.volume_path);
    return p.is_absolute() ? p : manifest.parent_path() / p;
}

}  // namespace itn
