#pragma once

// Rigid-transform algebra for plane poses.
//
// A pose is a translation plus a unit quaternion. The translation lives in the
// world frame, whose origin is the volume centre. Relative transforms (deltas)
// are expressed in the local frame of the plane they are applied to.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "itn/error.hpp"

namespace itn {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    constexpr double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

    friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return s * a; }
    friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
    friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

/// Unit quaternion (w, x, y, z), Hamilton convention, kept in the w >= 0
/// hemisphere. Construct through the factories; `from_components` assumes the
/// caller already holds a unit quaternion.
class UnitQuaternion {
public:
    constexpr UnitQuaternion() = default;

    static constexpr UnitQuaternion identity() { return {}; }

    static constexpr UnitQuaternion from_components(double w, double x, double y, double z) {
        UnitQuaternion q;
        q.w_ = w;
        q.x_ = x;
        q.y_ = y;
        q.z_ = z;
        return q.canonical();
    }

    /// Rotation of `angle_rad` about `axis` (need not be normalized, must be nonzero).
    static UnitQuaternion from_axis_angle(Vec3 axis, double angle_rad) {
        const double n = norm(axis);
        if (n == 0.0) return identity();
        const double h = 0.5 * angle_rad;
        const double s = std::sin(h) / n;
        return from_components(std::cos(h), axis.x * s, axis.y * s, axis.z * s);
    }

    static UnitQuaternion about_axis(int axis, double angle_rad) {
        Vec3 a;
        a[axis] = 1.0;
        return from_axis_angle(a, angle_rad);
    }

    constexpr double w() const { return w_; }
    constexpr double x() const { return x_; }
    constexpr double y() const { return y_; }
    constexpr double z() const { return z_; }
    constexpr std::array<double, 4> components() const { return {w_, x_, y_, z_}; }
    constexpr Vec3 vec() const { return {x_, y_, z_}; }

    constexpr UnitQuaternion inverse() const {
        UnitQuaternion q;
        q.w_ = w_;
        q.x_ = -x_;
        q.y_ = -y_;
        q.z_ = -z_;
        return q;
    }

    /// Hamilton product, renormalized and canonicalized.
    friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
        const double w = a.w_ * b.w_ - a.x_ * b.x_ - a.y_ * b.y_ - a.z_ * b.z_;
        const double x = a.w_ * b.x_ + a.x_ * b.w_ + a.y_ * b.z_ - a.z_ * b.y_;
        const double y = a.w_ * b.y_ - a.x_ * b.z_ + a.y_ * b.w_ + a.z_ * b.x_;
        const double z = a.w_ * b.z_ + a.x_ * b.y_ - a.y_ * b.x_ + a.z_ * b.w_;
        const double n = std::sqrt(w * w + x * x + y * y + z * z);
        // Skip rescaling at rounding level so products with the identity are exact.
        if (std::abs(n - 1.0) <= 1e-14) return from_components(w, x, y, z);
        return from_components(w / n, x / n, y / n, z / n);
    }

    Vec3 rotate(Vec3 v) const {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        const Vec3 u = vec();
        const Vec3 t = 2.0 * cross(u, v);
        return v + w_ * t + cross(u, t);
    }

    /// Angle of rotation in radians, in [0, pi].
    double angle() const { return 2.0 * std::atan2(norm(vec()), std::abs(w_)); }

    friend constexpr bool operator==(const UnitQuaternion&, const UnitQuaternion&) = default;

private:
    constexpr UnitQuaternion canonical() const {
        if (w_ >= 0.0) return *this;
        UnitQuaternion q;
        q.w_ = -w_;
        q.x_ = -x_;
        q.y_ = -y_;
        q.z_ = -z_;
        return q;
    }

    double w_ = 1.0;
    double x_ = 0.0;
    double y_ = 0.0;
    double z_ = 0.0;
};

inline double dot(const UnitQuaternion& a, const UnitQuaternion& b) {
    return a.w() * b.w() + a.x() * b.x() + a.y() * b.y() + a.z() * b.z();
}

/// Row-major 3x3 rotation matrix.
struct RotationMatrix {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    constexpr double operator()(int r, int c) const { return m[static_cast<size_t>(r * 3 + c)]; }
    constexpr double& operator()(int r, int c) { return m[static_cast<size_t>(r * 3 + c)]; }

    Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }
    Vec3 column(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
    Vec3 apply(Vec3 v) const { return {dot(row(0), v), dot(row(1), v), dot(row(2), v)}; }

    double determinant() const {
        return dot(row(0), cross(row(1), row(2)));
    }
};

/// Max |R^T R - I| entry and |det R - 1|; both zero for a perfect rotation.
inline std::pair<double, double> rotation_defect(const RotationMatrix& r) {
    double worst = 0.0;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            const double g = dot(r.column(a), r.column(b)) - (a == b ? 1.0 : 0.0);
            worst = std::max(worst, std::abs(g));
        }
    }
    return {worst, std::abs(r.determinant() - 1.0)};
}

enum class EulerConvention { XYZ, YXZ, ZXY };

inline constexpr std::array<int, 3> axis_order(EulerConvention c) {
    switch (c) {
        case EulerConvention::XYZ: return {0, 1, 2};
        case EulerConvention::YXZ: return {1, 0, 2};
        case EulerConvention::ZXY: return {2, 0, 1};
    }
    return {0, 1, 2};
}

/// Convention whose first applied rotation is about `axis`.
inline constexpr EulerConvention convention_starting_with(int axis) {
    return axis == 0 ? EulerConvention::XYZ : (axis == 1 ? EulerConvention::YXZ : EulerConvention::ZXY);
}

inline const char* to_string(EulerConvention c) {
    switch (c) {
        case EulerConvention::XYZ: return "xyz";
        case EulerConvention::YXZ: return "yxz";
        case EulerConvention::ZXY: return "zxy";
    }
    return "?";
}

/// Intrinsic Euler angles in degrees. `deg` is indexed by axis (x, y, z),
/// not by position in the convention.
struct EulerAngles {
    std::array<double, 3> deg{0.0, 0.0, 0.0};
    EulerConvention convention = EulerConvention::XYZ;
    bool degenerate = false;
};

struct RigidTransform {
    Vec3 translation;
    UnitQuaternion rotation;

    static constexpr RigidTransform identity() { return {}; }

    /// Maps a point from this plane's local frame to the world frame.
    Vec3 apply(Vec3 local) const { return rotation.rotate(local) + translation; }

    friend constexpr bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

/// T_out = base (+) delta, with delta expressed in the base plane's frame.
inline RigidTransform compose(const RigidTransform& base, const RigidTransform& delta) {
    return {base.translation + base.rotation.rotate(delta.translation), base.rotation * delta.rotation};
}

/// Returns the delta that moves `base` onto `target`: compose(base, delta) == target.
inline RigidTransform inverse_compose(const RigidTransform& target, const RigidTransform& base) {
    const UnitQuaternion inv = base.rotation.inverse();
    return {inv.rotate(target.translation - base.translation), inv * target.rotation};
}

inline RotationMatrix quat_to_matrix(const UnitQuaternion& q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    RotationMatrix r;
    r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
           2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
           2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
    return r;
}

/// Shepperd's method. Throws NotARotation if `r` is not orthonormal with
/// det +1 to 1e-6.
inline UnitQuaternion matrix_to_quat(const RotationMatrix& r) {
    const auto [ortho, det] = rotation_defect(r);
    if (!(ortho <= 1e-6) || !(det <= 1e-6)) {
        std::ostringstream msg;
        msg << "orthogonality defect " << ortho << ", determinant defect " << det;
        throw Error(ErrorKind::NotARotation, msg.str());
    }
    const double trace = r(0, 0) + r(1, 1) + r(2, 2);
    double w, x, y, z;
    if (trace > 0.0) {
        const double s = 2.0 * std::sqrt(1.0 + trace);
        w = 0.25 * s;
        x = (r(2, 1) - r(1, 2)) / s;
        y = (r(0, 2) - r(2, 0)) / s;
        z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
        w = (r(2, 1) - r(1, 2)) / s;
        x = 0.25 * s;
        y = (r(0, 1) + r(1, 0)) / s;
        z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
        w = (r(0, 2) - r(2, 0)) / s;
        x = (r(0, 1) + r(1, 0)) / s;
        y = 0.25 * s;
        z = (r(1, 2) + r(2, 1)) / s;
    } else {
        const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
        w = (r(1, 0) - r(0, 1)) / s;
        x = (r(0, 2) + r(2, 0)) / s;
        y = (r(1, 2) + r(2, 1)) / s;
        z = 0.25 * s;
    }
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    return UnitQuaternion::from_components(w / n, x / n, y / n, z / n);
}

namespace detail {

inline double wrap_degrees(double deg) {
    // atan2 yields [-180, 180]; the external range is (-180, 180].
    return deg <= -180.0 ? deg + 360.0 : deg;
}

}  // namespace detail

/// Decomposes `q` as R = R_a(first) * R_b(second) * R_c(third) for the axis
/// order of `convention`. Within 1e-6 of gimbal lock the third angle is set
/// to zero and the result is flagged degenerate.
inline EulerAngles quat_to_euler(const UnitQuaternion& q, EulerConvention convention) {
    const RotationMatrix r = quat_to_matrix(q);
    const auto [i, j, k] = axis_order(convention);
    const double parity = convention == EulerConvention::YXZ ? -1.0 : 1.0;

    const double cos_mid = std::hypot(r(i, i), r(i, j));
    const double mid = std::atan2(parity * r(i, k), cos_mid);
    double first, third;
    bool degenerate = false;
    if (cos_mid < 1e-6) {
        degenerate = true;
        third = 0.0;
        first = std::atan2(parity * r(k, j), r(j, j));
    } else {
        first = std::atan2(-parity * r(j, k), r(k, k));
        third = std::atan2(-parity * r(i, j), r(i, i));
    }

    EulerAngles e;
    e.convention = convention;
    e.degenerate = degenerate;
    e.deg[static_cast<size_t>(i)] = detail::wrap_degrees(first * kRadToDeg);
    e.deg[static_cast<size_t>(j)] = mid * kRadToDeg;
    e.deg[static_cast<size_t>(k)] = detail::wrap_degrees(third * kRadToDeg);
    return e;
}

inline UnitQuaternion euler_to_quat(const EulerAngles& e) {
    const auto order = axis_order(e.convention);
    UnitQuaternion q;
    for (int axis : order) {
        q = q * UnitQuaternion::about_axis(axis, e.deg[static_cast<size_t>(axis)] * kDegToRad);
    }
    return q;
}

/// Projects a raw 4-vector onto the unit quaternions (w >= 0 hemisphere).
inline UnitQuaternion normalize_quat(const std::array<double, 4>& raw) {
    const double n = std::sqrt(raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3]);
    if (!(n > 1e-12) || !std::isfinite(n)) {
        throw Error(ErrorKind::DegenerateQuaternion, "norm " + std::to_string(n));
    }
    return UnitQuaternion::from_components(raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n);
}

namespace detail {

inline RotationMatrix rows_to_matrix(const std::array<Vec3, 3>& rows) {
    RotationMatrix out;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out(r, c) = rows[static_cast<size_t>(r)][c];
    }
    return out;
}

/// Ordered Gram-Schmidt over the rows; the last row is negated when the
/// input is a reflection. Throws on (near) rank deficiency.
inline std::array<Vec3, 3> gram_schmidt(std::array<Vec3, 3> rows) {
    for (int r = 0; r < 3; ++r) {
        const double original = norm(rows[static_cast<size_t>(r)]);
        Vec3 v = rows[static_cast<size_t>(r)];
        for (int p = 0; p < r; ++p) {
            v = v - dot(v, rows[static_cast<size_t>(p)]) * rows[static_cast<size_t>(p)];
        }
        const double n = norm(v);
        if (!std::isfinite(n) || !(original > 0.0) || n <= 1e-9 * original) {
            throw Error(ErrorKind::DegenerateRotation, "row " + std::to_string(r) + " is linearly dependent");
        }
        rows[static_cast<size_t>(r)] = v / n;
    }
    if (dot(rows[2], cross(rows[0], rows[1])) < 0.0) rows[2] = -rows[2];
    return rows;
}

}  // namespace detail

/// Projects a raw 3x3 prediction onto the rotations. Inputs with positive
/// determinant go through the Newton polar iteration X <- (X + X^-T) / 2,
/// which converges to the Frobenius-nearest rotation. Reflections fall back
/// to Gram-Schmidt with the last axis negated.
inline RotationMatrix orthogonalize_matrix(const std::array<double, 9>& raw) {
    const std::array<Vec3, 3> rows{Vec3{raw[0], raw[1], raw[2]}, Vec3{raw[3], raw[4], raw[5]},
                                   Vec3{raw[6], raw[7], raw[8]}};
    const std::array<Vec3, 3> fallback = detail::gram_schmidt(rows);
    if (dot(rows[2], cross(rows[0], rows[1])) <= 0.0) return detail::rows_to_matrix(fallback);

    std::array<Vec3, 3> x = rows;
    for (int iter = 0; iter < 100; ++iter) {
        const double det = dot(x[0], cross(x[1], x[2]));
        if (!(det > 0.0) || !std::isfinite(det)) return detail::rows_to_matrix(fallback);
        // Rows of X^-T are the cofactor rows divided by det.
        const std::array<Vec3, 3> inv_t{cross(x[1], x[2]) / det, cross(x[2], x[0]) / det, cross(x[0], x[1]) / det};
        double change = 0.0;
        for (size_t r = 0; r < 3; ++r) {
            const Vec3 next = 0.5 * (x[r] + inv_t[r]);
            change = std::max(change, norm(next - x[r]));
            x[r] = next;
        }
        if (change < 1e-15) break;
    }
    // Final Gram-Schmidt pass only removes rounding-level drift.
    return detail::rows_to_matrix(detail::gram_schmidt(x));
}

/// World positions of the plane centre, bottom-left and bottom-right corners.
struct AnchorPoints {
    Vec3 a1;
    Vec3 a2;
    Vec3 a3;

    std::array<double, 9> flat() const { return {a1.x, a1.y, a1.z, a2.x, a2.y, a2.z, a3.x, a3.y, a3.z}; }
    static AnchorPoints from_flat(const std::array<double, 9>& v) {
        return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, {v[6], v[7], v[8]}};
    }
};

/// Local-frame corner offsets for a plane of `plane_size` pixels.
inline AnchorPoints local_anchors(int plane_size) {
    const double h = 0.5 * (plane_size - 1);
    return {{0.0, 0.0, 0.0}, {-h, -h, 0.0}, {h, -h, 0.0}};
}

inline AnchorPoints transform_to_anchors(const RigidTransform& t, int plane_size) {
    const AnchorPoints local = local_anchors(plane_size);
    return {t.apply(local.a1), t.apply(local.a2), t.apply(local.a3)};
}

/// Recovers a rigid transform from (possibly noisy) anchors: +u along A3-A2,
/// +v along the in-plane part of A1 - mid(A2, A3), normal = u x v.
inline RigidTransform anchors_to_transform(const AnchorPoints& a, int plane_size) {
    if (plane_size <= 1) throw Error(ErrorKind::DegenerateAnchors, "plane size must exceed 1");
    const Vec3 base = a.a3 - a.a2;
    const Vec3 up = a.a1 - 0.5 * (a.a2 + a.a3);
    const double scale = std::max(norm(base), norm(up));
    const double base_len = norm(base);
    if (!std::isfinite(scale) || !(base_len > 1e-9 * std::max(scale, 1.0))) {
        throw Error(ErrorKind::DegenerateAnchors, "bottom corners coincide");
    }
    const Vec3 u = base / base_len;
    const Vec3 v_raw = up - dot(up, u) * u;
    const double v_len = norm(v_raw);
    if (!(v_len > 1e-9 * std::max(scale, 1.0))) {
        throw Error(ErrorKind::DegenerateAnchors, "anchors are collinear");
    }
    const Vec3 v = v_raw / v_len;
    const Vec3 n = cross(u, v);
    // Columns are the local axes expressed in world coordinates.
    const RotationMatrix frame = orthogonalize_matrix({u.x, v.x, n.x, u.y, v.y, n.y, u.z, v.z, n.z});
    return {a.a1, matrix_to_quat(frame)};
}

/// Rotation angle in degrees between two orientations, in [0, 180].
/// Evaluated as 4 atan2(|q1 - q2|, |q1 + q2|) with q2 sign-aligned to q1,
/// which equals 2 acos(|<q1, q2>|) but is exact for equal inputs and stays
/// accurate near zero.
inline double geodesic_angle(const UnitQuaternion& q1, const UnitQuaternion& q2) {
    const auto a = q1.components();
    auto b = q2.components();
    if (a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3] < 0.0) {
        for (double& v : b) v = -v;
    }
    double diff = 0.0, sum = 0.0;
    for (size_t i = 0; i < 4; ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        sum += (a[i] + b[i]) * (a[i] + b[i]);
    }
    return 4.0 * std::atan2(std::sqrt(diff), std::sqrt(sum)) * kRadToDeg;
}

// Text record: "tx ty tz qw qx qy qz", 17 significant digits.

inline std::string to_record(const RigidTransform& t) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g", t.translation.x,
                  t.translation.y, t.translation.z, t.rotation.w(), t.rotation.x(), t.rotation.y(),
                  t.rotation.z());
    return buf;
}

inline RigidTransform parse_record(const std::string& line) {
    std::istringstream in(line);
    std::array<double, 7> v{};
    for (double& x : v) {
        if (!(in >> x)) throw Error(ErrorKind::Io, "malformed transform record '" + line + "'");
    }
    RigidTransform t;
    t.translation = {v[0], v[1], v[2]};
    t.rotation = normalize_quat({v[3], v[4], v[5], v[6]});
    return t;
}

inline std::ostream& operator<<(std::ostream& os, const RigidTransform& t) { return os << to_record(t); }

}  // namespace itn
