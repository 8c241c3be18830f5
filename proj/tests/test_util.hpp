#pragma once

#include <cmath>
#include <random>

#include "itn/transform.hpp"

namespace itn::testing {

inline UnitQuaternion random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    return normalize_quat({g(rng), g(rng), g(rng), g(rng)});
}

inline RigidTransform random_transform(std::mt19937_64& rng, double extent = 30.0) {
    std::uniform_real_distribution<double> u(-extent, extent);
    return {{u(rng), u(rng), u(rng)}, random_quat(rng)};
}

/// Max abs difference, quaternions compared up to sign.
inline double quat_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
    const auto x = a.components();
    const auto y = b.components();
    double plus = 0.0, minus = 0.0;
    for (size_t i = 0; i < 4; ++i) {
        plus = std::max(plus, std::abs(x[i] - y[i]));
        minus = std::max(minus, std::abs(x[i] + y[i]));
    }
    return std::min(plus, minus);
}

inline double transform_distance(const RigidTransform& a, const RigidTransform& b) {
    const Vec3 d = a.translation - b.translation;
    return std::max({std::abs(d.x), std::abs(d.y), std::abs(d.z), quat_distance(a.rotation, b.rotation)});
}

}  // namespace itn::testing
