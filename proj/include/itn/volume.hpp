#pragma once

// Scalar volumes and oblique plane extraction.
//
// World coordinates are voxel units with the origin at the volume centre, so
// index = world + ((nx-1)/2, (ny-1)/2, (nz-1)/2). A plane of size s has local
// pixel (i, j) at u = j - (s-1)/2, v = (s-1)/2 - i, w = 0; row s-1 is the
// bottom row.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "itn/error.hpp"
#include "itn/transform.hpp"

namespace itn {

class Volume {
public:
    Volume() = default;

    Volume(std::array<int, 3> dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
        for (int d : dims_) {
            if (d <= 0) throw Error(ErrorKind::SizeMismatch, "volume dimensions must be positive");
        }
        if (data_.size() != voxel_count()) {
            throw Error(ErrorKind::SizeMismatch, "volume data length does not match dims");
        }
    }

    explicit Volume(std::array<int, 3> dims, double fill = 0.0)
        : Volume(dims, std::vector<double>(static_cast<size_t>(dims[0]) * dims[1] * dims[2], fill)) {}

    const std::array<int, 3>& dims() const { return dims_; }
    double spacing() const { return 1.0; }
    size_t voxel_count() const { return static_cast<size_t>(dims_[0]) * dims_[1] * dims_[2]; }
    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    size_t index(int i, int j, int k) const {
        return static_cast<size_t>(i) + static_cast<size_t>(dims_[0]) * (static_cast<size_t>(j) + static_cast<size_t>(dims_[1]) * k);
    }
    double at(int i, int j, int k) const { return data_[index(i, j, k)]; }
    double& at(int i, int j, int k) { return data_[index(i, j, k)]; }

    Vec3 centre() const { return {0.5 * (dims_[0] - 1), 0.5 * (dims_[1] - 1), 0.5 * (dims_[2] - 1)}; }
    Vec3 world_to_index(Vec3 world) const { return world + centre(); }

    /// True if the world point lies inside the index box [0, n-1]^3.
    bool contains(Vec3 world) const {
        const Vec3 p = world_to_index(world);
        for (int a = 0; a < 3; ++a) {
            if (!(p[a] >= 0.0 && p[a] <= dims_[static_cast<size_t>(a)] - 1)) return false;
        }
        return true;
    }

    /// Trilinear interpolation at a continuous index position; 0 outside.
    double sample_index(Vec3 p) const {
        std::array<int, 3> base{};
        std::array<double, 3> frac{};
        for (int a = 0; a < 3; ++a) {
            const int n = dims_[static_cast<size_t>(a)];
            if (!(p[a] >= 0.0 && p[a] <= n - 1)) return 0.0;
            int b = static_cast<int>(std::floor(p[a]));
            if (b >= n - 1) b = std::max(n - 2, 0);
            base[static_cast<size_t>(a)] = b;
            frac[static_cast<size_t>(a)] = n == 1 ? 0.0 : p[a] - b;
        }
        const int x0 = base[0], y0 = base[1], z0 = base[2];
        const int x1 = std::min(x0 + 1, dims_[0] - 1);
        const int y1 = std::min(y0 + 1, dims_[1] - 1);
        const int z1 = std::min(z0 + 1, dims_[2] - 1);
        const double fx = frac[0], fy = frac[1], fz = frac[2];

        const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
        const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
        const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
        const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        return c0 * (1 - fz) + c1 * fz;
    }

    double sample_world(Vec3 world) const { return sample_index(world_to_index(world)); }

private:
    std::array<int, 3> dims_{0, 0, 0};
    std::vector<double> data_;
};

/// Square s x s image, row-major.
struct PlaneImage {
    int size = 0;
    std::vector<double> pixels;

    PlaneImage() = default;
    explicit PlaneImage(int s, double fill = 0.0) : size(s), pixels(static_cast<size_t>(s) * s, fill) {}

    double at(int i, int j) const { return pixels[static_cast<size_t>(i) * size + j]; }
    double& at(int i, int j) { return pixels[static_cast<size_t>(i) * size + j]; }

    friend bool operator==(const PlaneImage&, const PlaneImage&) = default;
};

/// The identity plane passes through the volume centre with normal along +z.
inline RigidTransform identity_plane(const Volume&) { return RigidTransform::identity(); }

inline Vec3 plane_pixel_to_local(int plane_size, int i, int j) {
    const double h = 0.5 * (plane_size - 1);
    return {j - h, h - i, 0.0};
}

inline Vec3 plane_pixel_to_world(const RigidTransform& t, int plane_size, int i, int j) {
    return t.apply(plane_pixel_to_local(plane_size, i, j));
}

inline PlaneImage extract_plane(const Volume& volume, const RigidTransform& t, int plane_size) {
    if (plane_size < 2) throw Error(ErrorKind::InputShape, "plane size must be at least 2");
    PlaneImage img(plane_size);
    // Walk the plane incrementally: origin of row 0 and unit steps along u and -v.
    const Vec3 du = t.rotation.rotate({1.0, 0.0, 0.0});
    const Vec3 dv = t.rotation.rotate({0.0, -1.0, 0.0});
    const Vec3 corner = volume.world_to_index(plane_pixel_to_world(t, plane_size, 0, 0));
    for (int i = 0; i < plane_size; ++i) {
        const Vec3 row = corner + static_cast<double>(i) * dv;
        for (int j = 0; j < plane_size; ++j) {
            img.at(i, j) = volume.sample_index(row + static_cast<double>(j) * du);
        }
    }
    return img;
}

/// The plane at T, then T rotated 90 degrees about its local u and local v axes.
inline std::array<PlaneImage, 3> extract_orthogonal_triplet(const Volume& volume, const RigidTransform& t,
                                                            int plane_size) {
    const double quarter = 0.5 * std::numbers::pi;
    const RigidTransform about_u{{}, UnitQuaternion::about_axis(0, quarter)};
    const RigidTransform about_v{{}, UnitQuaternion::about_axis(1, quarter)};
    return {extract_plane(volume, t, plane_size), extract_plane(volume, compose(t, about_u), plane_size),
            extract_plane(volume, compose(t, about_v), plane_size)};
}

// ---------------------------------------------------------------------------
// VOL1 file format: raw little-endian f32 data (x fastest) plus a JSON sidecar
// at "<raw path>.json" holding {"dims":[nx,ny,nz],"spacing":1.0,"dtype":"f32le"}.

namespace detail {

inline void write_f32le(std::ostream& out, float v) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline float read_f32le(const char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    return std::bit_cast<float>(bits);
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& raw) {
    return std::filesystem::path(raw.string() + ".json");
}

}  // namespace detail

inline void save_volume(const Volume& volume, const std::filesystem::path& raw_path) {
    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw Error(ErrorKind::Io, "cannot write " + raw_path.string());
    for (double v : volume.data()) detail::write_f32le(raw, static_cast<float>(v));
    if (!raw) throw Error(ErrorKind::Io, "short write to " + raw_path.string());

    nlohmann::ordered_json meta;
    meta["dims"] = volume.dims();
    meta["spacing"] = volume.spacing();
    meta["dtype"] = "f32le";
    std::ofstream side(detail::sidecar_path(raw_path), std::ios::trunc);
    if (!side) throw Error(ErrorKind::Io, "cannot write sidecar for " + raw_path.string());
    side << meta.dump(2) << "\n";
}

inline Volume load_volume(const std::filesystem::path& raw_path) {
    std::ifstream side(detail::sidecar_path(raw_path));
    if (!side) throw Error(ErrorKind::Io, "missing sidecar " + detail::sidecar_path(raw_path).string());
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, "bad sidecar: " + std::string(e.what()));
    }
    if (meta.value("dtype", "") != "f32le") throw Error(ErrorKind::Io, "unsupported dtype in sidecar");
    if (std::abs(meta.value("spacing", 1.0) - 1.0) > 1e-12) throw Error(ErrorKind::Io, "only isotropic unit spacing is supported");
    const auto dims = meta.at("dims").get<std::array<int, 3>>();

    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw Error(ErrorKind::Io, "cannot read " + raw_path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
    const size_t count = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    if (bytes.size() != count * 4) throw Error(ErrorKind::Io, "raw length does not match dims in " + raw_path.string());
    std::vector<double> data(count);
    for (size_t n = 0; n < count; ++n) data[n] = detail::read_f32le(bytes.data() + 4 * n);
    return Volume(dims, std::move(data));
}

/// 16-bit binary PGM, min-max normalized to [0, 65535].
inline void save_pgm16(const PlaneImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    const auto [lo_it, hi_it] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    const double lo = img.pixels.empty() ? 0.0 : *lo_it;
    const double range = img.pixels.empty() ? 0.0 : *hi_it - lo;
    out << "P5\n" << img.size << " " << img.size << "\n65535\n";
    for (double v : img.pixels) {
        const double unit = range > 0.0 ? (v - lo) / range : 0.0;
        const auto level = static_cast<std::uint16_t>(std::lround(unit * 65535.0));
        const char be[2] = {static_cast<char>(level >> 8), static_cast<char>(level & 0xff)};
        out.write(be, 2);
    }
}

inline void save_raw_f32(const PlaneImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    for (double v : img.pixels) detail::write_f32le(out, static_cast<float>(v));
}

}  // namespace itn
