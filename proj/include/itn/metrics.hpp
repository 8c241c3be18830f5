#pragma once

// Plane evaluation: pose distances plus PSNR / SSIM between the predicted
// and target plane images, and mean +- std aggregation into report rows.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "itn/error.hpp"
#include "itn/transform.hpp"
#include "itn/volume.hpp"

namespace itn {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void check_same_size(const PlaneImage& a, const PlaneImage& b) {
    if (a.size != b.size || a.pixels.size() != b.pixels.size()) {
        throw Error(ErrorKind::SizeMismatch, "image sizes differ: " + std::to_string(a.size) + " vs " +
                                                 std::to_string(b.size));
    }
    if (a.pixels.empty()) throw Error(ErrorKind::EmptyInput, "empty image");
}

/// Normalized 1-D Gaussian of odd length n.
inline std::vector<double> gaussian_kernel(int n, double sigma) {
    std::vector<double> k(static_cast<size_t>(n));
    const double c = 0.5 * (n - 1);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        k[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

}  // namespace detail

/// 10 log10(1 / MSE) for images in [0, 1], capped at 100 dB.
inline double psnr(const PlaneImage& a, const PlaneImage& b) {
    detail::check_same_size(a, b);
    double mse = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.pixels.size());
    if (mse < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Mean local SSIM over 11x11 Gaussian windows (sigma 1.5), dynamic range 1,
/// valid positions only. Images smaller than 11 use one window of their
/// largest odd size.
inline double ssim(const PlaneImage& a, const PlaneImage& b) {
    detail::check_same_size(a, b);
    constexpr double C1 = (0.01 * 1.0) * (0.01 * 1.0);
    constexpr double C2 = (0.03 * 1.0) * (0.03 * 1.0);
    const int s = a.size;
    const int w = std::min(11, s % 2 == 1 ? s : s - 1);
    const auto k = detail::gaussian_kernel(w, 1.5);
    const int positions = s - w + 1;
    double total = 0.0;
    for (int i0 = 0; i0 < positions; ++i0) {
        for (int j0 = 0; j0 < positions; ++j0) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int di = 0; di < w; ++di) {
                for (int dj = 0; dj < w; ++dj) {
                    const double g = k[static_cast<size_t>(di)] * k[static_cast<size_t>(dj)];
                    const double x = a.at(i0 + di, j0 + dj);
                    const double y = b.at(i0 + di, j0 + dj);
                    ma += g * x;
                    mb += g * y;
                    saa += g * (x * x);
                    sbb += g * (y * y);
                    sab += g * (x * y);
                }
            }
            const double va = saa - ma * ma;
            const double vb = sbb - mb * mb;
            const double cov = sab - ma * mb;
            total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    return total / (static_cast<double>(positions) * positions);
}

/// Rescales both images with the same affine map so that their joint range
/// becomes [0, 1]. Two identical constant images map to zeros.
inline std::pair<PlaneImage, PlaneImage> joint_normalize(PlaneImage a, PlaneImage b) {
    detail::check_same_size(a, b);
    double lo = a.pixels[0], hi = a.pixels[0];
    for (const auto* img : {&a, &b}) {
        for (double v : img->pixels) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double range = hi - lo;
    for (auto* img : {&a, &b}) {
        for (double& v : img->pixels) v = range > 0.0 ? (v - lo) / range : 0.0;
    }
    return {std::move(a), std::move(b)};
}

struct PlaneEvalResult {
    double dx = 0.0;            // voxels
    double dtheta = 0.0;        // degrees, geodesic
    double normal_angle = 0.0;  // degrees, between plane normals
    double psnr = 0.0;          // dB
    double ssim = 0.0;
};

inline double normal_angle(const UnitQuaternion& a, const UnitQuaternion& b) {
    const Vec3 z{0.0, 0.0, 1.0};
    const Vec3 na = a.rotate(z);
    const Vec3 nb = b.rotate(z);
    return std::atan2(norm(cross(na, nb)), dot(na, nb)) * kRadToDeg;
}

inline PlaneEvalResult evaluate_plane(const RigidTransform& pred, const RigidTransform& gt, const Volume& volume,
                                      int plane_size) {
    PlaneEvalResult r;
    r.dx = norm(pred.translation - gt.translation);
    r.dtheta = geodesic_angle(pred.rotation, gt.rotation);
    r.normal_angle = normal_angle(pred.rotation, gt.rotation);
    const auto [a, b] = joint_normalize(extract_plane(volume, pred, plane_size), extract_plane(volume, gt, plane_size));
    r.psnr = psnr(a, b);
    r.ssim = ssim(a, b);
    return r;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};

/// Sorted summation makes the result independent of input order.
inline MeanStd mean_std(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorKind::EmptyInput, "no values to aggregate");
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    std::vector<double> sq;
    sq.reserve(values.size());
    for (double v : values) sq.push_back((v - mean) * (v - mean));
    std::sort(sq.begin(), sq.end());
    double var = 0.0;
    for (double v : sq) var += v;
    return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

struct ReportRow {
    std::string model_id;
    std::string plane_class;
    size_t n = 0;
    MeanStd dx, dtheta, psnr, ssim;
};

inline ReportRow aggregate(const std::vector<PlaneEvalResult>& results, std::string model_id,
                           std::string plane_class) {
    if (results.empty()) throw Error(ErrorKind::EmptyInput, "no results to aggregate");
    auto column = [&](double PlaneEvalResult::*field) {
        std::vector<double> v;
        v.reserve(results.size());
        for (const auto& r : results) v.push_back(r.*field);
        return mean_std(std::move(v));
    };
    return {std::move(model_id), std::move(plane_class), results.size(), column(&PlaneEvalResult::dx),
            column(&PlaneEvalResult::dtheta), column(&PlaneEvalResult::psnr), column(&PlaneEvalResult::ssim)};
}

inline const char* kReportHeader =
    "model_id,plane_class,n,dx_mean,dx_std,dtheta_mean,dtheta_std,psnr_mean,psnr_std,ssim_mean,ssim_std";

inline void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << kReportHeader << '\n';
    out.precision(6);
    for (const auto& r : rows) {
        out << r.model_id << ',' << r.plane_class << ',' << r.n << ',' << r.dx.mean << ',' << r.dx.std << ','
            << r.dtheta.mean << ',' << r.dtheta.std << ',' << r.psnr.mean << ',' << r.psnr.std << ',' << r.ssim.mean
            << ',' << r.ssim.std << '\n';
    }
}

}  // namespace itn
