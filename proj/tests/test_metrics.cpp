#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "itn/metrics.hpp"
#include "itn/phantom.hpp"
#include "test_util.hpp"

using namespace itn;

namespace {

PlaneImage random_image(std::mt19937_64& rng, int s, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    PlaneImage img(s);
    for (double& p : img.pixels) p = u(rng);
    return img;
}

PlaneImage smooth_image(int s) {
    PlaneImage img(s);
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) img.at(i, j) = 0.5 + 0.4 * std::sin(0.3 * i) * std::cos(0.2 * j);
    return img;
}

const Phantom& phantom() {
    static const Phantom p = [] {
        PhantomSpec spec;
        spec.seed = 21;
        return generate_phantom(spec);
    }();
    return p;
}

}  // namespace

TEST(Psnr, IdenticalIsCapped) {
    std::mt19937_64 rng(1);
    const auto a = random_image(rng, 32);
    EXPECT_EQ(psnr(a, a), 100.0);
}

TEST(Psnr, ConstantOffsetIsTwentyDecibels) {
    std::mt19937_64 rng(2);
    const auto a = random_image(rng, 32, 0.0, 0.9);
    PlaneImage b = a;
    for (double& p : b.pixels) p += 0.1;
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    EXPECT_NEAR(psnr(b, a), 20.0, 1e-9);
}

TEST(Psnr, RejectsSizeMismatch) {
    EXPECT_THROW(psnr(PlaneImage(8), PlaneImage(9)), Error);
    EXPECT_THROW(ssim(PlaneImage(16), PlaneImage(17)), Error);
}

TEST(Ssim, IdenticalIsExactlyOne) {
    std::mt19937_64 rng(3);
    for (int s : {5, 11, 32, 40}) {
        const auto a = random_image(rng, s);
        EXPECT_EQ(ssim(a, a), 1.0) << s;
    }
}

TEST(Ssim, AnticorrelatedIsNegative) {
    const auto a = smooth_image(32);
    PlaneImage b = a;
    for (double& p : b.pixels) p = 1.0 - p;
    EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, ConstantImagesMatchClosedForm) {
    // Zero variance everywhere leaves only the luminance term.
    const double x = 0.3, y = 0.7;
    const double c1 = 0.01 * 0.01;
    const double expected = (2 * x * y + c1) / (x * x + y * y + c1);
    EXPECT_NEAR(ssim(PlaneImage(20, x), PlaneImage(20, y)), expected, 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
    std::mt19937_64 rng(4);
    for (int n = 0; n < 50; ++n) {
        const auto a = random_image(rng, 24);
        const auto b = random_image(rng, 24);
        const double ab = ssim(a, b);
        EXPECT_DOUBLE_EQ(ab, ssim(b, a));
        EXPECT_LE(ab, 1.0);
        EXPECT_GE(ab, -1.0);
    }
}

TEST(Ssim, DegradesWithNoise) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    const auto a = smooth_image(32);
    double previous = 1.0;
    for (double sigma : {0.01, 0.05, 0.2}) {
        PlaneImage b = a;
        for (double& p : b.pixels) p += sigma * g(rng);
        const double v = ssim(a, b);
        EXPECT_LT(v, previous);
        previous = v;
    }
}

TEST(JointNormalize, MapsToUnitRange) {
    std::mt19937_64 rng(6);
    const auto [a, b] = joint_normalize(random_image(rng, 16, 3.0, 5.0), random_image(rng, 16, 4.0, 9.0));
    double lo = 1.0, hi = 0.0;
    for (const auto* img : {&a, &b}) {
        for (double v : img->pixels) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    EXPECT_DOUBLE_EQ(lo, 0.0);
    EXPECT_DOUBLE_EQ(hi, 1.0);
    const auto [c, d] = joint_normalize(PlaneImage(4, 2.0), PlaneImage(4, 2.0));
    EXPECT_EQ(psnr(c, d), 100.0);
    EXPECT_EQ(ssim(c, d), 1.0);
}

TEST(EvaluatePlane, IdenticalPoses) {
    const auto& p = phantom();
    const auto r = evaluate_plane(p.gt, p.gt, p.volume, 32);
    EXPECT_EQ(r.dx, 0.0);
    EXPECT_EQ(r.dtheta, 0.0);
    EXPECT_EQ(r.ssim, 1.0);
    EXPECT_EQ(r.psnr, 100.0);
}

TEST(EvaluatePlane, PureTranslation) {
    const auto& p = phantom();
    RigidTransform pred = p.gt;
    pred.translation = pred.translation + Vec3{3.0, 4.0, 0.0};
    const auto r = evaluate_plane(pred, p.gt, p.volume, 32);
    EXPECT_NEAR(r.dx, 5.0, 1e-12);
    EXPECT_EQ(r.dtheta, 0.0);
    EXPECT_LT(r.ssim, 1.0);
}

TEST(EvaluatePlane, QuarterTurnAboutX) {
    const auto& p = phantom();
    const RigidTransform gt = RigidTransform::identity();
    const RigidTransform pred{{}, UnitQuaternion::about_axis(0, std::numbers::pi / 2)};
    const auto r = evaluate_plane(pred, gt, p.volume, 32);
    EXPECT_NEAR(r.dtheta, 90.0, 1e-9);
    EXPECT_NEAR(r.normal_angle, 90.0, 1e-9);
    // In-plane spin leaves the normal alone.
    const auto spin = evaluate_plane({{}, UnitQuaternion::about_axis(2, 0.7)}, gt, p.volume, 32);
    EXPECT_NEAR(spin.normal_angle, 0.0, 1e-9);
    EXPECT_NEAR(spin.dtheta, 0.7 * kRadToDeg, 1e-9);
}

TEST(EvaluatePlane, InvariantUnderGlobalMotion) {
    const auto& p = phantom();
    std::mt19937_64 rng(7);
    for (int n = 0; n < 200; ++n) {
        const RigidTransform a = itn::testing::random_transform(rng, 15);
        const RigidTransform b = itn::testing::random_transform(rng, 15);
        const RigidTransform g = itn::testing::random_transform(rng, 15);
        const auto r1 = evaluate_plane(a, b, p.volume, 8);
        const auto r2 = evaluate_plane(compose(g, a), compose(g, b), p.volume, 8);
        EXPECT_NEAR(r1.dx, r2.dx, 1e-9);
        EXPECT_NEAR(r1.dtheta, r2.dtheta, 1e-9);
        EXPECT_NEAR(r1.normal_angle, r2.normal_angle, 1e-9);
    }
}

TEST(EvaluatePlane, DistancesAreMetricLike) {
    const auto& p = phantom();
    std::mt19937_64 rng(8);
    for (int n = 0; n < 200; ++n) {
        const RigidTransform a = itn::testing::random_transform(rng, 15);
        const RigidTransform b = itn::testing::random_transform(rng, 15);
        const RigidTransform c = itn::testing::random_transform(rng, 15);
        const auto ab = evaluate_plane(a, b, p.volume, 8);
        const auto ba = evaluate_plane(b, a, p.volume, 8);
        const auto bc = evaluate_plane(b, c, p.volume, 8);
        const auto ac = evaluate_plane(a, c, p.volume, 8);
        EXPECT_DOUBLE_EQ(ab.dx, ba.dx);
        EXPECT_NEAR(ab.dtheta, ba.dtheta, 1e-9);
        EXPECT_NEAR(ab.psnr, ba.psnr, 1e-9);
        EXPECT_NEAR(ab.ssim, ba.ssim, 1e-12);
        EXPECT_LE(ac.dx, ab.dx + bc.dx + 1e-9);
        EXPECT_LE(ac.dtheta, ab.dtheta + bc.dtheta + 1e-9);
        EXPECT_GE(ab.dtheta, 0.0);
        EXPECT_LE(ab.dtheta, 180.0);
    }
    // Zero up to quaternion sign.
    const UnitQuaternion q = itn::testing::random_quat(rng);
    const auto c = q.components();
    const UnitQuaternion neg = UnitQuaternion::from_components(-c[0], -c[1], -c[2], -c[3]);
    EXPECT_NEAR(geodesic_angle(q, neg), 0.0, 1e-12);
}

TEST(Aggregate, HandCases) {
    PlaneEvalResult a, b;
    a.dx = 3;
    b.dx = 5;
    const auto row = aggregate({a, b}, "quat", "TV");
    EXPECT_DOUBLE_EQ(row.dx.mean, 4.0);
    EXPECT_DOUBLE_EQ(row.dx.std, 1.0);
    EXPECT_EQ(row.n, 2u);
    const auto single = aggregate({a}, "quat", "TV");
    EXPECT_EQ(single.dx.std, 0.0);
    EXPECT_THROW(aggregate({}, "quat", "TV"), Error);
}

TEST(Aggregate, PermutationInvariant) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    std::vector<PlaneEvalResult> results(37);
    for (auto& r : results) r = {u(rng), u(rng), u(rng), u(rng), u(rng) / 100};
    const auto reference = aggregate(results, "m", "c");
    for (int n = 0; n < 20; ++n) {
        std::shuffle(results.begin(), results.end(), rng);
        const auto row = aggregate(results, "m", "c");
        EXPECT_EQ(row.dx.mean, reference.dx.mean);
        EXPECT_EQ(row.dx.std, reference.dx.std);
        EXPECT_EQ(row.dtheta.mean, reference.dtheta.mean);
        EXPECT_EQ(row.psnr.std, reference.psnr.std);
        EXPECT_EQ(row.ssim.mean, reference.ssim.mean);
    }
}

TEST(Report, CsvSchema) {
    const auto path = std::filesystem::temp_directory_path() / "itn_report_test.csv";
    PlaneEvalResult r{1, 2, 3, 4, 0.5};
    write_report({aggregate({r}, "M1", "TV"), aggregate({r, r}, "M2", "TV")}, path);
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    EXPECT_EQ(header, "model_id,plane_class,n,dx_mean,dx_std,dtheta_mean,dtheta_std,psnr_mean,psnr_std,ssim_mean,ssim_std");
    std::getline(in, line);
    EXPECT_EQ(line, "M1,TV,1,1,0,2,0,4,0,0.5,0");
    std::getline(in, line);
    EXPECT_EQ(line.substr(0, 6), "M2,TV,");
}
