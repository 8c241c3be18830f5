#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "itn/network.hpp"
#include "itn/train.hpp"
#include "test_util.hpp"

using namespace itn;

namespace {

std::vector<PlaneImage> random_images(std::mt19937_64& rng, int count, int size) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<PlaneImage> out;
    for (int c = 0; c < count; ++c) {
        PlaneImage img(size);
        for (double& p : img.pixels) p = u(rng);
        out.push_back(std::move(img));
    }
    return out;
}

double sum(const Probabilities& p) {
    double s = 0.0;
    for (double v : p) s += v;
    return s;
}

constexpr Representation kModes[] = {Representation::Quat, Representation::Euler, Representation::Matrix,
                                     Representation::Anchors};

}  // namespace

TEST(Regressor, ZeroModelGivesZeroAndUniform) {
    Regressor<float> model(make_architecture(32, Representation::Quat, parse_heads("M4")));
    const auto out = model.forward(std::vector<PlaneImage>{PlaneImage(32)});
    EXPECT_EQ(out.t.x, 0.0);
    EXPECT_EQ(out.t.y, 0.0);
    EXPECT_EQ(out.t.z, 0.0);
    for (double q : out.q_raw) EXPECT_EQ(q, 0.0);
    ASSERT_TRUE(out.P && out.Q);
    for (double p : *out.P) EXPECT_DOUBLE_EQ(p, 1.0 / 6.0);
    for (double q : *out.Q) EXPECT_DOUBLE_EQ(q, 1.0 / 6.0);
}

TEST(Regressor, HeadsFollowVariant) {
    for (const char* name : {"M1", "M2", "M3", "M4", "M4+"}) {
        const Heads h = parse_heads(name);
        Regressor<float> model(make_architecture(32, Representation::Quat, h));
        const auto out = model.forward(std::vector<PlaneImage>(h.triplet ? 3 : 1, PlaneImage(32)));
        EXPECT_EQ(out.P.has_value(), h.p) << name;
        EXPECT_EQ(out.Q.has_value(), h.q) << name;
        EXPECT_EQ(to_string(h), name);
    }
}

TEST(Regressor, ForwardIsDeterministic) {
    std::mt19937_64 rng(1);
    Regressor<float> model(make_architecture(32, Representation::Matrix, parse_heads("M4")));
    model.initialize(7, 0.1);
    const auto images = random_images(rng, 1, 32);
    const auto a = model.forward(images);
    const auto b = model.forward(images);
    EXPECT_EQ(a.t.x, b.t.x);
    EXPECT_EQ(a.r_raw, b.r_raw);
    EXPECT_EQ(*a.P, *b.P);
    EXPECT_EQ(*a.Q, *b.Q);

    Regressor<float> again(make_architecture(32, Representation::Matrix, parse_heads("M4")));
    again.initialize(7, 0.1);
    EXPECT_TRUE(std::equal(model.parameters().begin(), model.parameters().end(), again.parameters().begin()));
}

TEST(Regressor, RandomModelOutputsFiniteAndNormalized) {
    std::mt19937_64 rng(2);
    for (Representation mode : kModes) {
        for (int seed = 0; seed < 10; ++seed) {
            Regressor<float> model(make_architecture(32, mode, parse_heads("M4+")));
            model.initialize(static_cast<std::uint64_t>(seed), 0.1);
            const auto out = model.forward(random_images(rng, 3, 32));
            for (int a = 0; a < 3; ++a) EXPECT_TRUE(std::isfinite(out.t[a]));
            for (double v : out.q_raw) EXPECT_TRUE(std::isfinite(v));
            for (double v : out.r_raw) EXPECT_TRUE(std::isfinite(v));
            for (double v : out.anchors_raw) EXPECT_TRUE(std::isfinite(v));
            EXPECT_NEAR(sum(*out.P), 1.0, 1e-6);
            EXPECT_NEAR(sum(*out.Q), 1.0, 1e-6);
            for (double p : *out.P) EXPECT_GT(p, 0.0);
        }
    }
}

TEST(Regressor, RejectsWrongInputShape) {
    Regressor<float> single(make_architecture(32, Representation::Quat, parse_heads("M4")));
    EXPECT_THROW(single.forward(std::vector<PlaneImage>{PlaneImage(31)}), Error);
    EXPECT_THROW(single.forward(std::vector<PlaneImage>(3, PlaneImage(32))), Error);
    Regressor<float> triplet(make_architecture(32, Representation::Quat, parse_heads("M4+")));
    EXPECT_THROW(triplet.forward(std::vector<PlaneImage>{PlaneImage(32)}), Error);
    try {
        single.forward(std::vector<PlaneImage>{PlaneImage(16)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InputShape);
    }
    EXPECT_THROW(Regressor<float>(make_architecture(16, Representation::Quat, {})), Error);
}

TEST(Regressor, BackpropMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    const LossWeights w{0.9, 1.2, 0.7, 1.1};
    for (Representation mode : kModes) {
        for (const char* variant : {"M4", "M4+"}) {
            const Heads heads = parse_heads(variant);
            Regressor<double> model(make_architecture(32, mode, heads));
            model.initialize(11, 0.1);
            const auto images = random_images(rng, heads.triplet ? 3 : 1, 32);
            std::uniform_real_distribution<double> u(-10.0, 10.0);
            const RigidTransform delta{{u(rng), u(rng), u(rng)}, itn::testing::random_quat(rng)};
            const RegressionTarget target = make_target(delta, compute_class_labels(delta), 32);

            typename Regressor<double>::Cache cache;
            const auto out = model.forward(images, cache);
            const auto loss = compute_loss(out, target, w, mode, heads);
            std::vector<double> grad(model.parameter_count(), 0.0);
            model.backward(cache, loss.grad, grad);

            auto total = [&](Regressor<double>& m) { return compute_loss(m.forward(images), target, w, mode, heads).terms.total; };

            // Probe every layer: sample indices uniformly, plus a few from each head.
            std::vector<size_t> probes;
            std::uniform_int_distribution<size_t> pick(0, model.parameter_count() - 1);
            for (int i = 0; i < 40; ++i) probes.push_back(pick(rng));
            for (const auto& h : model.heads()) {
                probes.push_back(h.b2);
                probes.push_back(h.w2 + 3);
                probes.push_back(h.w1 + 17);
            }
            int checked = 0;
            for (size_t idx : probes) {
                auto params = model.parameters();
                const double saved = params[idx];
                const double h = 1e-6;
                params[idx] = saved + h;
                const double lp = total(model);
                params[idx] = saved - h;
                const double lm = total(model);
                params[idx] = saved;
                const double numeric = (lp - lm) / (2 * h);
                const double scale = std::max({std::abs(numeric), std::abs(grad[idx]), 1e-4});
                EXPECT_LE(std::abs(numeric - grad[idx]) / scale, 1e-4)
                    << to_string(mode) << " " << variant << " param " << idx << " analytic " << grad[idx]
                    << " numeric " << numeric;
                ++checked;
            }
            EXPECT_GE(checked, 20);
        }
    }
}

TEST(Regressor, BackwardAccumulates) {
    std::mt19937_64 rng(4);
    Regressor<double> model(make_architecture(32, Representation::Quat, parse_heads("M2")));
    model.initialize(5, 0.1);
    const auto images = random_images(rng, 1, 32);
    typename Regressor<double>::Cache cache;
    const auto out = model.forward(images, cache);
    const RigidTransform delta{{1, 2, 3}, UnitQuaternion::about_axis(1, 0.3)};
    const auto loss = compute_loss(out, make_target(delta, compute_class_labels(delta), 32), {}, Representation::Quat,
                                   parse_heads("M2"));
    std::vector<double> once(model.parameter_count(), 0.0), twice(model.parameter_count(), 0.0);
    model.backward(cache, loss.grad, once);
    model.backward(cache, loss.grad, twice);
    model.backward(cache, loss.grad, twice);
    for (size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], 2 * once[i], 1e-12 * (1 + std::abs(once[i])));
}

TEST(Checkpoint, RoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "itn_test_network";
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(5);
    for (Representation mode : kModes) {
        for (const char* variant : {"M1", "M3", "M4+"}) {
            Regressor<float> model(make_architecture(32, mode, parse_heads(variant)));
            model.initialize(9, 0.1);
            const auto path = dir / "model.itnm";
            save_checkpoint(model, path);
            const auto loaded = load_checkpoint(path);
            EXPECT_EQ(loaded.architecture(), model.architecture());
            ASSERT_EQ(loaded.parameter_count(), model.parameter_count());
            EXPECT_TRUE(std::equal(model.parameters().begin(), model.parameters().end(), loaded.parameters().begin()));
            const auto images = random_images(rng, parse_heads(variant).triplet ? 3 : 1, 32);
            EXPECT_EQ(model.forward(images).t.x, loaded.forward(images).t.x);
        }
    }
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "itn_test_network";
    std::filesystem::create_directories(dir);
    Regressor<float> model(make_architecture(32, Representation::Euler, parse_heads("M4")));
    const auto path = dir / "model.itnm";
    save_checkpoint(model, path);
    const auto full = std::filesystem::file_size(path);

    std::filesystem::resize_file(path, full - 5);
    EXPECT_THROW(load_checkpoint(path), Error);

    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOPE";
    }
    EXPECT_THROW(load_checkpoint(path), Error);
    EXPECT_THROW(load_checkpoint(dir / "missing.itnm"), Error);
}

TEST(ModelPredictor, ReportsInputMode) {
    ModelPredictor single(Regressor<float>(make_architecture(32, Representation::Quat, parse_heads("M4"))));
    ModelPredictor triplet(Regressor<float>(make_architecture(32, Representation::Quat, parse_heads("M4+"))));
    EXPECT_EQ(single.input_mode(), InputMode::Single);
    EXPECT_EQ(triplet.input_mode(), InputMode::Triplet);
}

// ---------------------------------------------------------------------------
// Training.

namespace {

SampleSource small_source(double near_fraction = 0.0) {
    std::vector<Phantom> phantoms;
    for (std::uint64_t s = 0; s < 3; ++s) {
        PhantomSpec spec;
        spec.seed = s;
        phantoms.push_back(generate_phantom(spec));
    }
    return SampleSource(std::move(phantoms), 32, InputMode::Single, 5, near_fraction);
}

TrainConfig short_config(int steps) {
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 4;
    return cfg;
}

}  // namespace

TEST(Train, ZeroLearningRateKeepsParameters) {
    const auto arch = make_architecture(32, Representation::Quat, parse_heads("M4"));
    TrainConfig cfg = short_config(3);
    cfg.learning_rate = 0.0;
    Regressor<float> initial(arch);
    initial.initialize(cfg.seed, cfg.init_std);
    const auto res = train(small_source(), arch, cfg);
    const auto a = initial.parameters();
    const auto b = res.model.parameters();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    EXPECT_EQ(res.curve.size(), 3u);
}

TEST(Train, BitIdenticalReruns) {
    const auto arch = make_architecture(32, Representation::Euler, parse_heads("M4"));
    const auto source = small_source(0.5);
    TrainConfig cfg = short_config(4);
    const auto a = train(source, arch, cfg);
    const auto b = train(source, arch, cfg);
    cfg.jobs = 3;
    const auto c = train(source, arch, cfg);
    for (const auto* other : {&b, &c}) {
        const auto pa = a.model.parameters();
        const auto po = other->model.parameters();
        EXPECT_TRUE(std::equal(pa.begin(), pa.end(), po.begin()));
        EXPECT_EQ(a.curve.back().terms.total, other->curve.back().terms.total);
    }
}

TEST(Train, SampleSourceDependsOnlyOnIndex) {
    const auto source = small_source(0.7);
    const auto late = source.sample(1234);
    source.sample(7);
    EXPECT_EQ(source.sample(1234).pose, late.pose);
    EXPECT_EQ(source.sample(1234).images, late.images);
    EXPECT_NE(source.sample(1235).pose, late.pose);
}

TEST(Train, NearSamplesPullCentreTowardTarget) {
    // With every sample pulled in, the centre lies on the segment from the
    // target to a sampling-region point, so it is never farther than the
    // region's extent.
    const auto far = small_source(0.0);
    const auto near = small_source(1.0);
    double far_mean = 0.0, near_mean = 0.0;
    for (std::uint64_t i = 0; i < 400; ++i) {
        far_mean += norm(far.sample(i).delta_gt.translation) / 400;
        near_mean += norm(near.sample(i).delta_gt.translation) / 400;
    }
    EXPECT_LT(near_mean, 0.6 * far_mean);
}

TEST(Train, DivergenceReportsStep) {
    const auto arch = make_architecture(32, Representation::Quat, parse_heads("M1"));
    TrainConfig cfg = short_config(5);
    cfg.learning_rate = std::numeric_limits<double>::infinity();
    try {
        train(small_source(), arch, cfg);
        FAIL() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TrainingDiverged);
        EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
    }
}

TEST(Train, RejectsInvalidConfig) {
    TrainConfig cfg;
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.weights.beta = -1;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.near_fraction = 1.5;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(Train, ConfigJsonRoundTrip) {
    TrainConfig cfg;
    cfg.weights.alpha = 0.01;
    cfg.weights.beta = 10;
    cfg.steps = 77;
    cfg.seed = 123456789012345ull;
    cfg.near_fraction = 0.7;
    const nlohmann::json j = cfg;
    const TrainConfig back = j.get<TrainConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Train, LossCurveCsv) {
    const auto arch = make_architecture(32, Representation::Quat, parse_heads("M4"));
    const auto res = train(small_source(), arch, short_config(3));
    const auto path = std::filesystem::temp_directory_path() / "itn_loss_test.csv";
    write_loss_curve(res.curve, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,total,translation,rotation,ce_translation,ce_rotation");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3);
}

TEST(Train, LossHalvesOnDefaultPhantom) {
    // Default phantom, quaternion mode, M4 heads, 2000 steps.
    std::vector<Phantom> phantoms;
    for (std::uint64_t s = 0; s < 30; ++s) {
        PhantomSpec spec;
        spec.seed = s;
        phantoms.push_back(generate_phantom(spec));
    }
    const SampleSource source(std::move(phantoms), 32, InputMode::Single, 0);
    TrainConfig cfg;
    cfg.steps = 2000;
    const auto res = train(source, make_architecture(32, Representation::Quat, parse_heads("M4")), cfg);
    const double initial = mean_loss(res.curve, 0, 50);
    const double final = mean_loss(res.curve, res.curve.size() - 50, 50);
    EXPECT_LT(final, 0.5 * initial) << initial << " -> " << final;
}
