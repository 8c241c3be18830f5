#pragma once

// Adam training of the regressor on phantom-generated samples.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "itn/error.hpp"
#include "itn/loss.hpp"
#include "itn/network.hpp"
#include "itn/parallel.hpp"
#include "itn/phantom.hpp"

namespace itn {

struct TrainConfig {
    LossWeights weights;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 32;
    int steps = 2000;
    std::uint64_t seed = 0;
    double init_std = 0.1;
    /// Fraction of samples whose centre is pulled toward the target by a
    /// factor u^2, u uniform in [0, 1); orientation stays fully random.
    double near_fraction = 0.0;
    int jobs = 1;

    void validate() const {
        if (weights.alpha < 0 || weights.beta < 0 || weights.gamma < 0 || weights.delta < 0) {
            throw Error(ErrorKind::Config, "loss weights must be nonnegative");
        }
        if (batch_size < 1) throw Error(ErrorKind::Config, "batch size must be at least 1");
        if (steps < 0) throw Error(ErrorKind::Config, "step count must be nonnegative");
        if (learning_rate < 0) throw Error(ErrorKind::Config, "learning rate must be nonnegative");
        if (!(near_fraction >= 0.0 && near_fraction <= 1.0)) throw Error(ErrorKind::Config, "near_fraction must be in [0, 1]");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma},
         {"delta", c.weights.delta}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
         {"beta2", c.beta2}, {"epsilon", c.epsilon}, {"batch_size", c.batch_size},
         {"steps", c.steps}, {"seed", c.seed}, {"init_std", c.init_std},
         {"near_fraction", c.near_fraction}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.weights.alpha = j.value("alpha", d.weights.alpha);
    c.weights.beta = j.value("beta", d.weights.beta);
    c.weights.gamma = j.value("gamma", d.weights.gamma);
    c.weights.delta = j.value("delta", d.weights.delta);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.epsilon = j.value("epsilon", d.epsilon);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.steps = j.value("steps", d.steps);
    c.seed = j.value("seed", d.seed);
    c.init_std = j.value("init_std", d.init_std);
    c.near_fraction = j.value("near_fraction", d.near_fraction);
}

/// Deterministic stream of training samples: sample i depends only on the
/// seed and i, so generation order and thread count do not matter.
class SampleSource {
public:
    SampleSource(std::vector<Phantom> phantoms, int plane_size, InputMode mode, std::uint64_t seed,
                 double near_fraction = 0.0)
        : phantoms_(std::move(phantoms)), plane_size_(plane_size), mode_(mode), seed_(seed), near_fraction_(near_fraction) {
        if (phantoms_.empty()) throw Error(ErrorKind::EmptyInput, "no training volumes");
    }

    TrainingSample sample(std::uint64_t index) const {
        Rng rng = make_rng(seed_, 0x7000000000000000ull + index);
        std::uniform_int_distribution<size_t> pick(0, phantoms_.size() - 1);
        const Phantom& p = phantoms_[pick(rng)];
        if (near_fraction_ <= 0.0) return make_training_sample(p.volume, p.gt, plane_size_, rng, mode_);
        RigidTransform pose = sample_random_transform(p.volume, rng);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (u(rng) < near_fraction_) {
            const double lam = u(rng);
            pose.translation = p.gt.translation + (lam * lam) * (pose.translation - p.gt.translation);
        }
        return make_training_sample_at(p.volume, p.gt, pose, plane_size_, mode_);
    }

    int plane_size() const { return plane_size_; }
    const std::vector<Phantom>& phantoms() const { return phantoms_; }

private:
    std::vector<Phantom> phantoms_;
    int plane_size_;
    InputMode mode_;
    std::uint64_t seed_;
    double near_fraction_;
};

/// Batch-mean loss terms after one optimizer step.
struct LossRecord {
    int step = 0;
    LossTerms terms;
};

inline void write_loss_curve(const std::vector<LossRecord>& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "step,total,translation,rotation,ce_translation,ce_rotation\n";
    out.precision(9);
    for (const auto& r : curve) {
        out << r.step << ',' << r.terms.total << ',' << r.terms.translation << ',' << r.terms.rotation << ','
            << r.terms.ce_translation << ',' << r.terms.ce_rotation << '\n';
    }
}

/// Mean total loss over curve[from, from + count).
inline double mean_loss(const std::vector<LossRecord>& curve, size_t from, size_t count) {
    if (curve.empty()) throw Error(ErrorKind::EmptyInput, "empty loss curve");
    from = std::min(from, curve.size() - 1);
    const size_t to = std::min(curve.size(), from + count);
    double s = 0.0;
    for (size_t i = from; i < to; ++i) s += curve[i].terms.total;
    return s / static_cast<double>(to - from);
}

template <typename Scalar>
class Adam {
public:
    Adam(size_t n, const TrainConfig& cfg) : m_(n, 0.0), v_(n, 0.0), cfg_(cfg) {}

    void step(std::span<Scalar> params, std::span<const double> grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mh = m_[i] / c1;
            const double vh = v_[i] / c2;
            params[i] = static_cast<Scalar>(params[i] - cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.epsilon));
        }
    }

private:
    std::vector<double> m_, v_;
    TrainConfig cfg_;
    int t_ = 0;
};

struct TrainResult {
    Regressor<float> model;
    std::vector<LossRecord> curve;
};

using TrainProgress = std::function<void(const LossRecord&)>;

/// Trains `model` in place. Per-sample gradients are reduced in sample
/// order, so results are bit-identical for any `cfg.jobs`.
inline std::vector<LossRecord> train_model(Regressor<float>& model, const SampleSource& source, const TrainConfig& cfg,
                                           const TrainProgress& progress = {}) {
    cfg.validate();
    const Architecture& arch = model.architecture();
    const size_t n = model.parameter_count();
    const size_t batch = static_cast<size_t>(cfg.batch_size);
    Adam<float> adam(n, cfg);

    std::vector<std::vector<float>> sample_grads(batch, std::vector<float>(n));
    std::vector<LossTerms> sample_terms(batch);
    std::vector<double> grad(n);
    std::vector<LossRecord> curve;
    curve.reserve(static_cast<size_t>(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        parallel_for(batch, cfg.jobs, [&](size_t b) {
            const TrainingSample s = source.sample(static_cast<std::uint64_t>(step) * batch + b);
            typename Regressor<float>::Cache cache;
            const PredictorOutput out = model.forward(s.images, cache);
            const LossResult loss =
                compute_loss(out, make_target(s, source.plane_size()), cfg.weights, arch.representation, arch.heads);
            std::fill(sample_grads[b].begin(), sample_grads[b].end(), 0.0f);
            model.backward(cache, loss.grad, sample_grads[b]);
            sample_terms[b] = loss.terms;
        });

        LossRecord rec{step, {}};
        std::fill(grad.begin(), grad.end(), 0.0);
        for (size_t b = 0; b < batch; ++b) {
            rec.terms.translation += sample_terms[b].translation;
            rec.terms.rotation += sample_terms[b].rotation;
            rec.terms.ce_translation += sample_terms[b].ce_translation;
            rec.terms.ce_rotation += sample_terms[b].ce_rotation;
            rec.terms.total += sample_terms[b].total;
            for (size_t i = 0; i < n; ++i) grad[i] += sample_grads[b][i];
        }
        const double inv = 1.0 / static_cast<double>(batch);
        rec.terms.translation *= inv;
        rec.terms.rotation *= inv;
        rec.terms.ce_translation *= inv;
        rec.terms.ce_rotation *= inv;
        rec.terms.total *= inv;
        bool finite = std::isfinite(rec.terms.total);
        for (size_t i = 0; i < n && finite; ++i) {
            grad[i] *= inv;
            finite = std::isfinite(grad[i]);
        }
        if (!finite) {
            throw Error(ErrorKind::TrainingDiverged, "non-finite loss at step " + std::to_string(step));
        }
        adam.step(model.parameters(), grad);
        curve.push_back(rec);
        if (progress) progress(rec);
    }
    return curve;
}

inline TrainResult train(const SampleSource& source, const Architecture& arch, const TrainConfig& cfg,
                         const TrainProgress& progress = {}) {
    Regressor<float> model(arch);
    model.initialize(cfg.seed, cfg.init_std);
    auto curve = train_model(model, source, cfg, progress);
    return {std::move(model), std::move(curve)};
}

}  // namespace itn
