#pragma once

// Experiment plumbing behind the command-line tool: one JSON config, a
// phantom dataset on disk, training, detection, evaluation and the two
// ablation benches. Every command is deterministic given (config, seed);
// wall-clock figures go to stdout and timing.csv only.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "itn/error.hpp"
#include "itn/inference.hpp"
#include "itn/metrics.hpp"
#include "itn/network.hpp"
#include "itn/phantom.hpp"
#include "itn/predictor.hpp"
#include "itn/train.hpp"

namespace itn {

namespace fs = std::filesystem;

enum class OracleKind { Exact, Capped, Noisy };

inline OracleKind parse_oracle(const std::string& s) {
    if (s == "exact") return OracleKind::Exact;
    if (s == "capped") return OracleKind::Capped;
    if (s == "noisy") return OracleKind::Noisy;
    throw Error(ErrorKind::Config, "unknown oracle '" + s + "' (expected exact, capped or noisy)");
}

inline const char* to_string(OracleKind k) {
    switch (k) {
        case OracleKind::Exact: return "exact";
        case OracleKind::Capped: return "capped";
        case OracleKind::Noisy: return "noisy";
    }
    return "?";
}

struct OracleConfig {
    OracleKind kind = OracleKind::Exact;
    double max_translation = 4.0;   // capped / noisy
    double max_rotation_deg = 5.0;  // capped / noisy
    double sigma_t = 1.0;           // noisy
    double sigma_theta_deg = 3.0;   // noisy
    double epsilon = 0.05;          // noisy
    /// Pass the oracle's one-hot P / Q on to the weighted update. Off by
    /// default so oracle detection exercises the plain update.
    bool confidence = false;
};

struct ExperimentConfig {
    fs::path volumes_dir;  // default: <output>/volumes
    fs::path model_path;   // default: <output>/model.itnm
    fs::path output_dir;   // default: $ITN_OUT_DIR, else ./itn_out

    PhantomSpec phantom;
    int volume_count = 40;
    double train_fraction = 0.75;

    TrainConfig train;
    InferenceConfig inference;
    Representation representation = Representation::Quat;
    std::string heads = "M4";
    std::uint64_t seed = 0;
    std::optional<OracleConfig> oracle;  // detect with an oracle instead of a model
    bool bench_triplet = false;          // conf-bench also runs M4+
    int jobs = 1;

    ExperimentConfig() {
        phantom.layout = "dense";
        train.weights = {0.01, 10.0, 1.0, 1.0};
        train.steps = 5000;
        train.near_fraction = 0.7;
        inference.iterations = 20;
        inference.use_translation_confidence = false;
        inference.consensus_radius = 45.0;
    }

    void validate() const {
        if (volume_count < 1) throw Error(ErrorKind::Config, "volume_count must be at least 1");
        if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw Error(ErrorKind::Config, "train_fraction must be in (0, 1]");
        if (jobs < 1) throw Error(ErrorKind::Config, "jobs must be at least 1");
        parse_heads(heads);
        train.validate();
        inference.validate();
        layout_blobs(phantom.layout);
    }

    fs::path out() const {
        if (!output_dir.empty()) return output_dir;
        if (const char* env = std::getenv("ITN_OUT_DIR"); env && *env) return env;
        return "itn_out";
    }
    fs::path volumes() const { return volumes_dir.empty() ? out() / "volumes" : volumes_dir; }
    fs::path model() const { return model_path.empty() ? out() / "model.itnm" : model_path; }
    fs::path manifest() const { return volumes() / "manifest.csv"; }

    size_t train_count() const {
        const auto n = static_cast<size_t>(std::lround(train_fraction * volume_count));
        return std::clamp<size_t>(n, 1, static_cast<size_t>(volume_count));
    }
    Heads head_selection() const { return parse_heads(heads); }
    Architecture architecture() const {
        return make_architecture(inference.plane_size, representation, head_selection());
    }
    TrainConfig train_config() const {
        TrainConfig t = train;
        t.seed = seed;
        t.jobs = jobs;
        return t;
    }
};

inline void to_json(nlohmann::json& j, const OracleConfig& o) {
    j = {{"kind", to_string(o.kind)},       {"max_translation", o.max_translation},
         {"max_rotation_deg", o.max_rotation_deg}, {"sigma_t", o.sigma_t},
         {"sigma_theta_deg", o.sigma_theta_deg},   {"epsilon", o.epsilon},
         {"confidence", o.confidence}};
}

inline void from_json(const nlohmann::json& j, OracleConfig& o) {
    const OracleConfig d;
    o.kind = parse_oracle(j.value("kind", std::string("exact")));
    o.max_translation = j.value("max_translation", d.max_translation);
    o.max_rotation_deg = j.value("max_rotation_deg", d.max_rotation_deg);
    o.sigma_t = j.value("sigma_t", d.sigma_t);
    o.sigma_theta_deg = j.value("sigma_theta_deg", d.sigma_theta_deg);
    o.epsilon = j.value("epsilon", d.epsilon);
    o.confidence = j.value("confidence", d.confidence);
}

inline void to_json(nlohmann::json& j, const InferenceConfig& c) {
    j = {{"iterations", c.iterations},
         {"plane_size", c.plane_size},
         {"init_count", c.init_count},
         {"log_trajectory", c.log_trajectory},
         {"use_translation_confidence", c.use_translation_confidence},
         {"use_rotation_confidence", c.use_rotation_confidence},
         {"consensus_radius", c.consensus_radius ? nlohmann::json(*c.consensus_radius) : nlohmann::json()}};
}

inline void from_json(const nlohmann::json& j, InferenceConfig& c) {
    const InferenceConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.plane_size = j.value("plane_size", d.plane_size);
    c.init_count = j.value("init_count", d.init_count);
    c.log_trajectory = j.value("log_trajectory", d.log_trajectory);
    c.use_translation_confidence = j.value("use_translation_confidence", d.use_translation_confidence);
    c.use_rotation_confidence = j.value("use_rotation_confidence", d.use_rotation_confidence);
    if (auto it = j.find("consensus_radius"); it != j.end())
        c.consensus_radius = it->is_null() ? std::nullopt : std::optional<double>(it->get<double>());
}

// The single top-level seed drives phantoms, training and initial poses, so
// the per-block seeds are not serialized.
inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json phantom = c.phantom;
    phantom.erase("seed");
    nlohmann::json train = c.train;
    train.erase("seed");
    j = {{"paths",
          {{"volumes_dir", c.volumes_dir.string()}, {"model_path", c.model_path.string()},
           {"output_dir", c.output_dir.string()}}},
         {"phantom", phantom},
         {"volume_count", c.volume_count},
         {"train_fraction", c.train_fraction},
         {"train", train},
         {"inference", c.inference},
         {"representation", to_string(c.representation)},
         {"heads", c.heads},
         {"seed", c.seed},
         {"oracle", c.oracle ? nlohmann::json(*c.oracle) : nlohmann::json(nullptr)},
         {"bench_triplet", c.bench_triplet},
         {"jobs", c.jobs}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    const ExperimentConfig d;
    c = d;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        c.volumes_dir = p.value("volumes_dir", std::string());
        c.model_path = p.value("model_path", std::string());
        c.output_dir = p.value("output_dir", std::string());
    }
    if (j.contains("phantom")) {
        nlohmann::json merged = d.phantom;
        merged.update(j.at("phantom"));
        c.phantom = merged.get<PhantomSpec>();
    }
    c.volume_count = j.value("volume_count", d.volume_count);
    c.train_fraction = j.value("train_fraction", d.train_fraction);
    if (j.contains("train")) {
        nlohmann::json merged = d.train;
        merged.update(j.at("train"));
        c.train = merged.get<TrainConfig>();
    }
    if (j.contains("inference")) {
        nlohmann::json merged = d.inference;
        merged.update(j.at("inference"));
        c.inference = merged.get<InferenceConfig>();
    }
    c.representation = parse_representation(j.value("representation", std::string(to_string(d.representation))));
    c.heads = j.value("heads", d.heads);
    c.seed = j.value("seed", d.seed);
    if (j.contains("oracle") && !j.at("oracle").is_null()) c.oracle = j.at("oracle").get<OracleConfig>();
    c.bench_triplet = j.value("bench_triplet", d.bench_triplet);
    c.jobs = j.value("jobs", d.jobs);
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "cannot read config " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Config, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Dataset.

inline std::string volume_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vol_%04d", index);
    return buf;
}

struct Dataset {
    fs::path manifest;
    std::vector<ManifestEntry> entries;
    size_t train_count = 0;

    std::vector<size_t> split(bool training) const {
        std::vector<size_t> idx;
        for (size_t i = training ? 0 : train_count; i < (training ? train_count : entries.size()); ++i) idx.push_back(i);
        return idx;
    }
    Volume volume(size_t i) const { return load_volume(resolve_volume_path(manifest, entries[i])); }
};

inline Dataset open_dataset(const ExperimentConfig& cfg) {
    if (!fs::exists(cfg.manifest())) throw Error(ErrorKind::Config, "no dataset manifest at " + cfg.manifest().string());
    Dataset d{cfg.manifest(), read_manifest(cfg.manifest()), 0};
    if (d.entries.empty()) throw Error(ErrorKind::EmptyInput, "empty manifest " + cfg.manifest().string());
    d.train_count = std::min(cfg.train_count(), d.entries.size());
    if (d.train_count == d.entries.size() && d.entries.size() > 1) d.train_count = d.entries.size() - 1;
    return d;
}

/// Volume i uses phantom seed `seed + i`; rerunning rewrites identical files.
inline Dataset cmd_phantom_gen(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const fs::path dir = cfg.volumes();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    std::vector<ManifestEntry> entries(static_cast<size_t>(cfg.volume_count));
    parallel_for(entries.size(), cfg.jobs, [&](size_t i) {
        PhantomSpec spec = cfg.phantom;
        spec.seed = cfg.seed + i;
        const Phantom p = generate_phantom(spec);
        const std::string id = volume_id(static_cast<int>(i));
        save_volume(p.volume, dir / (id + ".vol"));
        std::ofstream gt(dir / (id + ".gt.txt"), std::ios::trunc);
        if (!gt) throw Error(ErrorKind::Io, "cannot write " + (dir / (id + ".gt.txt")).string());
        gt << to_record(p.gt) << '\n';
        entries[i] = {id, id + ".vol", p.gt};
    });
    write_manifest(entries, dir / "manifest.csv");
    log << "wrote " << entries.size() << " volumes to " << dir.string() << '\n';
    return open_dataset(cfg);
}

// ---------------------------------------------------------------------------
// Training.

struct TrainOutcome {
    Regressor<float> model;
    std::vector<LossRecord> curve;
    double seconds = 0.0;
};

inline TrainOutcome train_on_dataset(const ExperimentConfig& cfg, const Dataset& data, const Architecture& arch,
                                     std::ostream& log) {
    std::vector<Phantom> phantoms;
    for (size_t i : data.split(true)) phantoms.push_back({data.volume(i), data.entries[i].gt});
    const InputMode mode = arch.in_channels == 3 ? InputMode::Triplet : InputMode::Single;
    const TrainConfig tc = cfg.train_config();
    const SampleSource source(std::move(phantoms), arch.input_size, mode, tc.seed, tc.near_fraction);
    const auto start = std::chrono::steady_clock::now();
    const int every = std::max(1, tc.steps / 10);
    auto res = train(source, arch, tc, [&](const LossRecord& r) {
        if (r.step % every == 0 || r.step + 1 == tc.steps) {
            log << "step " << r.step << " loss " << r.terms.total << '\n';
        }
    });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(res.model), std::move(res.curve), seconds};
}

inline TrainOutcome cmd_train(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const Dataset data = open_dataset(cfg);
    auto outcome = train_on_dataset(cfg, data, cfg.architecture(), log);
    fs::create_directories(cfg.out());
    if (cfg.model().has_parent_path()) fs::create_directories(cfg.model().parent_path());
    save_checkpoint(outcome.model, cfg.model());
    write_loss_curve(outcome.curve, cfg.out() / "loss_curve.csv");
    log << "trained " << outcome.curve.size() << " steps in " << outcome.seconds << " s; checkpoint "
        << cfg.model().string() << '\n';
    return outcome;
}

// ---------------------------------------------------------------------------
// Detection.

/// Drops the P / Q outputs of another predictor.
class WithoutConfidence : public Predictor {
public:
    explicit WithoutConfidence(std::unique_ptr<Predictor> inner) : inner_(std::move(inner)) {}
    InputMode input_mode() const override { return inner_->input_mode(); }
    PredictorOutput predict(const PredictionContext& ctx) const override {
        PredictorOutput out = inner_->predict(ctx);
        out.P.reset();
        out.Q.reset();
        return out;
    }

private:
    std::unique_ptr<Predictor> inner_;
};

inline std::unique_ptr<Predictor> make_oracle_with_confidence(const OracleConfig& o, const RigidTransform& gt,
                                                              std::uint64_t seed) {
    switch (o.kind) {
        case OracleKind::Exact: return std::make_unique<ExactOracle>(gt);
        case OracleKind::Capped: return std::make_unique<ExactOracle>(gt, OracleCap{o.max_translation, o.max_rotation_deg});
        case OracleKind::Noisy:
            return std::make_unique<NoisyOracle>(gt, OracleNoise{o.sigma_t, o.sigma_theta_deg, o.epsilon, seed},
                                                 OracleCap{o.max_translation, o.max_rotation_deg});
    }
    throw Error(ErrorKind::Config, "bad oracle");
}

inline std::unique_ptr<Predictor> make_oracle(const OracleConfig& o, const RigidTransform& gt, std::uint64_t seed) {
    auto oracle = make_oracle_with_confidence(o, gt, seed);
    if (o.confidence) return oracle;
    return std::make_unique<WithoutConfidence>(std::move(oracle));
}

struct Detection {
    std::string id;
    RigidTransform gt;
    MultiInitResult result;
};

/// Multi-init inference on the held-out volumes. Volume i of the manifest
/// starts from initial poses seeded with `seed + i`.
inline std::vector<Detection> detect_volumes(const ExperimentConfig& cfg, const Dataset& data,
                                             const Predictor* model, InferenceConfig icfg) {
    const auto idx = data.split(false);
    std::vector<Detection> out(idx.size());
    icfg.jobs = 1;
    parallel_for(idx.size(), cfg.jobs, [&](size_t n) {
        const size_t i = idx[n];
        const Volume volume = data.volume(i);
        InferenceConfig c = icfg;
        c.seed = cfg.seed + i;
        if (c.dump_dir) c.dump_dir = *c.dump_dir / data.entries[i].id;
        if (c.dump_dir) fs::create_directories(*c.dump_dir);
        std::unique_ptr<Predictor> oracle;
        if (!model) oracle = make_oracle(*cfg.oracle, data.entries[i].gt, c.seed);
        out[n] = {data.entries[i].id, data.entries[i].gt, multi_init_infer(volume, model ? *model : *oracle, c)};
    });
    return out;
}

inline void check_checkpoint(const Regressor<float>& model, const ExperimentConfig& cfg) {
    const Architecture& a = model.architecture();
    if (a.representation != cfg.representation || !(a.heads == cfg.head_selection())) {
        throw Error(ErrorKind::CheckpointMismatch,
                    "checkpoint is " + std::string(to_string(a.representation)) + "/" + to_string(a.heads) +
                        " but the config asks for " + to_string(cfg.representation) + "/" + cfg.heads);
    }
    if (a.input_size != cfg.inference.plane_size) {
        throw Error(ErrorKind::CheckpointMismatch, "checkpoint plane size " + std::to_string(a.input_size) +
                                                       " differs from inference plane size " +
                                                       std::to_string(cfg.inference.plane_size));
    }
}

inline void write_detections(const std::vector<Detection>& dets, const fs::path& dir) {
    fs::create_directories(dir / "trajectories");
    std::ofstream out(dir / "detections.csv", std::ios::trunc);
    std::ofstream inits(dir / "inits.csv", std::ios::trunc);
    if (!out || !inits) throw Error(ErrorKind::Io, "cannot write detections to " + dir.string());
    out << "id,transform,low_confidence,excluded_runs,outlier_runs\n";
    inits << "id,init,transform\n";
    for (const auto& d : dets) {
        const auto excluded = std::count(d.result.excluded.begin(), d.result.excluded.end(), true);
        const auto outliers = std::count(d.result.outlier.begin(), d.result.outlier.end(), true);
        out << d.id << ',' << to_record(d.result.pose) << ',' << (d.result.low_confidence ? 1 : 0) << ',' << excluded
            << ',' << outliers << '\n';
        for (size_t k = 0; k < d.result.inits.size(); ++k) inits << d.id << ',' << k << ',' << to_record(d.result.inits[k]) << '\n';
        std::vector<Trajectory> runs;
        for (const auto& r : d.result.runs) {
            runs.push_back(r.trajectory);
            annotate_trajectory(runs.back(), d.gt);
        }
        write_trajectories(runs, dir / "trajectories" / (d.id + ".csv"));
    }
}

inline std::string model_label(const ExperimentConfig& cfg) {
    if (cfg.oracle) return std::string("oracle-") + to_string(cfg.oracle->kind);
    return std::string(to_string(cfg.representation)) + "-" + cfg.heads;
}

inline std::vector<Detection> cmd_detect(const ExperimentConfig& cfg, const fs::path& dump_dir = {},
                                         std::ostream& log = std::cout) {
    cfg.validate();
    const Dataset data = open_dataset(cfg);
    InferenceConfig icfg = cfg.inference;
    if (!dump_dir.empty()) icfg.dump_dir = dump_dir;
    std::optional<ModelPredictor> model;
    if (!cfg.oracle) {
        if (!fs::exists(cfg.model())) throw Error(ErrorKind::Config, "no checkpoint at " + cfg.model().string());
        model.emplace(load_checkpoint(cfg.model()));
        check_checkpoint(model->model(), cfg);
    }
    const auto dets = detect_volumes(cfg, data, model ? &*model : nullptr, icfg);
    write_detections(dets, cfg.out());
    std::ofstream meta(cfg.out() / "detect.json", std::ios::trunc);
    meta << nlohmann::json{{"model_id", model_label(cfg)}, {"inference", icfg}}.dump(2) << '\n';

    std::ofstream timing(cfg.out() / "timing.csv", std::ios::trunc);
    timing << "id,seconds,seconds_per_plane\n";
    double total = 0.0;
    for (const auto& d : dets) {
        const double per_plane = d.result.seconds / static_cast<double>(d.result.inits.size());
        timing << d.id << ',' << d.result.seconds << ',' << per_plane << '\n';
        total += per_plane;
    }
    log << "detected " << dets.size() << " volumes; mean wall time per plane "
        << (dets.empty() ? 0.0 : total / static_cast<double>(dets.size())) << " s\n";
    return dets;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalOutcome {
    std::vector<PlaneEvalResult> detected;
    std::vector<PlaneEvalResult> baseline;  // every initial pose
    std::vector<ReportRow> rows;
};

inline EvalOutcome evaluate_detections(const std::vector<Detection>& dets, const Dataset& data, int plane_size,
                                       const std::string& model_id, const std::string& plane_class) {
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < data.entries.size(); ++i) index[data.entries[i].id] = i;
    EvalOutcome out;
    for (const auto& d : dets) {
        const auto it = index.find(d.id);
        if (it == index.end()) throw Error(ErrorKind::Io, "detection for unknown volume " + d.id);
        const Volume v = data.volume(it->second);
        out.detected.push_back(evaluate_plane(d.result.pose, d.gt, v, plane_size));
        for (const auto& init : d.result.inits) out.baseline.push_back(evaluate_plane(init, d.gt, v, plane_size));
    }
    if (out.detected.empty()) throw Error(ErrorKind::EmptyInput, "no detections to evaluate");
    out.rows = {aggregate(out.detected, model_id, plane_class), aggregate(out.baseline, "baseline", plane_class)};
    return out;
}

inline std::vector<Detection> read_detections(const ExperimentConfig& cfg, const Dataset& data) {
    const fs::path dir = cfg.out();
    std::ifstream det(dir / "detections.csv"), inits(dir / "inits.csv");
    if (!det || !inits) throw Error(ErrorKind::Config, "no detection outputs in " + dir.string() + "; run detect first");
    std::map<std::string, RigidTransform> gt;
    for (const auto& e : data.entries) gt[e.id] = e.gt;
    std::vector<Detection> out;
    std::map<std::string, size_t> pos;
    std::string line;
    std::getline(det, line);
    while (std::getline(det, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, record, low;
        std::getline(ss, id, ',');
        std::getline(ss, record, ',');
        std::getline(ss, low, ',');
        if (!gt.count(id)) throw Error(ErrorKind::Io, "detection for unknown volume " + id);
        Detection d{id, gt[id], {}};
        d.result.pose = parse_record(record);
        d.result.low_confidence = low == "1";
        pos[id] = out.size();
        out.push_back(d);
    }
    std::getline(inits, line);
    while (std::getline(inits, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, k, record;
        std::getline(ss, id, ',');
        std::getline(ss, k, ',');
        std::getline(ss, record, ',');
        if (!pos.count(id)) throw Error(ErrorKind::Io, "initial pose for unknown volume " + id);
        out[pos[id]].result.inits.push_back(parse_record(record));
    }
    return out;
}

/// Mean distance to the target per iteration over all runs.
inline void write_convergence(const fs::path& trajectories_dir, const std::vector<Detection>& dets,
                              const fs::path& path) {
    std::map<int, std::pair<double, double>> sums;
    std::map<int, int> counts;
    for (const auto& d : dets) {
        std::ifstream in(trajectories_dir / (d.id + ".csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::vector<std::string> f;
            for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
            if (f.size() < 11 || f[9].empty()) continue;
            const int iter = std::stoi(f[1]);
            sums[iter].first += std::stod(f[9]);
            sums[iter].second += std::stod(f[10]);
            ++counts[iter];
        }
    }
    std::ofstream out(path, std::ios::trunc);
    out << "iter,dx_mean,dtheta_mean\n";
    out.precision(9);
    for (const auto& [iter, s] : sums) out << iter << ',' << s.first / counts[iter] << ',' << s.second / counts[iter] << '\n';
}

inline EvalOutcome cmd_eval(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const Dataset data = open_dataset(cfg);
    const auto dets = read_detections(cfg, data);
    std::string label = model_label(cfg);
    if (std::ifstream meta(cfg.out() / "detect.json"); meta) label = nlohmann::json::parse(meta).value("model_id", label);
    auto outcome = evaluate_detections(dets, data, cfg.inference.plane_size, label, cfg.phantom.layout);
    write_report(outcome.rows, cfg.out() / "report.csv");
    write_convergence(cfg.out() / "trajectories", dets, cfg.out() / "convergence.csv");
    for (const auto& r : outcome.rows) {
        log << r.model_id << ": dx " << r.dx.mean << " +- " << r.dx.std << ", dtheta " << r.dtheta.mean << " +- "
            << r.dtheta.std << ", psnr " << r.psnr.mean << ", ssim " << r.ssim.mean << '\n';
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// Ablation benches: every row trains with the same seed on the same split and
// detects from the same initial poses.

struct BenchRow {
    std::string label;
    ExperimentConfig cfg;
};

struct BenchOutcome {
    std::vector<ReportRow> rows;
    std::vector<std::vector<RigidTransform>> inits;  // per row, all volumes in order
};

inline BenchOutcome run_bench(const std::vector<BenchRow>& bench, const fs::path& report, std::ostream& log) {
    BenchOutcome out;
    std::optional<Dataset> data;
    for (const auto& row : bench) {
        row.cfg.validate();
        if (!data) data = open_dataset(row.cfg);
        std::optional<ModelPredictor> model;
        if (!row.cfg.oracle) {
            auto trained = train_on_dataset(row.cfg, *data, row.cfg.architecture(), log);
            log << row.label << ": trained in " << trained.seconds << " s\n";
            model.emplace(std::move(trained.model));
        }
        const auto dets = detect_volumes(row.cfg, *data, model ? &*model : nullptr, row.cfg.inference);
        std::vector<RigidTransform> inits;
        for (const auto& d : dets) inits.insert(inits.end(), d.result.inits.begin(), d.result.inits.end());
        if (!out.inits.empty() && inits != out.inits.front()) {
            throw Error(ErrorKind::Config, "initial poses differ between bench rows");
        }
        out.inits.push_back(std::move(inits));
        const auto ev = evaluate_detections(dets, *data, row.cfg.inference.plane_size, row.label, row.cfg.phantom.layout);
        out.rows.push_back(ev.rows.front());
        const auto& r = ev.rows.front();
        log << row.label << ": dx " << r.dx.mean << " +- " << r.dx.std << ", dtheta " << r.dtheta.mean << " +- "
            << r.dtheta.std << '\n';
    }
    fs::create_directories(report.parent_path());
    write_report(out.rows, report);
    return out;
}

/// The four representations with the configured heads.
inline BenchOutcome cmd_rep_bench(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    std::vector<BenchRow> rows;
    for (Representation r : {Representation::Quat, Representation::Euler, Representation::Matrix, Representation::Anchors}) {
        ExperimentConfig c = cfg;
        c.representation = r;
        c.oracle.reset();
        rows.push_back({to_string(r), c});
    }
    return run_bench(rows, cfg.out() / "rep_bench.csv", log);
}

/// Heads M1 to M4 (and M4+) with both confidence weightings on, so
/// M1 falls back to the plain update and M4 uses the full weighted update.
inline BenchOutcome cmd_conf_bench(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    std::vector<BenchRow> rows;
    std::vector<std::string> variants{"M1", "M2", "M3", "M4"};
    if (cfg.bench_triplet) variants.push_back("M4+");
    for (const auto& v : variants) {
        ExperimentConfig c = cfg;
        c.heads = v;
        c.oracle.reset();
        c.inference.use_translation_confidence = true;
        c.inference.use_rotation_confidence = true;
        rows.push_back({v, c});
    }
    return run_bench(rows, cfg.out() / "conf_bench.csv", log);
}

}  // namespace itn
