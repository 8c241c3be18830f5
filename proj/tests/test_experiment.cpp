#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "itn/experiment.hpp"

using namespace itn;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Concatenated bytes of every file under `dir`, in path order.
std::string snapshot(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += f.string() + "\n" + slurp(f);
    return all;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("itn_exp_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

/// A configuration small enough for unit tests.
ExperimentConfig tiny(const std::string& name, int volumes = 4) {
    ExperimentConfig cfg;
    cfg.output_dir = fresh_dir(name);
    cfg.volume_count = volumes;
    cfg.train.steps = 2;
    cfg.train.batch_size = 2;
    cfg.inference.iterations = 2;
    return cfg;
}

std::ostringstream sink;

int run_cli(const std::string& args) {
    const std::string cmd = std::string(ITN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(ExperimentConfig, JsonRoundTrip) {
    ExperimentConfig cfg;
    cfg.volumes_dir = "/data/v";
    cfg.model_path = "m.itnm";
    cfg.phantom.layout = "alternate";
    cfg.phantom.noise_sigma = 0.02;
    cfg.volume_count = 12;
    cfg.train_fraction = 0.5;
    cfg.train.steps = 321;
    cfg.train.weights.gamma = 0.25;
    cfg.inference.iterations = 7;
    cfg.inference.use_rotation_confidence = false;
    cfg.representation = Representation::Anchors;
    cfg.heads = "M3";
    cfg.seed = 99;
    cfg.oracle = OracleConfig{OracleKind::Noisy, 3.0, 4.0, 0.5, 1.5, 0.1};
    cfg.jobs = 3;
    const nlohmann::json j = cfg;
    const auto back = j.get<ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(back.representation, Representation::Anchors);
    EXPECT_EQ(back.oracle->kind, OracleKind::Noisy);
    EXPECT_EQ(nlohmann::json(ExperimentConfig{}).get<ExperimentConfig>().inference.iterations, 20);
}

TEST(ExperimentConfig, DeskDefaults) {
    const ExperimentConfig cfg;
    EXPECT_EQ(cfg.inference.plane_size, 32);
    EXPECT_EQ(cfg.inference.init_count, 5);
    EXPECT_EQ(cfg.phantom.dims, (std::array<int, 3>{64, 64, 64}));
    EXPECT_EQ(cfg.train_count(), 30u);
    EXPECT_EQ(cfg.heads, "M4");
    EXPECT_EQ(cfg.representation, Representation::Quat);
    EXPECT_EQ(cfg.inference.consensus_radius, 45.0);
    EXPECT_FALSE(InferenceConfig{}.consensus_radius.has_value());
}

TEST(ExperimentConfig, ConsensusRadiusCanBeSwitchedOff) {
    const auto off = nlohmann::json::parse(R"({"inference": {"consensus_radius": null}})").get<ExperimentConfig>();
    EXPECT_FALSE(off.inference.consensus_radius.has_value());
    const auto kept = nlohmann::json::parse(R"({"inference": {"iterations": 7}})").get<ExperimentConfig>();
    EXPECT_EQ(kept.inference.consensus_radius, 45.0);
    auto bad = ExperimentConfig{};
    bad.inference.consensus_radius = -1.0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(ExperimentConfig, PartialJsonKeepsDefaults) {
    const auto cfg = nlohmann::json::parse(R"({"train": {"steps": 9}, "phantom": {"noise_sigma": 0}})").get<ExperimentConfig>();
    EXPECT_EQ(cfg.train.steps, 9);
    EXPECT_EQ(cfg.train.near_fraction, ExperimentConfig{}.train.near_fraction);
    EXPECT_EQ(cfg.phantom.noise_sigma, 0.0);
    EXPECT_EQ(cfg.phantom.layout, ExperimentConfig{}.phantom.layout);
}

TEST(ExperimentConfig, RejectsBadValues) {
    ExperimentConfig cfg;
    cfg.heads = "M5";
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.train_fraction = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.phantom.layout = "nope";
    EXPECT_THROW(cfg.validate(), Error);
    const fs::path bad = fresh_dir("badjson") / "c.json";
    std::ofstream(bad) << "{ not json";
    try {
        load_experiment_config(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}

TEST(ExperimentConfig, OutputDirFallsBackToEnvironment) {
    ExperimentConfig cfg;
    ::setenv("ITN_OUT_DIR", "/tmp/itn_env_out", 1);
    EXPECT_EQ(cfg.out(), fs::path("/tmp/itn_env_out"));
    EXPECT_EQ(cfg.manifest(), fs::path("/tmp/itn_env_out/volumes/manifest.csv"));
    cfg.output_dir = "explicit";
    EXPECT_EQ(cfg.out(), fs::path("explicit"));
    ::unsetenv("ITN_OUT_DIR");
    EXPECT_EQ(ExperimentConfig{}.out(), fs::path("itn_out"));
}

TEST(PhantomGen, SingleVolumeFiles) {
    ExperimentConfig cfg = tiny("gen1", 1);
    cmd_phantom_gen(cfg, sink);
    int vol = 0, gt = 0;
    for (const auto& e : fs::directory_iterator(cfg.volumes())) {
        if (e.path().extension() == ".vol") ++vol;
        if (e.path().string().ends_with(".gt.txt")) ++gt;
    }
    EXPECT_EQ(vol, 1);
    EXPECT_EQ(gt, 1);
    EXPECT_EQ(read_manifest(cfg.manifest()).size(), 1u);
}

TEST(PhantomGen, RerunIsBitIdentical) {
    ExperimentConfig cfg = tiny("gen2", 3);
    cmd_phantom_gen(cfg, sink);
    const std::string first = snapshot(cfg.volumes());
    cmd_phantom_gen(cfg, sink);
    EXPECT_EQ(snapshot(cfg.volumes()), first);
    cfg.seed = 1;
    cmd_phantom_gen(cfg, sink);
    EXPECT_NE(snapshot(cfg.volumes()), first);
}

TEST(PhantomGen, FiftyVolumesQuickly) {
    ExperimentConfig cfg = tiny("gen50", 50);
    const auto start = std::chrono::steady_clock::now();
    cmd_phantom_gen(cfg, sink);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_LT(s, 30.0);
    fs::remove_all(cfg.out());
}

TEST(Detect, ExactOracleSingleIterationHitsTarget) {
    ExperimentConfig cfg = tiny("oracle", 6);
    cfg.train_fraction = 0.5;
    cfg.oracle = OracleConfig{};
    cfg.inference.iterations = 1;
    cmd_phantom_gen(cfg, sink);
    const auto dets = cmd_detect(cfg, {}, sink);
    ASSERT_EQ(dets.size(), 3u);
    for (const auto& d : dets) {
        const PoseError e = pose_error(d.result.pose, d.gt);
        EXPECT_LT(e.dx, 1e-6);
        EXPECT_LT(e.dtheta, 1e-6);
    }
    const auto ev = cmd_eval(cfg, sink);
    EXPECT_EQ(ev.rows[0].model_id, "oracle-exact");
    EXPECT_LT(ev.rows[0].dx.mean, 1e-6);
    EXPECT_NEAR(ev.rows[0].ssim.mean, 1.0, 1e-9);
    EXPECT_EQ(ev.rows[1].model_id, "baseline");
    EXPECT_EQ(ev.rows[1].n, 15u);
    EXPECT_GT(ev.rows[1].dx.mean, 1.0);
}

TEST(Detect, DeterministicAndDoesNotTouchInputs) {
    ExperimentConfig cfg = tiny("det", 4);
    cmd_phantom_gen(cfg, sink);
    cmd_train(cfg, sink);
    const std::string inputs = snapshot(cfg.volumes()) + slurp(cfg.model());
    cmd_detect(cfg, {}, sink);
    const std::string det = slurp(cfg.out() / "detections.csv") + slurp(cfg.out() / "inits.csv");
    cmd_eval(cfg, sink);
    const std::string report = slurp(cfg.out() / "report.csv");
    cfg.jobs = 3;
    cmd_detect(cfg, {}, sink);
    EXPECT_EQ(slurp(cfg.out() / "detections.csv") + slurp(cfg.out() / "inits.csv"), det);
    cmd_eval(cfg, sink);
    EXPECT_EQ(slurp(cfg.out() / "report.csv"), report);
    EXPECT_EQ(snapshot(cfg.volumes()) + slurp(cfg.model()), inputs);
    EXPECT_TRUE(fs::exists(cfg.out() / "trajectories" / "vol_0003.csv"));
    EXPECT_TRUE(fs::exists(cfg.out() / "convergence.csv"));
    EXPECT_TRUE(fs::exists(cfg.out() / "timing.csv"));
}

TEST(Detect, DumpsPlanes) {
    ExperimentConfig cfg = tiny("dump", 2);
    cfg.oracle = OracleConfig{};
    cmd_phantom_gen(cfg, sink);
    cmd_detect(cfg, cfg.out() / "planes", sink);
    EXPECT_TRUE(fs::exists(cfg.out() / "planes" / "vol_0001" / "run0_iter0.pgm"));
    EXPECT_TRUE(fs::exists(cfg.out() / "planes" / "vol_0001" / "run4_iter1.pgm"));
}

TEST(Detect, RejectsMismatchedCheckpoint) {
    ExperimentConfig cfg = tiny("mismatch", 3);
    cmd_phantom_gen(cfg, sink);
    cmd_train(cfg, sink);
    cfg.heads = "M2";
    try {
        cmd_detect(cfg, {}, sink);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::CheckpointMismatch);
    }
    cfg.heads = "M4";
    cfg.representation = Representation::Euler;
    EXPECT_THROW(cmd_detect(cfg, {}, sink), Error);
}

TEST(Detect, MissingInputsAreConfigErrors) {
    ExperimentConfig cfg = tiny("missing", 2);
    try {
        cmd_train(cfg, sink);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
    cmd_phantom_gen(cfg, sink);
    EXPECT_THROW(cmd_detect(cfg, {}, sink), Error);
    EXPECT_THROW(cmd_eval(cfg, sink), Error);
}

TEST(Bench, RepresentationRowsShareInits) {
    ExperimentConfig cfg = tiny("rep", 3);
    cmd_phantom_gen(cfg, sink);
    const auto out = cmd_rep_bench(cfg, sink);
    ASSERT_EQ(out.rows.size(), 4u);
    const std::vector<std::string> expected{"quat", "euler", "matrix", "anchors"};
    for (size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(out.rows[i].model_id, expected[i]);
        EXPECT_EQ(out.inits[i], out.inits[0]);
    }
    std::ifstream in(cfg.out() / "rep_bench.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, kReportHeader);
}

TEST(Bench, ConfidenceRowsDeterministic) {
    ExperimentConfig cfg = tiny("conf", 3);
    cfg.bench_triplet = true;
    cmd_phantom_gen(cfg, sink);
    const auto out = cmd_conf_bench(cfg, sink);
    std::vector<std::string> labels;
    for (const auto& r : out.rows) labels.push_back(r.model_id);
    EXPECT_EQ(labels, (std::vector<std::string>{"M1", "M2", "M3", "M4", "M4+"}));
    const std::string first = slurp(cfg.out() / "conf_bench.csv");
    cmd_conf_bench(cfg, sink);
    EXPECT_EQ(slurp(cfg.out() / "conf_bench.csv"), first);
}

TEST(Cli, ExitCodes) {
    const fs::path dir = fresh_dir("cli");
    const fs::path config = dir / "c.json";
    std::ofstream(config) << R"({"volume_count": 2, "train": {"steps": 1, "batch_size": 1}, "inference": {"iterations": 1}})";
    const std::string base = "--config " + config.string() + " --out " + dir.string();
    EXPECT_EQ(run_cli("phantom-gen " + base), 0);
    EXPECT_EQ(run_cli("detect " + base + " --oracle"), 0);
    EXPECT_EQ(run_cli("eval " + base), 0);
    EXPECT_EQ(run_cli("detect " + base + " --oracle=noisy"), 0);
    EXPECT_EQ(run_cli("detect " + base + " --oracle=psychic"), 2);
    EXPECT_EQ(run_cli("train " + base + " --heads M9"), 2);
    EXPECT_EQ(run_cli("train " + base + " --no-such-flag"), 2);
    EXPECT_EQ(run_cli("detect --out " + (dir / "empty").string()), 2);
    EXPECT_EQ(run_cli("detect --config " + (dir / "absent.json").string()), 2);
    // A corrupt checkpoint is a runtime failure.
    std::ofstream(dir / "model.itnm") << "garbage";
    EXPECT_EQ(run_cli("detect " + base), 3);
}

TEST(Cli, PrintConfigRoundTrips) {
    const fs::path dir = fresh_dir("cli_print");
    const std::string cmd = std::string(ITN_CLI_PATH) + " train --print-config --seed 5 --mode euler --jobs 2 > " +
                            (dir / "c.json").string();
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    const auto cfg = load_experiment_config(dir / "c.json");
    EXPECT_EQ(cfg.seed, 5u);
    EXPECT_EQ(cfg.representation, Representation::Euler);
    EXPECT_EQ(cfg.jobs, 2);
    EXPECT_EQ(nlohmann::json(cfg), nlohmann::json::parse(slurp(dir / "c.json")));
}
