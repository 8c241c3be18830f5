// itn: phantom generation, training, plane detection, evaluation and the
// representation / confidence benches.
//
// Exit codes: 0 ok, 2 configuration error, 3 runtime error.

#include <CLI11.hpp>

#include <iostream>

#include "itn/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int exit_code(const itn::Error& e) {
    switch (e.kind()) {
        case itn::ErrorKind::Config:
        case itn::ErrorKind::CheckpointMismatch:
        case itn::ErrorKind::InvalidPhantomSpec: return kExitConfig;
        default: return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iterative transformation network plane detection on synthetic volumes"};
    app.require_subcommand(1);

    std::string config_path, out_dir, mode, heads, oracle;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs, steps, iterations;
    std::string dump_planes;
    bool print_config = false;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)");
        sub->add_option("--out", out_dir, "output directory (default: $ITN_OUT_DIR, else ./itn_out)");
        sub->add_option("--seed", seed, "seed for phantoms, training and initial poses");
        sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--mode", mode, "representation: quat, euler, matrix or anchors");
        sub->add_option("--heads", heads, "heads: M1, M2, M3, M4 or M4+");
        sub->add_option("--steps", steps, "training steps")->check(CLI::NonNegativeNumber);
        sub->add_option("--iterations", iterations, "inference iterations per run")->check(CLI::PositiveNumber);
        sub->add_flag("--print-config", print_config, "print the effective config and exit");
    };

    auto* gen = app.add_subcommand("phantom-gen", "write phantom volumes, GT records and a manifest");
    auto* trn = app.add_subcommand("train", "train a regressor on the training split");
    auto* det = app.add_subcommand("detect", "detect the plane in every held-out volume");
    auto* evl = app.add_subcommand("eval", "score detections against the ground truth");
    auto* rep = app.add_subcommand("rep-bench", "compare the four transformation representations");
    auto* cnf = app.add_subcommand("conf-bench", "compare heads M1 to M4 (and M4+)");
    for (auto* sub : {gen, trn, det, evl, rep, cnf}) common(sub);
    CLI::Option* oracle_opt =
        det->add_option("--oracle", oracle, "use an oracle instead of the model: exact, capped or noisy")->expected(0, 1);
    det->add_option("--dump-planes", dump_planes, "write per-iteration plane images (PGM) under this directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        itn::ExperimentConfig cfg;
        if (!config_path.empty()) cfg = itn::load_experiment_config(config_path);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (seed) cfg.seed = *seed;
        if (jobs) cfg.jobs = *jobs;
        if (!mode.empty()) cfg.representation = itn::parse_representation(mode);
        if (!heads.empty()) cfg.heads = heads;
        if (steps) cfg.train.steps = *steps;
        if (iterations) cfg.inference.iterations = *iterations;
        if (oracle_opt->count() > 0) {
            itn::OracleConfig o = cfg.oracle.value_or(itn::OracleConfig{});
            o.kind = itn::parse_oracle(oracle.empty() ? "exact" : oracle);
            cfg.oracle = o;
        }
        cfg.validate();
        if (print_config) {
            std::cout << nlohmann::json(cfg).dump(2) << '\n';
            return 0;
        }

        if (gen->parsed()) itn::cmd_phantom_gen(cfg);
        if (trn->parsed()) itn::cmd_train(cfg);
        if (det->parsed()) itn::cmd_detect(cfg, dump_planes);
        if (evl->parsed()) itn::cmd_eval(cfg);
        if (rep->parsed()) itn::cmd_rep_bench(cfg);
        if (cnf->parsed()) itn::cmd_conf_bench(cfg);
        return 0;
    } catch (const itn::Error& e) {
        std::cerr << "itn: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "itn: " << e.what() << '\n';
        return kExitRuntime;
    }
}
