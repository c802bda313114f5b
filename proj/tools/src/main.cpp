#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ugp/errors.hpp"
#include "ugp_cli/commands.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("ugp");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char *level = std::getenv("UGP_LOG");
    spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

// Shared pipeline flags: --config plus the command-line overrides.
struct ConfigFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string mask_mode;
    std::string estimator;

    void add(CLI::App *app, bool overrides) {
        app->add_option("--config", config, "pipeline config JSON")->check(CLI::ExistingFile);
        if (!overrides) return;
        app->add_option("--seed", seed, "attention and estimator seed");
        app->add_option("--mask-mode", mask_mode, "progressive or full")->check(CLI::IsMember({"progressive", "full"}));
        app->add_option("--estimator", estimator, "lgr or ransac")->check(CLI::IsMember({"lgr", "ransac"}));
    }

    [[nodiscard]] ugp::PipelineConfig resolve() const {
        ugp::PipelineConfig c = config.empty() ? ugp::PipelineConfig{} : ugp::load_config(config);
        if (seed) {
            c.attention.seed = *seed;
            c.estimator.params.seed = *seed;
        }
        if (!mask_mode.empty()) c.attention.mask_mode = ugp::parse_mask_mode(mask_mode);
        if (!estimator.empty()) c.estimator.kind = ugp::parse_estimator(estimator);
        c.validate();
        return c;
    }
};

}  // namespace

int main(int argc, char **argv) {
    using namespace ugp::cli;
    setup_logging();

    CLI::App app{"ugp: LiDAR point cloud registration toolkit"};
    app.require_subcommand(1);

    PairsOptions pairs;
    auto *pairs_cmd = app.add_subcommand("pairs", "build pair manifests from a KITTI-format sequence");
    pairs_cmd->add_option("dataset", pairs.dataset, "directory with scans/, poses.txt, calib.txt")->required();
    pairs_cmd->add_option("--distances", pairs.distances, "distance classes in meters")->delimiter(',');
    pairs_cmd->add_option("--band", pairs.band, "accepted overshoot past each distance, meters");
    pairs_cmd->add_option("--out", pairs.out, "output directory")->required();

    RegisterOptions reg;
    ConfigFlags reg_flags;
    auto *reg_cmd = app.add_subcommand("register", "register every pair of a manifest");
    reg_cmd->add_option("--manifest", reg.manifest)->required()->check(CLI::ExistingFile);
    reg_cmd->add_option("--out", reg.out, "output directory")->required();
    reg_cmd->add_option("--jobs", reg.jobs, "worker threads")->check(CLI::PositiveNumber);
    reg_cmd->add_flag("--dump-correspondences", reg.dump_correspondences, "write coarse/dense correspondence JSONL");
    reg_cmd->add_flag("--dump-bev", reg.dump_bev, "write BEV occupancy images (PGM)");
    reg_flags.add(reg_cmd, true);

    EvalOptions ev;
    bool no_plots = false;
    auto *eval_cmd = app.add_subcommand("eval", "summarize results JSONL files");
    eval_cmd->add_option("results", ev.results, "results.jsonl files")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", ev.out, "output directory")->required();
    eval_cmd->add_option("--rre", ev.thresholds.rre_deg, "rotation threshold, degrees");
    eval_cmd->add_option("--rte", ev.thresholds.rte_m, "translation threshold, meters");
    eval_cmd->add_flag("--no-plots", no_plots, "skip SVG plots");

    PerturbOptions pert;
    auto *pert_cmd = app.add_subcommand("perturb", "noisy or sparsified copies of a manifest's scans");
    pert_cmd->add_option("--manifest", pert.manifest)->required()->check(CLI::ExistingFile);
    pert_cmd->add_option("--out", pert.out, "output directory")->required();
    pert_cmd->add_option("--sigma", pert.sigma, "Gaussian noise std, meters");
    pert_cmd->add_option("--sparsify", pert.sparsify, "target point count");
    pert_cmd->add_option("--seed", pert.seed);

    StatsOptions stats;
    ConfigFlags stats_flags;
    auto *stats_cmd = app.add_subcommand("stats", "neighbourhood counts and overlap of corresponding superpoints");
    stats_cmd->add_option("--manifest", stats.manifest)->required()->check(CLI::ExistingFile);
    stats_cmd->add_option("--out", stats.out, "output directory")->required();
    stats_cmd->add_option("--radius", stats.radius, "neighbourhood radius, meters");
    stats_cmd->add_option("--tau", stats.tau, "overlap radius, meters");
    stats_flags.add(stats_cmd, false);

    SynthOptions syn;
    bool no_occlusion = false;
    auto *syn_cmd = app.add_subcommand("synth", "synthetic scan pairs and their manifest");
    syn_cmd->add_option("--out", syn.out, "output directory")->required();
    syn_cmd->add_option("--count", syn.count);
    syn_cmd->add_option("--seed", syn.seed, "seed of the first pair");
    syn_cmd->add_option("--baseline-min", syn.scenario.baseline_min, "sensor displacement, meters");
    syn_cmd->add_option("--baseline-max", syn.scenario.baseline_max, "sensor displacement, meters");
    syn_cmd->add_option("--frame-rotation", syn.scenario.frame_rotation_deg, "max extra yaw of the source frame, degrees");
    syn_cmd->add_option("--frame-translation", syn.scenario.frame_translation, "max extra offset of the source frame, meters");
    syn_cmd->add_option("--density-decay", syn.scenario.density_decay);
    syn_cmd->add_flag("--no-occlusion", no_occlusion);
    syn_cmd->add_option("--class", syn.distance_class, "distance class written to the manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*pairs_cmd) {
            for (const auto &p : cmd_pairs(pairs)) std::cout << p.string() << '\n';
        } else if (*reg_cmd) {
            reg.config = reg_flags.resolve();
            const std::size_t failed = cmd_register(reg);
            if (failed > 0) spdlog::warn("{} pairs failed; see results.jsonl", failed);
        } else if (*eval_cmd) {
            ev.plots = !no_plots;
            const EvalSummary s = cmd_eval(ev);
            std::printf("pairs %zu  mRR %.2f%%\n", s.pairs, 100.0 * s.recall.mrr);
        } else if (*pert_cmd) {
            std::cout << cmd_perturb(pert).string() << '\n';
        } else if (*stats_cmd) {
            stats.config = stats_flags.resolve();
            std::cout << cmd_stats(stats).string() << '\n';
        } else if (*syn_cmd) {
            syn.scenario.occlusion = !no_occlusion;
            std::cout << cmd_synth(syn).string() << '\n';
        }
    } catch (const ugp::InvalidArgument &e) {
        spdlog::error("{}", e.what());
        return kUsage;
    } catch (const ugp::DataError &e) {
        spdlog::error("{}", e.what());
        return kData;
    } catch (const ugp::EstimationError &e) {
        spdlog::error("{}", e.what());
        return kData;
    } catch (const std::exception &e) {
        spdlog::error("internal error: {}", e.what());
        return kInternal;
    }
    return kOk;
}
