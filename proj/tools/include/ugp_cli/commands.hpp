#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ugp/ingest.hpp"
#include "ugp/pipeline.hpp"

namespace ugp::cli {

namespace fs = std::filesystem;

// Dataset layout: <dir>/scans/*.bin (sorted by name), <dir>/poses.txt, <dir>/calib.txt.
struct PairsOptions {
    fs::path dataset;
    std::vector<double> distances{10.0, 20.0, 30.0, 40.0};
    double band = 2.0;  // accepted overshoot past each distance, meters
    fs::path out;
};

/// Writes pairs_<d>m.json per distance class; returns the written paths.
std::vector<fs::path> cmd_pairs(const PairsOptions &options);

/// Manifest scan paths are resolved against the manifest's directory.
fs::path resolve_scan(const fs::path &manifest, const std::string &path);

struct RegisterOptions {
    fs::path manifest;
    PipelineConfig config;
    fs::path out;
    unsigned jobs = 1;
    bool dump_correspondences = false;
    bool dump_bev = false;
};

/// One JSONL record per pair (manifest order) in results.jsonl, wall times in
/// timings.jsonl, the effective config in config.json. Per-pair failures are
/// recorded and do not stop the batch. Returns the number of failed pairs.
std::size_t cmd_register(const RegisterOptions &options);

struct EvalOptions {
    std::vector<fs::path> results;
    fs::path out;
    eval::Thresholds thresholds;
    bool plots = true;
};

struct EvalSummary {
    eval::RecallSummary recall;
    std::map<int, eval::ErrorSummary> errors;
    std::size_t pairs = 0;
};

/// summary.csv (one row per class plus a mean row), sweep.csv and, with
/// plots on, recall_rre.svg / recall_rte.svg.
EvalSummary cmd_eval(const EvalOptions &options);

struct PerturbOptions {
    fs::path manifest;
    fs::path out;
    std::optional<double> sigma;
    std::optional<std::size_t> sparsify;
    std::uint64_t seed = 0;
};

/// Perturbed copies of every referenced scan under out/scans plus
/// out/manifest.json pointing at them.
fs::path cmd_perturb(const PerturbOptions &options);

struct StatsOptions {
    fs::path manifest;
    PipelineConfig config;
    fs::path out;
    double radius = 2.4;  // neighbourhood count radius, meters
    double tau = 0.6;     // overlap degree radius, meters
};

/// stats.csv: one row per ground-truth corresponding superpoint pair.
fs::path cmd_stats(const StatsOptions &options);

struct SynthOptions {
    std::size_t count = 10;
    std::uint64_t seed = 0;
    ingest::SynthScenario scenario;
    int distance_class = 10;
    fs::path out;
};

/// Synthetic pairs as .bin scans plus out/manifest.json.
fs::path cmd_synth(const SynthOptions &options);

}  // namespace ugp::cli
