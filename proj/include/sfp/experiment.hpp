#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfp/config.hpp"
#include "sfp/prune.hpp"

namespace sfp {

struct RunResult {
    std::string dir;
    std::uint64_t log_hash = 0;
    double final_test_accuracy = 0.0;
    double equivalence_max_diff = 0.0;
    double flops_pruned_ratio = 0.0;
    PruneRecord record;
};

/// Executes the full pipeline for one configuration: data, training with
/// epoch-end pruning, compaction, equivalence check and FLOPs accounting.
/// All artifacts land under `out_dir`:
///   config.toml, log.csv, prune_record.csv, model.sfp, compact.sfp (+ the
///   .map.csv sidecar), flops_*.{csv,txt}, equivalence.txt, manifest.json,
///   and timing.{csv,txt} when benchmarking is enabled.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

/// Three-seed variant: seeds s, s+1, s+2 in seed-<n>/ subdirectories plus a
/// summary.csv with mean and standard deviation of the final accuracy.
std::vector<RunResult> run_three_seeds(const ExperimentConfig& cfg, const std::string& out_dir);

struct Preset {
    std::string name;
    std::vector<std::pair<std::string, ExperimentConfig>> runs;
};

/// Desk-scale experiment presets:
///   desk-chain, desk-resnet8, ablation-norm, ablation-rate,
///   ablation-interval, ablation-layer.
Preset make_preset(const std::string& name);
std::vector<std::string> preset_names();

/// Runs every configuration of a preset and writes a summary.csv.
std::vector<RunResult> run_preset(const std::string& name, const std::string& out_dir);

std::string experiment_log_csv(const ExperimentConfig& cfg, const TrainLog& log);

} // namespace sfp
