#pragma once

#include <string>
#include <vector>

#include "pathryoshka/config.hpp"
#include "pathryoshka/eval.hpp"
#include "pathryoshka/trainer.hpp"

namespace pathryoshka {

// Runs the requested eval tasks against a checkpoint (train or deploy
// archive) and writes CSV/JSON results plus charts under out_dir. Returns the
// aggregated summary that also lands in summary.json.
json run_eval_tasks(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    const std::vector<std::string>& tasks, const std::string& out_dir);

struct CropAblationResult {
    std::string csv_path;               // paired per-step loss components
    double max_abs_nonaligned_nocrop = 0.0;  // should be exactly 0
    double knn_crop = 0.0;              // full-dim holdout accuracy per arm
    double knn_nocrop = 0.0;
};

// Two runs off one config: with and without the non-aligned crop, same seed
// and data stream. Emits crop_ablation.csv pairing both arms step by step.
CropAblationResult run_crop_ablation(const ExperimentConfig& base, const std::string& out_dir);

struct NestingAblationResult {
    std::string csv_path;  // m, acc_nested, acc_single
    std::vector<int> dims;
    std::vector<double> acc_nested;
    std::vector<double> acc_single;
    double drop_nested = 0.0;  // acc(d) - acc(d/16)
    double drop_single = 0.0;
};

// Twin students, one trained with the full level ladder and one with a single
// full-dim level; prefix-truncated k-NN accuracy per level for both.
NestingAblationResult run_nesting_ablation(const ExperimentConfig& base, const std::string& out_dir);

// Aggregates the CSV/JSON results in a run directory into report.md.
void write_report(const std::string& run_dir);

}  // namespace pathryoshka
