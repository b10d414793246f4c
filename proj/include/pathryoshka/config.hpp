#pragma once

#include <string>
#include <vector>

#include "pathryoshka/checkpoint.hpp"
#include "pathryoshka/teacher_hub.hpp"
#include "pathryoshka/tile_dataset.hpp"
#include "pathryoshka/trainer.hpp"

namespace pathryoshka {

// One experiment = one config file. Parsing is strict: unknown keys are
// rejected with their dot path so typos never silently fall back to defaults.

struct DatasetSection {
    bool synthetic = true;
    std::string manifest;  // used when synthetic == false
    std::uint64_t seed = 0;
    int classes = 4;
    int per_class = 50;
    int size = 256;
    double holdout = 0.2;  // stratified eval split fraction

    void validate() const;
};

struct EvalSection {
    std::vector<std::string> tasks = {"knn"};
    std::vector<int> dims;  // empty: use the model's nesting levels
    int k = 10;
    int K = 5;
    int seeds = 5;
    int probe_epochs = 200;
    int runtime_n = 10000;
    int runtime_repeats = 3;
    int bench_batch = 32;
    int bench_batches = 20;
    std::string bench_precision = "half";

    void validate() const;
};

struct ExperimentConfig {
    DatasetSection dataset;
    std::string model_preset = "tiny";  // "B", "S", "tiny" or "custom"
    BackboneConfig model;               // only read when preset == "custom"
    std::vector<TeacherSpec> teachers;
    TrainConfig train;
    EvalSection eval;
    std::string out_dir = "runs/exp";

    BackboneConfig resolved_model() const;
    void validate() const;
};

// Strict parse; every key is checked against the schema.
ExperimentConfig parse_experiment_config(const json& j);
json experiment_config_to_json(const ExperimentConfig& c);

// Reads the file, applies dot-path overrides ("train.seed=3"), parses.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});

// Applies "a.b.c=value" onto a JSON tree. Values parse as JSON when they can
// (numbers, bools, arrays), else as strings. The path must already exist so
// typos are caught, not created.
void apply_override(json& j, const std::string& assignment);

// Builds (synthetic) or loads the dataset named by the config, already split
// into train/holdout.
struct DatasetPair {
    DatasetManifest train;
    DatasetManifest holdout;
};
DatasetPair resolve_dataset(const DatasetSection& d);

// Resolved config + seeds + a source snapshot hash, written into out_dir so a
// run is reproducible from its own directory.
void write_run_snapshot(const ExperimentConfig& c, const std::string& out_dir);

}  // namespace pathryoshka
