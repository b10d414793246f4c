#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pathryoshka/augmentation.hpp"
#include "pathryoshka/checkpoint.hpp"
#include "pathryoshka/heads.hpp"
#include "pathryoshka/loss.hpp"
#include "pathryoshka/teacher_hub.hpp"
#include "pathryoshka/tile_dataset.hpp"
#include "pathryoshka/vit.hpp"

namespace pathryoshka {

struct TrainConfig {
    std::int64_t total_steps = 2000;
    int batch_size = 64;  // student views per step, both crops counted: batch_size/2 tiles
    double lr_start = 1e-4, lr_end = 1e-5;
    double wd_start = 0.01, wd_end = 0.02;
    double ema_start = 0.994, ema_end = 1.0;
    int levels_depth = 5;
    bool crop_ablation = false;  // true: no non-aligned crop, CLS loss on aligned only
    std::uint64_t seed = 0;
    std::string precision = "float32";
    double clip_norm = 3.0;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    std::int64_t checkpoint_every = 500;
    VisualAugConfig aug;
    LossWeights weights;

    void validate() const;
};

void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);
void to_json(json& j, const VisualAugConfig& c);
void from_json(const json& j, VisualAugConfig& c);

// end + (start-end)*(1+cos(pi*step/total))/2, step clamped into [0, total].
double cosine_schedule(double start, double end, std::int64_t step, std::int64_t total);

struct AdamState {
    // first/second moments keyed by parameter name (same keys as checkpoints)
    std::map<std::string, std::pair<MatF, MatF>> moments;
};

// The rng needs no stored state: every stream is derived from (seed, purpose,
// step), so a loaded checkpoint resumes bit-identically.
struct TrainState {
    std::int64_t step = 0;
    VitParams student;
    HeadBank heads;
    VitParams ema;
    AdamState opt;
    TrainConfig cfg;
};

TrainState init_train_state(const TrainConfig& cfg, const BackboneConfig& model_cfg,
                            const std::vector<Teacher>& teachers, Preprocess student_prep = {});

class Trainer {
public:
    Trainer(TrainState state, DatasetManifest manifest, std::vector<Teacher> teachers);

    // One optimizer update + EMA update; state.step advances by 1.
    LossReport step();

    const TrainState& state() const { return state_; }
    TrainState& mutable_state() { return state_; }
    const std::vector<Teacher>& teachers() const { return teachers_; }

    // Metrics JSONL + periodic checkpoints under out_dir (empty = no files).
    void run(const std::string& out_dir,
             const std::function<void(const TrainState&, const LossReport&)>& on_step = {});

private:
    TrainState state_;
    DatasetManifest manifest_;
    std::vector<Teacher> teachers_;
};

// Convenience wrapper: init, train, checkpoint, export EMA deploy archive.
TrainState run_training(const TrainConfig& cfg, const BackboneConfig& model_cfg,
                        const DatasetManifest& manifest, const std::vector<TeacherSpec>& teacher_specs,
                        const std::string& out_dir);

void save_train_checkpoint(const TrainState& state, const std::string& path);
TrainState load_train_checkpoint(const std::string& path);

// Backbone-only archive (EMA weights when use_ema). MissingEMA if absent.
Archive export_deployed_archive(const Archive& train_checkpoint, bool use_ema);
void export_deployed(const std::string& checkpoint_path, bool use_ema, const std::string& out_path);
VitParams load_deployed(const std::string& path);

}  // namespace pathryoshka
