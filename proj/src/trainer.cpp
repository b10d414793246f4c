#include "pathryoshka/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace pathryoshka {

void TrainConfig::validate() const {
    check(total_steps >= 1, Errc::ConfigError, "total_steps must be >= 1");
    check(batch_size >= 2 && batch_size % 2 == 0, Errc::ConfigError,
          "batch_size counts both crops per tile and must be even, >= 2");
    check(lr_end > 0.0 && lr_end <= lr_start, Errc::ConfigError, "need 0 < lr_end <= lr_start");
    check(wd_start >= 0.0 && wd_end >= 0.0, Errc::ConfigError, "weight decay must be >= 0");
    check(ema_start >= 0.0 && ema_start <= ema_end && ema_end <= 1.0, Errc::ConfigError,
          "need 0 <= ema_start <= ema_end <= 1");
    check(levels_depth >= 1, Errc::ConfigError, "levels_depth must be >= 1");
    check(clip_norm >= 0.0, Errc::ConfigError, "clip_norm must be >= 0 (0 disables)");
    check(precision == "float32", Errc::ConfigError, "training supports precision 'float32' only");
    check(checkpoint_every >= 0, Errc::ConfigError, "checkpoint_every must be >= 0");
    aug.validate();
}

void to_json(json& j, const VisualAugConfig& c) {
    j = json{{"hed_scale", c.hed_scale},
             {"hed_shift", c.hed_shift},
             {"blur_sigma_min", c.blur_sigma_min},
             {"blur_sigma_max", c.blur_sigma_max},
             {"blur_prob", c.blur_prob}};
}

void from_json(const json& j, VisualAugConfig& c) {
    c.hed_scale = j.value("hed_scale", c.hed_scale);
    c.hed_shift = j.value("hed_shift", c.hed_shift);
    c.blur_sigma_min = j.value("blur_sigma_min", c.blur_sigma_min);
    c.blur_sigma_max = j.value("blur_sigma_max", c.blur_sigma_max);
    c.blur_prob = j.value("blur_prob", c.blur_prob);
    c.validate();
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"total_steps", c.total_steps},
             {"batch_size", c.batch_size},
             {"lr_start", c.lr_start},
             {"lr_end", c.lr_end},
             {"wd_start", c.wd_start},
             {"wd_end", c.wd_end},
             {"ema_start", c.ema_start},
             {"ema_end", c.ema_end},
             {"levels_depth", c.levels_depth},
             {"crop_ablation", c.crop_ablation},
             {"seed", c.seed},
             {"precision", c.precision},
             {"clip_norm", c.clip_norm},
             {"adam_beta1", c.adam_beta1},
             {"adam_beta2", c.adam_beta2},
             {"adam_eps", c.adam_eps},
             {"checkpoint_every", c.checkpoint_every},
             {"aug", c.aug},
             {"w_cls", c.weights.w_cls},
             {"w_patch", c.weights.w_patch}};
}

void from_json(const json& j, TrainConfig& c) {
    c.total_steps = j.value("total_steps", c.total_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_start = j.value("lr_start", c.lr_start);
    c.lr_end = j.value("lr_end", c.lr_end);
    c.wd_start = j.value("wd_start", c.wd_start);
    c.wd_end = j.value("wd_end", c.wd_end);
    c.ema_start = j.value("ema_start", c.ema_start);
    c.ema_end = j.value("ema_end", c.ema_end);
    c.levels_depth = j.value("levels_depth", c.levels_depth);
    c.crop_ablation = j.value("crop_ablation", c.crop_ablation);
    c.seed = j.value("seed", c.seed);
    c.precision = j.value("precision", c.precision);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("aug")) j.at("aug").get_to(c.aug);
    c.weights.w_cls = j.value("w_cls", c.weights.w_cls);
    c.weights.w_patch = j.value("w_patch", c.weights.w_patch);
    c.validate();
}

double cosine_schedule(double start, double end, std::int64_t step, std::int64_t total) {
    check(total >= 1, Errc::ConfigError, "schedule total must be >= 1");
    if (step < 0) step = 0;
    if (step > total) step = total;
    const double t = double(step) / double(total);
    return end + (start - end) * (1.0 + std::cos(3.14159265358979323846 * t)) / 2.0;
}

TrainState init_train_state(const TrainConfig& cfg, const BackboneConfig& model_cfg,
                            const std::vector<Teacher>& teachers, Preprocess student_prep) {
    cfg.validate();
    model_cfg.validate();
    check(!teachers.empty(), Errc::ConfigError, "need at least one teacher");

    TrainState st;
    st.cfg = cfg;
    st.step = 0;
    st.student = build_vit<float>(model_cfg, cfg.seed, student_prep);
    std::vector<std::string> names;
    std::vector<int> dims;
    for (const auto& t : teachers) {
        names.push_back(t.spec().name);
        dims.push_back(t.spec().dim);
    }
    st.heads = build_head_bank<float>(model_cfg.width, names, dims,
                                      nesting_levels(model_cfg.width, cfg.levels_depth),
                                      hash_combine(cfg.seed, fnv1a("heads")));
    st.ema = st.student;
    return st;
}

Trainer::Trainer(TrainState state, DatasetManifest manifest, std::vector<Teacher> teachers)
    : state_(std::move(state)), manifest_(std::move(manifest)), teachers_(std::move(teachers)) {
    state_.cfg.validate();
    manifest_.validate();
    check(!manifest_.records.empty(), Errc::EmptyDataset, "training manifest is empty");
    check(teachers_.size() == state_.heads.teacher_names.size(), Errc::ConfigError,
          "teacher count does not match head bank");
    for (std::size_t t = 0; t < teachers_.size(); ++t) {
        check(teachers_[t].spec().name == state_.heads.teacher_names[t], Errc::ConfigError,
              "teacher order mismatch vs head bank");
        check(teachers_[t].spec().dim == state_.heads.teacher_dims[t], Errc::ConfigError,
              "teacher dim mismatch vs head bank");
    }
}

LossReport Trainer::step() {
    const TrainConfig& cfg = state_.cfg;
    const BackboneConfig& mc = state_.student.cfg;
    const std::int64_t s = state_.step;
    const int n_tiles = cfg.batch_size / 2;
    const int n_teachers = int(teachers_.size());
    const int gsq = mc.grid_sq();
    const bool ablate = cfg.crop_ablation;

    // Per-step streams derive from (seed, purpose, step): resume needs no rng state.
    auto records = sample_by_proportion(manifest_, n_tiles, rng_at(cfg.seed, "batch", std::uint64_t(s)).state());

    std::vector<ViewSet> views;
    views.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Image tile = load_tile(records[i]);
        views.push_back(make_training_views(tile, n_teachers, cfg.aug,
                                            rng_at(cfg.seed, "views", std::uint64_t(s), std::uint64_t(i))));
    }

    std::vector<const Image*> student_views;
    for (const auto& v : views) student_views.push_back(&v.aligned[0]);
    if (!ablate)
        for (const auto& v : views) student_views.push_back(&v.nonaligned[0]);
    MatF patch_rows = im2row(student_views, state_.student.prep, mc.patch_size);

    auto targets = std::vector<TeacherTargetsT<float>>(std::size_t(n_teachers));
    for (int t = 0; t < n_teachers; ++t) {
        const Teacher& teacher = teachers_[t];
        const int gt = teacher.spec().grid;
        std::vector<const Image*> tviews;
        for (const auto& v : views) tviews.push_back(&v.aligned[std::size_t(1 + t)]);
        BatchTokens bt = teacher.forward(tviews);

        auto& tg = targets[std::size_t(t)];
        tg.name = teacher.spec().name;
        tg.cls_aligned = bt.cls;
        if (gt == mc.grid()) {
            tg.patches_aligned_std = bt.patches;
        } else {
            tg.patches_aligned_std.resize(std::int64_t(n_tiles) * gsq, teacher.spec().dim);
            for (int i = 0; i < n_tiles; ++i)
                tg.patches_aligned_std.middleRows(std::int64_t(i) * gsq, gsq) =
                    resample_patch_grid(bt.patches.middleRows(std::int64_t(i) * gt * gt, gt * gt), gt, mc.grid());
        }
        standardize_patch_tokens(tg.patches_aligned_std, compute_batch_stats(tg.patches_aligned_std));

        if (!ablate) {
            std::vector<const Image*> nviews;
            for (const auto& v : views) nviews.push_back(&v.nonaligned[std::size_t(1 + t)]);
            tg.cls_nonaligned = teacher.forward(nviews).cls;
        }
    }

    Tape<float> tape;
    LeafMap<float> map;
    push_vit_leaves(tape, state_.student, "backbone/", map, true);
    push_head_leaves(tape, state_.heads, map, true);
    int input = tape.leaf(std::move(patch_rows), false);
    VitTapeOut<float> fwd = vit_tape_forward(tape, mc, map, "backbone/", input);

    int cls_aligned = ablate ? fwd.cls : tape.slice_rows(fwd.cls, 0, n_tiles);
    int cls_nonaligned = ablate ? -1 : tape.slice_rows(fwd.cls, n_tiles, n_tiles);
    int patches_aligned = ablate ? fwd.patches : tape.slice_rows(fwd.patches, 0, n_tiles * gsq);

    LossNodes<float> nodes = build_total_loss(tape, state_.heads, map, cls_aligned, cls_nonaligned,
                                              patches_aligned, targets, cfg.weights);
    LossReport report = report_from_nodes(tape, nodes);
    if (!report.finite())
        fail(Errc::NonFiniteLoss, "aborting at step " + std::to_string(s) + ": " + report.dump());

    tape.backward(nodes.total);

    std::vector<std::pair<std::string, MatF*>> params;
    state_.student.visit([&](const std::string& n, MatF& m) { params.push_back({"backbone/" + n, &m}); });
    state_.heads.visit([&](const std::string& n, MatF& m) { params.push_back({n, &m}); });

    double sq_norm = 0.0;
    for (auto& [key, p] : params) sq_norm += tape.gbuf(map.at(key)).cast<double>().squaredNorm();
    const double gnorm = std::sqrt(sq_norm);
    const float clip_scale =
        (cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm) ? float(cfg.clip_norm / gnorm) : 1.0f;

    const double lr = cosine_schedule(cfg.lr_start, cfg.lr_end, s, cfg.total_steps);
    const double wd = cosine_schedule(cfg.wd_start, cfg.wd_end, s, cfg.total_steps);
    const double ema_decay = cosine_schedule(cfg.ema_start, cfg.ema_end, s, cfg.total_steps);

    const float b1 = float(cfg.adam_beta1), b2 = float(cfg.adam_beta2);
    const double t_adam = double(s + 1);
    const float bc1 = float(1.0 - std::pow(cfg.adam_beta1, t_adam));
    const float bc2 = float(1.0 - std::pow(cfg.adam_beta2, t_adam));
    const float eps = float(cfg.adam_eps);
    const float flr = float(lr);
    const float fwd_decay = float(lr * wd);

    for (auto& [key, p] : params) {
        const MatF& g = tape.gbuf(map.at(key));
        auto& [m1, m2] = state_.opt.moments[key];
        if (m1.size() == 0) {
            m1 = MatF::Zero(p->rows(), p->cols());
            m2 = MatF::Zero(p->rows(), p->cols());
        }
        auto ge = (g.array() * clip_scale).eval();
        m1.array() = b1 * m1.array() + (1.0f - b1) * ge;
        m2.array() = b2 * m2.array() + (1.0f - b2) * ge.square();
        p->array() -= flr * ((m1.array() / bc1) / ((m2.array() / bc2).sqrt() + eps)) + fwd_decay * p->array();
    }

    ema_update(state_.student, state_.ema, ema_decay);
    state_.step += 1;
    return report;
}

void Trainer::run(const std::string& out_dir,
                  const std::function<void(const TrainState&, const LossReport&)>& on_step) {
    namespace fs = std::filesystem;
    std::ofstream metrics;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        metrics.open(out_dir + "/metrics.jsonl", state_.step > 0 ? std::ios::app : std::ios::trunc);
        check(bool(metrics), Errc::IoError, "cannot open metrics log in " + out_dir);
    }

    const TrainConfig& cfg = state_.cfg;
    while (state_.step < cfg.total_steps) {
        const std::int64_t s = state_.step;
        const double lr = cosine_schedule(cfg.lr_start, cfg.lr_end, s, cfg.total_steps);
        const double wd = cosine_schedule(cfg.wd_start, cfg.wd_end, s, cfg.total_steps);
        const double ema = cosine_schedule(cfg.ema_start, cfg.ema_end, s, cfg.total_steps);
        LossReport r = step();

        if (metrics.is_open()) {
            json terms = json::object();
            for (auto& [k, v] : r.breakdown) terms[k] = v;
            json line = {{"step", state_.step},         {"lr", lr},
                         {"wd", wd},                    {"ema_decay", ema},
                         {"total", r.total},            {"cls_aligned", r.cls_aligned},
                         {"cls_nonaligned", r.cls_nonaligned}, {"patch_aligned", r.patch_aligned},
                         {"terms", std::move(terms)}};
            metrics << line.dump() << '\n';
            metrics.flush();
        }
        if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
            (state_.step % cfg.checkpoint_every == 0 || state_.step == cfg.total_steps)) {
            save_train_checkpoint(state_, out_dir + "/ckpt_" + std::to_string(state_.step) + ".pryk");
            save_train_checkpoint(state_, out_dir + "/last.pryk");
        }
        if (on_step) on_step(state_, r);
    }
    if (!out_dir.empty()) save_train_checkpoint(state_, out_dir + "/last.pryk");
}

TrainState run_training(const TrainConfig& cfg, const BackboneConfig& model_cfg,
                        const DatasetManifest& manifest, const std::vector<TeacherSpec>& teacher_specs,
                        const std::string& out_dir) {
    std::vector<Teacher> teachers;
    for (const auto& spec : teacher_specs) teachers.push_back(load_teacher(spec));
    TrainState st = init_train_state(cfg, model_cfg, teachers);
    Trainer trainer(std::move(st), manifest, std::move(teachers));
    trainer.run(out_dir);
    if (!out_dir.empty()) {
        save_train_checkpoint(trainer.state(), out_dir + "/last.pryk");
        export_deployed(out_dir + "/last.pryk", true, out_dir + "/deployed.pryk");
    }
    return trainer.state();
}

void save_train_checkpoint(const TrainState& state, const std::string& path) {
    Archive ar;
    ar.meta["format"] = 1;
    ar.meta["kind"] = "train";
    ar.meta["step"] = state.step;
    ar.meta["model"] = state.student.cfg;
    ar.meta["preprocess"] = state.student.prep;
    ar.meta["train_config"] = state.cfg;
    ar.meta["activation"] = "silu";
    json teachers = json::array();
    for (std::size_t t = 0; t < state.heads.teacher_names.size(); ++t)
        teachers.push_back({{"name", state.heads.teacher_names[t]}, {"dim", state.heads.teacher_dims[t]}});
    ar.meta["teachers"] = std::move(teachers);
    ar.meta["levels"] = state.heads.levels.levels;
    ar.meta["has_ema"] = true;

    put_vit(ar, state.student, "backbone/");
    put_vit(ar, state.ema, "ema/");
    state.heads.visit_const([&](const std::string& n, const MatF& m) { ar.put(n, m); });
    for (const auto& [key, mm] : state.opt.moments) {
        ar.put("opt/m/" + key, mm.first);
        ar.put("opt/v/" + key, mm.second);
    }
    ar.save(path);
}

TrainState load_train_checkpoint(const std::string& path) {
    Archive ar = Archive::load(path);
    check(ar.meta.value("kind", "") == "train", Errc::ConfigError, "not a training checkpoint: " + path);
    BackboneConfig mc = ar.meta.at("model").get<BackboneConfig>();
    Preprocess prep = ar.meta.at("preprocess").get<Preprocess>();

    TrainState st;
    st.cfg = ar.meta.at("train_config").get<TrainConfig>();
    st.step = ar.meta.at("step").get<std::int64_t>();
    st.student = read_vit(ar, "backbone/", mc, prep);
    st.ema = read_vit(ar, "ema/", mc, prep);

    std::vector<std::string> names;
    std::vector<int> dims;
    for (const auto& t : ar.meta.at("teachers")) {
        names.push_back(t.at("name").get<std::string>());
        dims.push_back(t.at("dim").get<int>());
    }
    NestingLevels levels;
    ar.meta.at("levels").get_to(levels.levels);
    st.heads = build_head_bank<float>(mc.width, names, dims, levels, 0);
    st.heads.visit([&](const std::string& n, MatF& m) {
        const MatF& stored = ar.get(n);
        check(stored.rows() == m.rows() && stored.cols() == m.cols(), Errc::ShapeError,
              "head shape mismatch at " + n);
        m = stored;
    });

    std::vector<std::string> param_keys;
    st.student.visit([&](const std::string& n, MatF&) { param_keys.push_back("backbone/" + n); });
    st.heads.visit([&](const std::string& n, MatF&) { param_keys.push_back(n); });
    for (const auto& key : param_keys)
        if (ar.has("opt/m/" + key))
            st.opt.moments[key] = {ar.get("opt/m/" + key), ar.get("opt/v/" + key)};
    return st;
}

Archive export_deployed_archive(const Archive& train_checkpoint, bool use_ema) {
    const Archive& ar = train_checkpoint;
    const std::string src = use_ema ? "ema/" : "backbone/";
    if (use_ema) {
        bool any = ar.meta.value("has_ema", false);
        for (auto& [k, m] : ar.arrays())
            if (k.rfind("ema/", 0) == 0) any = true;
        check(any, Errc::MissingEMA, "checkpoint has no EMA shadow");
    }
    Archive out;
    out.meta["format"] = 1;
    out.meta["kind"] = "deploy";
    out.meta["step"] = ar.meta.value("step", std::int64_t(0));
    out.meta["model"] = ar.meta.at("model");
    if (ar.meta.contains("preprocess")) out.meta["preprocess"] = ar.meta.at("preprocess");
    out.meta["from_ema"] = use_ema;
    bool copied = false;
    for (auto& [k, m] : ar.arrays()) {
        if (k.rfind(src, 0) == 0) {
            out.put("backbone/" + k.substr(src.size()), m);
            copied = true;
        }
    }
    check(copied, use_ema ? Errc::MissingEMA : Errc::KeyError, "no " + src + "* arrays in checkpoint");
    return out;
}

void export_deployed(const std::string& checkpoint_path, bool use_ema, const std::string& out_path) {
    Archive ar = Archive::load(checkpoint_path);
    export_deployed_archive(ar, use_ema).save(out_path);
}

VitParams load_deployed(const std::string& path) {
    Archive ar = Archive::load(path);
    BackboneConfig mc = ar.meta.at("model").get<BackboneConfig>();
    Preprocess prep;
    if (ar.meta.contains("preprocess")) prep = ar.meta.at("preprocess").get<Preprocess>();
    return read_vit(ar, "backbone/", mc, prep);
}

}  // namespace pathryoshka
