#include "pathryoshka/recipes.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pathryoshka/plot.hpp"

namespace pathryoshka {

namespace fs = std::filesystem;

namespace {

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    check(bool(out), Errc::IoError, "cannot write " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << '\n';
    }
}

std::string num(double v) {
    std::ostringstream o;
    o.precision(10);
    o << v;
    return o.str();
}

std::vector<int> eval_dims(const ExperimentConfig& cfg, int width) {
    if (!cfg.eval.dims.empty()) {
        for (int m : cfg.eval.dims)
            check(m <= width, Errc::InvalidDim, "eval dim exceeds model width");
        return cfg.eval.dims;
    }
    return nesting_levels(width, cfg.train.levels_depth).levels;
}

struct LoadedModel {
    VitParams backbone;       // what embeddings run on (EMA for train archives)
    bool has_train_state = false;
    TrainState train_state;   // only when the archive was a training checkpoint
};

LoadedModel load_model_for_eval(const std::string& checkpoint_path) {
    check(fs::exists(checkpoint_path), Errc::IoError, "checkpoint not found: " + checkpoint_path);
    Archive ar = Archive::load(checkpoint_path);
    LoadedModel out;
    if (ar.meta.value("kind", "") == "train") {
        out.train_state = load_train_checkpoint(checkpoint_path);
        out.backbone = out.train_state.ema;
        out.has_train_state = true;
    } else {
        out.backbone = load_deployed(checkpoint_path);
    }
    return out;
}

std::vector<Teacher> load_teachers(const std::vector<TeacherSpec>& specs) {
    std::vector<Teacher> out;
    for (const auto& s : specs) out.push_back(load_teacher(s));
    return out;
}

}  // namespace

json run_eval_tasks(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    const std::vector<std::string>& tasks, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    LoadedModel model = load_model_for_eval(checkpoint_path);
    const int width = model.backbone.cfg.width;
    const std::vector<int> dims = eval_dims(cfg, width);

    DatasetPair data = resolve_dataset(cfg.dataset);
    json summary;
    summary["checkpoint"] = checkpoint_path;
    summary["dims"] = dims;

    const bool needs_embeddings =
        std::any_of(tasks.begin(), tasks.end(), [](const std::string& t) {
            return t == "knn" || t == "subset" || t == "probe" || t == "retrieval" || t == "pca";
        });
    EmbeddingSet train_emb, hold_emb;
    if (needs_embeddings) {
        train_emb = embed_dataset(model.backbone, data.train, EmbedMode::cls);
        hold_emb = embed_dataset(model.backbone, data.holdout, EmbedMode::cls);
    }

    for (const std::string& task : tasks) {
        if (task == "knn") {
            std::vector<std::vector<std::string>> rows;
            Series s{"k-NN", {}, {}};
            for (int m : dims) {
                const double acc = knn_classify(train_emb, hold_emb, cfg.eval.k, m);
                rows.push_back({std::to_string(m), num(acc)});
                s.x.push_back(m);
                s.y.push_back(acc);
            }
            write_csv(out_dir + "/knn.csv", {"m", "accuracy"}, rows);
            save_chart({s}, "k-NN accuracy vs prefix dim", "prefix dim", "accuracy",
                       out_dir + "/knn_vs_dim", true);
            summary["knn"] = {{"csv", "knn.csv"}, {"k", cfg.eval.k}};
        } else if (task == "subset") {
            std::vector<std::vector<std::string>> rows;
            for (int m : dims) {
                ProbeResult r = random_subset_baseline(train_emb, hold_emb, cfg.eval.k, m,
                                                       cfg.eval.seeds, cfg.dataset.seed);
                rows.push_back({std::to_string(m), num(r.mean), num(r.stdev)});
            }
            write_csv(out_dir + "/subset.csv", {"m", "mean_accuracy", "std"}, rows);
            summary["subset"] = {{"csv", "subset.csv"}, {"seeds", cfg.eval.seeds}};
        } else if (task == "probe") {
            ProbeResult r = linear_probe(train_emb, hold_emb, cfg.eval.probe_epochs, cfg.eval.seeds,
                                         cfg.dataset.seed);
            summary["probe"] = {{"metric", r.metric}, {"mean", r.mean}, {"std", r.stdev}};
        } else if (task == "retrieval") {
            std::vector<std::vector<std::string>> rows;
            for (int m : dims) {
                const double rec = retrieval_recall(hold_emb, train_emb, cfg.eval.K, m);
                rows.push_back({std::to_string(m), num(rec)});
            }
            write_csv(out_dir + "/retrieval.csv", {"m", "recall"}, rows);
            summary["retrieval"] = {{"csv", "retrieval.csv"}, {"K", cfg.eval.K}};
        } else if (task == "pca") {
            Image tile = resize_shorter_center_crop(load_tile(data.holdout.records.front()),
                                                    model.backbone.cfg.image_size);
            BatchTokens bt = vit_forward_images(model.backbone, {&tile});
            std::vector<Image> strip;
            for (int m : dims) {
                Image up = upscale_nearest(pca_rgb_map(bt.patches, m), 8);
                write_png(out_dir + "/pca_m" + std::to_string(m) + ".png", up);
                strip.push_back(std::move(up));
            }
            write_png(out_dir + "/pca_strip.png", hstack(strip, 4));
            summary["pca"] = {{"per_dim", "pca_m<dim>.png"}, {"strip", "pca_strip.png"}};
        } else if (task == "runtime") {
            EmbeddingSet base =
                make_gaussian_embeddings(cfg.eval.runtime_n, width, 4, cfg.dataset.seed);
            EmbeddingSet queries =
                make_gaussian_embeddings(std::max(1, cfg.eval.runtime_n / 10), width, 4,
                                         cfg.dataset.seed + 1);
            RuntimeProfile prof =
                knn_runtime_profile(base, queries, dims, cfg.eval.k, cfg.eval.runtime_repeats);
            std::vector<std::vector<std::string>> rows;
            for (std::size_t i = 0; i < prof.dims.size(); ++i)
                rows.push_back({std::to_string(prof.dims[i]), num(prof.mean_seconds[i])});
            write_csv(out_dir + "/runtime.csv", {"m", "mean_seconds"}, rows);
            summary["runtime"] = {{"csv", "runtime.csv"}, {"n", cfg.eval.runtime_n}};
        } else if (task == "impact") {
            check(model.has_train_state, Errc::MissingHeads,
                  "teacher impact needs a training checkpoint with heads");
            std::vector<Teacher> teachers = load_teachers(cfg.teachers);
            std::vector<TeacherImpact> impact =
                teacher_impact(model.train_state.student, model.train_state.heads, teachers, data.holdout);
            std::vector<std::vector<std::string>> rows;
            for (const auto& ti : impact)
                rows.push_back({ti.teacher, num(ti.summary.mean), num(ti.summary.stdev),
                                num(ti.features.mean), num(ti.features.stdev)});
            write_csv(out_dir + "/impact.csv",
                      {"teacher", "summary_mean", "summary_std", "features_mean", "features_std"}, rows);
            summary["impact"] = {{"csv", "impact.csv"}};
        } else if (task == "bench") {
            ThroughputResult r = throughput_benchmark(model.backbone, cfg.eval.bench_batch,
                                                      cfg.eval.bench_batches, cfg.eval.bench_precision);
            DeployedCost cost = deployed_cost(model.backbone.cfg);
            summary["bench"] = {{"mean_images_per_s", r.mean_ips},
                                {"std_images_per_s", r.std_ips},
                                {"batch", r.batch},
                                {"batches", r.batches},
                                {"precision", r.precision},
                                {"precision_effective", r.precision_effective},
                                {"params", cost.params},
                                {"flops", cost.flops}};
        } else {
            fail(Errc::ConfigError, "unknown eval task: " + task);
        }
    }

    std::ofstream out(out_dir + "/summary.json");
    check(bool(out), Errc::IoError, "cannot write summary in " + out_dir);
    out << summary.dump(2) << '\n';
    return summary;
}

CropAblationResult run_crop_ablation(const ExperimentConfig& base, const std::string& out_dir) {
    base.validate();
    fs::create_directories(out_dir);
    DatasetPair data = resolve_dataset(base.dataset);
    const BackboneConfig mc = base.resolved_model();

    struct Arm {
        std::string name;
        bool ablate;
        std::vector<LossReport> reports;
        double knn = 0.0;
    };
    std::vector<Arm> arms = {{"crop", false, {}, 0.0}, {"no_crop", true, {}, 0.0}};

    for (Arm& arm : arms) {
        ExperimentConfig cfg = base;
        cfg.train.crop_ablation = arm.ablate;
        cfg.out_dir = out_dir + "/" + arm.name;
        write_run_snapshot(cfg, cfg.out_dir);

        std::vector<Teacher> teachers = load_teachers(cfg.teachers);
        TrainState st = init_train_state(cfg.train, mc, teachers);
        Trainer trainer(std::move(st), data.train, std::move(teachers));
        trainer.run(cfg.out_dir, [&](const TrainState&, const LossReport& r) {
            arm.reports.push_back(r);
        });
        export_deployed(cfg.out_dir + "/last.pryk", true, cfg.out_dir + "/deployed.pryk");

        VitParams deployed = load_deployed(cfg.out_dir + "/deployed.pryk");
        EmbeddingSet tr = embed_dataset(deployed, data.train, EmbedMode::cls);
        EmbeddingSet ho = embed_dataset(deployed, data.holdout, EmbedMode::cls);
        arm.knn = knn_classify(tr, ho, base.eval.k, mc.width);
    }

    CropAblationResult res;
    res.knn_crop = arms[0].knn;
    res.knn_nocrop = arms[1].knn;
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < arms[0].reports.size() && i < arms[1].reports.size(); ++i) {
        const LossReport& a = arms[0].reports[i];
        const LossReport& b = arms[1].reports[i];
        res.max_abs_nonaligned_nocrop = std::max(res.max_abs_nonaligned_nocrop,
                                                 std::abs(b.cls_nonaligned));
        rows.push_back({std::to_string(i), num(a.total), num(b.total), num(a.cls_aligned),
                        num(b.cls_aligned), num(a.cls_nonaligned), num(b.cls_nonaligned),
                        num(a.patch_aligned), num(b.patch_aligned)});
    }
    res.csv_path = out_dir + "/crop_ablation.csv";
    write_csv(res.csv_path,
              {"step", "total_crop", "total_no_crop", "cls_aligned_crop", "cls_aligned_no_crop",
               "cls_nonaligned_crop", "cls_nonaligned_no_crop", "patch_crop", "patch_no_crop"},
              rows);

    json sum = {{"knn_crop", res.knn_crop},
                {"knn_no_crop", res.knn_nocrop},
                {"max_abs_cls_nonaligned_no_crop", res.max_abs_nonaligned_nocrop},
                {"csv", "crop_ablation.csv"}};
    std::ofstream out(out_dir + "/summary.json");
    check(bool(out), Errc::IoError, "cannot write summary in " + out_dir);
    out << sum.dump(2) << '\n';
    return res;
}

NestingAblationResult run_nesting_ablation(const ExperimentConfig& base, const std::string& out_dir) {
    base.validate();
    fs::create_directories(out_dir);
    DatasetPair data = resolve_dataset(base.dataset);
    const BackboneConfig mc = base.resolved_model();
    const std::vector<int> dims = nesting_levels(mc.width, base.train.levels_depth).levels;

    struct Arm {
        std::string name;
        int levels_depth;
        std::vector<double> acc;
    };
    std::vector<Arm> arms = {{"nested", base.train.levels_depth, {}}, {"single", 1, {}}};

    for (Arm& arm : arms) {
        ExperimentConfig cfg = base;
        cfg.train.levels_depth = arm.levels_depth;
        cfg.out_dir = out_dir + "/" + arm.name;
        write_run_snapshot(cfg, cfg.out_dir);

        std::vector<Teacher> teachers = load_teachers(cfg.teachers);
        TrainState st = init_train_state(cfg.train, mc, teachers);
        Trainer trainer(std::move(st), data.train, std::move(teachers));
        trainer.run(cfg.out_dir);
        export_deployed(cfg.out_dir + "/last.pryk", true, cfg.out_dir + "/deployed.pryk");

        VitParams deployed = load_deployed(cfg.out_dir + "/deployed.pryk");
        EmbeddingSet tr = embed_dataset(deployed, data.train, EmbedMode::cls);
        EmbeddingSet ho = embed_dataset(deployed, data.holdout, EmbedMode::cls);
        for (int m : dims) arm.acc.push_back(knn_classify(tr, ho, base.eval.k, m));
    }

    NestingAblationResult res;
    res.dims = dims;
    res.acc_nested = arms[0].acc;
    res.acc_single = arms[1].acc;
    const auto drop = [&](const std::vector<double>& acc) {
        // d down to d/16: four halvings into the ladder
        const std::size_t idx = std::min<std::size_t>(4, acc.size() - 1);
        return acc.front() - acc[idx];
    };
    res.drop_nested = drop(res.acc_nested);
    res.drop_single = drop(res.acc_single);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < dims.size(); ++i)
        rows.push_back({std::to_string(dims[i]), num(res.acc_nested[i]), num(res.acc_single[i])});
    res.csv_path = out_dir + "/nesting_ablation.csv";
    write_csv(res.csv_path, {"m", "acc_nested", "acc_single"}, rows);

    Series sn{"nested", {}, {}}, ss{"single-level", {}, {}};
    for (std::size_t i = 0; i < dims.size(); ++i) {
        sn.x.push_back(dims[i]);
        sn.y.push_back(res.acc_nested[i]);
        ss.x.push_back(dims[i]);
        ss.y.push_back(res.acc_single[i]);
    }
    save_chart({sn, ss}, "Prefix k-NN accuracy: nested vs single-level", "prefix dim", "accuracy",
               out_dir + "/nesting_ablation", true);

    json sum = {{"dims", dims},
                {"acc_nested", res.acc_nested},
                {"acc_single", res.acc_single},
                {"drop_nested", res.drop_nested},
                {"drop_single", res.drop_single},
                {"csv", "nesting_ablation.csv"}};
    std::ofstream out(out_dir + "/summary.json");
    check(bool(out), Errc::IoError, "cannot write summary in " + out_dir);
    out << sum.dump(2) << '\n';
    return res;
}

void write_report(const std::string& run_dir) {
    std::ostringstream md;
    md << "# Run report\n\n`" << run_dir << "`\n";

    if (fs::exists(run_dir + "/run.json")) {
        std::ifstream in(run_dir + "/run.json");
        json j = json::parse(in, nullptr, false);
        if (!j.is_discarded())
            md << "\nSource hash: `" << j.value("source_hash", "?") << "`\n";
    }
    if (fs::exists(run_dir + "/summary.json")) {
        std::ifstream in(run_dir + "/summary.json");
        json j = json::parse(in, nullptr, false);
        if (!j.is_discarded()) {
            md << "\n## Summary\n\n```json\n" << j.dump(2) << "\n```\n";
        }
    }

    // every CSV in the directory becomes a Markdown table
    std::vector<fs::path> csvs;
    for (const auto& e : fs::directory_iterator(run_dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
    std::sort(csvs.begin(), csvs.end());
    for (const auto& p : csvs) {
        std::ifstream in(p);
        std::string line;
        bool header = true;
        md << "\n## " << p.filename().string() << "\n\n";
        int shown = 0;
        while (std::getline(in, line) && shown < 40) {
            md << "|";
            std::stringstream ls(line);
            std::string cell;
            int cells = 0;
            while (std::getline(ls, cell, ',')) {
                md << " " << cell << " |";
                ++cells;
            }
            md << "\n";
            if (header) {
                md << "|";
                for (int i = 0; i < cells; ++i) md << "---|";
                md << "\n";
                header = false;
            }
            ++shown;
        }
    }

    std::ofstream out(run_dir + "/report.md");
    check(bool(out), Errc::IoError, "cannot write report in " + run_dir);
    out << md.str();
}

}  // namespace pathryoshka
