// pathryoshka CLI: distill / eval / export / bench / make-synthetic / report.
// Exit codes: 0 ok, 1 unexpected failure, 2 config error, 3 missing file,
// 4 missing EMA weights.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "pathryoshka/config.hpp"
#include "pathryoshka/recipes.hpp"

namespace fs = std::filesystem;
using namespace pathryoshka;

namespace {

std::string out_dir_override(const std::string& configured) {
    const char* env = std::getenv("PATHRYOSHKA_OUT_DIR");
    return env && *env ? std::string(env) : configured;
}

int run_distill(const std::string& config_path, const std::vector<std::string>& sets,
                const std::string& recipe, bool resume) {
    ExperimentConfig cfg = load_experiment_config(config_path, sets);
    const std::string out_dir = out_dir_override(cfg.out_dir);

    if (recipe == "crop-ablation") {
        CropAblationResult r = run_crop_ablation(cfg, out_dir);
        std::cout << "crop ablation done: " << r.csv_path << "\n"
                  << "  knn crop=" << r.knn_crop << " no_crop=" << r.knn_nocrop
                  << " max|cls_nonaligned,no_crop|=" << r.max_abs_nonaligned_nocrop << "\n";
        return 0;
    }
    if (recipe == "nesting-ablation") {
        NestingAblationResult r = run_nesting_ablation(cfg, out_dir);
        std::cout << "nesting ablation done: " << r.csv_path << "\n"
                  << "  drop nested=" << r.drop_nested << " single=" << r.drop_single << "\n";
        return 0;
    }
    check(recipe.empty() || recipe == "none", Errc::ConfigError, "unknown recipe: " + recipe);

    write_run_snapshot(cfg, out_dir);
    DatasetPair data = resolve_dataset(cfg.dataset);
    std::vector<Teacher> teachers;
    for (const auto& s : cfg.teachers) teachers.push_back(load_teacher(s));

    TrainState st;
    if (resume && fs::exists(out_dir + "/last.pryk")) {
        st = load_train_checkpoint(out_dir + "/last.pryk");
        std::cout << "resuming from step " << st.step << "\n";
    } else {
        st = init_train_state(cfg.train, cfg.resolved_model(), teachers);
    }
    Trainer trainer(std::move(st), data.train, std::move(teachers));
    trainer.run(out_dir);
    export_deployed(out_dir + "/last.pryk", true, out_dir + "/deployed.pryk");
    std::cout << "trained " << trainer.state().step << " steps; checkpoints in " << out_dir << "\n";
    return 0;
}

int run_eval_cmd(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& checkpoint, std::string tasks_csv, std::string out) {
    ExperimentConfig cfg = load_experiment_config(config_path, sets);
    check(fs::exists(checkpoint), Errc::IoError, "checkpoint not found: " + checkpoint);

    std::vector<std::string> tasks;
    if (tasks_csv.empty()) {
        tasks = cfg.eval.tasks;
    } else {
        std::stringstream ss(tasks_csv);
        std::string t;
        while (std::getline(ss, t, ','))
            if (!t.empty()) tasks.push_back(t);
    }
    if (out.empty()) out = out_dir_override(cfg.out_dir) + "/eval";
    json summary = run_eval_tasks(cfg, checkpoint, tasks, out);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_bench(const std::string& preset, const std::string& checkpoint, int batch, int batches,
              const std::string& precision, const std::string& out) {
    VitParams model = checkpoint.empty()
                          ? build_vit<float>(backbone_preset(preset), 0)
                          : load_deployed(checkpoint);
    ThroughputResult r = throughput_benchmark(model, batch, batches, precision);
    DeployedCost cost = deployed_cost(model.cfg);
    json j = {{"mean_images_per_s", r.mean_ips},
              {"std_images_per_s", r.std_ips},
              {"batch", r.batch},
              {"batches", r.batches},
              {"precision", r.precision},
              {"precision_effective", r.precision_effective},
              {"params", cost.params},
              {"flops", cost.flops}};
    std::cout << j.dump(2) << "\n";
    if (!out.empty()) {
        std::ofstream f(out);
        check(bool(f), Errc::IoError, "cannot write " + out);
        f << j.dump(2) << "\n";
    }
    return 0;
}

int run_make_synthetic(const std::string& out, std::uint64_t seed, int classes, int per_class,
                       int size, bool materialize) {
    fs::create_directories(out);
    DatasetManifest m = synthetic_tile_dataset(seed, classes, per_class, size);
    if (materialize) m = materialize_to_dir(m, out + "/tiles");
    save_manifest(m, out + "/manifest.tsv");
    std::cout << "wrote " << m.records.size() << " tiles to " << out << "/manifest.tsv"
              << (materialize ? " (materialized)" : " (buffer specs)") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pathryoshka: multi-teacher distillation with nested embeddings"};
    app.require_subcommand(1);

    std::string config_path, recipe, checkpoint, tasks, out, preset = "tiny", precision = "half";
    std::vector<std::string> sets;
    bool resume = false, use_ema = true, materialize = false;
    std::uint64_t seed = 0;
    int classes = 4, per_class = 50, size = 256, batch = 32, batches = 20;

    CLI::App* distill = app.add_subcommand("distill", "train a student against frozen teachers");
    distill->add_option("--config", config_path, "experiment config (JSON)")->required();
    distill->add_option("--set", sets, "dot-path override, e.g. train.seed=3");
    distill->add_option("--recipe", recipe, "none | crop-ablation | nesting-ablation");
    distill->add_flag("--resume", resume, "continue from <out_dir>/last.pryk when present");

    CLI::App* eval = app.add_subcommand("eval", "run evaluation tasks against a checkpoint");
    eval->add_option("--config", config_path, "experiment config (JSON)")->required();
    eval->add_option("--set", sets, "dot-path override");
    eval->add_option("--checkpoint", checkpoint, "train or deploy archive")->required();
    eval->add_option("--tasks", tasks, "comma list; default from config");
    eval->add_option("--out", out, "output dir; default <out_dir>/eval");

    CLI::App* exp = app.add_subcommand("export", "strip a training checkpoint to a deploy archive");
    exp->add_option("--checkpoint", checkpoint, "training checkpoint")->required();
    exp->add_option("--out", out, "deploy archive path")->required();
    exp->add_flag("--ema,!--no-ema", use_ema, "export the EMA weights (default on)");

    CLI::App* bench = app.add_subcommand("bench", "forward throughput + cost accounting");
    bench->add_option("--preset", preset, "B | S | tiny (ignored with --checkpoint)");
    bench->add_option("--checkpoint", checkpoint, "deploy archive to benchmark");
    bench->add_option("--batch", batch, "images per batch");
    bench->add_option("--batches", batches, "timed batches");
    bench->add_option("--precision", precision, "float32 | half");
    bench->add_option("--out", out, "also write the JSON record here");

    CLI::App* mk = app.add_subcommand("make-synthetic", "emit the synthetic tile dataset");
    mk->add_option("--out", out, "output directory")->required();
    mk->add_option("--seed", seed, "dataset seed");
    mk->add_option("--classes", classes, "number of classes");
    mk->add_option("--per-class", per_class, "tiles per class");
    mk->add_option("--size", size, "tile side in pixels");
    mk->add_flag("--materialize", materialize, "write tiles as PNG files");

    CLI::App* report = app.add_subcommand("report", "aggregate a run directory into report.md");
    report->add_option("--run", out, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (distill->parsed()) return run_distill(config_path, sets, recipe, resume);
        if (eval->parsed()) return run_eval_cmd(config_path, sets, checkpoint, tasks, out);
        if (exp->parsed()) {
            check(fs::exists(checkpoint), Errc::IoError, "checkpoint not found: " + checkpoint);
            export_deployed(checkpoint, use_ema, out);
            std::cout << "wrote " << out << (use_ema ? " (EMA weights)" : " (live weights)") << "\n";
            return 0;
        }
        if (bench->parsed()) return run_bench(preset, checkpoint, batch, batches, precision, out);
        if (mk->parsed()) return run_make_synthetic(out, seed, classes, per_class, size, materialize);
        if (report->parsed()) {
            check(fs::exists(out), Errc::IoError, "run directory not found: " + out);
            write_report(out);
            std::cout << "wrote " << out << "/report.md\n";
            return 0;
        }
    } catch (const Error& e) {
        json err = {{"error", errc_name(e.code)}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        switch (e.code) {
            case Errc::ConfigError: return 2;
            case Errc::IoError: return 3;
            case Errc::MissingEMA: return 4;
            default: return 1;
        }
    } catch (const std::exception& e) {
        json err = {{"error", "unexpected"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
