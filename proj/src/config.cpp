#include "pathryoshka/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "pathryoshka/version.hpp"

namespace pathryoshka {

namespace {

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    check(j.is_object(), Errc::ConfigError, "config section " + path + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        check(allowed.count(it.key()) > 0, Errc::ConfigError,
              "unknown config key: " + (path.empty() ? it.key() : path + "." + it.key()));
}

template <class T>
void read_field(const json& j, const std::string& path, const char* key, T& into) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(into);
    } catch (const json::exception& e) {
        fail(Errc::ConfigError, "bad value at " + path + "." + key + ": " + e.what());
    }
}

TeacherSpec parse_teacher(const json& j, const std::string& path) {
    check_keys(j, path, {"name", "dim", "grid", "seed", "depth", "loader", "checkpoint", "preprocess"});
    TeacherSpec t;
    read_field(j, path, "name", t.name);
    read_field(j, path, "dim", t.dim);
    read_field(j, path, "grid", t.grid);
    read_field(j, path, "seed", t.seed);
    read_field(j, path, "depth", t.depth);
    read_field(j, path, "loader", t.loader);
    read_field(j, path, "checkpoint", t.checkpoint);
    if (j.contains("preprocess")) {
        try {
            j.at("preprocess").get_to(t.preprocessing);
        } catch (const json::exception& e) {
            fail(Errc::ConfigError, "bad value at " + path + ".preprocess: " + e.what());
        }
    }
    t.validate();
    return t;
}

json teacher_to_json(const TeacherSpec& t) {
    return json{{"name", t.name},     {"dim", t.dim},       {"grid", t.grid},
                {"seed", t.seed},     {"depth", t.depth},   {"loader", t.loader},
                {"checkpoint", t.checkpoint}, {"preprocess", t.preprocessing}};
}

}  // namespace

void DatasetSection::validate() const {
    if (!synthetic) check(!manifest.empty(), Errc::ConfigError, "dataset.manifest required when not synthetic");
    check(holdout > 0.0 && holdout < 1.0, Errc::ConfigError, "dataset.holdout must be in (0, 1)");
    check(classes >= 2 && per_class >= 1 && size >= 224, Errc::ConfigError, "bad synthetic dataset shape");
}

void EvalSection::validate() const {
    static const std::set<std::string> known = {"knn",     "subset", "probe", "retrieval",
                                                "pca",     "runtime", "impact", "bench"};
    for (const auto& t : tasks)
        check(known.count(t) > 0, Errc::ConfigError, "unknown eval task: " + t);
    check(k >= 1 && K >= 1 && seeds >= 1, Errc::ConfigError, "eval.k, eval.K, eval.seeds must be >= 1");
    check(probe_epochs >= 1 && runtime_n >= 1 && runtime_repeats >= 1, Errc::ConfigError,
          "eval probe/runtime settings must be >= 1");
    check(bench_batch >= 1 && bench_batches >= 1, Errc::ConfigError, "eval.bench settings must be >= 1");
    for (int m : dims) check(m >= 1, Errc::ConfigError, "eval.dims entries must be >= 1");
}

BackboneConfig ExperimentConfig::resolved_model() const {
    if (model_preset == "custom") {
        model.validate();
        return model;
    }
    return backbone_preset(model_preset);
}

void ExperimentConfig::validate() const {
    dataset.validate();
    resolved_model();
    check(!teachers.empty(), Errc::ConfigError, "at least one teacher required");
    train.validate();
    eval.validate();
    check(!out_dir.empty(), Errc::ConfigError, "out_dir must not be empty");
}

ExperimentConfig parse_experiment_config(const json& j) {
    check_keys(j, "", {"dataset", "model", "teachers", "train", "eval", "out_dir"});
    ExperimentConfig c;

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, "dataset", {"synthetic", "manifest", "seed", "classes", "per_class", "size", "holdout"});
        read_field(d, "dataset", "synthetic", c.dataset.synthetic);
        read_field(d, "dataset", "manifest", c.dataset.manifest);
        read_field(d, "dataset", "seed", c.dataset.seed);
        read_field(d, "dataset", "classes", c.dataset.classes);
        read_field(d, "dataset", "per_class", c.dataset.per_class);
        read_field(d, "dataset", "size", c.dataset.size);
        read_field(d, "dataset", "holdout", c.dataset.holdout);
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model", {"preset", "image_size", "patch_size", "width", "depth", "heads", "registers"});
        read_field(m, "model", "preset", c.model_preset);
        if (c.model_preset == "custom") {
            BackboneConfig b;
            read_field(m, "model", "image_size", b.image_size);
            read_field(m, "model", "patch_size", b.patch_size);
            read_field(m, "model", "width", b.width);
            read_field(m, "model", "depth", b.depth);
            read_field(m, "model", "heads", b.heads);
            read_field(m, "model", "registers", b.registers);
            c.model = b;
        } else {
            for (const char* k : {"image_size", "patch_size", "width", "depth", "heads", "registers"})
                check(!m.contains(k), Errc::ConfigError,
                      std::string("model.") + k + " only applies to preset \"custom\"");
        }
    }

    if (j.contains("teachers")) {
        const json& ts = j.at("teachers");
        check(ts.is_array(), Errc::ConfigError, "teachers must be an array");
        for (std::size_t i = 0; i < ts.size(); ++i)
            c.teachers.push_back(parse_teacher(ts[i], "teachers[" + std::to_string(i) + "]"));
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train",
                   {"total_steps", "batch_size", "lr_start", "lr_end", "wd_start", "wd_end", "ema_start",
                    "ema_end", "levels_depth", "crop_ablation", "seed", "precision", "clip_norm",
                    "adam_beta1", "adam_beta2", "adam_eps", "checkpoint_every", "aug", "w_cls", "w_patch"});
        if (t.contains("aug"))
            check_keys(t.at("aug"), "train.aug",
                       {"hed_scale", "hed_shift", "blur_sigma_min", "blur_sigma_max", "blur_prob"});
        try {
            t.get_to(c.train);
        } catch (const json::exception& e) {
            fail(Errc::ConfigError, std::string("bad value under train: ") + e.what());
        }
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval",
                   {"tasks", "dims", "k", "K", "seeds", "probe_epochs", "runtime_n", "runtime_repeats",
                    "bench_batch", "bench_batches", "bench_precision"});
        read_field(e, "eval", "tasks", c.eval.tasks);
        read_field(e, "eval", "dims", c.eval.dims);
        read_field(e, "eval", "k", c.eval.k);
        read_field(e, "eval", "K", c.eval.K);
        read_field(e, "eval", "seeds", c.eval.seeds);
        read_field(e, "eval", "probe_epochs", c.eval.probe_epochs);
        read_field(e, "eval", "runtime_n", c.eval.runtime_n);
        read_field(e, "eval", "runtime_repeats", c.eval.runtime_repeats);
        read_field(e, "eval", "bench_batch", c.eval.bench_batch);
        read_field(e, "eval", "bench_batches", c.eval.bench_batches);
        read_field(e, "eval", "bench_precision", c.eval.bench_precision);
    }

    read_field(j, "", "out_dir", c.out_dir);
    c.validate();
    return c;
}

json experiment_config_to_json(const ExperimentConfig& c) {
    json m;
    m["preset"] = c.model_preset;
    if (c.model_preset == "custom") {
        m["image_size"] = c.model.image_size;
        m["patch_size"] = c.model.patch_size;
        m["width"] = c.model.width;
        m["depth"] = c.model.depth;
        m["heads"] = c.model.heads;
        m["registers"] = c.model.registers;
    }
    json teachers = json::array();
    for (const auto& t : c.teachers) teachers.push_back(teacher_to_json(t));
    return json{{"dataset",
                 {{"synthetic", c.dataset.synthetic},
                  {"manifest", c.dataset.manifest},
                  {"seed", c.dataset.seed},
                  {"classes", c.dataset.classes},
                  {"per_class", c.dataset.per_class},
                  {"size", c.dataset.size},
                  {"holdout", c.dataset.holdout}}},
                {"model", std::move(m)},
                {"teachers", std::move(teachers)},
                {"train", c.train},
                {"eval",
                 {{"tasks", c.eval.tasks},
                  {"dims", c.eval.dims},
                  {"k", c.eval.k},
                  {"K", c.eval.K},
                  {"seeds", c.eval.seeds},
                  {"probe_epochs", c.eval.probe_epochs},
                  {"runtime_n", c.eval.runtime_n},
                  {"runtime_repeats", c.eval.runtime_repeats},
                  {"bench_batch", c.eval.bench_batch},
                  {"bench_batches", c.eval.bench_batches},
                  {"bench_precision", c.eval.bench_precision}}},
                {"out_dir", c.out_dir}};
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    check(eq != std::string::npos && eq > 0, Errc::ConfigError,
          "override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    json* node = &j;
    std::size_t pos = 0;
    std::string walked;
    while (true) {
        const auto dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        walked = walked.empty() ? key : walked + "." + key;
        if (node->is_array()) {
            std::size_t used = 0;
            std::size_t idx = std::string::npos;
            try {
                idx = std::stoul(key, &used);
            } catch (const std::exception&) {
            }
            check(used == key.size() && idx < node->size(), Errc::ConfigError,
                  "unknown config key: " + walked);
            node = &(*node)[idx];
        } else {
            check(node->is_object() && node->contains(key), Errc::ConfigError,
                  "unknown config key: " + walked);
            node = &(*node)[key];
        }
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // unquoted strings
    *node = std::move(value);
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    check(bool(in), Errc::IoError, "cannot open config: " + path);
    json j = json::parse(in, nullptr, false);
    check(!j.is_discarded(), Errc::ConfigError, "config is not valid JSON: " + path);
    if (overrides.empty()) return parse_experiment_config(j);
    // overrides apply to the resolved config so defaulted sections (for
    // example train.aug) are addressable too
    json full = experiment_config_to_json(parse_experiment_config(j));
    for (const auto& o : overrides) apply_override(full, o);
    return parse_experiment_config(full);
}

DatasetPair resolve_dataset(const DatasetSection& d) {
    d.validate();
    DatasetManifest full = d.synthetic
                               ? synthetic_tile_dataset(d.seed, d.classes, d.per_class, d.size)
                               : load_manifest(d.manifest);
    auto [train, holdout] = split_manifest(full, d.holdout, d.seed);
    return DatasetPair{std::move(train), std::move(holdout)};
}

void write_run_snapshot(const ExperimentConfig& c, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream out(out_dir + "/resolved_config.json");
        check(bool(out), Errc::IoError, "cannot write resolved config in " + out_dir);
        out << experiment_config_to_json(c).dump(2) << '\n';
    }
    json run = {{"source_hash", kSourceHash},
                {"version", kVersion},
                {"seeds", {{"train", c.train.seed}, {"dataset", c.dataset.seed}}}};
    std::ofstream out(out_dir + "/run.json");
    check(bool(out), Errc::IoError, "cannot write run snapshot in " + out_dir);
    out << run.dump(2) << '\n';
}

}  // namespace pathryoshka
