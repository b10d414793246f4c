#include <doctest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "pathryoshka/config.hpp"
#include "pathryoshka/version.hpp"

using namespace pathryoshka;
namespace fs = std::filesystem;

namespace {

json minimal_config() {
    return json{{"teachers", json::array({{{"name", "t0"}, {"dim", 8}, {"grid", 4}, {"seed", 1}}})},
                {"train", {{"total_steps", 2}, {"batch_size", 4}}},
                {"dataset", {{"classes", 2}, {"per_class", 3}}}};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("pryk_config_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string write_json(const TempDir& dir, const std::string& name, const json& j) {
    const std::string p = dir.str() + "/" + name;
    std::ofstream out(p);
    out << j.dump(2);
    return p;
}

}  // namespace

TEST_CASE("an empty config resolves to usable defaults") {
    json j = minimal_config();
    ExperimentConfig c = parse_experiment_config(j);
    CHECK(c.model_preset == "tiny");
    CHECK(c.dataset.synthetic);
    CHECK(c.dataset.size == 256);
    CHECK(c.dataset.holdout == 0.2);
    CHECK(c.eval.tasks == std::vector<std::string>{"knn"});
    CHECK(c.eval.k == 10);
    CHECK(c.out_dir == "runs/exp");
    CHECK(c.train.total_steps == 2);
    CHECK(c.train.batch_size == 4);
    CHECK(c.resolved_model().width == 96);
}

TEST_CASE("unknown keys are rejected with their dot path") {
    auto parse_err = [](json j) {
        try {
            parse_experiment_config(j);
        } catch (const Error& e) {
            CHECK(e.code == Errc::ConfigError);
            return std::string(e.what());
        }
        FAIL("expected a config error");
        return std::string{};
    };

    json top = minimal_config();
    top["totalsteps"] = 3;
    CHECK(parse_err(top).find("totalsteps") != std::string::npos);

    json ds = minimal_config();
    ds["dataset"]["clases"] = 2;
    CHECK(parse_err(ds).find("dataset.clases") != std::string::npos);

    json tr = minimal_config();
    tr["train"]["lr"] = 0.1;
    CHECK(parse_err(tr).find("train.lr") != std::string::npos);

    json aug = minimal_config();
    aug["train"]["aug"] = {{"hedscale", 0.1}};
    CHECK(parse_err(aug).find("train.aug.hedscale") != std::string::npos);

    json ev = minimal_config();
    ev["eval"] = {{"knn_k", 5}};
    CHECK(parse_err(ev).find("eval.knn_k") != std::string::npos);

    json tc = minimal_config();
    tc["teachers"][0]["dims"] = 8;
    CHECK(parse_err(tc).find("teachers[0].dims") != std::string::npos);

    json md = minimal_config();
    md["model"] = {{"preset", "tiny"}, {"wdith", 96}};
    CHECK(parse_err(md).find("model.wdith") != std::string::npos);
}

TEST_CASE("preset models refuse custom dimension keys") {
    json j = minimal_config();
    j["model"] = {{"preset", "tiny"}, {"width", 128}};
    CHECK_THROWS_AS(parse_experiment_config(j), Error);

    j["model"] = {{"preset", "custom"}, {"width", 32},     {"depth", 1},
                  {"heads", 2},         {"patch_size", 56}, {"registers", 0}};
    ExperimentConfig c = parse_experiment_config(j);
    CHECK(c.resolved_model().width == 32);
    CHECK(c.resolved_model().grid() == 4);
}

TEST_CASE("config round trips through its json form") {
    json j = minimal_config();
    j["model"] = {{"preset", "S"}};
    j["eval"] = {{"tasks", {"knn", "retrieval", "bench"}}, {"dims", {384, 96, 12}}, {"K", 7}};
    j["train"]["crop_ablation"] = true;
    j["train"]["aug"] = {{"hed_scale", 0.04}};
    j["out_dir"] = "runs/roundtrip";
    ExperimentConfig c = parse_experiment_config(j);

    json dumped = experiment_config_to_json(c);
    ExperimentConfig back = parse_experiment_config(dumped);
    CHECK(back.model_preset == "S");
    CHECK(back.eval.tasks == std::vector<std::string>{"knn", "retrieval", "bench"});
    CHECK(back.eval.dims == std::vector<int>{384, 96, 12});
    CHECK(back.eval.K == 7);
    CHECK(back.train.crop_ablation);
    CHECK(back.train.aug.hed_scale == 0.04);
    CHECK(back.out_dir == "runs/roundtrip");
    CHECK(back.teachers.size() == 1);
    CHECK(back.teachers[0].name == "t0");
    CHECK(experiment_config_to_json(back) == dumped);
}

TEST_CASE("apply_override rewrites scalars, nested keys, and array elements") {
    json j = minimal_config();
    j = experiment_config_to_json(parse_experiment_config(j));

    apply_override(j, "train.total_steps=9");
    CHECK(j["train"]["total_steps"] == 9);

    apply_override(j, "dataset.holdout=0.5");
    CHECK(j["dataset"]["holdout"] == 0.5);

    apply_override(j, "teachers.0.dim=16");
    CHECK(j["teachers"][0]["dim"] == 16);

    apply_override(j, "train.crop_ablation=true");
    CHECK(j["train"]["crop_ablation"] == true);

    apply_override(j, "eval.tasks=[\"knn\",\"pca\"]");
    CHECK(j["eval"]["tasks"] == json::array({"knn", "pca"}));

    // Unquoted strings stay strings.
    apply_override(j, "out_dir=runs/other");
    CHECK(j["out_dir"] == "runs/other");

    CHECK_THROWS_AS(apply_override(j, "train.missing_key=1"), Error);
    CHECK_THROWS_AS(apply_override(j, "teachers.7.dim=16"), Error);
    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), Error);
    CHECK_THROWS_AS(apply_override(j, "=5"), Error);
}

TEST_CASE("overrides reach sections the file left defaulted") {
    TempDir dir("ovr");
    // The file has no train.aug block; the override must land anyway
    // because overrides apply to the resolved config.
    const std::string p = write_json(dir, "cfg.json", minimal_config());
    ExperimentConfig c =
        load_experiment_config(p, {"train.aug.hed_scale=0", "eval.k=3", "train.seed=77"});
    CHECK(c.train.aug.hed_scale == 0.0);
    CHECK(c.eval.k == 3);
    CHECK(c.train.seed == 77);

    CHECK_THROWS_AS(load_experiment_config(p, {"train.aug.hedscale=0"}), Error);
}

TEST_CASE("load_experiment_config reports io and parse failures") {
    TempDir dir("io");
    try {
        load_experiment_config(dir.str() + "/absent.json");
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.code == Errc::IoError);
    }

    const std::string bad = dir.str() + "/bad.json";
    std::ofstream(bad) << "{not json";
    try {
        load_experiment_config(bad);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.code == Errc::ConfigError);
    }
}

TEST_CASE("section validation catches out-of-range values") {
    json j = minimal_config();
    j["dataset"]["holdout"] = 1.5;
    CHECK_THROWS_AS(parse_experiment_config(j), Error);

    j = minimal_config();
    j["dataset"]["size"] = 128;  // below the evaluation input size
    CHECK_THROWS_AS(parse_experiment_config(j), Error);

    j = minimal_config();
    j["eval"] = {{"tasks", {"knn", "nope"}}};
    CHECK_THROWS_AS(parse_experiment_config(j), Error);

    j = minimal_config();
    j["teachers"] = json::array();
    CHECK_THROWS_AS(parse_experiment_config(j), Error);

    j = minimal_config();
    j["teachers"][0]["dim"] = 4;
    CHECK_THROWS_AS(parse_experiment_config(j), Error);

    j = minimal_config();
    j["out_dir"] = "";
    CHECK_THROWS_AS(parse_experiment_config(j), Error);

    j = minimal_config();
    j["dataset"]["synthetic"] = false;  // and no manifest path
    CHECK_THROWS_AS(parse_experiment_config(j), Error);
}

TEST_CASE("resolve_dataset builds the stratified synthetic split") {
    DatasetSection d;
    d.synthetic = true;
    d.seed = 4;
    d.classes = 2;
    d.per_class = 10;
    d.size = 256;
    d.holdout = 0.2;
    DatasetPair pair = resolve_dataset(d);
    CHECK(pair.train.size() == 16);
    CHECK(pair.holdout.size() == 4);

    // Per-class balance survives the split.
    auto count_label = [](const DatasetManifest& m, int label) {
        int n = 0;
        for (const auto& r : m.records) n += (r.label && *r.label == label) ? 1 : 0;
        return n;
    };
    CHECK(count_label(pair.holdout, 0) == 2);
    CHECK(count_label(pair.holdout, 1) == 2);

    DatasetPair again = resolve_dataset(d);
    REQUIRE(again.train.size() == pair.train.size());
    for (std::size_t i = 0; i < pair.train.records.size(); ++i)
        CHECK(again.train.records[i].source_id == pair.train.records[i].source_id);
}

TEST_CASE("write_run_snapshot records the config and the source hash") {
    TempDir dir("snap");
    ExperimentConfig c = parse_experiment_config(minimal_config());
    write_run_snapshot(c, dir.str());

    std::ifstream rc(dir.str() + "/resolved_config.json");
    REQUIRE(bool(rc));
    json resolved = json::parse(rc);
    CHECK(resolved == experiment_config_to_json(c));

    std::ifstream rj(dir.str() + "/run.json");
    REQUIRE(bool(rj));
    json run = json::parse(rj);
    CHECK(run.at("source_hash") == kSourceHash);
    CHECK(run.at("seeds").at("train") == c.train.seed);
    CHECK(run.at("seeds").at("dataset") == c.dataset.seed);
    CHECK(run.contains("version"));
}
