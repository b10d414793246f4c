#include "pathryoshka/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace pathryoshka {

namespace {
constexpr char kMagic[8] = {'P', 'R', 'Y', 'K', 'A', 'R', '1', '\n'};
}

void Archive::put(std::string key, MatF m) {
    for (auto& [k, _] : arrays_)
        check(k != key, Errc::KeyError, "duplicate archive key: " + key);
    arrays_.emplace_back(std::move(key), std::move(m));
}

bool Archive::has(const std::string& key) const {
    for (auto& [k, _] : arrays_)
        if (k == key) return true;
    return false;
}

const MatF& Archive::get(const std::string& key) const {
    for (auto& [k, m] : arrays_)
        if (k == key) return m;
    fail(Errc::KeyError, "archive key not found: " + key);
}

void Archive::save(const std::string& path) const {
    json header = meta;
    json index = json::array();
    for (auto& [k, m] : arrays_)
        index.push_back({{"key", k}, {"rows", m.rows()}, {"cols", m.cols()}});
    header["arrays"] = std::move(index);
    const std::string hs = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        check(bool(out), Errc::IoError, "cannot open for write: " + tmp);
        out.write(kMagic, sizeof kMagic);
        std::uint64_t len = hs.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(hs.data(), std::streamsize(hs.size()));
        for (auto& [k, m] : arrays_)
            out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(std::size_t(m.size()) * sizeof(float)));
        check(bool(out), Errc::IoError, "write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    check(!ec, Errc::IoError, "rename failed: " + tmp + " -> " + path + " (" + ec.message() + ")");
}

Archive Archive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(bool(in), Errc::IoError, "cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    check(bool(in) && std::equal(magic, magic + 8, kMagic), Errc::ConfigError,
          "not a pathryoshka archive: " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    check(bool(in) && len > 0 && len < (1ull << 31), Errc::ConfigError, "corrupt archive header: " + path);
    std::string hs(len, '\0');
    in.read(hs.data(), std::streamsize(len));
    check(bool(in), Errc::IoError, "truncated archive header: " + path);

    Archive ar;
    json header = json::parse(hs, nullptr, false);
    check(!header.is_discarded(), Errc::ConfigError, "archive header is not valid JSON: " + path);
    check(header.contains("arrays") && header["arrays"].is_array(), Errc::ConfigError,
          "archive header missing array index: " + path);
    for (auto& e : header["arrays"]) {
        std::string key = e.at("key").get<std::string>();
        auto rows = e.at("rows").get<std::int64_t>();
        auto cols = e.at("cols").get<std::int64_t>();
        check(rows >= 0 && cols >= 0 && rows * cols < (1ll << 33), Errc::ConfigError,
              "bad array shape in archive: " + key);
        MatF m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()), std::streamsize(std::size_t(m.size()) * sizeof(float)));
        check(bool(in), Errc::IoError, "truncated array data: " + key);
        ar.arrays_.emplace_back(std::move(key), std::move(m));
    }
    header.erase("arrays");
    ar.meta = std::move(header);
    return ar;
}

void to_json(json& j, const BackboneConfig& c) {
    j = json{{"depth", c.depth},       {"width", c.width},         {"heads", c.heads},
             {"patch_size", c.patch_size}, {"registers", c.registers}, {"image_size", c.image_size},
             {"preset", c.preset}};
}

void from_json(const json& j, BackboneConfig& c) {
    j.at("depth").get_to(c.depth);
    j.at("width").get_to(c.width);
    j.at("heads").get_to(c.heads);
    j.at("patch_size").get_to(c.patch_size);
    j.at("registers").get_to(c.registers);
    j.at("image_size").get_to(c.image_size);
    c.preset = j.value("preset", std::string());
    c.validate();
}

void to_json(json& j, const Preprocess& p) {
    j = json{{"mean", p.mean}, {"std", p.stdev}};
}

void from_json(const json& j, Preprocess& p) {
    j.at("mean").get_to(p.mean);
    j.at("std").get_to(p.stdev);
}

void put_vit(Archive& ar, const VitParams& p, const std::string& prefix) {
    p.visit_const([&](const std::string& name, const MatF& m) { ar.put(prefix + name, m); });
}

VitParams read_vit(const Archive& ar, const std::string& prefix, const BackboneConfig& cfg, const Preprocess& prep) {
    VitParams p = build_vit<float>(cfg, 0, prep);
    p.visit([&](const std::string& name, MatF& m) {
        const MatF& stored = ar.get(prefix + name);
        check(stored.rows() == m.rows() && stored.cols() == m.cols(), Errc::ShapeError,
              "checkpoint array shape mismatch at " + prefix + name);
        m = stored;
    });
    return p;
}

}  // namespace pathryoshka
