#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pathryoshka/vit.hpp"

namespace pathryoshka {

using json = nlohmann::json;

// Single-file archive: a JSON header plus named float32 arrays. Writes are
// atomic (temp file + rename). Keys are stable strings, e.g. "backbone/cls",
// "ema/block0/qkv/w", "head/t0/cls/48/w1", "opt/m/backbone/cls".
class Archive {
public:
    json meta;

    void put(std::string key, MatF m);
    bool has(const std::string& key) const;
    const MatF& get(const std::string& key) const;  // KeyError when absent
    const std::vector<std::pair<std::string, MatF>>& arrays() const { return arrays_; }

    void save(const std::string& path) const;
    static Archive load(const std::string& path);  // IoError / ConfigError

private:
    std::vector<std::pair<std::string, MatF>> arrays_;
};

void to_json(json& j, const BackboneConfig& c);
void from_json(const json& j, BackboneConfig& c);
void to_json(json& j, const Preprocess& p);
void from_json(const json& j, Preprocess& p);

// Backbone <-> archive under a key prefix ("backbone/" or "ema/").
void put_vit(Archive& ar, const VitParams& p, const std::string& prefix);
VitParams read_vit(const Archive& ar, const std::string& prefix, const BackboneConfig& cfg, const Preprocess& prep);

}  // namespace pathryoshka
