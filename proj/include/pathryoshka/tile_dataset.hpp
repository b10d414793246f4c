#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pathryoshka/common.hpp"
#include "pathryoshka/image.hpp"

namespace pathryoshka {

enum class Magnification { x10 = 0, x20 = 1, x40 = 2 };

const char* to_string(Magnification m);
Magnification magnification_from_string(const std::string& s);

struct TileRecord {
    std::string path;                            // empty when buffer-backed
    std::shared_ptr<const Image> buffer;         // synthetic tiles live in memory
    Magnification magnification = Magnification::x20;
    std::string source_id;
    std::optional<int> label;
};

// Loads pixels for a record (decode from path, or the in-memory buffer).
Image load_tile(const TileRecord& rec);

struct DatasetManifest {
    std::vector<TileRecord> records;
    std::map<Magnification, double> proportions;
    std::uint64_t seed = 0;
    int skipped = 0;  // files skipped during scan (undecodable or undersized)

    void validate() const;
    bool empty() const { return records.empty(); }
    std::size_t size() const { return records.size(); }
};

// One record per decodable image under root (recursive), ordered
// lexicographically by path. label_rule maps parent-folder name -> class id;
// unmapped folders yield unlabeled records.
DatasetManifest scan_image_folder(const std::string& root, Magnification mag,
                                  const std::optional<std::map<std::string, int>>& label_rule = std::nullopt);

// Largest-remainder counts per magnification; without replacement within a
// magnification when enough records exist, with replacement otherwise.
std::vector<TileRecord> sample_by_proportion(const DatasetManifest& manifest, int n, std::uint64_t seed);

// Deterministic class-distinct procedural textures (oriented gratings + blob
// fields + per-class tint). Same seed gives bit-identical pixels on any
// platform: generation uses integer hashing and polynomial trig only.
DatasetManifest synthetic_tile_dataset(std::uint64_t seed, int classes, int per_class, int size);

// Stratified split for evaluation harnesses: per class (or whole set when
// unlabeled), holdout_fraction of records moves to the second manifest.
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double holdout_fraction, std::uint64_t seed);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path,
                              const std::optional<std::map<Magnification, double>>& proportions = std::nullopt);

// Writes buffer-backed tiles as PNGs under dir and returns a file-backed
// manifest (used by the make-synthetic subcommand).
DatasetManifest materialize_to_dir(const DatasetManifest& manifest, const std::string& dir);

}  // namespace pathryoshka
