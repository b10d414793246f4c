#include "pathryoshka/tile_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace pathryoshka {

const char* to_string(Magnification m) {
    switch (m) {
        case Magnification::x10: return "10x";
        case Magnification::x20: return "20x";
        case Magnification::x40: return "40x";
    }
    return "?";
}

Magnification magnification_from_string(const std::string& s) {
    if (s == "10x") return Magnification::x10;
    if (s == "20x") return Magnification::x20;
    if (s == "40x") return Magnification::x40;
    fail(Errc::ConfigError, "unknown magnification: '" + s + "' (expected 10x|20x|40x)");
}

Image load_tile(const TileRecord& rec) {
    Image img;
    if (rec.buffer) {
        img = *rec.buffer;
    } else {
        img = read_image_or_fail(rec.path);
    }
    check(img.width >= 224 && img.height >= 224, Errc::InvalidSize,
          "tile smaller than 224x224: " + (rec.path.empty() ? rec.source_id : rec.path));
    return img;
}

void DatasetManifest::validate() const {
    double sum = 0.0;
    for (const auto& [mag, p] : proportions) {
        check(p >= 0.0, Errc::ConfigError, std::string("negative proportion for ") + to_string(mag));
        sum += p;
    }
    check(std::abs(sum - 1.0) <= 1e-9, Errc::ConfigError, "proportions must sum to 1.0");
    for (const auto& rec : records)
        check(proportions.count(rec.magnification) > 0, Errc::ConfigError,
              std::string("record magnification ") + to_string(rec.magnification) + " missing from proportions");
}

DatasetManifest scan_image_folder(const std::string& root, Magnification mag,
                                  const std::optional<std::map<std::string, int>>& label_rule) {
    check(fs::exists(root) && fs::is_directory(root), Errc::EmptyDataset, "not a directory: " + root);

    std::vector<std::string> paths;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") paths.push_back(entry.path().generic_string());
    }
    std::sort(paths.begin(), paths.end());

    DatasetManifest m;
    m.proportions[mag] = 1.0;
    for (const auto& p : paths) {
        Image img;
        if (!read_image(p, img) || img.width < 224 || img.height < 224) {
            ++m.skipped;
            continue;
        }
        TileRecord rec;
        rec.path = p;
        rec.magnification = mag;
        rec.source_id = p;
        if (label_rule) {
            auto it = label_rule->find(fs::path(p).parent_path().filename().string());
            if (it != label_rule->end()) rec.label = it->second;
        }
        m.records.push_back(std::move(rec));
    }
    check(!m.records.empty(), Errc::EmptyDataset, "no decodable images of size >= 224 under " + root);
    return m;
}

std::vector<TileRecord> sample_by_proportion(const DatasetManifest& manifest, int n, std::uint64_t seed) {
    check(n >= 1, Errc::ConfigError, "sample count must be >= 1");
    check(!manifest.records.empty(), Errc::EmptyDataset, "manifest has no records");
    manifest.validate();

    std::map<Magnification, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        groups[manifest.records[i].magnification].push_back(i);

    struct Quota {
        Magnification mag;
        int count;
        double remainder;
    };
    std::vector<Quota> quotas;
    int assigned = 0;
    for (const auto& [mag, p] : manifest.proportions) {
        if (p > 0.0)
            check(groups.count(mag) && !groups[mag].empty(), Errc::InsufficientTiles,
                  std::string("proportion > 0 but zero records at ") + to_string(mag));
        double q = double(n) * p;
        int c = int(std::floor(q));
        quotas.push_back({mag, c, q - double(c)});
        assigned += c;
    }
    // Largest remainder; ties go to the lower magnification (stable sort keeps map order).
    std::stable_sort(quotas.begin(), quotas.end(),
                     [](const Quota& a, const Quota& b) { return a.remainder > b.remainder; });
    for (int seat = 0; seat < n - assigned; ++seat) quotas[std::size_t(seat) % quotas.size()].count += 1;
    std::sort(quotas.begin(), quotas.end(), [](const Quota& a, const Quota& b) { return a.mag < b.mag; });

    std::vector<TileRecord> out;
    out.reserve(std::size_t(n));
    for (const auto& q : quotas) {
        if (q.count == 0) continue;
        const auto& idx = groups[q.mag];
        Rng rng = rng_at(seed, "sample_by_proportion", std::uint64_t(q.mag));
        if (std::size_t(q.count) <= idx.size()) {
            // Partial Fisher-Yates over a copy: first q.count entries are the draw.
            std::vector<std::size_t> pool = idx;
            for (int j = 0; j < q.count; ++j) {
                std::size_t pick = std::size_t(j) + rng.uniform_u64(pool.size() - std::size_t(j));
                std::swap(pool[std::size_t(j)], pool[pick]);
                out.push_back(manifest.records[pool[std::size_t(j)]]);
            }
        } else {
            for (int j = 0; j < q.count; ++j)
                out.push_back(manifest.records[idx[rng.uniform_u64(idx.size())]]);
        }
    }
    return out;
}

namespace {

// Deterministic sine: range reduction + odd polynomial, double precision only.
// Used instead of libm so synthetic tiles are bit-identical across platforms.
double detsin(double x) {
    const double two_pi = 6.283185307179586476925286766559;
    const double pi = 3.1415926535897932384626433832795;
    double r = x - two_pi * std::nearbyint(x / two_pi);
    if (r > pi / 2) r = pi - r;
    if (r < -pi / 2) r = -pi - r;
    double r2 = r * r;
    double p = 2.7557319223985890652557319e-6;        // 1/9!
    p = p * r2 + -1.9841269841269841269841270e-4;     // -1/7!
    p = p * r2 + 8.3333333333333333333333333e-3;      // 1/5!
    p = p * r2 + -1.6666666666666666666666667e-1;     // -1/3!
    return r + r * r2 * p;
}

double detcos(double x) { return detsin(x + 1.5707963267948966192313216916398); }

std::uint64_t pixel_hash(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    return mix64(hash_combine(hash_combine(mix64(a), mix64(b)), hash_combine(mix64(c), mix64(d))));
}

struct Blob {
    double cx, cy, r2;
};

struct ClassStyle {
    double kx, ky;        // grating wave vector
    int n_blobs;
    double blob_r;        // base radius, px
    double tint[3];       // stain-like target color
};

ClassStyle class_style(std::uint64_t seed, int cls, int classes, int size) {
    // Distinctness by construction: orientation, frequency, blob density and
    // tint all vary with the class index; the seed only jitters them.
    static const double palette[8][3] = {
        {106, 46, 143},   // hematoxylin purple
        {208, 106, 156},  // eosin pink
        {58, 76, 160},    // dark blue
        {150, 92, 48},    // brown
        {52, 136, 120},   // teal
        {180, 58, 58},    // red
        {96, 120, 30},    // olive
        {120, 80, 180},   // violet
    };
    Rng rng = rng_at(seed, "class_style", std::uint64_t(cls));
    double theta = 3.1415926535897932 * (double(cls) + 0.17) / double(classes) + 0.1 * rng.uniform();
    double freq = 4.0 + 3.0 * double(cls % 4) + rng.uniform();
    double two_pi = 6.283185307179586;
    ClassStyle st;
    st.kx = two_pi * freq * detcos(theta) / double(size);
    st.ky = two_pi * freq * detsin(theta) / double(size);
    st.n_blobs = 4 + 3 * ((cls + 1) % 3);
    st.blob_r = double(size) * (0.035 + 0.02 * double(cls % 2));
    const double* base = palette[cls % 8];
    double dim = 1.0 - 0.18 * double((cls / 8) % 3);
    for (int c = 0; c < 3; ++c) st.tint[c] = base[c] * dim;
    return st;
}

Image synth_tile(std::uint64_t seed, int cls, int classes, int tile_index, int size) {
    ClassStyle st = class_style(seed, cls, classes, size);
    Rng rng = rng_at(seed, "tile", std::uint64_t(cls), std::uint64_t(tile_index));
    double phase = 6.283185307179586 * rng.uniform();

    std::vector<Blob> blobs(std::size_t(st.n_blobs));
    for (auto& b : blobs) {
        b.cx = rng.uniform() * double(size);
        b.cy = rng.uniform() * double(size);
        double r = st.blob_r * (0.7 + 0.6 * rng.uniform());
        b.r2 = r * r;
    }

    Image img(size, size);
    std::uint64_t noise_key = hash_combine(mix64(seed), pixel_hash(0x6e6f697365ull, std::uint64_t(cls),
                                                                   std::uint64_t(tile_index), 0));
    for (int y = 0; y < size; ++y) {
        std::uint8_t* row = img.data.data() + std::size_t(y) * size * 3;
        for (int x = 0; x < size; ++x) {
            double g = 0.5 + 0.5 * detsin(st.kx * double(x) + st.ky * double(y) + phase);
            double b = 0.0;
            for (const auto& bl : blobs) {
                double dx = double(x) - bl.cx;
                double dy = double(y) - bl.cy;
                double u = (dx * dx + dy * dy) / bl.r2;
                b += 1.0 / (1.0 + u * u);
            }
            if (b > 1.0) b = 1.0;
            double m = 0.45 * g + 0.55 * b;
            if (m > 1.0) m = 1.0;
            m *= 0.85;
            std::uint64_t h = pixel_hash(noise_key, std::uint64_t(y), std::uint64_t(x), 0);
            for (int c = 0; c < 3; ++c) {
                double v = 255.0 * (1.0 - m) + st.tint[c] * m;
                // +/-4 levels of hash noise, deterministic per (seed, tile, pixel, channel)
                v += double(int((h >> (8 * c)) & 7)) - 3.5;
                if (v < 0.0) v = 0.0;
                if (v > 255.0) v = 255.0;
                row[x * 3 + c] = std::uint8_t(v + 0.5);
            }
        }
    }
    return img;
}

}  // namespace

DatasetManifest synthetic_tile_dataset(std::uint64_t seed, int classes, int per_class, int size) {
    check(classes >= 2, Errc::ConfigError, "synthetic dataset needs >= 2 classes");
    check(per_class >= 1, Errc::ConfigError, "per_class must be >= 1");
    check(size >= 224, Errc::InvalidSize, "tile size must be >= 224");

    DatasetManifest m;
    m.seed = seed;
    m.proportions[Magnification::x20] = 1.0;
    m.records.reserve(std::size_t(classes) * std::size_t(per_class));
    for (int c = 0; c < classes; ++c) {
        for (int t = 0; t < per_class; ++t) {
            TileRecord rec;
            rec.buffer = std::make_shared<Image>(synth_tile(seed, c, classes, t, size));
            rec.magnification = Magnification::x20;
            char buf[64];
            std::snprintf(buf, sizeof buf, "syn/c%d/t%04d", c, t);
            rec.source_id = buf;
            rec.label = c;
            m.records.push_back(std::move(rec));
        }
    }
    return m;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double holdout_fraction, std::uint64_t seed) {
    check(holdout_fraction > 0.0 && holdout_fraction < 1.0, Errc::ConfigError,
          "holdout_fraction must be in (0, 1)");
    check(manifest.records.size() >= 2, Errc::EmptyDataset, "need >= 2 records to split");

    std::map<int, std::vector<std::size_t>> byclass;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        byclass[manifest.records[i].label.value_or(-1)].push_back(i);

    DatasetManifest train = manifest, hold = manifest;
    train.records.clear();
    hold.records.clear();
    for (auto& [cls, idx] : byclass) {
        Rng rng = rng_at(seed, "split", std::uint64_t(std::int64_t(cls)) + 1);
        std::vector<std::size_t> pool = idx;
        for (std::size_t j = 0; j + 1 < pool.size(); ++j)
            std::swap(pool[j], pool[j + rng.uniform_u64(pool.size() - j)]);
        std::size_t n_hold = std::size_t(std::lround(holdout_fraction * double(pool.size())));
        n_hold = std::clamp<std::size_t>(n_hold, 1, pool.size() - 1);
        for (std::size_t j = 0; j < pool.size(); ++j)
            (j < n_hold ? hold : train).records.push_back(manifest.records[pool[j]]);
    }
    auto sort_by_source = [](DatasetManifest& m) {
        std::sort(m.records.begin(), m.records.end(),
                  [](const TileRecord& a, const TileRecord& b) { return a.source_id < b.source_id; });
    };
    sort_by_source(train);
    sort_by_source(hold);
    return {train, hold};
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(bool(out), Errc::IoError, "cannot open for write: " + path);
    out << "#pathryoshka-manifest v1\n";
    for (const auto& rec : manifest.records) {
        check(!rec.path.empty(), Errc::IoError,
              "in-memory record cannot be serialized (materialize first): " + rec.source_id);
        out << rec.path << '\t' << to_string(rec.magnification) << '\t';
        if (rec.label) out << *rec.label;
        out << '\n';
    }
    check(bool(out), Errc::IoError, "write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path,
                              const std::optional<std::map<Magnification, double>>& proportions) {
    std::ifstream in(path, std::ios::binary);
    check(bool(in), Errc::IoError, "cannot open manifest: " + path);
    std::string line;
    check(bool(std::getline(in, line)), Errc::IoError, "empty manifest file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    check(line == "#pathryoshka-manifest v1", Errc::ConfigError,
          "bad manifest header in " + path + ": '" + line + "'");

    DatasetManifest m;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        check(t1 != std::string::npos && t2 != std::string::npos, Errc::ConfigError,
              "manifest line " + std::to_string(lineno) + " is not path<TAB>magnification<TAB>label");
        TileRecord rec;
        rec.path = line.substr(0, t1);
        rec.magnification = magnification_from_string(line.substr(t1 + 1, t2 - t1 - 1));
        std::string label = line.substr(t2 + 1);
        if (!label.empty()) {
            std::size_t used = 0;
            try {
                rec.label = std::stoi(label, &used);
            } catch (const std::exception&) {
                used = std::string::npos;
            }
            check(used == label.size(), Errc::ConfigError,
                  "manifest line " + std::to_string(lineno) + ": label '" + label + "' is not an integer");
        }
        rec.source_id = rec.path;
        m.records.push_back(std::move(rec));
    }
    check(!m.records.empty(), Errc::EmptyDataset, "manifest has no records: " + path);

    if (proportions) {
        m.proportions = *proportions;
    } else {
        std::map<Magnification, std::size_t> counts;
        for (const auto& rec : m.records) counts[rec.magnification] += 1;
        for (const auto& [mag, c] : counts) m.proportions[mag] = double(c) / double(m.records.size());
    }
    m.validate();
    return m;
}

DatasetManifest materialize_to_dir(const DatasetManifest& manifest, const std::string& dir) {
    fs::create_directories(dir);
    DatasetManifest out = manifest;
    int i = 0;
    for (auto& rec : out.records) {
        if (!rec.buffer) {
            ++i;
            continue;
        }
        char name[64];
        std::snprintf(name, sizeof name, "tile_%05d_c%d.png", i, rec.label.value_or(-1));
        std::string p = (fs::path(dir) / name).generic_string();
        write_png(p, *rec.buffer);
        rec.path = p;
        rec.buffer.reset();
        ++i;
    }
    return out;
}

}  // namespace pathryoshka
