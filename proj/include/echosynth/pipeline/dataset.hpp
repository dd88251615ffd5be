#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "echosynth/engine/rng.hpp"
#include "echosynth/pipeline/v3d.hpp"
#include "echosynth/volume.hpp"

// Dataset manifests: named lists of image/label pairs with provenance and
// post-processing flags, stored as JSON. Entry paths are kept relative to
// the manifest file so a whole output tree can be moved or diffed.

namespace echosynth::pipeline {

inline constexpr int kManifestSchemaVersion = 1;

struct PostprocFlags {
    bool wavelet = false;
    bool cone = false;

    bool operator==(const PostprocFlags&) const = default;
};

struct ManifestEntry {
    std::string image_path;
    std::string label_path;
    std::string provenance;  // "real" or "synthetic"
    PostprocFlags postproc;

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::string name;
    std::vector<ManifestEntry> entries;
    std::string created_from;  // hash of the config that produced the entries

    bool operator==(const DatasetManifest&) const = default;
};

// FNV-1a over the canonical config text; stable across runs and platforms.
inline std::string config_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline const std::vector<std::string>& recipe_names() {
    static const std::vector<std::string> names = {
        "D_Synthetic", "D_Wavelet", "D_Cone", "D_WaveletCone",
        "D_Real",      "D_17Real10Augmented", "D_17Real20Augmented",
    };
    return names;
}

// Entry count each named recipe must produce; 0 for unknown names.
inline std::size_t recipe_entry_count(const std::string& recipe) {
    if (recipe == "D_Synthetic" || recipe == "D_Wavelet" || recipe == "D_Cone" || recipe == "D_WaveletCone" ||
        recipe == "D_17Real10Augmented") {
        return 27;
    }
    if (recipe == "D_Real") return 17;
    if (recipe == "D_17Real20Augmented") return 37;
    return 0;
}

inline bool is_known_recipe(const std::string& recipe) {
    const auto& names = recipe_names();
    return std::find(names.begin(), names.end(), recipe) != names.end();
}

// On-disk ingredients a recipe draws from. The synthetic pool carries one
// image per label volume in each post-processing variant; the pools for a
// recipe's unused variants may stay empty.
struct DatasetSources {
    std::vector<std::string> synth_label_paths;
    std::vector<std::string> synth_image_paths;
    std::vector<std::string> wavelet_image_paths;
    std::vector<std::string> cone_image_paths;
    std::vector<std::string> wavelet_cone_image_paths;
    std::vector<std::string> real_image_paths;
    std::vector<std::string> real_label_paths;
};

namespace detail {

inline void require_pool(const std::vector<std::string>& pool, std::size_t n, const char* what,
                         const std::string& recipe) {
    if (pool.size() < n) {
        throw std::invalid_argument("recipe " + recipe + " needs " + std::to_string(n) + " " + what +
                                    " paths, got " + std::to_string(pool.size()));
    }
}

inline void append_synthetic(DatasetManifest& m, const DatasetSources& src,
                             const std::vector<std::string>& images, PostprocFlags flags, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        m.entries.push_back({images[i], src.synth_label_paths[i], "synthetic", flags});
    }
}

inline void append_real(DatasetManifest& m, const DatasetSources& src, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        m.entries.push_back({src.real_image_paths[i], src.real_label_paths[i], "real", {}});
    }
}

// Seeded sample of k distinct indices out of n, reported in ascending order.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    engine::Rng rng(engine::hash_combine(seed, 0x7375627365744bULL));
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

inline DatasetManifest build_dataset(const std::string& recipe, const DatasetSources& src, std::uint64_t seed,
                                     const std::string& created_from) {
    if (!is_known_recipe(recipe)) {
        std::string valid;
        for (const auto& n : recipe_names()) {
            if (!valid.empty()) valid += ", ";
            valid += n;
        }
        throw std::invalid_argument("unknown dataset recipe '" + recipe + "'; valid recipes: " + valid);
    }

    DatasetManifest m;
    m.name = recipe;
    m.created_from = created_from;

    const std::size_t synth_pool = src.synth_label_paths.size();
    auto check_variant = [&](const std::vector<std::string>& images, const char* what) {
        detail::require_pool(src.synth_label_paths, 27, "synthetic label", recipe);
        detail::require_pool(images, 27, what, recipe);
    };

    if (recipe == "D_Synthetic") {
        check_variant(src.synth_image_paths, "synthetic image");
        detail::append_synthetic(m, src, src.synth_image_paths, {false, false}, 27);
    } else if (recipe == "D_Wavelet") {
        check_variant(src.wavelet_image_paths, "wavelet image");
        detail::append_synthetic(m, src, src.wavelet_image_paths, {true, false}, 27);
    } else if (recipe == "D_Cone") {
        check_variant(src.cone_image_paths, "cone image");
        detail::append_synthetic(m, src, src.cone_image_paths, {false, true}, 27);
    } else if (recipe == "D_WaveletCone") {
        check_variant(src.wavelet_cone_image_paths, "wavelet+cone image");
        detail::append_synthetic(m, src, src.wavelet_cone_image_paths, {true, true}, 27);
    } else if (recipe == "D_Real") {
        detail::require_pool(src.real_image_paths, 17, "real image", recipe);
        detail::require_pool(src.real_label_paths, 17, "real label", recipe);
        detail::append_real(m, src, 17);
    } else {
        const std::size_t extra = recipe == "D_17Real10Augmented" ? 10 : 20;
        detail::require_pool(src.real_image_paths, 17, "real image", recipe);
        detail::require_pool(src.real_label_paths, 17, "real label", recipe);
        detail::require_pool(src.synth_label_paths, std::max<std::size_t>(extra, 27), "synthetic label", recipe);
        detail::require_pool(src.synth_image_paths, src.synth_label_paths.size(), "synthetic image", recipe);
        detail::append_real(m, src, 17);
        for (std::size_t i : detail::sample_indices(synth_pool, extra, seed)) {
            m.entries.push_back({src.synth_image_paths[i], src.synth_label_paths[i], "synthetic", {}});
        }
    }

    return m;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["schema_version"] = kManifestSchemaVersion;
    j["name"] = m.name;
    j["created_from"] = m.created_from;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        j["entries"].push_back({
            {"image_path", e.image_path},
            {"label_path", e.label_path},
            {"provenance", e.provenance},
            {"postproc", {{"wavelet", e.postproc.wavelet}, {"cone", e.postproc.cone}}},
        });
    }
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
        j["schema_version"].get<int>() != kManifestSchemaVersion) {
        throw std::runtime_error("manifest schema_version is missing or unsupported");
    }
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.created_from = j.value("created_from", std::string());
    for (const auto& e : j.at("entries")) {
        ManifestEntry entry;
        entry.image_path = e.at("image_path").get<std::string>();
        entry.label_path = e.at("label_path").get<std::string>();
        entry.provenance = e.at("provenance").get<std::string>();
        if (entry.provenance != "real" && entry.provenance != "synthetic") {
            throw std::runtime_error("manifest entry provenance must be 'real' or 'synthetic', got '" +
                                     entry.provenance + "'");
        }
        const auto& p = e.at("postproc");
        entry.postproc.wavelet = p.at("wavelet").get<bool>();
        entry.postproc.cone = p.at("cone").get<bool>();
        m.entries.push_back(std::move(entry));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open manifest for writing: " + path.string());
    f << manifest_to_json(m).dump(2) << "\n";
    if (!f.good()) throw std::runtime_error("manifest write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest is not valid JSON: " + path.string() + " (" + e.what() + ")");
    }
    try {
        return manifest_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest has a malformed field: " + path.string() + " (" + e.what() + ")");
    }
}

// Checks the recipe arithmetic for known names and that every referenced
// file exists and parses with the expected element type. Paths resolve
// against base_dir (normally the manifest's directory).
inline void validate_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir) {
    if (is_known_recipe(m.name) && m.entries.size() != recipe_entry_count(m.name)) {
        throw std::runtime_error("manifest " + m.name + " has " + std::to_string(m.entries.size()) +
                                 " entries, recipe requires " + std::to_string(recipe_entry_count(m.name)));
    }
    for (const auto& e : m.entries) {
        const std::filesystem::path img = base_dir / e.image_path;
        const std::filesystem::path lab = base_dir / e.label_path;
        load_volume(img.string());
        load_labels(lab.string());
    }
}

// Loads every pair referenced by the manifest, in entry order.
inline std::vector<std::pair<Volume, LabelVolume>> load_manifest_pairs(const DatasetManifest& m,
                                                                       const std::filesystem::path& base_dir) {
    std::vector<std::pair<Volume, LabelVolume>> pairs;
    pairs.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        pairs.emplace_back(load_volume((base_dir / e.image_path).string()),
                           load_labels((base_dir / e.label_path).string()));
    }
    return pairs;
}

}  // namespace echosynth::pipeline
