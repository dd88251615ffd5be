#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echosynth/gan/gan.hpp"
#include "echosynth/metrics/metrics.hpp"
#include "echosynth/nets/patchgan.hpp"
#include "echosynth/nets/unet3d.hpp"
#include "echosynth/phantom/phantom.hpp"
#include "echosynth/phantom/render.hpp"
#include "echosynth/pipeline/checkpoint.hpp"
#include "echosynth/pipeline/dataset.hpp"
#include "echosynth/pipeline/pgm.hpp"
#include "echosynth/pipeline/v3d.hpp"
#include "echosynth/postproc/cone.hpp"
#include "echosynth/postproc/wavelet.hpp"
#include "echosynth/seg/seg.hpp"
#include "echosynth/volume.hpp"

// End-to-end experiment driver: phantom generation, GAN training, synthesis,
// post-processing, dataset construction, per-dataset segmentation, and the
// report tables. Every artifact lands under cfg.out_dir and is a pure
// function of the config, so a rerun writes byte-identical CSVs.

namespace echosynth::pipeline {

inline constexpr int kExperimentSchemaVersion = 1;

struct ExperimentConfig {
    std::uint64_t seed = 0;
    Dims3 dims{32, 32, 16};
    Spacing3 spacing{4.0f, 4.0f, 6.0f};

    int gan_train_pairs = 8;
    gan::GanTrainConfig gan;
    nets::GeneratorConfig generator;
    nets::DiscriminatorConfig discriminator;

    postproc::WaveletSpec wavelet;

    seg::SegConfig seg;
    int test_volumes = 6;

    std::vector<std::string> recipes = recipe_names();
    std::string out_dir = "out";
};

namespace detail {

// Seed offsets keeping the four phantom pools disjoint within one run; the
// renderer draws from a separate range so image noise never aliases a
// phantom parameter draw.
inline constexpr std::uint64_t kGanPhantomBase = 1000;
inline constexpr std::uint64_t kSynthPhantomBase = 2000;
inline constexpr std::uint64_t kRealPhantomBase = 3000;
inline constexpr std::uint64_t kTestPhantomBase = 4000;
inline constexpr std::uint64_t kRenderSeedBase = 500000;
inline constexpr std::size_t kSynthCount = 27;
inline constexpr std::size_t kRealCount = 17;

inline void require_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw std::runtime_error("config has an unknown key '" + key + "' in " + where);
        }
    }
}

inline std::array<float, 3> float3_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw std::runtime_error("config " + where + " must be a 3-element array");
    return {j[0].get<float>(), j[1].get<float>(), j[2].get<float>()};
}

inline Dims3 dims_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw std::runtime_error("config " + where + " must be a 3-element array");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["schema_version"] = kExperimentSchemaVersion;
    j["seed"] = c.seed;
    j["dims"] = {c.dims[0], c.dims[1], c.dims[2]};
    j["spacing"] = {c.spacing[0], c.spacing[1], c.spacing[2]};
    j["out_dir"] = c.out_dir;
    j["gan"] = {
        {"train_pairs", c.gan_train_pairs},
        {"epochs", c.gan.epochs},
        {"lr", c.gan.lr},
        {"lambda_l1", c.gan.lambda_l1},
        {"batch_size", c.gan.batch_size},
        {"augment",
         {{"probability", c.gan.augment.probability},
          {"blur_sigma_min", c.gan.augment.blur_sigma_min},
          {"blur_sigma_max", c.gan.augment.blur_sigma_max},
          {"rotation_range", c.gan.augment.rotation_range}}},
    };
    j["generator"] = {
        {"levels", c.generator.levels},
        {"base_channels", c.generator.base_channels},
        {"upsample_mode", c.generator.upsample_mode == nets::UpsampleMode::trilinear ? "trilinear" : "transposed"},
    };
    j["discriminator"] = {
        {"layers", c.discriminator.layers},
        {"base_channels", c.discriminator.base_channels},
    };
    j["wavelet"] = {
        {"family", postproc::wavelet_family_name(c.wavelet.family)},
        {"levels", c.wavelet.levels},
    };
    j["seg"] = {
        {"folds", c.seg.folds},       {"epochs", c.seg.epochs},
        {"lr", c.seg.lr},             {"levels", c.seg.levels},
        {"base_channels", c.seg.base_channels},
        {"poly_lr_decay", c.seg.poly_lr_decay},
    };
    j["test_volumes"] = c.test_volumes;
    j["recipes"] = c.recipes;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
        j["schema_version"].get<int>() != kExperimentSchemaVersion) {
        throw std::runtime_error("config schema_version is missing or unsupported");
    }
    detail::require_keys(j,
                         {"schema_version", "seed", "dims", "spacing", "out_dir", "gan", "generator",
                          "discriminator", "wavelet", "seg", "test_volumes", "recipes"},
                         "the top level");

    ExperimentConfig c;
    c.seed = j.value("seed", std::uint64_t(0));
    if (j.contains("dims")) c.dims = detail::dims_from_json(j["dims"], "dims");
    if (j.contains("spacing")) c.spacing = detail::float3_from_json(j["spacing"], "spacing");
    c.out_dir = j.value("out_dir", std::string("out"));

    if (j.contains("gan")) {
        const auto& g = j["gan"];
        detail::require_keys(g, {"train_pairs", "epochs", "lr", "lambda_l1", "batch_size", "augment"}, "gan");
        c.gan_train_pairs = g.value("train_pairs", c.gan_train_pairs);
        c.gan.epochs = g.value("epochs", c.gan.epochs);
        c.gan.lr = g.value("lr", c.gan.lr);
        c.gan.lambda_l1 = g.value("lambda_l1", c.gan.lambda_l1);
        c.gan.batch_size = g.value("batch_size", c.gan.batch_size);
        if (g.contains("augment")) {
            const auto& a = g["augment"];
            detail::require_keys(a, {"probability", "blur_sigma_min", "blur_sigma_max", "rotation_range"},
                                 "gan.augment");
            c.gan.augment.probability = a.value("probability", c.gan.augment.probability);
            c.gan.augment.blur_sigma_min = a.value("blur_sigma_min", c.gan.augment.blur_sigma_min);
            c.gan.augment.blur_sigma_max = a.value("blur_sigma_max", c.gan.augment.blur_sigma_max);
            c.gan.augment.rotation_range = a.value("rotation_range", c.gan.augment.rotation_range);
        }
    }

    if (j.contains("generator")) {
        const auto& g = j["generator"];
        detail::require_keys(g, {"levels", "base_channels", "upsample_mode"}, "generator");
        c.generator.levels = g.value("levels", c.generator.levels);
        c.generator.base_channels = g.value("base_channels", c.generator.base_channels);
        const std::string mode = g.value("upsample_mode", std::string("transposed"));
        if (mode == "transposed") {
            c.generator.upsample_mode = nets::UpsampleMode::transposed;
        } else if (mode == "trilinear") {
            c.generator.upsample_mode = nets::UpsampleMode::trilinear;
        } else {
            throw std::runtime_error("config generator.upsample_mode must be 'transposed' or 'trilinear', got '" +
                                     mode + "'");
        }
    }

    if (j.contains("discriminator")) {
        const auto& d = j["discriminator"];
        detail::require_keys(d, {"layers", "base_channels"}, "discriminator");
        c.discriminator.layers = d.value("layers", c.discriminator.layers);
        c.discriminator.base_channels = d.value("base_channels", c.discriminator.base_channels);
    }

    if (j.contains("wavelet")) {
        const auto& w = j["wavelet"];
        detail::require_keys(w, {"family", "levels"}, "wavelet");
        const std::string family = w.value("family", std::string("sym4"));
        if (family == "haar") {
            c.wavelet.family = postproc::WaveletFamily::haar;
        } else if (family == "sym4") {
            c.wavelet.family = postproc::WaveletFamily::sym4;
        } else {
            throw std::runtime_error("config wavelet.family must be 'haar' or 'sym4', got '" + family + "'");
        }
        c.wavelet.levels = w.value("levels", c.wavelet.levels);
    }

    if (j.contains("seg")) {
        const auto& s = j["seg"];
        detail::require_keys(s, {"folds", "epochs", "lr", "levels", "base_channels", "poly_lr_decay"}, "seg");
        c.seg.folds = s.value("folds", c.seg.folds);
        c.seg.epochs = s.value("epochs", c.seg.epochs);
        c.seg.lr = s.value("lr", c.seg.lr);
        c.seg.levels = s.value("levels", c.seg.levels);
        c.seg.base_channels = s.value("base_channels", c.seg.base_channels);
        c.seg.poly_lr_decay = s.value("poly_lr_decay", c.seg.poly_lr_decay);
    }

    c.test_volumes = j.value("test_volumes", c.test_volumes);
    if (j.contains("recipes")) c.recipes = j["recipes"].get<std::vector<std::string>>();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config is not valid JSON: " + path.string() + " (" + e.what() + ")");
    }
    return experiment_config_from_json(j);
}

inline void validate_experiment_config(const ExperimentConfig& c) {
    for (int d : c.dims) {
        if (d < 1) throw std::invalid_argument("experiment dims must be positive");
    }
    for (float s : c.spacing) {
        if (!(s > 0.0f)) throw std::invalid_argument("experiment spacing must be positive");
    }
    if (c.gan_train_pairs < 1) throw std::invalid_argument("experiment gan.train_pairs must be >= 1");
    if (c.test_volumes < 1) throw std::invalid_argument("experiment test_volumes must be >= 1");
    if (c.recipes.empty()) throw std::invalid_argument("experiment recipes list is empty");
    for (const auto& r : c.recipes) {
        if (!is_known_recipe(r)) {
            std::string valid;
            for (const auto& n : recipe_names()) {
                if (!valid.empty()) valid += ", ";
                valid += n;
            }
            throw std::invalid_argument("unknown dataset recipe '" + r + "'; valid recipes: " + valid);
        }
    }
    gan::validate_train_config(c.gan);
    seg::validate_seg_config(c.seg);
    if (c.out_dir.empty()) throw std::invalid_argument("experiment out_dir is empty");
}

// Maps a dataset recipe to the model trained on it.
inline std::string model_name_for(const std::string& recipe) {
    if (recipe.rfind("D_", 0) == 0) return "M_" + recipe.substr(2);
    return "M_" + recipe;
}

struct ExperimentReport {
    std::vector<std::string> model_names;
    std::vector<metrics::AggregateRow> validation_rows;
    std::vector<metrics::AggregateRow> test_rows;
    std::string validation_table;
    std::string test_table;
    std::vector<std::filesystem::path> manifest_paths;
    std::filesystem::path out_dir;
};

namespace detail {

template <typename Fn>
auto run_stage(const char* name, std::ostream* log, Fn&& fn) {
    if (log) {
        *log << "[stage] " << name << std::endl;
    }
    try {
        return fn();
    } catch (const std::exception& e) {
        throw std::runtime_error("stage '" + std::string(name) + "' failed: " + e.what());
    }
}

inline std::string case_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "case%03zu", i);
    return std::string(buf);
}

struct PhantomPools {
    std::vector<gan::TrainPair> gan_pairs;
    std::vector<LabelVolume> synth_labels;
    std::vector<seg::SegSample> real_pairs;
    std::vector<seg::SegSample> test_pairs;
};

inline PhantomPools generate_phantom_pools(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    const auto cone = postproc::default_cone_for(cfg.dims, cfg.spacing);
    PhantomPools pools;

    auto make_labels = [&](std::uint64_t pool_base, std::size_t i) {
        return phantom::generate_phantom_labels(phantom::randomized_params(cfg.seed + pool_base + i), cfg.dims,
                                                cfg.spacing);
    };
    auto render = [&](const LabelVolume& labels, std::uint64_t pool_base, std::size_t i) {
        return phantom::render_pseudo_ultrasound(labels, cone, phantom::RenderParams{},
                                                 cfg.seed + kRenderSeedBase + pool_base + i);
    };

    std::filesystem::create_directories(out / "phantoms" / "gan");
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.gan_train_pairs); ++i) {
        LabelVolume labels = make_labels(kGanPhantomBase, i);
        Volume img = render(labels, kGanPhantomBase, i);
        save_labels(labels, (out / "phantoms" / "gan" / (case_name(i) + "_lab.v3d")).string());
        save_volume(img, (out / "phantoms" / "gan" / (case_name(i) + "_img.v3d")).string());
        pools.gan_pairs.push_back({std::move(img), std::move(labels)});
    }

    std::filesystem::create_directories(out / "phantoms" / "synth");
    for (std::size_t i = 0; i < kSynthCount; ++i) {
        LabelVolume labels = make_labels(kSynthPhantomBase, i);
        save_labels(labels, (out / "phantoms" / "synth" / (case_name(i) + "_lab.v3d")).string());
        pools.synth_labels.push_back(std::move(labels));
    }

    std::filesystem::create_directories(out / "phantoms" / "real");
    for (std::size_t i = 0; i < kRealCount; ++i) {
        LabelVolume labels = make_labels(kRealPhantomBase, i);
        Volume img = render(labels, kRealPhantomBase, i);
        save_labels(labels, (out / "phantoms" / "real" / (case_name(i) + "_lab.v3d")).string());
        save_volume(img, (out / "phantoms" / "real" / (case_name(i) + "_img.v3d")).string());
        pools.real_pairs.push_back({std::move(img), std::move(labels)});
    }

    std::filesystem::create_directories(out / "phantoms" / "test");
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.test_volumes); ++i) {
        LabelVolume labels = make_labels(kTestPhantomBase, i);
        Volume img = render(labels, kTestPhantomBase, i);
        save_labels(labels, (out / "phantoms" / "test" / (case_name(i) + "_lab.v3d")).string());
        save_volume(img, (out / "phantoms" / "test" / (case_name(i) + "_img.v3d")).string());
        pools.test_pairs.push_back({std::move(img), std::move(labels)});
    }

    return pools;
}

}  // namespace detail

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    validate_experiment_config(cfg);
    const std::filesystem::path out(cfg.out_dir);
    std::filesystem::create_directories(out);
    // the digest identifies the experiment, not its destination, so the
    // same config written to two directories produces identical trees
    nlohmann::json hashed = experiment_config_to_json(cfg);
    hashed.erase("out_dir");
    const std::string digest = config_hash(hashed.dump());

    ExperimentReport report;
    report.out_dir = out;

    // phantom pools: training pairs for the GAN, label volumes to
    // synthesize from, "real" stand-in pairs, and the held-out test set
    detail::PhantomPools pools = detail::run_stage(
        "phantoms", log, [&] { return detail::generate_phantom_pools(cfg, out); });

    // image-to-image translator from label maps to pseudo-ultrasound
    gan::GanTrainResult trained = detail::run_stage("gan", log, [&] {
        gan::GanTrainConfig gcfg = cfg.gan;
        gcfg.seed = engine::hash_combine(cfg.seed, 0x67616e2dULL);
        gan::GanTrainResult r = gan::train_gan(pools.gan_pairs, cfg.generator, cfg.discriminator, gcfg);
        std::filesystem::create_directories(out / "checkpoints");
        std::filesystem::create_directories(out / "history");
        save_gan_checkpoint(r.generator, r.discriminator, out / "checkpoints" / "gan.ckp");
        gan::save_history_csv(out / "history" / "gan_history.csv", r.history);
        return r;
    });

    // one synthetic image per label volume
    std::vector<Volume> synth_images = detail::run_stage("synthesis", log, [&] {
        std::filesystem::create_directories(out / "synth");
        std::vector<Volume> images;
        for (std::size_t i = 0; i < pools.synth_labels.size(); ++i) {
            Volume img = gan::synthesize(trained.generator, pools.synth_labels[i]);
            save_volume(img, (out / "synth" / (detail::case_name(i) + "_img.v3d")).string());
            images.push_back(std::move(img));
        }
        return images;
    });

    // denoised and cone-masked variants of every synthetic image
    detail::run_stage("postproc", log, [&] {
        const Volume mask = postproc::make_cone_mask(cfg.dims, cfg.spacing, postproc::default_cone_for(cfg.dims, cfg.spacing));
        std::filesystem::create_directories(out / "synth_wavelet");
        std::filesystem::create_directories(out / "synth_cone");
        std::filesystem::create_directories(out / "synth_wavelet_cone");
        std::filesystem::create_directories(out / "previews");
        for (std::size_t i = 0; i < synth_images.size(); ++i) {
            const Volume& img = synth_images[i];
            const Volume den = postproc::wavelet_denoise(img, cfg.wavelet);
            const Volume coned = postproc::apply_cone(img, mask, 0.0f);
            const Volume den_coned = postproc::apply_cone(den, mask, 0.0f);
            save_volume(den, (out / "synth_wavelet" / (detail::case_name(i) + "_img.v3d")).string());
            save_volume(coned, (out / "synth_cone" / (detail::case_name(i) + "_img.v3d")).string());
            save_volume(den_coned, (out / "synth_wavelet_cone" / (detail::case_name(i) + "_img.v3d")).string());
            if (i == 0) {
                save_mid_slice_pgm(img, (out / "previews" / "synth_raw.pgm").string());
                save_mid_slice_pgm(den, (out / "previews" / "synth_wavelet.pgm").string());
                save_mid_slice_pgm(coned, (out / "previews" / "synth_cone.pgm").string());
                save_mid_slice_pgm(den_coned, (out / "previews" / "synth_wavelet_cone.pgm").string());
                save_mid_slice_pgm(pools.synth_labels[0], (out / "previews" / "synth_labels.pgm").string());
            }
        }
        if (!pools.real_pairs.empty()) {
            save_mid_slice_pgm(pools.real_pairs[0].image, (out / "previews" / "real_render.pgm").string());
        }
        return 0;
    });

    // manifests; entry paths are relative to the datasets directory
    std::vector<DatasetManifest> manifests = detail::run_stage("datasets", log, [&] {
        std::filesystem::create_directories(out / "datasets");
        DatasetSources src;
        for (std::size_t i = 0; i < pools.synth_labels.size(); ++i) {
            const std::string stem = detail::case_name(i) + "_img.v3d";
            src.synth_label_paths.push_back("../phantoms/synth/" + detail::case_name(i) + "_lab.v3d");
            src.synth_image_paths.push_back("../synth/" + stem);
            src.wavelet_image_paths.push_back("../synth_wavelet/" + stem);
            src.cone_image_paths.push_back("../synth_cone/" + stem);
            src.wavelet_cone_image_paths.push_back("../synth_wavelet_cone/" + stem);
        }
        for (std::size_t i = 0; i < pools.real_pairs.size(); ++i) {
            src.real_image_paths.push_back("../phantoms/real/" + detail::case_name(i) + "_img.v3d");
            src.real_label_paths.push_back("../phantoms/real/" + detail::case_name(i) + "_lab.v3d");
        }
        const std::uint64_t data_seed = engine::hash_combine(cfg.seed, 0x64617461ULL);
        std::vector<DatasetManifest> built;
        for (const auto& recipe : cfg.recipes) {
            DatasetManifest m = build_dataset(recipe, src, data_seed, digest);
            const std::filesystem::path mpath = out / "datasets" / (recipe + ".json");
            save_manifest(m, mpath);
            validate_manifest(m, out / "datasets");
            report.manifest_paths.push_back(mpath);
            built.push_back(std::move(m));
        }
        return built;
    });

    // one segmentation model per dataset, plus its test-set scores
    struct ModelOutcome {
        std::string name;
        std::vector<seg::FoldResult> folds;
        std::vector<float> test_dice[3];   // LV, LA, MYO across test cases
        std::vector<float> test_heart_vs;  // heart-volume agreement per case
    };
    std::vector<ModelOutcome> outcomes = detail::run_stage("segmentation", log, [&] {
        std::filesystem::create_directories(out / "results");
        std::vector<ModelOutcome> all;
        for (std::size_t mi = 0; mi < manifests.size(); ++mi) {
            const DatasetManifest& m = manifests[mi];
            ModelOutcome outcome;
            outcome.name = model_name_for(m.name);
            if (log) {
                *log << "  training " << outcome.name << " on " << m.entries.size() << " pairs" << std::endl;
            }

            std::vector<seg::SegSample> samples;
            for (auto& [img, lab] : load_manifest_pairs(m, out / "datasets")) {
                samples.push_back({std::move(img), std::move(lab)});
            }
            seg::SegConfig scfg = cfg.seg;
            scfg.seed = engine::hash_combine(engine::hash_combine(cfg.seed, 0x7365672dULL), mi);
            outcome.folds = seg::train_seg(samples, scfg);
            seg::save_fold_results_csv(out / "results" / (outcome.name + "_folds.csv"), outcome.name,
                                       outcome.folds);

            const std::size_t best = seg::best_fold_index(outcome.folds);
            save_net_checkpoint(outcome.folds[best].model, out / "checkpoints" / (outcome.name + "_best.ckp"));

            std::vector<metrics::StructureScore> case_scores;
            for (std::size_t ti = 0; ti < pools.test_pairs.size(); ++ti) {
                const seg::SegSample& t = pools.test_pairs[ti];
                const LabelVolume pred = seg::predict(outcome.folds[best].model, t.image);
                const std::uint8_t ids[3] = {kLV, kLA, kMYO};
                for (int s = 0; s < 3; ++s) {
                    const float d = metrics::dice(pred, t.labels, ids[s]);
                    const float vs = metrics::volume_similarity(pred, t.labels, {ids[s]});
                    outcome.test_dice[s].push_back(d);
                    case_scores.push_back({"test" + std::to_string(ti), ids[s], d, vs});
                }
                outcome.test_heart_vs.push_back(metrics::volume_similarity(pred, t.labels, {kLV, kLA, kMYO}));
            }
            metrics::save_scores_csv(out / "results" / (outcome.name + "_test_scores.csv"), case_scores);
            all.push_back(std::move(outcome));
        }
        return all;
    });

    // aggregate rows and the two table layouts
    detail::run_stage("report", log, [&] {
        const char* names[3] = {"LV", "LA", "MYO"};
        for (const ModelOutcome& o : outcomes) {
            report.model_names.push_back(o.name);
            for (int s = 0; s < 3; ++s) {
                std::vector<float> per_fold;
                for (const auto& fr : o.folds) per_fold.push_back(fr.validation_dice[static_cast<std::size_t>(s)]);
                const metrics::Aggregate a = metrics::aggregate(per_fold);
                report.validation_rows.push_back({o.name, names[s], a.mean, a.stddev, static_cast<int>(per_fold.size())});
            }
            for (int s = 0; s < 3; ++s) {
                const metrics::Aggregate a = metrics::aggregate(o.test_dice[s]);
                report.test_rows.push_back({o.name, names[s], a.mean, a.stddev, static_cast<int>(o.test_dice[s].size())});
            }
            const metrics::Aggregate hv = metrics::aggregate(o.test_heart_vs);
            report.test_rows.push_back({o.name, "Heart Volume", hv.mean, hv.stddev, static_cast<int>(o.test_heart_vs.size())});
        }

        report.validation_table = metrics::report_tables(report.validation_rows, metrics::TableLayout::validation);
        report.test_table = metrics::report_tables(report.test_rows, metrics::TableLayout::test);

        metrics::save_aggregates_csv(out / "results" / "aggregates_validation.csv", report.validation_rows);
        metrics::save_aggregates_csv(out / "results" / "aggregates_test.csv", report.test_rows);

        auto write_text = [](const std::filesystem::path& p, const std::string& text) {
            std::ofstream f(p, std::ios::trunc);
            if (!f) throw std::runtime_error("cannot open report for writing: " + p.string());
            f << text;
            if (!f.good()) throw std::runtime_error("report write failed: " + p.string());
        };
        write_text(out / "report_validation.txt", report.validation_table);
        write_text(out / "report_test.txt", report.test_table);
        return 0;
    });

    return report;
}

}  // namespace echosynth::pipeline
