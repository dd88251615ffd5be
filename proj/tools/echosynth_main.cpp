// Command-line front end: phantom generation, rendering, GAN training and
// synthesis, post-processing, dataset construction, segmentation training,
// evaluation, report rendering, and the full experiment driver.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "echosynth/gan/gan.hpp"
#include "echosynth/metrics/metrics.hpp"
#include "echosynth/phantom/phantom.hpp"
#include "echosynth/phantom/render.hpp"
#include "echosynth/pipeline/checkpoint.hpp"
#include "echosynth/pipeline/dataset.hpp"
#include "echosynth/pipeline/experiment.hpp"
#include "echosynth/pipeline/pgm.hpp"
#include "echosynth/pipeline/v3d.hpp"
#include "echosynth/postproc/cone.hpp"
#include "echosynth/postproc/wavelet.hpp"
#include "echosynth/seg/seg.hpp"

namespace fs = std::filesystem;
using namespace echosynth;

namespace {

std::string case_stem(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "case%03zu", i);
    return std::string(buf);
}

// Sorted regular files in dir whose names end with the suffix.
std::vector<std::string> list_files(const fs::path& dir, const std::string& suffix) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            out.push_back(e.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// "sym4:2" -> family sym4, 2 levels
postproc::WaveletSpec parse_wavelet_arg(const std::string& arg) {
    const std::size_t colon = arg.find(':');
    const std::string family = arg.substr(0, colon);
    postproc::WaveletSpec spec;
    if (family == "haar") {
        spec.family = postproc::WaveletFamily::haar;
    } else if (family == "sym4") {
        spec.family = postproc::WaveletFamily::sym4;
    } else {
        throw std::runtime_error("--wavelet expects haar:<levels> or sym4:<levels>, got '" + arg + "'");
    }
    if (colon != std::string::npos) {
        try {
            spec.levels = std::stoi(arg.substr(colon + 1));
        } catch (const std::exception&) {
            throw std::runtime_error("--wavelet expects haar:<levels> or sym4:<levels>, got '" + arg + "'");
        }
    }
    return spec;
}

Dims3 dims_from_flag(const std::vector<int>& v) { return {v[0], v[1], v[2]}; }
Spacing3 spacing_from_flag(const std::vector<float>& v) { return {v[0], v[1], v[2]}; }

// Relativizes an on-disk file path against the manifest's directory so the
// manifest stays valid when the tree moves.
std::string manifest_relative(const std::string& file, const fs::path& manifest_dir) {
    return fs::relative(fs::absolute(file), fs::absolute(manifest_dir)).generic_string();
}

gan::TrainPair load_pair(const std::string& lab_path) {
    std::string img_path = lab_path;
    const std::string key = "_lab.v3d";
    img_path.replace(img_path.size() - key.size(), key.size(), "_img.v3d");
    if (!fs::exists(img_path)) throw std::runtime_error("missing image for " + lab_path);
    return {pipeline::load_volume(img_path), pipeline::load_labels(lab_path)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"labeled 3D echocardiography synthesis and segmentation toolkit"};
    app.require_subcommand(1);

    // gen-phantoms
    auto* gen_cmd = app.add_subcommand("gen-phantoms", "generate randomized heart label volumes");
    std::string gen_out;
    int gen_count = 1;
    std::uint64_t gen_seed = 0;
    std::vector<int> gen_dims = {32, 32, 16};
    std::vector<float> gen_spacing = {4.0f, 4.0f, 6.0f};
    gen_cmd->add_option("--out", gen_out, "output directory")->required();
    gen_cmd->add_option("--count", gen_count, "number of volumes")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--seed", gen_seed, "base seed; volume i uses seed+i");
    gen_cmd->add_option("--dims", gen_dims, "voxel grid, e.g. 32,32,16")->delimiter(',')->expected(3);
    gen_cmd->add_option("--spacing", gen_spacing, "mm per voxel, e.g. 4,4,6")->delimiter(',')->expected(3);

    // render
    auto* render_cmd = app.add_subcommand("render", "render a label volume to pseudo-ultrasound");
    std::string render_labels, render_out, render_preview;
    std::uint64_t render_seed = 0;
    render_cmd->add_option("--labels", render_labels, "input label volume (.v3d)")->required();
    render_cmd->add_option("--out", render_out, "output image volume (.v3d)")->required();
    render_cmd->add_option("--seed", render_seed, "speckle seed");
    render_cmd->add_option("--preview", render_preview, "also write a mid-slice PGM here");

    // train-gan
    auto* tg_cmd = app.add_subcommand("train-gan", "train the label-to-image translator");
    std::string tg_config, tg_pairs_dir, tg_ckpt, tg_history, tg_upsample;
    int tg_epochs = -1;
    float tg_lr = -1.0f, tg_lambda = -1.0f;
    std::uint64_t tg_seed = 0;
    bool tg_seed_set = false;
    tg_cmd->add_option("--config", tg_config, "experiment config JSON supplying gan/generator/discriminator");
    tg_cmd->add_option("--pairs-dir", tg_pairs_dir, "directory of caseNNN_img.v3d / caseNNN_lab.v3d pairs")
        ->required();
    tg_cmd->add_option("--out-checkpoint", tg_ckpt, "checkpoint output path")->required();
    tg_cmd->add_option("--history", tg_history, "per-epoch loss CSV output path");
    tg_cmd->add_option("--epochs", tg_epochs, "override training epochs");
    tg_cmd->add_option("--lr", tg_lr, "override learning rate");
    tg_cmd->add_option("--lambda", tg_lambda, "override the reconstruction weight");
    tg_cmd->add_option("--seed", tg_seed, "override training seed")->each([&](const std::string&) {
        tg_seed_set = true;
    });
    tg_cmd->add_option("--upsample", tg_upsample, "decoder mode: transposed or trilinear")
        ->check(CLI::IsMember({"transposed", "trilinear"}));

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "synthesize an image from a label volume");
    std::string synth_ckpt, synth_labels, synth_out;
    synth_cmd->add_option("--checkpoint", synth_ckpt, "generator or GAN checkpoint (.ckp)")->required();
    synth_cmd->add_option("--labels", synth_labels, "input label volume (.v3d)")->required();
    synth_cmd->add_option("--out", synth_out, "output image volume (.v3d)")->required();

    // postprocess
    auto* pp_cmd = app.add_subcommand("postprocess", "wavelet denoise and/or cone mask a volume");
    std::string pp_in, pp_out, pp_wavelet, pp_cone;
    pp_cmd->add_option("--in", pp_in, "input image volume (.v3d)")->required();
    pp_cmd->add_option("--out", pp_out, "output image volume (.v3d)")->required();
    pp_cmd->add_option("--wavelet", pp_wavelet, "denoise spec, e.g. sym4:2 or haar:1");
    pp_cmd->add_option("--cone", pp_cone, "'default' applies the standard sector mask")
        ->check(CLI::IsMember({"default", "none"}));

    // build-dataset
    auto* bd_cmd = app.add_subcommand("build-dataset", "assemble a dataset manifest from rendered pools");
    std::string bd_recipe, bd_out;
    std::uint64_t bd_seed = 0;
    std::string bd_synth_labels, bd_synth_images, bd_wavelet_images, bd_cone_images, bd_wavelet_cone_images;
    std::string bd_real_images, bd_real_labels;
    bd_cmd->add_option("--recipe", bd_recipe, "dataset recipe name, e.g. D_Synthetic")->required();
    bd_cmd->add_option("--out", bd_out, "manifest JSON output path")->required();
    bd_cmd->add_option("--seed", bd_seed, "subset-sampling seed for the augmented recipes");
    bd_cmd->add_option("--synth-labels", bd_synth_labels, "directory of synthetic label volumes");
    bd_cmd->add_option("--synth-images", bd_synth_images, "directory of raw synthetic images");
    bd_cmd->add_option("--wavelet-images", bd_wavelet_images, "directory of denoised synthetic images");
    bd_cmd->add_option("--cone-images", bd_cone_images, "directory of cone-masked synthetic images");
    bd_cmd->add_option("--wavelet-cone-images", bd_wavelet_cone_images,
                       "directory of denoised + cone-masked synthetic images");
    bd_cmd->add_option("--real-images", bd_real_images, "directory of real image volumes");
    bd_cmd->add_option("--real-labels", bd_real_labels, "directory of real label volumes");

    // train-seg
    auto* ts_cmd = app.add_subcommand("train-seg", "cross-validate a segmentation model on a manifest");
    std::string ts_manifest, ts_config, ts_csv, ts_ckpt, ts_model_name;
    int ts_folds = -1, ts_epochs = -1;
    float ts_lr = -1.0f;
    std::uint64_t ts_seed = 0;
    bool ts_seed_set = false;
    ts_cmd->add_option("--manifest", ts_manifest, "dataset manifest JSON")->required();
    ts_cmd->add_option("--config", ts_config, "experiment config JSON supplying the seg section");
    ts_cmd->add_option("--out-csv", ts_csv, "per-fold validation Dice CSV output path");
    ts_cmd->add_option("--out-checkpoint", ts_ckpt, "best-fold model checkpoint output path");
    ts_cmd->add_option("--model-name", ts_model_name, "model name for the CSV (default: from the recipe)");
    ts_cmd->add_option("--folds", ts_folds, "override fold count");
    ts_cmd->add_option("--epochs", ts_epochs, "override training epochs");
    ts_cmd->add_option("--lr", ts_lr, "override learning rate");
    ts_cmd->add_option("--seed", ts_seed, "override training seed")->each([&](const std::string&) {
        ts_seed_set = true;
    });

    // evaluate
    auto* ev_cmd = app.add_subcommand("evaluate", "score a predicted label volume against ground truth");
    std::string ev_pred, ev_gt;
    ev_cmd->add_option("--pred", ev_pred, "predicted label volume (.v3d)")->required();
    ev_cmd->add_option("--gt", ev_gt, "ground-truth label volume (.v3d)")->required();

    // report
    auto* rp_cmd = app.add_subcommand("report", "render an aggregate CSV as a table");
    std::string rp_csv, rp_out, rp_layout = "auto";
    rp_cmd->add_option("--aggregates", rp_csv, "aggregates CSV (model,structure,mean,std,n)")->required();
    rp_cmd->add_option("--out", rp_out, "also write the table to this file");
    rp_cmd->add_option("--layout", rp_layout, "validation, test, or auto")
        ->check(CLI::IsMember({"validation", "test", "auto"}));

    // run-all
    auto* ra_cmd = app.add_subcommand("run-all", "run the full experiment from a config");
    std::string ra_config, ra_out;
    std::uint64_t ra_seed = 0;
    bool ra_seed_set = false;
    std::vector<std::string> ra_recipes;
    ra_cmd->add_option("--config", ra_config, "experiment config JSON")->required();
    ra_cmd->add_option("--out", ra_out, "override the config's output directory");
    ra_cmd->add_option("--seed", ra_seed, "override the config's seed")->each([&](const std::string&) {
        ra_seed_set = true;
    });
    ra_cmd->add_option("--recipes", ra_recipes, "override the config's dataset recipes")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (app.got_subcommand(gen_cmd)) {
            fs::create_directories(gen_out);
            const Dims3 dims = dims_from_flag(gen_dims);
            const Spacing3 spacing = spacing_from_flag(gen_spacing);
            for (std::size_t i = 0; i < static_cast<std::size_t>(gen_count); ++i) {
                const auto params = phantom::randomized_params(gen_seed + i);
                const LabelVolume labels = phantom::generate_phantom_labels(params, dims, spacing);
                const fs::path path = fs::path(gen_out) / (case_stem(i) + "_lab.v3d");
                pipeline::save_labels(labels, path.string());
                std::cout << path.string() << "\n";
            }
        } else if (app.got_subcommand(render_cmd)) {
            const LabelVolume labels = pipeline::load_labels(render_labels);
            const auto cone = postproc::default_cone_for(labels.dims, labels.spacing);
            const Volume img = phantom::render_pseudo_ultrasound(labels, cone, phantom::RenderParams{}, render_seed);
            pipeline::save_volume(img, render_out);
            if (!render_preview.empty()) pipeline::save_mid_slice_pgm(img, render_preview);
            std::cout << render_out << "\n";
        } else if (app.got_subcommand(tg_cmd)) {
            pipeline::ExperimentConfig base;
            if (!tg_config.empty()) base = pipeline::load_experiment_config(tg_config);
            gan::GanTrainConfig tcfg = base.gan;
            if (tg_epochs > 0) tcfg.epochs = tg_epochs;
            if (tg_lr > 0) tcfg.lr = tg_lr;
            if (tg_lambda >= 0) tcfg.lambda_l1 = tg_lambda;
            if (tg_seed_set) tcfg.seed = tg_seed;
            nets::GeneratorConfig gcfg = base.generator;
            if (tg_upsample == "transposed") gcfg.upsample_mode = nets::UpsampleMode::transposed;
            if (tg_upsample == "trilinear") gcfg.upsample_mode = nets::UpsampleMode::trilinear;

            std::vector<gan::TrainPair> pairs;
            for (const std::string& lab : list_files(tg_pairs_dir, "_lab.v3d")) pairs.push_back(load_pair(lab));
            if (pairs.empty()) throw std::runtime_error("no caseNNN_lab.v3d files in " + tg_pairs_dir);
            std::cerr << "training on " << pairs.size() << " pairs for " << tcfg.epochs << " epochs\n";

            const gan::GanTrainResult r = gan::train_gan(pairs, gcfg, base.discriminator, tcfg);
            if (fs::path(tg_ckpt).has_parent_path()) fs::create_directories(fs::path(tg_ckpt).parent_path());
            pipeline::save_gan_checkpoint(r.generator, r.discriminator, tg_ckpt);
            if (!tg_history.empty()) gan::save_history_csv(tg_history, r.history);
            const gan::EpochStats& last = r.history.back();
            std::cout << "final epoch: loss_D " << last.loss_d << " loss_G " << last.loss_g << " L1 "
                      << last.l1_term << "\n"
                      << tg_ckpt << "\n";
        } else if (app.got_subcommand(synth_cmd)) {
            const LabelVolume labels = pipeline::load_labels(synth_labels);
            Volume img;
            if (pipeline::peek_checkpoint_kind(synth_ckpt) == pipeline::CheckpointKind::gan) {
                img = gan::synthesize(pipeline::load_gan_checkpoint(synth_ckpt).first, labels);
            } else {
                img = gan::synthesize(pipeline::load_net_checkpoint(synth_ckpt), labels);
            }
            pipeline::save_volume(img, synth_out);
            std::cout << synth_out << "\n";
        } else if (app.got_subcommand(pp_cmd)) {
            Volume img = pipeline::load_volume(pp_in);
            if (pp_wavelet.empty() && pp_cone != "default") {
                throw std::runtime_error("nothing to do: pass --wavelet and/or --cone default");
            }
            if (!pp_wavelet.empty()) img = postproc::wavelet_denoise(img, parse_wavelet_arg(pp_wavelet));
            if (pp_cone == "default") {
                const auto spec = postproc::default_cone_for(img.dims, img.spacing);
                img = postproc::apply_cone(img, postproc::make_cone_mask(img.dims, img.spacing, spec), 0.0f);
            }
            pipeline::save_volume(img, pp_out);
            std::cout << pp_out << "\n";
        } else if (app.got_subcommand(bd_cmd)) {
            const fs::path manifest_dir = fs::path(bd_out).has_parent_path() ? fs::path(bd_out).parent_path() : ".";
            fs::create_directories(manifest_dir);
            pipeline::DatasetSources src;
            auto fill = [&](std::vector<std::string>& dst, const std::string& dir, const char* suffix) {
                if (dir.empty()) return;
                for (const std::string& p : list_files(dir, suffix)) {
                    dst.push_back(manifest_relative(p, manifest_dir));
                }
            };
            fill(src.synth_label_paths, bd_synth_labels, "_lab.v3d");
            fill(src.synth_image_paths, bd_synth_images, "_img.v3d");
            fill(src.wavelet_image_paths, bd_wavelet_images, "_img.v3d");
            fill(src.cone_image_paths, bd_cone_images, "_img.v3d");
            fill(src.wavelet_cone_image_paths, bd_wavelet_cone_images, "_img.v3d");
            fill(src.real_image_paths, bd_real_images, "_img.v3d");
            fill(src.real_label_paths, bd_real_labels, "_lab.v3d");

            nlohmann::json desc;
            desc["recipe"] = bd_recipe;
            desc["seed"] = bd_seed;
            const pipeline::DatasetManifest m =
                pipeline::build_dataset(bd_recipe, src, bd_seed, pipeline::config_hash(desc.dump()));
            pipeline::save_manifest(m, bd_out);
            pipeline::validate_manifest(m, manifest_dir);
            std::cout << bd_out << " (" << m.entries.size() << " entries)\n";
        } else if (app.got_subcommand(ts_cmd)) {
            pipeline::ExperimentConfig base;
            if (!ts_config.empty()) base = pipeline::load_experiment_config(ts_config);
            seg::SegConfig scfg = base.seg;
            if (ts_folds > 0) scfg.folds = ts_folds;
            if (ts_epochs > 0) scfg.epochs = ts_epochs;
            if (ts_lr > 0) scfg.lr = ts_lr;
            if (ts_seed_set) scfg.seed = ts_seed;

            const pipeline::DatasetManifest m = pipeline::load_manifest(ts_manifest);
            const fs::path base_dir = fs::path(ts_manifest).has_parent_path()
                                          ? fs::path(ts_manifest).parent_path()
                                          : ".";
            pipeline::validate_manifest(m, base_dir);
            std::vector<seg::SegSample> samples;
            for (auto& [img, lab] : pipeline::load_manifest_pairs(m, base_dir)) {
                samples.push_back({std::move(img), std::move(lab)});
            }
            const std::string model_name =
                ts_model_name.empty() ? pipeline::model_name_for(m.name) : ts_model_name;
            std::cerr << "training " << model_name << " on " << samples.size() << " pairs, " << scfg.folds
                      << " folds\n";
            const std::vector<seg::FoldResult> folds = seg::train_seg(samples, scfg);
            for (const auto& fr : folds) {
                std::cout << "fold " << fr.fold_index << ": LV " << fr.validation_dice[0] << " LA "
                          << fr.validation_dice[1] << " MYO " << fr.validation_dice[2] << "\n";
            }
            if (!ts_csv.empty()) seg::save_fold_results_csv(ts_csv, model_name, folds);
            if (!ts_ckpt.empty()) {
                if (fs::path(ts_ckpt).has_parent_path()) fs::create_directories(fs::path(ts_ckpt).parent_path());
                pipeline::save_net_checkpoint(folds[seg::best_fold_index(folds)].model, ts_ckpt);
                std::cout << ts_ckpt << "\n";
            }
        } else if (app.got_subcommand(ev_cmd)) {
            const LabelVolume pred = pipeline::load_labels(ev_pred);
            const LabelVolume gt = pipeline::load_labels(ev_gt);
            const std::uint8_t ids[3] = {kLV, kLA, kMYO};
            for (std::uint8_t id : ids) {
                if (count_class(pred, id) == 0 && count_class(gt, id) == 0) continue;
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%s Dice %.3f", class_name(id), metrics::dice(pred, gt, id));
                std::cout << buf << "\n";
            }
            char buf[64];
            std::snprintf(buf, sizeof(buf), "Heart Volume VS %.3f",
                          metrics::volume_similarity(pred, gt, {kLV, kLA, kMYO}));
            std::cout << buf << "\n";
        } else if (app.got_subcommand(rp_cmd)) {
            const std::vector<metrics::AggregateRow> rows = metrics::load_aggregates_csv(rp_csv);
            metrics::TableLayout layout = metrics::TableLayout::validation;
            if (rp_layout == "test") {
                layout = metrics::TableLayout::test;
            } else if (rp_layout == "auto") {
                for (const auto& r : rows) {
                    if (r.structure == "Heart Volume") layout = metrics::TableLayout::test;
                }
            }
            const std::string table = metrics::report_tables(rows, layout);
            std::cout << table;
            if (!rp_out.empty()) {
                std::ofstream f(rp_out, std::ios::trunc);
                if (!f) throw std::runtime_error("cannot open " + rp_out);
                f << table;
            }
        } else if (app.got_subcommand(ra_cmd)) {
            pipeline::ExperimentConfig cfg = pipeline::load_experiment_config(ra_config);
            if (!ra_out.empty()) cfg.out_dir = ra_out;
            if (ra_seed_set) cfg.seed = ra_seed;
            if (!ra_recipes.empty()) cfg.recipes = ra_recipes;
            const pipeline::ExperimentReport report = pipeline::run_experiment(cfg, &std::cerr);
            std::cout << "validation (mean Dice over folds):\n"
                      << report.validation_table << "\n"
                      << "test set (Dice; Heart Volume row is volume similarity):\n"
                      << report.test_table << "\nartifacts: " << report.out_dir.string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
