#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "echosynth/gan/gan.hpp"

using namespace echosynth;
using engine::Rng;
using engine::Tensor;
using gan::AugmentConfig;
using gan::GanTrainConfig;
using gan::TrainPair;

namespace {

constexpr float kLn2 = 0.69314718f;

Volume smooth_blob(Dims3 dims) {
    Volume v;
    v.dims = dims;
    v.spacing = {1.0f, 1.0f, 1.0f};
    v.data.resize(dims_numel(dims));
    const float cx = 0.5f * static_cast<float>(dims[0] - 1);
    const float cy = 0.5f * static_cast<float>(dims[1] - 1);
    const float cz = 0.5f * static_cast<float>(dims[2] - 1);
    std::size_t i = 0;
    for (int z = 0; z < dims[2]; ++z) {
        for (int y = 0; y < dims[1]; ++y) {
            for (int x = 0; x < dims[0]; ++x, ++i) {
                const float dx = (static_cast<float>(x) - cx) / cx;
                const float dy = (static_cast<float>(y) - cy) / cy;
                const float dz = (static_cast<float>(z) - cz) / cz;
                v.data[i] = std::exp(-2.0f * (dx * dx + dy * dy + dz * dz));
            }
        }
    }
    return v;
}

LabelVolume blob_labels(Dims3 dims) {
    LabelVolume lab;
    lab.dims = dims;
    lab.spacing = {1.0f, 1.0f, 1.0f};
    lab.classes.assign(dims_numel(dims), kBackground);
    const int cx = dims[0] / 2, cy = dims[1] / 2, cz = dims[2] / 2;
    for (int z = 0; z < dims[2]; ++z) {
        for (int y = 0; y < dims[1]; ++y) {
            for (int x = 0; x < dims[0]; ++x) {
                const int dx = x - cx, dy = y - cy, dz = z - cz;
                const int r2 = dx * dx + dy * dy + dz * dz;
                std::uint8_t id = kBackground;
                if (r2 < 9) {
                    id = kLV;
                } else if (r2 < 16) {
                    id = kMYO;
                } else if (y > cy + 3 && r2 < 30) {
                    id = kLA;
                }
                lab.classes[static_cast<std::size_t>((static_cast<std::int64_t>(z) * dims[1] + y) * dims[0] + x)] = id;
            }
        }
    }
    return lab;
}

float mean_abs_diff_vol(const Volume& a, const Volume& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
    return static_cast<float>(acc / static_cast<double>(a.data.size()));
}

}  // namespace

TEST_CASE("adversarial losses at zero logits equal ln 2 and matching images zero the l1 term") {
    Rng rng(4);
    Tensor d_real = Tensor::zeros({1, 1, 2, 2, 2});
    Tensor d_fake = Tensor::zeros({1, 1, 2, 2, 2});
    Tensor img = Tensor::randn({1, 1, 4, 4, 4}, rng, 0.3f);

    auto terms = gan::gan_loss(d_real, d_fake, img, img, 100.0f, nullptr);
    CHECK(terms.loss_d.data()[0] == Catch::Approx(kLn2).margin(1e-5));
    CHECK(terms.l1_term.data()[0] == 0.0f);
    CHECK(terms.loss_g.data()[0] == Catch::Approx(kLn2).margin(1e-5));
}

TEST_CASE("zero l1 weight reduces the generator loss to the adversarial term") {
    Rng rng(5);
    Tensor d_real = Tensor::randn({1, 1, 2, 2, 2}, rng, 1.0f);
    Tensor d_fake = Tensor::randn({1, 1, 2, 2, 2}, rng, 1.0f);
    Tensor fake = Tensor::randn({1, 1, 4, 4, 4}, rng, 0.3f);
    Tensor target = Tensor::randn({1, 1, 4, 4, 4}, rng, 0.3f);

    auto weighted = gan::gan_loss(d_real, d_fake, fake, target, 0.0f, nullptr);
    Tensor adv = engine::bce_with_logits_mean(d_fake, 1.0f, nullptr);
    CHECK(weighted.loss_g.data()[0] == Catch::Approx(adv.data()[0]).margin(1e-6));
    CHECK(weighted.l1_term.data()[0] > 0.0f);
}

TEST_CASE("losses reject mismatched shapes and non-finite values") {
    Rng rng(6);
    Tensor d = Tensor::zeros({1, 1, 2, 2, 2});
    Tensor a = Tensor::randn({1, 1, 4, 4, 4}, rng, 1.0f);
    Tensor b = Tensor::randn({1, 1, 4, 4, 2}, rng, 1.0f);
    CHECK_THROWS_WITH(gan::gan_loss(d, d, a, b, 1.0f, nullptr),
                      Catch::Matchers::ContainsSubstring("shapes differ"));

    Tensor bad = Tensor::zeros({1, 1, 2, 2, 2});
    bad.data()[3] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_WITH(gan::gan_loss(bad, d, a, a, 1.0f, nullptr),
                      Catch::Matchers::ContainsSubstring("non-finite"));
    CHECK_THROWS_WITH(gan::gan_loss(d, d, a, a, -1.0f, nullptr),
                      Catch::Matchers::ContainsSubstring("lambda_l1"));
}

TEST_CASE("zero-angle zero-sigma transform returns the pair unchanged") {
    const Dims3 dims{16, 16, 8};
    Volume img = smooth_blob(dims);
    LabelVolume lab = blob_labels(dims);
    auto [img2, lab2] = gan::rotate_blur_pair(img, lab, 0.0f, 0.0f);
    CHECK(std::memcmp(img2.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0);
    CHECK(lab2.classes == lab.classes);
}

TEST_CASE("rotating forward then back recovers the image within interpolation error") {
    const Dims3 dims{32, 32, 8};
    Volume img = smooth_blob(dims);
    LabelVolume lab = blob_labels(dims);
    const float theta = 0.17453292f;

    auto [img_r, lab_r] = gan::rotate_blur_pair(img, lab, theta, 0.0f);
    auto [img_rt, lab_rt] = gan::rotate_blur_pair(img_r, lab_r, -theta, 0.0f);
    CHECK(mean_abs_diff_vol(img_rt, img) < 0.02f);

    // rotation must actually move content
    CHECK(mean_abs_diff_vol(img_r, img) > 1e-4f);
}

TEST_CASE("rotated label volumes keep valid class ids and gain no new classes") {
    const Dims3 dims{24, 24, 8};
    LabelVolume lab = blob_labels(dims);
    Volume img = smooth_blob(dims);

    std::set<std::uint8_t> before(lab.classes.begin(), lab.classes.end());
    auto [img_r, lab_r] = gan::rotate_blur_pair(img, lab, 0.13f, 0.0f);
    REQUIRE_NOTHROW(validate_labels(lab_r));
    for (std::uint8_t id : lab_r.classes) {
        CHECK((before.count(id) == 1 || id == kBackground));
    }
}

TEST_CASE("blur smooths the image, preserves constants, and never touches labels") {
    const Dims3 dims{16, 16, 8};
    LabelVolume lab = blob_labels(dims);

    Volume flat;
    flat.dims = dims;
    flat.spacing = {1, 1, 1};
    flat.data.assign(dims_numel(dims), 0.375f);
    auto [flat_b, lab_b] = gan::rotate_blur_pair(flat, lab, 0.0f, 0.8f);
    for (float v : flat_b.data) CHECK(v == Catch::Approx(0.375f).margin(1e-5));
    CHECK(lab_b.classes == lab.classes);

    Volume noisy = flat;
    Rng rng(31);
    for (float& v : noisy.data) v = static_cast<float>(rng.uniform01());
    auto [noisy_b, lab_nb] = gan::rotate_blur_pair(noisy, lab, 0.0f, 0.8f);
    auto variance = [](const Volume& v) {
        double m = 0.0;
        for (float x : v.data) m += x;
        m /= static_cast<double>(v.data.size());
        double s = 0.0;
        for (float x : v.data) s += (x - m) * (x - m);
        return s / static_cast<double>(v.data.size());
    };
    CHECK(variance(noisy_b) < 0.5 * variance(noisy));
}

TEST_CASE("augmentation draws are deterministic and respect the probability gate") {
    const Dims3 dims{16, 16, 8};
    Volume img = smooth_blob(dims);
    LabelVolume lab = blob_labels(dims);

    AugmentConfig cfg;
    cfg.probability = 0.0f;
    Rng rng_off(7);
    auto [img_off, lab_off] = gan::augment_pair(img, lab, cfg, rng_off);
    CHECK(std::memcmp(img_off.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0);
    CHECK(lab_off.classes == lab.classes);

    cfg.probability = 1.0f;
    Rng a(99), b(99);
    auto [img_a, lab_a] = gan::augment_pair(img, lab, cfg, a);
    auto [img_b, lab_b] = gan::augment_pair(img, lab, cfg, b);
    CHECK(std::memcmp(img_a.data.data(), img_b.data.data(), img_a.data.size() * sizeof(float)) == 0);
    CHECK(lab_a.classes == lab_b.classes);
    REQUIRE_NOTHROW(validate_labels(lab_a));

    cfg.probability = 2.0f;
    Rng c(1);
    CHECK_THROWS_WITH(gan::augment_pair(img, lab, cfg, c),
                      Catch::Matchers::ContainsSubstring("probability"));
}

TEST_CASE("checkerboard energy is one for pure lattice patterns and zero for constants") {
    const Dims3 dims{8, 8, 8};
    Volume v;
    v.dims = dims;
    v.spacing = {1, 1, 1};
    v.data.resize(dims_numel(dims));

    std::size_t i = 0;
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x, ++i) v.data[i] = ((x + y + z) & 1) ? -1.0f : 1.0f;
    CHECK(gan::checkerboard_energy(v) == Catch::Approx(1.0).margin(1e-6));

    i = 0;
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x, ++i) v.data[i] = (x & 1) ? 0.0f : 1.0f;
    CHECK(gan::checkerboard_energy(v) == Catch::Approx(1.0).margin(1e-6));

    v.data.assign(v.data.size(), 0.7f);
    CHECK(gan::checkerboard_energy(v) == 0.0f);

    Volume tiny;
    tiny.dims = {1, 4, 4};
    tiny.spacing = {1, 1, 1};
    tiny.data.assign(16, 0.0f);
    CHECK_THROWS_WITH(gan::checkerboard_energy(tiny), Catch::Matchers::ContainsSubstring(">= 2"));
}

TEST_CASE("checkerboard energy ignores global intensity scale and offset") {
    const Dims3 dims{12, 10, 8};
    Volume v;
    v.dims = dims;
    v.spacing = {1, 1, 1};
    v.data.resize(dims_numel(dims));
    Rng rng(17);
    for (float& x : v.data) x = static_cast<float>(rng.uniform01());

    const float e0 = gan::checkerboard_energy(v);
    Volume w = v;
    for (float& x : w.data) x = 3.7f * x + 0.45f;
    CHECK(gan::checkerboard_energy(w) == Catch::Approx(e0).margin(1e-5));

    // a slowly varying field carries almost no energy at the voxel lattice
    std::size_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i)
                v.data[i] = std::sin(0.3f * static_cast<float>(x)) + 0.2f * static_cast<float>(y);
    CHECK(gan::checkerboard_energy(v) < 0.05f);
}

TEST_CASE("training produces one history row per epoch and is reproducible from the seed") {
    const Dims3 dims{16, 16, 16};
    std::vector<TrainPair> data;
    data.push_back({smooth_blob(dims), blob_labels(dims)});
    {
        TrainPair p{smooth_blob(dims), blob_labels(dims)};
        for (float& v : p.image.data) v = 1.0f - v;
        data.push_back(std::move(p));
    }

    nets::GeneratorConfig gcfg;
    nets::DiscriminatorConfig dcfg;
    GanTrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.seed = 404;

    auto r1 = gan::train_gan(data, gcfg, dcfg, tcfg);
    REQUIRE(r1.history.size() == 2);
    for (const auto& row : r1.history) {
        CHECK(std::isfinite(row.loss_d));
        CHECK(std::isfinite(row.loss_g));
        CHECK(row.l1_term >= 0.0f);
    }

    auto r2 = gan::train_gan(data, gcfg, dcfg, tcfg);
    auto p1 = r1.generator.params();
    auto p2 = r2.generator.params();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        INFO("parameter " << p1[i].first);
        REQUIRE(std::memcmp(p1[i].second.data(), p2[i].second.data(),
                            p1[i].second.numel() * sizeof(float)) == 0);
    }

    tcfg.seed = 405;
    auto r3 = gan::train_gan(data, gcfg, dcfg, tcfg);
    bool differs = false;
    auto p3 = r3.generator.params();
    for (std::size_t i = 0; i < p1.size() && !differs; ++i) {
        differs = std::memcmp(p1[i].second.data(), p3[i].second.data(),
                              p1[i].second.numel() * sizeof(float)) != 0;
    }
    CHECK(differs);
}

TEST_CASE("training rejects empty datasets and bad configs") {
    nets::GeneratorConfig gcfg;
    nets::DiscriminatorConfig dcfg;
    GanTrainConfig tcfg;
    CHECK_THROWS_WITH(gan::train_gan({}, gcfg, dcfg, tcfg),
                      Catch::Matchers::ContainsSubstring("empty"));

    const Dims3 dims{16, 16, 16};
    std::vector<TrainPair> data;
    data.push_back({smooth_blob(dims), blob_labels(dims)});
    tcfg.epochs = 0;
    CHECK_THROWS_WITH(gan::train_gan(data, gcfg, dcfg, tcfg),
                      Catch::Matchers::ContainsSubstring("epochs"));
    tcfg.epochs = 1;
    tcfg.lr = 0.0f;
    CHECK_THROWS_WITH(gan::train_gan(data, gcfg, dcfg, tcfg),
                      Catch::Matchers::ContainsSubstring("lr"));
}

TEST_CASE("synthesis matches the label grid, stays in range, and needs divisible extents") {
    const Dims3 dims{16, 16, 16};
    nets::GeneratorConfig gcfg;
    Rng init(21);
    nets::UNet3d gen(gcfg, init);

    LabelVolume lab = blob_labels(dims);
    Volume out = gan::synthesize(gen, lab);
    CHECK(out.dims == dims);
    CHECK(out.spacing == lab.spacing);
    for (float v : out.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }

    Volume out2 = gan::synthesize(gen, lab);
    CHECK(std::memcmp(out.data.data(), out2.data.data(), out.data.size() * sizeof(float)) == 0);

    LabelVolume empty;
    empty.dims = dims;
    empty.spacing = {1, 1, 1};
    empty.classes.assign(dims_numel(dims), kBackground);
    Volume out3 = gan::synthesize(gen, empty);
    for (float v : out3.data) REQUIRE(std::isfinite(v));

    LabelVolume odd;
    odd.dims = {16, 16, 12};  // volume z maps to tensor depth
    odd.spacing = {1, 1, 1};
    odd.classes.assign(dims_numel(odd.dims), kBackground);
    CHECK_THROWS_WITH(gan::synthesize(gen, odd), Catch::Matchers::ContainsSubstring("depth 12"));
}

TEST_CASE("history csv lists one labeled row per epoch") {
    std::vector<gan::EpochStats> hist = {{0.5f, 1.25f, 0.0f}, {0.25f, 1.5f, 2.0f}};
    const auto path = std::filesystem::temp_directory_path() / "echosynth_test_history.csv";
    gan::save_history_csv(path, hist);

    std::ifstream f(path);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == "epoch,loss_D,loss_G,l1_term");
    std::getline(f, line);
    CHECK(line == "0,0.5,1.25,0");
    std::getline(f, line);
    CHECK(line == "1,0.25,1.5,2");
    std::filesystem::remove(path);
}
