#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "fd_check.hpp"
#include "orflow/backbone.hpp"

using namespace orflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("orflow_bb_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ToyBackboneConfig small_config() {
    ToyBackboneConfig cfg;
    cfg.input_size = 8;
    cfg.channels = {2, 2, 3};
    cfg.num_classes = 4;
    return cfg;
}

ClipTensor random_clip(std::size_t f, std::size_t hw, Rng& rng) {
    ClipTensor clip(f, hw, hw);
    for (double& v : clip.data) v = rng.uniform(-1.0, 1.0);
    return clip;
}

PixelVideo ramp_video(std::int64_t frames, std::size_t hw) {
    // frame f is a constant plane of value f (mod 256)
    PixelVideo v;
    v.num_frames = frames;
    v.height = hw;
    v.width = hw;
    v.data.resize(static_cast<std::size_t>(frames) * hw * hw);
    for (std::int64_t f = 0; f < frames; ++f)
        for (std::size_t y = 0; y < hw; ++y)
            for (std::size_t x = 0; x < hw; ++x)
                v.at(f, y, x) = static_cast<std::uint8_t>(f % 256);
    return v;
}

}  // namespace

TEST_CASE("forward produces the configured shapes for any clip length") {
    Rng rng(51);
    ToyBackboneConfig cfg = small_config();
    ToyBackbone net(cfg, rng);
    for (std::size_t frames : {1u, 2u, 7u}) {
        const ClipTensor clip = random_clip(frames, 8, rng);
        const ToyBackbone::Output out = net.forward(clip);
        CHECK(out.feature.size() == 3);
        CHECK(out.logits.size() == 4);
    }
}

TEST_CASE("zero input yields exactly zero features and logits") {
    Rng rng(52);
    ToyBackbone net(small_config(), rng);
    const ClipTensor clip(3, 8, 8);
    const ToyBackbone::Output out = net.forward(clip);
    for (double v : out.feature) CHECK(v == 0.0);
    for (double v : out.logits) CHECK(v == 0.0);
}

TEST_CASE("identical clips produce identical outputs") {
    Rng rng(53);
    ToyBackbone net(small_config(), rng);
    const ClipTensor clip = random_clip(4, 8, rng);
    const ToyBackbone::Output a = net.forward(clip);
    const ToyBackbone::Output b = net.forward(clip);
    CHECK(a.feature == b.feature);
    CHECK(a.logits == b.logits);
}

TEST_CASE("gradients through all stages match finite differences") {
    Rng rng(54);
    ToyBackboneConfig cfg = small_config();
    ToyBackbone net(cfg, rng);
    ClipTensor clip = random_clip(2, 8, rng);
    Rng wrng(55);
    std::vector<double> w(cfg.num_classes);
    for (double& v : w) v = wrng.normal();

    auto loss = [&]() {
        const ToyBackbone::Output out = net.forward(clip);
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * out.logits[k];
        return acc;
    };

    for (Param* p : net.params()) p->zero_grad();
    net.forward(clip);
    net.backward(w);

    for (Param* p : net.params()) {
        // subsample large conv tensors to keep the runtime reasonable
        const std::size_t stride = p->size() > 40 ? 7 : 1;
        for (std::size_t i = 0; i < p->size(); i += stride) {
            const double num = fd::numeric_grad(p->value.data[i], loss);
            INFO(p->name, "[", i, "]");
            CHECK(fd::rel_err(p->grad.data[i], num) < fd::kTol);
        }
    }
}

TEST_CASE("feature extraction walks the uniform partition") {
    Rng rng(56);
    ToyBackboneConfig cfg = small_config();
    ToyBackbone net(cfg, rng);
    PixelVideo video = ramp_video(52, 8);
    const FeatureSequence seq = extract_features(video, "vid_a", net, 16);
    CHECK(seq.video_id == "vid_a");
    CHECK(seq.clip_len == 16);
    CHECK(seq.T() == 3);  // 52 / 16, remainder dropped
    CHECK(seq.D() == 3);

    // deterministic for fixed parameters
    const FeatureSequence again = extract_features(video, "vid_a", net, 16);
    CHECK(seq.features.data == again.features.data);

    // first clip covers frames [0,16), second [16,32): distinct content
    bool differs = false;
    for (std::size_t d = 0; d < seq.D(); ++d)
        if (seq.features(0, d) != seq.features(1, d)) differs = true;
    CHECK(differs);
}

TEST_CASE("feature files survive a bit-exact round trip") {
    TempDir tmp;
    Rng rng(57);
    Mat f(10, 8);
    for (double& v : f.data) {
        v = rng.normal();
        v = static_cast<float>(v);  // storage is float32
    }
    const fs::path p = tmp.path / "a.feat";
    save_feature_file(p, f);
    // header (8 magic + 4 + 4) plus 10*8 float32 payload
    CHECK(fs::file_size(p) == 336);
    const Mat back = load_feature_file(p);
    REQUIRE(back.rows == 10);
    REQUIRE(back.cols == 8);
    CHECK(back.data == f.data);
}

TEST_CASE("malformed feature files are rejected") {
    TempDir tmp;
    Mat f(4, 3, 0.25);
    const fs::path p = tmp.path / "a.feat";
    save_feature_file(p, f);

    SUBCASE("bad magic") {
        std::fstream io(p, std::ios::in | std::ios::out | std::ios::binary);
        io.seekp(0);
        io.write("XXFEAT01", 8);
        io.close();
        CHECK_THROWS_AS(load_feature_file(p), FormatError);
    }
    SUBCASE("truncated payload") {
        fs::resize_file(p, fs::file_size(p) - 5);
        CHECK_THROWS_AS(load_feature_file(p), FormatError);
    }
    SUBCASE("trailing bytes") {
        std::ofstream io(p, std::ios::app | std::ios::binary);
        io.write("\0\0\0\0", 4);
        io.close();
        CHECK_THROWS_AS(load_feature_file(p), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_feature_file(tmp.path / "nope.feat"), FormatError);
    }
}

TEST_CASE("feature index round trip") {
    TempDir tmp;
    std::map<std::string, std::string> index{{"v1", "v1.feat"}, {"v2", "v2.feat"}};
    const fs::path p = tmp.path / "index.json";
    save_feature_index(p, index);
    CHECK(load_feature_index(p) == index);
}

TEST_CASE("pixel videos survive a bit-exact round trip") {
    TempDir tmp;
    Rng rng(58);
    PixelVideo v;
    v.num_frames = 5;
    v.height = 6;
    v.width = 7;
    v.data.resize(5 * 6 * 7);
    for (auto& b : v.data) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    const fs::path p = tmp.path / "v.orv";
    save_pixel_video(p, v);
    const PixelVideo back = load_pixel_video(p);
    CHECK(back.num_frames == 5);
    CHECK(back.height == 6);
    CHECK(back.width == 7);
    CHECK(back.data == v.data);

    fs::resize_file(p, fs::file_size(p) - 1);
    CHECK_THROWS_AS(load_pixel_video(p), FormatError);
}

TEST_CASE("clips are cut, normalized, and loop-padded from the video") {
    const PixelVideo video = ramp_video(20, 4);

    SUBCASE("full-length range maps frames one to one") {
        const ClipTensor clip = clip_from_video(video, {4, 6}, 6);
        REQUIRE(clip.frames == 6);
        REQUIRE(clip.height == 4);
        REQUIRE(clip.width == 4);
        for (std::size_t f = 0; f < 6; ++f)
            CHECK(clip.at(f, 2, 1) ==
                  doctest::Approx(static_cast<double>(4 + f) / 127.5 - 1.0).epsilon(1e-12));
    }
    SUBCASE("short ranges loop") {
        const ClipTensor clip = clip_from_video(video, {2, 2}, 5);
        REQUIRE(clip.frames == 5);
        const int want[5] = {2, 3, 2, 3, 2};
        for (std::size_t f = 0; f < 5; ++f)
            CHECK(clip.at(f, 0, 0) ==
                  doctest::Approx(static_cast<double>(want[f]) / 127.5 - 1.0).epsilon(1e-12));
    }
    SUBCASE("range must stay inside the video") {
        CHECK_THROWS(clip_from_video(video, {18, 6}, 6));
    }
}

TEST_CASE("backbone configuration survives a json round trip") {
    ToyBackboneConfig cfg;
    cfg.input_size = 16;
    cfg.channels = {3, 5, 7};
    cfg.num_classes = 9;
    const ToyBackboneConfig back = backbone_config_from_json(backbone_config_to_json(cfg));
    CHECK(back.input_size == 16);
    CHECK(back.channels == std::array<std::size_t, 3>{3, 5, 7});
    CHECK(back.num_classes == 9);
}
