#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fd_check.hpp"
#include "orflow/trainer.hpp"

using namespace orflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("orflow_tr_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

SequenceModelConfig tiny_config() {
    SequenceModelConfig cfg;
    cfg.num_classes = 2;
    cfg.feature_dim = 4;
    cfg.proj_dim = 3;
    cfg.num_tgm_layers = 1;
    cfg.tgm_kernel_length = 3;
    cfg.tgm_num_gaussians = 2;
    cfg.lstm_hidden = 4;
    return cfg;
}

// two-class samples whose feature rows are linearly separable with margin
std::vector<SequenceSample> separable_samples(std::size_t n_videos, std::size_t T,
                                              unsigned seed) {
    Rng rng(seed);
    std::vector<SequenceSample> out;
    for (std::size_t v = 0; v < n_videos; ++v) {
        SequenceSample s;
        s.video_id = "v" + std::to_string(v);
        s.features = Mat(T, 4);
        s.labels.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            const int cls = (t < T / 2) ? 0 : 1;
            s.labels[t] = cls;
            for (std::size_t d = 0; d < 4; ++d)
                s.features(t, d) = (cls == 0 ? 1.0 : -1.0) * (d % 2 ? 0.5 : 1.0) +
                                   0.1 * rng.normal();
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> flatten_params(const std::vector<Param*>& params) {
    std::vector<double> out;
    for (const Param* p : params)
        out.insert(out.end(), p->value.data.begin(), p->value.data.end());
    return out;
}

}  // namespace

TEST_CASE("cross entropy matches frozen closed-form values") {
    // uniform over K classes: exactly ln K
    {
        double logits[10] = {0};
        CHECK(std::abs(cross_entropy(logits, 10, 3) - 2.302585092994046) < 1e-12);
    }
    {
        double logits[4] = {7.25, 7.25, 7.25, 7.25};
        CHECK(std::abs(cross_entropy(logits, 4, 0) - 1.3862943611198906) < 1e-12);
    }
    // ln(e^1 + e^2 + e^3) - 1
    {
        double logits[3] = {1.0, 2.0, 3.0};
        CHECK(std::abs(cross_entropy(logits, 3, 0) - 2.40760596444438) < 1e-9);
    }
    // invariant under a common shift, even a large one
    {
        double a[3] = {0.3, -1.2, 2.0};
        double b[3] = {40.3, 38.8, 42.0};
        CHECK(std::abs(cross_entropy(a, 3, 1) - cross_entropy(b, 3, 1)) < 1e-12);
    }
    // extreme logits stay finite
    {
        double logits[2] = {1000.0, -1000.0};
        CHECK(cross_entropy(logits, 2, 0) == 0.0);
        CHECK(cross_entropy(logits, 2, 1) == 2000.0);
    }
    // background target contributes nothing
    {
        double logits[3] = {5.0, 1.0, 0.0};
        CHECK(cross_entropy(logits, 3, -1) == 0.0);
    }
    {
        double logits[3] = {1.0, 2.0, std::numeric_limits<double>::quiet_NaN()};
        CHECK_THROWS_AS(cross_entropy(logits, 3, 0), NumericError);
        CHECK_THROWS_AS(cross_entropy(logits, 3, 5), std::invalid_argument);
    }
}

TEST_CASE("mean cross entropy averages labeled rows only") {
    Mat logits(3, 2);
    logits(0, 0) = 2.0;  // row 0: target 0
    logits(1, 1) = 2.0;  // row 1: background
    logits(2, 0) = 1.0;  // row 2: target 1
    const std::vector<int> targets = {0, -1, 1};
    const double want = (cross_entropy(logits.row_const(0), 2, 0) +
                         cross_entropy(logits.row_const(2), 2, 1)) / 2.0;
    CHECK(mean_cross_entropy(logits, targets) == doctest::Approx(want).epsilon(1e-12));

    // all-background sequences are a zero loss, not an error
    CHECK(mean_cross_entropy(logits, {-1, -1, -1}) == 0.0);
}

TEST_CASE("mean cross entropy gradient matches finite differences") {
    Rng rng(61);
    Mat logits(5, 3);
    for (double& v : logits.data) v = rng.normal();
    const std::vector<int> targets = {0, 2, -1, 1, 1};
    const double weight = 0.7;

    Mat grad(5, 3);
    mean_cross_entropy(logits, targets, weight, &grad);

    auto loss = [&]() { return weight * mean_cross_entropy(logits, targets); };
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double num = fd::numeric_grad(logits.data[i], loss);
        CHECK(fd::rel_err(grad.data[i], num) < fd::kTol);
    }
    // background row gets exactly zero gradient
    for (std::size_t k = 0; k < 3; ++k) CHECK(grad(2, k) == 0.0);
}

TEST_CASE("sequence training reduces the loss on separable data") {
    Rng rng(62);
    SequenceModel model(tiny_config(), rng);
    const auto samples = separable_samples(4, 12, 63);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.learning_rate = 3e-3;
    const TrainHistory hist = sequence_fit(model, samples, cfg);
    REQUIRE(hist.records.size() == 8);
    CHECK(hist.records.back().loss < hist.records.front().loss);
    for (const auto& rec : hist.records) {
        CHECK(rec.loss ==
              doctest::Approx(cfg.w_pre * rec.loss_pre + cfg.w_post * rec.loss_post)
                  .epsilon(1e-12));
        CHECK(std::isfinite(rec.loss));
    }
}

TEST_CASE("training is bit-exactly deterministic for a fixed seed") {
    const auto samples = separable_samples(3, 10, 64);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 99;

    Rng r1(65), r2(65);
    SequenceModel m1(tiny_config(), r1), m2(tiny_config(), r2);
    const TrainHistory h1 = sequence_fit(m1, samples, cfg);
    const TrainHistory h2 = sequence_fit(m2, samples, cfg);
    REQUIRE(h1.records.size() == h2.records.size());
    for (std::size_t i = 0; i < h1.records.size(); ++i) {
        CHECK(h1.records[i].loss == h2.records[i].loss);
        CHECK(h1.records[i].loss_pre == h2.records[i].loss_pre);
        CHECK(h1.records[i].loss_post == h2.records[i].loss_post);
    }
    CHECK(flatten_params(m1.params()) == flatten_params(m2.params()));

    // a different shuffle seed changes the trajectory
    cfg.seed = 100;
    Rng r3(65);
    SequenceModel m3(tiny_config(), r3);
    const TrainHistory h3 = sequence_fit(m3, samples, cfg);
    CHECK(h3.records.back().loss != h1.records.back().loss);
}

TEST_CASE("a checkpointed run resumes bit-exactly where it stopped") {
    TempDir tmp;
    const auto samples = separable_samples(3, 10, 70);
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.seed = 41;

    // uninterrupted reference run: 6 epochs in one go
    Rng r1(71);
    SequenceModel ref(tiny_config(), r1);
    cfg.epochs = 6;
    const TrainHistory full = sequence_fit(ref, samples, cfg);

    // first leg: 3 epochs, then persist parameters plus optimizer state
    Rng r2(71);
    SequenceModel first(tiny_config(), r2);
    cfg.epochs = 3;
    Optimizer opt1(first.params(), cfg);
    const TrainHistory leg1 = sequence_fit(first, samples, cfg, opt1);
    const fs::path ckpt = tmp.path / "leg1.ckpt";
    save_checkpoint(ckpt, "{}", first.params(), opt1.export_state());

    // second leg: restore into a differently-seeded model and continue
    Rng r3(909);
    SequenceModel second(tiny_config(), r3);
    const Checkpoint loaded = load_checkpoint(ckpt);
    restore_params(loaded, second.params());
    cfg.epoch_offset = 3;
    Optimizer opt2(second.params(), cfg);
    opt2.import_state(loaded.tensors);
    const TrainHistory leg2 = sequence_fit(second, samples, cfg, opt2);

    CHECK(flatten_params(second.params()) == flatten_params(ref.params()));
    REQUIRE(leg1.records.size() + leg2.records.size() == full.records.size());
    for (std::size_t i = 0; i < leg2.records.size(); ++i) {
        const auto& got = leg2.records[i];
        const auto& want = full.records[3 + i];
        CHECK(got.epoch == want.epoch);
        CHECK(got.loss == want.loss);
        CHECK(got.loss_pre == want.loss_pre);
        CHECK(got.loss_post == want.loss_post);
    }

    // a checkpoint written without optimizer state cannot seed a resume
    const fs::path bare = tmp.path / "bare.ckpt";
    save_checkpoint(bare, "{}", first.params());
    Optimizer opt3(second.params(), cfg);
    CHECK_THROWS_AS(opt3.import_state(load_checkpoint(bare).tensors), ConfigError);
}

TEST_CASE("sgd with momentum also trains") {
    Rng rng(66);
    SequenceModel model(tiny_config(), rng);
    const auto samples = separable_samples(3, 10, 67);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.optimizer = OptimizerKind::sgd_momentum;
    cfg.learning_rate = 1e-2;
    const TrainHistory hist = sequence_fit(model, samples, cfg);
    CHECK(hist.records.back().loss < hist.records.front().loss);
}

TEST_CASE("gradient clipping caps the global norm without breaking training") {
    Rng rng(68);
    SequenceModel model(tiny_config(), rng);
    const auto samples = separable_samples(3, 10, 69);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.grad_clip_norm = 0.5;
    const TrainHistory hist = sequence_fit(model, samples, cfg);
    CHECK(hist.records.back().loss < hist.records.front().loss);
}

TEST_CASE("divergence rolls parameters back and raises a training error") {
    Rng rng(70);
    SequenceModel model(tiny_config(), rng);
    auto samples = separable_samples(2, 8, 71);
    // poison one feature so the forward pass overflows
    samples[1].features(3, 2) = std::numeric_limits<double>::infinity();

    const std::vector<double> before = flatten_params(model.params());
    TrainConfig cfg;
    cfg.epochs = 2;
    CHECK_THROWS_WITH_AS(sequence_fit(model, samples, cfg),
                         doctest::Contains("diverged"), TrainingError);
    CHECK(flatten_params(model.params()) == before);
}

TEST_CASE("dual-loss weights steer which head learns") {
    // with w_pre = 0 the first head still feeds the recurrence, but only the
    // refined head's loss moves; both records stay populated
    Rng rng(72);
    SequenceModel model(tiny_config(), rng);
    const auto samples = separable_samples(3, 10, 73);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.w_pre = 0.0;
    const TrainHistory hist = sequence_fit(model, samples, cfg);
    CHECK(hist.records.back().loss_post < hist.records.front().loss_post);
    for (const auto& rec : hist.records)
        CHECK(rec.loss == doctest::Approx(rec.loss_post).epsilon(1e-12));
}

TEST_CASE("baseline training reduces the loss") {
    Rng rng(74);
    BaselineModel model(4, 2, rng);
    const auto samples = separable_samples(3, 10, 75);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 5e-2;
    const TrainHistory hist = baseline_fit(model, samples, cfg);
    CHECK(hist.records.back().loss < hist.records.front().loss);
    CHECK(hist.records.back().loss_pre == 0.0);
}

TEST_CASE("clip training fits a separable two-class toy problem") {
    Rng rng(76);
    ToyBackboneConfig bcfg;
    bcfg.input_size = 8;
    bcfg.channels = {2, 2, 3};
    bcfg.num_classes = 2;
    ToyBackbone backbone(bcfg, rng);

    // 4 videos, one whole-video segment each, class by parity
    DatasetManifest manifest;
    manifest.label_set = {{0, "a"}, {1, "b"}};
    std::vector<std::string> train_ids;
    for (int v = 0; v < 4; ++v) {
        VideoRecord rec;
        rec.video_id = "v" + std::to_string(v);
        rec.case_id = "c";
        rec.num_frames = 64;
        rec.segments = {{v % 2, 0, 64}};
        manifest.videos.push_back(rec);
        train_ids.push_back(rec.video_id);
    }

    // class 0 clips are bright, class 1 clips are dark
    auto load_clip = [&](const TrainingClip& clip) {
        ClipTensor t(4, 8, 8);
        const int cls = clip.video_id == "v0" || clip.video_id == "v2" ? 0 : 1;
        std::fill(t.data.begin(), t.data.end(), cls == 0 ? 0.8 : -0.8);
        return t;
    };

    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.learning_rate = 3e-3;
    cfg.clip_batch_size = 4;
    const TrainHistory hist = clip_fit(backbone, manifest, train_ids, 16, load_clip, cfg);
    REQUIRE(hist.records.size() == 30);
    REQUIRE(hist.records.back().train_accuracy.has_value());
    CHECK(*hist.records.back().train_accuracy >= 0.99);
    CHECK(hist.records.back().loss < hist.records.front().loss);
}

TEST_CASE("checkpoints restore parameters bit-exactly") {
    TempDir tmp;
    Rng rng(77);
    SequenceModel model(tiny_config(), rng);
    const std::string cfg_json = sequence_config_to_json(model.config());
    const fs::path p = tmp.path / "model.ckpt";
    save_checkpoint(p, cfg_json, model.params());

    const Checkpoint ck = load_checkpoint(p);
    CHECK(ck.config_json == cfg_json);

    // build a differently initialized model and restore into it
    Rng rng2(78);
    SequenceModel other(sequence_config_from_json(ck.config_json), rng2);
    CHECK(flatten_params(other.params()) != flatten_params(model.params()));
    restore_params(ck, other.params());
    CHECK(flatten_params(other.params()) == flatten_params(model.params()));
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir tmp;
    Rng rng(79);
    SequenceModel model(tiny_config(), rng);
    const fs::path p = tmp.path / "model.ckpt";
    save_checkpoint(p, "{}", model.params());

    SUBCASE("truncated") {
        fs::resize_file(p, fs::file_size(p) - 9);
        CHECK_THROWS_AS(load_checkpoint(p), FormatError);
    }
    SUBCASE("bad magic") {
        std::fstream io(p, std::ios::in | std::ios::out | std::ios::binary);
        io.write("BADCKPT0", 8);
        io.close();
        CHECK_THROWS_AS(load_checkpoint(p), FormatError);
    }
    SUBCASE("missing") {
        CHECK_THROWS_AS(load_checkpoint(tmp.path / "none.ckpt"), FormatError);
    }
    SUBCASE("shape mismatch on restore") {
        const Checkpoint ck = load_checkpoint(p);
        SequenceModelConfig bigger = tiny_config();
        bigger.lstm_hidden = 7;
        Rng rng2(80);
        SequenceModel other(bigger, rng2);
        CHECK_THROWS_AS(restore_params(ck, other.params()), ConfigError);
    }
}

TEST_CASE("history serializes one json record per epoch") {
    TempDir tmp;
    TrainHistory hist;
    EpochRecord a;
    a.epoch = 1;
    a.loss = 1.5;
    a.loss_pre = 0.5;
    a.loss_post = 1.0;
    a.train_accuracy = 0.25;
    hist.records.push_back(a);
    EpochRecord b;
    b.epoch = 2;
    b.loss = 0.75;
    hist.records.push_back(b);

    const fs::path p = tmp.path / "history.jsonl";
    save_history_jsonl(hist, p);
    std::ifstream in(p);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].find("\"epoch\":1") != std::string::npos);
    CHECK(lines[0].find("train_accuracy") != std::string::npos);
    CHECK(lines[1].find("\"epoch\":2") != std::string::npos);
    CHECK(lines[1].find("train_accuracy") == std::string::npos);
}

TEST_CASE("rejected training configurations") {
    Rng rng(81);
    SequenceModel model(tiny_config(), rng);
    const auto samples = separable_samples(2, 6, 82);
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS(sequence_fit(model, samples, cfg));
    cfg = TrainConfig{};
    cfg.learning_rate = -1.0;
    CHECK_THROWS(sequence_fit(model, samples, cfg));
    cfg = TrainConfig{};
    CHECK_THROWS(sequence_fit(model, {}, cfg));
}
