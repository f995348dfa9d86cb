#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "orflow/dataset.hpp"
#include "orflow/seqmodel.hpp"

using namespace orflow;

namespace {

Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

SequenceModelConfig tiny_config() {
    SequenceModelConfig cfg;
    cfg.num_classes = 2;
    cfg.feature_dim = 3;
    cfg.proj_dim = 2;
    cfg.num_tgm_layers = 2;
    cfg.tgm_kernel_length = 3;
    cfg.tgm_num_gaussians = 2;
    cfg.lstm_hidden = 3;
    cfg.head_kernel = 3;
    return cfg;
}

void check_model_gradients(const SequenceModelConfig& cfg, unsigned seed) {
    Rng rng(seed);
    SequenceModel model(cfg, rng);
    Mat x = random_mat(6, cfg.feature_dim, rng, 0.5);
    const Mat w_pre = random_mat(6, cfg.num_classes, rng);
    const Mat w_post = random_mat(6, cfg.num_classes, rng);

    auto loss = [&]() {
        SequenceOutputs out = model.forward(x);
        return fd::weighted_sum(out.pre_logits, w_pre) +
               fd::weighted_sum(out.post_logits, w_post);
    };

    for (Param* p : model.params()) p->zero_grad();
    model.forward(x);
    const Mat dx = model.backward(w_pre, w_post);

    for (Param* p : model.params())
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double num = fd::numeric_grad(p->value.data[i], loss);
            INFO(p->name, "[", i, "]");
            CHECK(fd::rel_err(p->grad.data[i], num) < fd::kTol);
        }
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double num = fd::numeric_grad(x.data[i], loss);
        CHECK(fd::rel_err(dx.data[i], num) < fd::kTol);
    }
}

}  // namespace

TEST_CASE("output shapes follow the configuration") {
    Rng rng(31);
    SequenceModelConfig cfg;
    cfg.num_classes = 10;
    cfg.feature_dim = 16;
    SequenceModel model(cfg, rng);
    const Mat x = random_mat(100, 16, rng);
    SequenceOutputs out = model.forward(x);
    CHECK(out.pre_logits.rows == 100);
    CHECK(out.pre_logits.cols == 10);
    CHECK(out.post_logits.rows == 100);
    CHECK(out.post_logits.cols == 10);
    CHECK(out.hidden.rows == 100);
    CHECK(out.hidden.cols == 128);  // bidirectional: 2 * lstm_hidden

    cfg.bidirectional = false;
    SequenceModel uni(cfg, rng);
    CHECK(uni.forward(x).hidden.cols == 64);
}

TEST_CASE("zero features give exactly zero first-stage logits at initialization") {
    // projection, storage-layer, and head biases all start at zero; only the
    // recurrent cell draws nonzero biases
    Rng rng(32);
    SequenceModelConfig cfg;
    cfg.num_classes = 4;
    cfg.feature_dim = 8;
    SequenceModel model(cfg, rng);
    Mat x(12, 8, 0.0);
    SequenceOutputs out = model.forward(x);
    for (double v : out.pre_logits.data) CHECK(v == 0.0);
    for (double v : out.post_logits.data) CHECK(std::isfinite(v));
}

TEST_CASE("first-stage logits have a bounded temporal receptive field") {
    Rng rng(33);
    SequenceModelConfig cfg;
    cfg.num_classes = 3;
    cfg.feature_dim = 4;
    cfg.proj_dim = 5;
    SequenceModel model(cfg, rng);
    Mat x = random_mat(100, 4, rng);
    const Mat base = model.forward(x).pre_logits;

    const std::size_t where = 50;
    for (std::size_t d = 0; d < 4; ++d) x(where, d) += 3.0;
    const Mat bumped = model.forward(x).pre_logits;

    // 3 stacked length-9 kernels + a length-1 head: radius 3 * 4 = 12
    const std::size_t radius = 12;
    bool changed_inside = false;
    for (std::size_t t = 0; t < 100; ++t)
        for (std::size_t k = 0; k < 3; ++k) {
            if (t + radius < where || t > where + radius) {
                CHECK(bumped(t, k) == base(t, k));
            } else if (bumped(t, k) != base(t, k)) {
                changed_inside = true;
            }
        }
    CHECK(changed_inside);
}

TEST_CASE("unidirectional refined logits ignore the far future") {
    Rng rng(34);
    SequenceModelConfig cfg;
    cfg.num_classes = 3;
    cfg.feature_dim = 4;
    cfg.bidirectional = false;
    SequenceModel model(cfg, rng);
    Mat x = random_mat(100, 4, rng);
    const Mat base = model.forward(x).post_logits;

    for (std::size_t d = 0; d < 4; ++d) x(80, d) += 3.0;
    const Mat bumped = model.forward(x).post_logits;

    // the recurrence only carries information forward; time t sees features
    // up to t + 12 through the convolution stack
    for (std::size_t t = 0; t < 80 - 12; ++t)
        for (std::size_t k = 0; k < 3; ++k) CHECK(bumped(t, k) == base(t, k));
}

TEST_CASE("bidirectional refined logits react to distant future evidence") {
    Rng rng(35);
    SequenceModelConfig cfg;
    cfg.num_classes = 3;
    cfg.feature_dim = 4;
    SequenceModel model(cfg, rng);
    Mat x = random_mat(100, 4, rng);
    const Mat base = model.forward(x).post_logits;
    for (std::size_t d = 0; d < 4; ++d) x(99, d) += 3.0;
    const Mat bumped = model.forward(x).post_logits;
    double delta = 0.0;
    for (std::size_t k = 0; k < 3; ++k) delta += std::abs(bumped(0, k) - base(0, k));
    CHECK(delta > 0.0);
}

TEST_CASE("model gradients match finite differences") {
    SUBCASE("bidirectional, logits into the recurrence") {
        check_model_gradients(tiny_config(), 36);
    }
    SUBCASE("unidirectional") {
        SequenceModelConfig cfg = tiny_config();
        cfg.bidirectional = false;
        check_model_gradients(cfg, 37);
    }
    SUBCASE("concatenated features into the recurrence") {
        SequenceModelConfig cfg = tiny_config();
        cfg.lstm_input = LstmInput::concat_features;
        check_model_gradients(cfg, 38);
    }
    SUBCASE("single storage layer") {
        SequenceModelConfig cfg = tiny_config();
        cfg.num_tgm_layers = 1;
        check_model_gradients(cfg, 39);
    }
}

TEST_CASE("configuration survives a json round trip") {
    SequenceModelConfig cfg;
    cfg.num_classes = 7;
    cfg.feature_dim = 24;
    cfg.proj_dim = 12;
    cfg.num_tgm_layers = 2;
    cfg.tgm_kernel_length = 5;
    cfg.tgm_num_gaussians = 4;
    cfg.lstm_hidden = 9;
    cfg.bidirectional = false;
    cfg.head_kernel = 3;
    cfg.lstm_input = LstmInput::concat_features;
    const SequenceModelConfig back = sequence_config_from_json(sequence_config_to_json(cfg));
    CHECK(back.num_classes == 7);
    CHECK(back.feature_dim == 24);
    CHECK(back.proj_dim == 12);
    CHECK(back.num_tgm_layers == 2);
    CHECK(back.tgm_kernel_length == 5);
    CHECK(back.tgm_num_gaussians == 4);
    CHECK(back.lstm_hidden == 9);
    CHECK(back.bidirectional == false);
    CHECK(back.head_kernel == 3);
    CHECK(back.lstm_input == LstmInput::concat_features);
}

TEST_CASE("invalid configurations are rejected") {
    Rng rng(40);
    SequenceModelConfig cfg = tiny_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(SequenceModel(cfg, rng), ConfigError);
    cfg = tiny_config();
    cfg.head_kernel = 2;
    CHECK_THROWS_AS(SequenceModel(cfg, rng), ConfigError);
    cfg = tiny_config();
    cfg.lstm_hidden = 0;
    CHECK_THROWS_AS(SequenceModel(cfg, rng), ConfigError);
}

TEST_CASE("baseline scores each step independently") {
    Rng rng(41);
    BaselineModel model(5, 3, rng);
    Mat x = random_mat(8, 5, rng);
    const Mat y = model.forward(x);
    CHECK(y.rows == 8);
    CHECK(y.cols == 3);

    // reversing the rows of the input reverses the rows of the output
    Mat xr(8, 5);
    for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t d = 0; d < 5; ++d) xr(t, d) = x(7 - t, d);
    const Mat yr = model.forward(xr);
    for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(yr(t, k) == doctest::Approx(y(7 - t, k)).epsilon(1e-12));

    // identical inputs give identical scores
    Mat same(4, 5);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t d = 0; d < 5; ++d) same(t, d) = x(0, d);
    const Mat ys = model.forward(same);
    for (std::size_t t = 1; t < 4; ++t)
        for (std::size_t k = 0; k < 3; ++k) CHECK(ys(t, k) == ys(0, k));

    // a single step works
    Mat one(1, 5);
    for (std::size_t d = 0; d < 5; ++d) one(0, d) = x(0, d);
    CHECK(model.forward(one).rows == 1);
}

TEST_CASE("segment decoding merges runs of equal predictions") {
    Mat logits(6, 2, 0.0);
    const int labels[6] = {0, 0, 1, 1, 1, 0};
    for (int t = 0; t < 6; ++t) logits(static_cast<std::size_t>(t), labels[t]) = 1.0;

    const auto segs = predict_segments(logits, 16);
    REQUIRE(segs.size() == 3);
    CHECK(segs[0].class_id == 0);
    CHECK(segs[0].start_frame == 0);
    CHECK(segs[0].end_frame == 32);
    CHECK(segs[1].class_id == 1);
    CHECK(segs[1].start_frame == 32);
    CHECK(segs[1].end_frame == 80);
    CHECK(segs[2].class_id == 0);
    CHECK(segs[2].start_frame == 80);
    CHECK(segs[2].end_frame == 96);

    CHECK(predict_segments(Mat(1, 2, 0.5), 4).size() == 1);
    CHECK_THROWS(predict_segments(Mat(0, 2), 4));
}

TEST_CASE("decoded segments label clips back exactly") {
    Rng rng(42);
    Mat logits = random_mat(40, 6, rng);
    const auto segs = predict_segments(logits, 16);

    VideoRecord rec;
    rec.video_id = "v";
    rec.num_frames = 40 * 16;
    rec.segments = segs;
    const std::vector<int> labels = clip_labels_for_video(rec, 16);
    REQUIRE(labels.size() == 40);
    for (std::size_t t = 0; t < 40; ++t) {
        const double* row = logits.row_const(t);
        const int want = static_cast<int>(std::max_element(row, row + 6) - row);
        CHECK(labels[t] == want);
    }
}
