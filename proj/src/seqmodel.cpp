#include "orflow/seqmodel.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace orflow {

using nlohmann::json;

namespace {

void check_config(const SequenceModelConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("sequence model: num_classes must be >= 2");
    if (cfg.lstm_hidden < 1) throw ConfigError("sequence model: lstm_hidden must be >= 1");
    if (cfg.head_kernel % 2 == 0) throw ConfigError("sequence model: head_kernel must be odd");
    if (cfg.feature_dim < 1 || cfg.proj_dim < 1)
        throw ConfigError("sequence model: dimensions must be >= 1");
}

std::vector<TgmConfig> stack_configs(const SequenceModelConfig& cfg) {
    std::vector<TgmConfig> out;
    for (std::size_t i = 0; i < cfg.num_tgm_layers; ++i) {
        TgmConfig t;
        t.in_channels = i == 0 ? 1 : cfg.num_classes;
        t.out_channels = cfg.num_classes;
        t.kernel_length = cfg.tgm_kernel_length;
        t.num_gaussians = cfg.tgm_num_gaussians;
        out.push_back(t);
    }
    return out;
}

Mat hconcat(const Mat& a, const Mat& b) {
    Mat out(a.rows, a.cols + b.cols);
    for (std::size_t t = 0; t < a.rows; ++t) {
        std::copy(a.row_const(t), a.row_const(t) + a.cols, out.row(t));
        std::copy(b.row_const(t), b.row_const(t) + b.cols, out.row(t) + a.cols);
    }
    return out;
}

}  // namespace

std::string sequence_config_to_json(const SequenceModelConfig& cfg) {
    json j{{"num_classes", cfg.num_classes},
           {"feature_dim", cfg.feature_dim},
           {"proj_dim", cfg.proj_dim},
           {"num_tgm_layers", cfg.num_tgm_layers},
           {"tgm_kernel_length", cfg.tgm_kernel_length},
           {"tgm_num_gaussians", cfg.tgm_num_gaussians},
           {"lstm_hidden", cfg.lstm_hidden},
           {"bidirectional", cfg.bidirectional},
           {"head_kernel", cfg.head_kernel},
           {"lstm_input", cfg.lstm_input == LstmInput::pre_logits ? "pre_logits" : "concat_features"}};
    return j.dump();
}

SequenceModelConfig sequence_config_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    SequenceModelConfig cfg;
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    cfg.proj_dim = j.value("proj_dim", cfg.proj_dim);
    cfg.num_tgm_layers = j.value("num_tgm_layers", cfg.num_tgm_layers);
    cfg.tgm_kernel_length = j.value("tgm_kernel_length", cfg.tgm_kernel_length);
    cfg.tgm_num_gaussians = j.value("tgm_num_gaussians", cfg.tgm_num_gaussians);
    cfg.lstm_hidden = j.value("lstm_hidden", cfg.lstm_hidden);
    cfg.bidirectional = j.value("bidirectional", cfg.bidirectional);
    cfg.head_kernel = j.value("head_kernel", cfg.head_kernel);
    const std::string li = j.value("lstm_input", std::string("pre_logits"));
    if (li == "pre_logits")
        cfg.lstm_input = LstmInput::pre_logits;
    else if (li == "concat_features")
        cfg.lstm_input = LstmInput::concat_features;
    else
        throw ConfigError("sequence model: unknown lstm_input '" + li + "'");
    return cfg;
}

SequenceModel::SequenceModel(const SequenceModelConfig& cfg, Rng& rng)
    : cfg_((check_config(cfg), cfg)),
      stack_("seq.stack", cfg.feature_dim, cfg.proj_dim, stack_configs(cfg), rng),
      pre_head_("seq.pre_head", stack_.out_dim() + cfg.feature_dim, cfg.num_classes,
                cfg.head_kernel, rng),
      post_head_("seq.post_head",
                 cfg.bidirectional ? 2 * cfg.lstm_hidden : cfg.lstm_hidden, cfg.num_classes,
                 cfg.head_kernel, rng) {
    const std::size_t lstm_in =
        cfg.lstm_input == LstmInput::pre_logits ? cfg.num_classes
                                                : stack_.out_dim() + cfg.feature_dim;
    if (cfg.bidirectional)
        bi_ = std::make_unique<BiLstm>("seq.lstm", lstm_in, cfg.lstm_hidden, rng);
    else
        uni_ = std::make_unique<Lstm>("seq.lstm", lstm_in, cfg.lstm_hidden, rng);
}

std::vector<Param*> SequenceModel::params() {
    std::vector<Param*> out = stack_.params();
    auto append = [&](std::vector<Param*> p) { out.insert(out.end(), p.begin(), p.end()); };
    append(pre_head_.params());
    append(bi_ ? bi_->params() : uni_->params());
    append(post_head_.params());
    return out;
}

SequenceOutputs SequenceModel::forward(const Mat& features) {
    if (features.cols != cfg_.feature_dim)
        throw ConfigError("sequence model: features have dim " + std::to_string(features.cols) +
                          ", model expects " + std::to_string(cfg_.feature_dim));
    cached_features_ = features;
    const Mat g = stack_.forward(features);
    cached_concat_ = hconcat(g, features);

    SequenceOutputs out;
    out.pre_logits = pre_head_.forward(cached_concat_);
    const Mat& lstm_in =
        cfg_.lstm_input == LstmInput::pre_logits ? out.pre_logits : cached_concat_;
    out.hidden = bi_ ? bi_->forward(lstm_in) : uni_->forward(lstm_in);
    out.post_logits = post_head_.forward(out.hidden);
    for (double v : out.pre_logits.data)
        if (!std::isfinite(v)) throw NumericError("sequence model: non-finite pre logits");
    for (double v : out.post_logits.data)
        if (!std::isfinite(v)) throw NumericError("sequence model: non-finite post logits");
    return out;
}

Mat SequenceModel::backward(const Mat& dpre, const Mat& dpost) {
    const Mat dhidden = post_head_.backward(dpost);
    const Mat dlstm_in = bi_ ? bi_->backward(dhidden) : uni_->backward(dhidden);

    Mat dconcat;
    if (cfg_.lstm_input == LstmInput::pre_logits) {
        // pre_logits receives the loss term and the recurrent path.
        Mat dpre_total = dpre;
        for (std::size_t i = 0; i < dpre_total.data.size(); ++i)
            dpre_total.data[i] += dlstm_in.data[i];
        dconcat = pre_head_.backward(dpre_total);
    } else {
        dconcat = pre_head_.backward(dpre);
        for (std::size_t i = 0; i < dconcat.data.size(); ++i)
            dconcat.data[i] += dlstm_in.data[i];
    }

    const std::size_t g_dim = stack_.out_dim();
    const std::size_t T = dconcat.rows;
    Mat dg(T, g_dim), dfeat(T, cfg_.feature_dim);
    for (std::size_t t = 0; t < T; ++t) {
        const double* row = dconcat.row_const(t);
        std::copy(row, row + g_dim, dg.row(t));
        std::copy(row + g_dim, row + g_dim + cfg_.feature_dim, dfeat.row(t));
    }
    const Mat dfeat_stack = stack_.backward(dg);
    for (std::size_t i = 0; i < dfeat.data.size(); ++i) dfeat.data[i] += dfeat_stack.data[i];
    return dfeat;
}

BaselineModel::BaselineModel(std::size_t feature_dim, std::size_t num_classes, Rng& rng)
    : head_("baseline.head", feature_dim, num_classes, 1, rng) {}

Mat BaselineModel::forward(const Mat& features) { return head_.forward(features); }

Mat BaselineModel::backward(const Mat& dlogits) { return head_.backward(dlogits); }

std::vector<ActivitySegment> predict_segments(const Mat& logits, std::int64_t clip_len) {
    if (logits.rows == 0 || clip_len < 1)
        throw std::invalid_argument("predict_segments: need T >= 1 and clip_len >= 1");
    std::vector<int> labels(logits.rows);
    for (std::size_t t = 0; t < logits.rows; ++t) {
        const double* row = logits.row_const(t);
        labels[t] = static_cast<int>(std::max_element(row, row + logits.cols) - row);
    }
    std::vector<ActivitySegment> out;
    std::size_t run_start = 0;
    for (std::size_t t = 1; t <= labels.size(); ++t) {
        if (t == labels.size() || labels[t] != labels[run_start]) {
            ActivitySegment seg;
            seg.class_id = labels[run_start];
            seg.start_frame = static_cast<std::int64_t>(run_start) * clip_len;
            seg.end_frame = static_cast<std::int64_t>(t) * clip_len;
            out.push_back(seg);
            run_start = t;
        }
    }
    return out;
}

}  // namespace orflow
