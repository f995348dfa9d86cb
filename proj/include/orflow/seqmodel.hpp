#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "orflow/ndarray.hpp"
#include "orflow/nn.hpp"
#include "orflow/tgm.hpp"
#include "orflow/types.hpp"

namespace orflow {

// What the recurrent layer consumes: the pre-head logits (default; "its
// prediction" feeds the LSTM) or the full concatenated features.
enum class LstmInput { pre_logits, concat_features };

struct SequenceModelConfig {
    std::size_t num_classes = 2;      // K
    std::size_t feature_dim = 16;     // D, backbone feature size
    std::size_t proj_dim = 64;        // D', channel projection before the TGM stack
    std::size_t num_tgm_layers = 3;
    std::size_t tgm_kernel_length = 9;   // L, odd
    std::size_t tgm_num_gaussians = 16;  // M
    std::size_t lstm_hidden = 64;
    bool bidirectional = true;
    std::size_t head_kernel = 1;      // odd; both classifier convolutions
    LstmInput lstm_input = LstmInput::pre_logits;
};

std::string sequence_config_to_json(const SequenceModelConfig& cfg);
SequenceModelConfig sequence_config_from_json(const std::string& json_text);

struct SequenceOutputs {
    Mat pre_logits;   // T x K
    Mat post_logits;  // T x K
    Mat hidden;       // T x H recurrent states
};

// Full architecture: TGM stack -> concat with input features -> pre-head
// temporal convolution -> (bi)LSTM -> post-head temporal convolution.
class SequenceModel {
  public:
    SequenceModel(const SequenceModelConfig& cfg, Rng& rng);

    SequenceOutputs forward(const Mat& features);  // T x D

    // Upstream grads for both heads (either may be all-zero); accumulates
    // parameter grads and returns d(features).
    Mat backward(const Mat& dpre, const Mat& dpost);

    std::vector<Param*> params();
    const SequenceModelConfig& config() const { return cfg_; }

  private:
    SequenceModelConfig cfg_;
    TgmStack stack_;
    TemporalConv pre_head_;
    std::unique_ptr<BiLstm> bi_;
    std::unique_ptr<Lstm> uni_;
    TemporalConv post_head_;

    Mat cached_features_;
    Mat cached_concat_;
};

// Per-clip baseline: a single kernel-size-1 temporal convolution over the
// backbone features. No recurrence, no temporal context.
class BaselineModel {
  public:
    BaselineModel(std::size_t feature_dim, std::size_t num_classes, Rng& rng);

    Mat forward(const Mat& features);     // T x D -> T x K
    Mat backward(const Mat& dlogits);

    std::vector<Param*> params() { return head_.params(); }
    std::size_t num_classes() const { return head_.out_channels(); }
    std::size_t feature_dim() const { return head_.in_channels(); }

  private:
    TemporalConv head_;
};

// Argmax per clip, maximal equal-class runs merged into frame-level segments
// [t_start*clip_len, (t_end+1)*clip_len).
std::vector<ActivitySegment> predict_segments(const Mat& logits, std::int64_t clip_len);

}  // namespace orflow
