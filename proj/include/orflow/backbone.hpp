#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "orflow/clipper.hpp"
#include "orflow/ndarray.hpp"
#include "orflow/nn.hpp"
#include "orflow/rng.hpp"
#include "orflow/types.hpp"

namespace orflow {

// Per-clip feature rows for one video, row t = clip t of the uniform
// partition.
struct FeatureSequence {
    std::string video_id;
    Mat features;  // T x D
    std::int64_t clip_len = 0;

    std::size_t T() const { return features.rows; }
    std::size_t D() const { return features.cols; }
};

// One clip of single-channel intensity frames, values normalized to [-1, 1].
struct ClipTensor {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    ClipTensor() = default;
    ClipTensor(std::size_t f, std::size_t h, std::size_t w)
        : frames(f), height(h), width(w), data(f * h * w, 0.0) {}

    double& at(std::size_t f, std::size_t y, std::size_t x) {
        return data[(f * height + y) * width + x];
    }
    double at(std::size_t f, std::size_t y, std::size_t x) const {
        return data[(f * height + y) * width + x];
    }
};

// Raw intensity video as stored on disk (8-bit frames).
struct PixelVideo {
    std::int64_t num_frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;  // frame-major

    std::uint8_t& at(std::int64_t f, std::size_t y, std::size_t x) {
        return data[(static_cast<std::size_t>(f) * height + y) * width + x];
    }
    std::uint8_t at(std::int64_t f, std::size_t y, std::size_t x) const {
        return data[(static_cast<std::size_t>(f) * height + y) * width + x];
    }
};

// Binary feature file: magic "ORFEAT01", uint32 T, uint32 D, then T*D
// float32 row-major, all little-endian. video_id lives in the sidecar index.
void save_feature_file(const std::filesystem::path& path, const Mat& features);
Mat load_feature_file(const std::filesystem::path& path);

// Sidecar JSON index mapping video_id -> feature file name (relative to the
// index's directory).
void save_feature_index(const std::filesystem::path& path,
                        const std::map<std::string, std::string>& index);
std::map<std::string, std::string> load_feature_index(const std::filesystem::path& path);

// Intensity video file: magic "ORVID001", uint32 num_frames, uint32 height,
// uint32 width, then num_frames*height*width uint8 frames.
void save_pixel_video(const std::filesystem::path& path, const PixelVideo& video);
PixelVideo load_pixel_video(const std::filesystem::path& path);

// Cuts [range] out of a video as a normalized clip of exactly target_frames
// frames, looping the range when it is shorter (short-segment padding).
ClipTensor clip_from_video(const PixelVideo& video, ClipRange range, std::size_t target_frames);

// Small trainable spatio-temporal network standing in for a video backbone:
// 3 stages of 3x3x3 convolution (stride 1 temporal, 2 spatial, zero padding)
// with tanh, global average pooling to a feature vector, and a linear
// classification head. Accepts any clip length >= 1; spatial input size is
// fixed by the config.
struct ToyBackboneConfig {
    std::size_t input_size = 64;                   // H = W
    std::array<std::size_t, 3> channels = {8, 16, 64};
    std::size_t num_classes = 10;                  // K

    std::size_t feature_dim() const { return channels[2]; }
};

std::string backbone_config_to_json(const ToyBackboneConfig& cfg);
ToyBackboneConfig backbone_config_from_json(const std::string& json_text);

class ToyBackbone {
  public:
    ToyBackbone(const ToyBackboneConfig& cfg, Rng& rng);
    ~ToyBackbone();
    ToyBackbone(ToyBackbone&&) noexcept;
    ToyBackbone& operator=(ToyBackbone&&) noexcept;

    struct Output {
        std::vector<double> feature;  // D
        std::vector<double> logits;   // K
    };

    Output forward(const ClipTensor& clip);
    // Backprop from the logits of the last forward; accumulates grads.
    void backward(const std::vector<double>& dlogits);

    std::vector<Param*> params();
    const ToyBackboneConfig& config() const { return cfg_; }
    std::size_t feature_dim() const { return cfg_.feature_dim(); }

  private:
    struct Impl;
    ToyBackboneConfig cfg_;
    std::unique_ptr<Impl> impl_;
};

// Row t = backbone feature of clip t of partition_uniform(num_frames,
// clip_len). Deterministic; parameters are read-only here.
FeatureSequence extract_features(const PixelVideo& video, const std::string& video_id,
                                 ToyBackbone& backbone, std::int64_t clip_len);

}  // namespace orflow
