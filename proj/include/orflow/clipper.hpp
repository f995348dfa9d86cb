#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orflow/rng.hpp"
#include "orflow/types.hpp"

namespace orflow {

// Half-open frame interval [start, start + length) inside one video.
struct ClipRange {
    std::int64_t start = 0;
    std::int64_t length = 0;

    bool operator==(const ClipRange&) const = default;
};

// A training sample: one clip drawn from one annotated segment.
struct TrainingClip {
    std::string video_id;
    ClipRange range;
    int class_id = kBackgroundClass;
};

// Tiles [0, num_frames) with consecutive non-overlapping clips of clip_len
// frames. The trailing remainder (< clip_len frames) is dropped. Throws
// std::invalid_argument when the video is shorter than one clip.
std::vector<ClipRange> partition_uniform(std::int64_t num_frames, std::int64_t clip_len);

// Samples one clip of clip_len frames from a segment, uniformly over all
// in-segment start positions. Segments shorter than clip_len return the whole
// segment (range.length < clip_len); the consumer loop-pads when decoding.
ClipRange sample_training_clip(const ActivitySegment& segment, std::int64_t clip_len, Rng& rng);

// One epoch of clip-classification samples: one randomly positioned clip per
// (video, segment) pair, in manifest order filtered to train_video_ids.
std::vector<TrainingClip> epoch_training_set(const DatasetManifest& manifest,
                                             const std::vector<std::string>& train_video_ids,
                                             std::int64_t clip_len, Rng& rng);

}  // namespace orflow
