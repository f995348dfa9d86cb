#include "orflow/clipper.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace orflow {

std::vector<ClipRange> partition_uniform(std::int64_t num_frames, std::int64_t clip_len) {
    if (clip_len < 1) throw std::invalid_argument("clip_len must be >= 1");
    if (num_frames < clip_len)
        throw std::invalid_argument("video has " + std::to_string(num_frames) +
                                    " frames, shorter than one clip of " +
                                    std::to_string(clip_len));
    const std::int64_t n = num_frames / clip_len;
    std::vector<ClipRange> clips;
    clips.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) clips.push_back({i * clip_len, clip_len});
    return clips;
}

ClipRange sample_training_clip(const ActivitySegment& segment, std::int64_t clip_len, Rng& rng) {
    if (clip_len < 1) throw std::invalid_argument("clip_len must be >= 1");
    const std::int64_t n = segment.length();
    if (n <= 0) throw std::invalid_argument("segment is empty");
    if (n < clip_len) return {segment.start_frame, n};
    const std::int64_t start = rng.uniform_int(segment.start_frame, segment.start_frame + n - clip_len);
    return {start, clip_len};
}

std::vector<TrainingClip> epoch_training_set(const DatasetManifest& manifest,
                                             const std::vector<std::string>& train_video_ids,
                                             std::int64_t clip_len, Rng& rng) {
    std::set<std::string> wanted(train_video_ids.begin(), train_video_ids.end());
    std::vector<TrainingClip> out;
    for (const auto& v : manifest.videos) {
        if (!wanted.count(v.video_id)) continue;
        for (const auto& seg : v.segments) {
            TrainingClip clip;
            clip.video_id = v.video_id;
            clip.range = sample_training_clip(seg, clip_len, rng);
            clip.class_id = seg.class_id;
            out.push_back(std::move(clip));
        }
    }
    return out;
}

}  // namespace orflow
