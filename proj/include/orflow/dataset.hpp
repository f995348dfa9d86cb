#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "orflow/types.hpp"

namespace orflow {

/// Scheme-specific split parameters. Only the fields relevant to the chosen
/// scheme are consulted:
///   random            -> train_fraction
///   room              -> train_rooms
///   procedure/surgeon -> test_groups (explicit held-out values) or test_fraction
struct SplitParams {
    std::optional<double> train_fraction;
    std::optional<double> test_fraction;
    std::vector<std::string> train_rooms;
    std::vector<std::string> test_groups;

    std::string to_json(SplitScheme scheme) const;
    static SplitParams from_json(const std::string& json_text);
};

// ---------------------------------------------------------------------------
// Manifest and split file I/O (JSON, schemas per README)
// ---------------------------------------------------------------------------

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

SplitSpec load_split(const std::filesystem::path& path);
void save_split(const SplitSpec& split, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Annotations (CSV: video_id,class_name,start_frame,end_frame; header required)
// ---------------------------------------------------------------------------

/// Parses an annotation CSV against a label set. Malformed rows raise
/// ParseError with the 1-based line number; overlapping segments within a
/// video raise ValidationError naming the video.
std::vector<std::pair<std::string, ActivitySegment>> parse_annotations(
    const std::filesystem::path& path, const std::vector<ActivityClass>& label_set);

/// Writes the manifest's segments in the annotation CSV schema.
void write_annotations(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Collects every invariant violation instead of stopping at the first one.
/// The report is empty iff the manifest is well formed.
ValidationReport validate_manifest(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Train/test splits
// ---------------------------------------------------------------------------

/// Builds a train/test split. Deterministic in (manifest, scheme, params, seed).
///
/// random: videos are sampled independently of their case; |train| is exactly
/// round(train_fraction * N). Group schemes (room/procedure/surgeon) keep all
/// videos sharing the grouping attribute on one side. When a target
/// test_fraction is given, whole groups are assigned to the test side
/// greedily, largest group first (ties by lexicographic key), until the
/// target count is met or exceeded.
SplitSpec make_split(const DatasetManifest& manifest, SplitScheme scheme,
                     const SplitParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Clip labeling
// ---------------------------------------------------------------------------

/// Per-clip labels for a video partitioned into clips of `clip_len` frames.
/// Clip t covers [t*clip_len, (t+1)*clip_len); its label is the class of the
/// segment with maximal frame overlap, ties to the earlier-starting segment.
/// Clips overlapping no segment get kBackgroundClass. Output length is
/// floor(num_frames / clip_len).
std::vector<int> clip_labels_for_video(const VideoRecord& video, std::int64_t clip_len);

}  // namespace orflow
