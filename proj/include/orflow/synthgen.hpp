#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "orflow/backbone.hpp"
#include "orflow/ndarray.hpp"
#include "orflow/rng.hpp"
#include "orflow/types.hpp"

namespace orflow {

// Pulls two class prototypes toward their midpoint; at overlap 1 they
// coincide and only the workflow order can tell the classes apart.
struct ConfusionPair {
    std::string class_a;
    std::string class_b;
    double overlap = 0.0;  // in [0, 1]
};

// Everything the generator needs to emit an ordered-workflow dataset. Every
// video runs through all classes once, in canonical order, with durations
// drawn per case.
struct WorkflowProfile {
    std::vector<std::string> class_names;     // canonical order
    std::vector<double> duration_mean_clips;  // per class
    std::vector<double> duration_std_clips;
    std::size_t feature_dim = 16;
    double noise_scale = 0.45;
    std::vector<ConfusionPair> confusion_pairs;
    std::vector<std::string> rooms;
    std::vector<std::string> procedures;
    std::vector<std::string> surgeons;
    std::int64_t clip_len = 16;
    std::size_t pixel_size = 32;  // H = W of raw videos in pixel mode

    std::size_t num_classes() const { return class_names.size(); }

    // The 10-activity OR workflow with two confusable pairs (roll in/out and
    // docking/undocking).
    static WorkflowProfile default_profile();
};

std::string profile_to_json(const WorkflowProfile& profile);
WorkflowProfile profile_from_json(const std::string& json_text);
WorkflowProfile load_profile(const std::filesystem::path& path);

// Class prototypes after applying confusion-pair interpolation: row k is the
// emission mean of class k. Base prototypes are scaled one-hot vectors, which
// requires feature_dim >= num_classes.
Mat effective_prototypes(const WorkflowProfile& profile);

struct SyntheticCase {
    CaseManifest case_manifest;
    std::vector<VideoRecord> videos;     // one per view, identical segments
    std::vector<Mat> view_features;      // per view, T x feature_dim
};

// One case: durations drawn from truncated normals (min 1 clip), the same
// ground truth shared by all views, per-view independent emission noise.
SyntheticCase generate_case(const WorkflowProfile& profile, Rng& rng, int views,
                            const std::string& case_id, const std::string& room_id,
                            const std::string& procedure_type, const std::string& surgeon_id);

// Full dataset: manifest.json + per-video feature files (or raw pixel videos
// when pixel_mode) under out_dir. Deterministic given seed; cases are built
// on `jobs` threads (per-case derived streams) and written in case order, so
// the output is byte-identical for any job count.
DatasetManifest generate_dataset(const WorkflowProfile& profile, std::size_t n_cases, int views,
                                 std::uint64_t seed, const std::filesystem::path& out_dir,
                                 bool pixel_mode = false, std::size_t jobs = 1);

// Renders the moving intensity pattern of one class (pixel mode).
PixelVideo render_pixel_video(const WorkflowProfile& profile,
                              const std::vector<ActivitySegment>& segments,
                              std::int64_t num_frames, Rng& rng);

}  // namespace orflow
