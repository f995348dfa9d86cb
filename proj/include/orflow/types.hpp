#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace orflow {

/// Sentinel label for clips that overlap no annotated segment. Background
/// clips are excluded from losses and metrics.
constexpr int kBackgroundClass = -1;

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary/file format violations (bad magic, truncation, size mismatch).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration/shape mismatches between components.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training aborted (e.g. non-finite loss); parameters are rolled back to the
/// last good state before this is thrown.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values encountered mid-computation (overflowed activations,
/// diverged parameters). Training drivers translate this into TrainingError
/// after rolling parameters back.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ActivityClass {
    int id = 0;
    std::string name;
};

/// One annotated activity interval within a video; end_frame is exclusive.
struct ActivitySegment {
    int class_id = 0;
    std::int64_t start_frame = 0;
    std::int64_t end_frame = 0;

    std::int64_t length() const { return end_frame - start_frame; }
};

struct VideoRecord {
    std::string video_id;
    std::string case_id;
    std::int64_t num_frames = 0;
    std::string cart_id;
    std::string camera_id;
    std::vector<ActivitySegment> segments;  // sorted by start_frame
    std::string feature_path;               // optional, empty when unset
    std::string video_path;                 // optional raw intensity video
};

struct CaseManifest {
    std::string case_id;
    std::string room_id;
    std::string procedure_type;
    std::string surgeon_id;
    std::vector<std::string> video_ids;
};

struct DatasetManifest {
    std::vector<ActivityClass> label_set;
    std::vector<CaseManifest> cases;
    std::vector<VideoRecord> videos;

    int num_classes() const { return static_cast<int>(label_set.size()); }
    const VideoRecord* find_video(const std::string& video_id) const;
    const CaseManifest* find_case(const std::string& case_id) const;
};

enum class SplitScheme { random, room, procedure, surgeon };

std::string to_string(SplitScheme scheme);
SplitScheme split_scheme_from_string(const std::string& name);

struct SplitSpec {
    SplitScheme scheme = SplitScheme::random;
    std::uint64_t seed = 0;
    std::string params_json;  // scheme-specific key/value map, serialized
    std::vector<std::string> train_video_ids;
    std::vector<std::string> test_video_ids;
};

struct ValidationIssue {
    std::string category;  // dangling_reference | overlap | range | order | label_set
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
};

}  // namespace orflow
