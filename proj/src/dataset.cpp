#include "orflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "orflow/rng.hpp"

namespace orflow {

using nlohmann::json;

const VideoRecord* DatasetManifest::find_video(const std::string& video_id) const {
    for (const auto& v : videos)
        if (v.video_id == video_id) return &v;
    return nullptr;
}

const CaseManifest* DatasetManifest::find_case(const std::string& case_id) const {
    for (const auto& c : cases)
        if (c.case_id == case_id) return &c;
    return nullptr;
}

std::string to_string(SplitScheme scheme) {
    switch (scheme) {
        case SplitScheme::random: return "random";
        case SplitScheme::room: return "room";
        case SplitScheme::procedure: return "procedure";
        case SplitScheme::surgeon: return "surgeon";
    }
    return "random";
}

SplitScheme split_scheme_from_string(const std::string& name) {
    if (name == "random") return SplitScheme::random;
    if (name == "room") return SplitScheme::room;
    if (name == "procedure") return SplitScheme::procedure;
    if (name == "surgeon") return SplitScheme::surgeon;
    throw ParseError("unknown split scheme: '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON I/O
// ---------------------------------------------------------------------------

namespace {

json segment_to_json(const ActivitySegment& s) {
    return json{{"class_id", s.class_id}, {"start_frame", s.start_frame}, {"end_frame", s.end_frame}};
}

ActivitySegment segment_from_json(const json& j) {
    ActivitySegment s;
    s.class_id = j.at("class_id").get<int>();
    s.start_frame = j.at("start_frame").get<std::int64_t>();
    s.end_frame = j.at("end_frame").get<std::int64_t>();
    return s;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    json j;
    j["label_set"] = json::array();
    for (const auto& c : manifest.label_set)
        j["label_set"].push_back(json{{"id", c.id}, {"name", c.name}});
    j["cases"] = json::array();
    for (const auto& c : manifest.cases) {
        j["cases"].push_back(json{{"case_id", c.case_id},
                                  {"room_id", c.room_id},
                                  {"procedure_type", c.procedure_type},
                                  {"surgeon_id", c.surgeon_id},
                                  {"video_ids", c.video_ids}});
    }
    j["videos"] = json::array();
    for (const auto& v : manifest.videos) {
        json jv{{"video_id", v.video_id},
                {"case_id", v.case_id},
                {"num_frames", v.num_frames},
                {"cart_id", v.cart_id},
                {"camera_id", v.camera_id}};
        jv["segments"] = json::array();
        for (const auto& s : v.segments) jv["segments"].push_back(segment_to_json(s));
        if (!v.feature_path.empty()) jv["feature_path"] = v.feature_path;
        if (!v.video_path.empty()) jv["video_path"] = v.video_path;
        j["videos"].push_back(std::move(jv));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        for (const auto& jc : j.at("label_set"))
            m.label_set.push_back({jc.at("id").get<int>(), jc.at("name").get<std::string>()});
        for (const auto& jc : j.at("cases")) {
            CaseManifest c;
            c.case_id = jc.at("case_id").get<std::string>();
            c.room_id = jc.at("room_id").get<std::string>();
            c.procedure_type = jc.at("procedure_type").get<std::string>();
            c.surgeon_id = jc.at("surgeon_id").get<std::string>();
            c.video_ids = jc.at("video_ids").get<std::vector<std::string>>();
            m.cases.push_back(std::move(c));
        }
        for (const auto& jv : j.at("videos")) {
            VideoRecord v;
            v.video_id = jv.at("video_id").get<std::string>();
            v.case_id = jv.at("case_id").get<std::string>();
            v.num_frames = jv.at("num_frames").get<std::int64_t>();
            v.cart_id = jv.at("cart_id").get<std::string>();
            v.camera_id = jv.at("camera_id").get<std::string>();
            for (const auto& js : jv.at("segments")) v.segments.push_back(segment_from_json(js));
            if (jv.contains("feature_path")) v.feature_path = jv.at("feature_path").get<std::string>();
            if (jv.contains("video_path")) v.video_path = jv.at("video_path").get<std::string>();
            m.videos.push_back(std::move(v));
        }
    } catch (const json::exception& e) {
        throw ParseError("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void save_split(const SplitSpec& split, const std::filesystem::path& path) {
    json j{{"scheme", to_string(split.scheme)},
           {"seed", split.seed},
           {"params", split.params_json.empty() ? json::object() : json::parse(split.params_json)},
           {"train_video_ids", split.train_video_ids},
           {"test_video_ids", split.test_video_ids}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write split: " + path.string());
    out << j.dump(2) << "\n";
}

SplitSpec load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open split: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("split " + path.string() + ": " + e.what());
    }
    SplitSpec s;
    s.scheme = split_scheme_from_string(j.at("scheme").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.params_json = j.at("params").dump();
    s.train_video_ids = j.at("train_video_ids").get<std::vector<std::string>>();
    s.test_video_ids = j.at("test_video_ids").get<std::vector<std::string>>();
    return s;
}

std::string SplitParams::to_json(SplitScheme scheme) const {
    json j = json::object();
    switch (scheme) {
        case SplitScheme::random:
            if (train_fraction) j["train_fraction"] = *train_fraction;
            break;
        case SplitScheme::room:
            j["train_rooms"] = train_rooms;
            break;
        case SplitScheme::procedure:
        case SplitScheme::surgeon:
            if (!test_groups.empty())
                j["test_groups"] = test_groups;
            else if (test_fraction)
                j["test_fraction"] = *test_fraction;
            break;
    }
    return j.dump();
}

SplitParams SplitParams::from_json(const std::string& json_text) {
    SplitParams p;
    json j = json::parse(json_text);
    if (j.contains("train_fraction")) p.train_fraction = j["train_fraction"].get<double>();
    if (j.contains("test_fraction")) p.test_fraction = j["test_fraction"].get<double>();
    if (j.contains("train_rooms")) p.train_rooms = j["train_rooms"].get<std::vector<std::string>>();
    if (j.contains("test_groups")) p.test_groups = j["test_groups"].get<std::vector<std::string>>();
    return p;
}

// ---------------------------------------------------------------------------
// Annotations CSV
// ---------------------------------------------------------------------------

namespace {

bool segments_overlap(const ActivitySegment& a, const ActivitySegment& b) {
    return a.start_frame < b.end_frame && b.start_frame < a.end_frame;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_frame_index(const std::string& text, int line_no, const char* what) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("annotations line " + std::to_string(line_no) + ": bad " +
                         std::string(what) + " '" + text + "'");
    }
}

}  // namespace

std::vector<std::pair<std::string, ActivitySegment>> parse_annotations(
    const std::filesystem::path& path, const std::vector<ActivityClass>& label_set) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open annotations: " + path.string());

    std::map<std::string, int> class_by_name;
    for (const auto& c : label_set) class_by_name[c.name] = c.id;

    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw ParseError("annotations: empty file, header required");
    ++line_no;
    if (trim(line) != "video_id,class_name,start_frame,end_frame")
        throw ParseError("annotations line 1: expected header "
                         "'video_id,class_name,start_frame,end_frame'");

    std::vector<std::pair<std::string, ActivitySegment>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(trim(line));
        if (fields.size() != 4)
            throw ParseError("annotations line " + std::to_string(line_no) + ": expected 4 fields, got " +
                             std::to_string(fields.size()));
        const std::string video_id = trim(fields[0]);
        const std::string class_name = trim(fields[1]);
        if (video_id.empty())
            throw ParseError("annotations line " + std::to_string(line_no) + ": empty video_id");
        auto it = class_by_name.find(class_name);
        if (it == class_by_name.end())
            throw ParseError("annotations line " + std::to_string(line_no) + ": unknown class '" +
                             class_name + "'");
        ActivitySegment seg;
        seg.class_id = it->second;
        seg.start_frame = parse_frame_index(trim(fields[2]), line_no, "start_frame");
        seg.end_frame = parse_frame_index(trim(fields[3]), line_no, "end_frame");
        if (seg.start_frame < 0)
            throw ParseError("annotations line " + std::to_string(line_no) + ": negative start_frame");
        if (seg.end_frame <= seg.start_frame)
            throw ParseError("annotations line " + std::to_string(line_no) +
                             ": end_frame must exceed start_frame");
        rows.emplace_back(video_id, seg);
    }

    // Overlap check runs after the full parse so the error names the video.
    std::map<std::string, std::vector<ActivitySegment>> by_video;
    for (const auto& [vid, seg] : rows) by_video[vid].push_back(seg);
    for (auto& [vid, segs] : by_video) {
        std::sort(segs.begin(), segs.end(),
                  [](const auto& a, const auto& b) { return a.start_frame < b.start_frame; });
        for (std::size_t i = 1; i < segs.size(); ++i) {
            if (segments_overlap(segs[i - 1], segs[i]))
                throw ValidationError("annotations: overlapping segments in video '" + vid + "'");
        }
    }
    return rows;
}

void write_annotations(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::map<int, std::string> name_by_id;
    for (const auto& c : manifest.label_set) name_by_id[c.id] = c.name;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write annotations: " + path.string());
    out << "video_id,class_name,start_frame,end_frame\n";
    for (const auto& v : manifest.videos) {
        for (const auto& s : v.segments) {
            auto it = name_by_id.find(s.class_id);
            const std::string name = it == name_by_id.end() ? std::to_string(s.class_id) : it->second;
            out << v.video_id << "," << name << "," << s.start_frame << "," << s.end_frame << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

ValidationReport validate_manifest(const DatasetManifest& manifest) {
    ValidationReport report;
    auto add = [&](const char* category, std::string message) {
        report.issues.push_back({category, std::move(message)});
    };

    // label set: dense unique ids, K >= 2
    std::set<int> ids;
    std::set<std::string> names;
    for (const auto& c : manifest.label_set) {
        if (!ids.insert(c.id).second) add("label_set", "duplicate class id " + std::to_string(c.id));
        if (!names.insert(c.name).second) add("label_set", "duplicate class name '" + c.name + "'");
    }
    if (manifest.label_set.size() < 2) add("label_set", "label set must contain at least 2 classes");
    for (int k = 0; k < static_cast<int>(manifest.label_set.size()); ++k)
        if (!ids.count(k)) add("label_set", "class ids are not dense: missing id " + std::to_string(k));

    std::set<std::string> case_ids;
    for (const auto& c : manifest.cases) case_ids.insert(c.case_id);
    std::set<std::string> video_ids;
    for (const auto& v : manifest.videos) video_ids.insert(v.video_id);

    for (const auto& c : manifest.cases) {
        if (c.video_ids.empty()) add("dangling_reference", "case '" + c.case_id + "' lists no videos");
        for (const auto& vid : c.video_ids)
            if (!video_ids.count(vid))
                add("dangling_reference",
                    "case '" + c.case_id + "' references missing video '" + vid + "'");
    }

    for (const auto& v : manifest.videos) {
        if (!case_ids.count(v.case_id))
            add("dangling_reference",
                "video '" + v.video_id + "' references missing case '" + v.case_id + "'");
        if (v.num_frames <= 0)
            add("range", "video '" + v.video_id + "' has non-positive num_frames");
        for (std::size_t i = 0; i < v.segments.size(); ++i) {
            const auto& s = v.segments[i];
            if (s.end_frame <= s.start_frame || s.start_frame < 0)
                add("range", "video '" + v.video_id + "' segment " + std::to_string(i) +
                                 " has invalid interval [" + std::to_string(s.start_frame) + ", " +
                                 std::to_string(s.end_frame) + ")");
            if (s.end_frame > v.num_frames)
                add("range", "video '" + v.video_id + "' segment " + std::to_string(i) +
                                 " ends at " + std::to_string(s.end_frame) + " past num_frames " +
                                 std::to_string(v.num_frames));
            if (!ids.count(s.class_id))
                add("dangling_reference", "video '" + v.video_id + "' segment " + std::to_string(i) +
                                              " references unknown class id " +
                                              std::to_string(s.class_id));
            if (i > 0 && v.segments[i - 1].start_frame > s.start_frame)
                add("order", "video '" + v.video_id + "' segments not sorted by start_frame at index " +
                                 std::to_string(i));
            if (i > 0 && segments_overlap(v.segments[i - 1], s))
                add("overlap", "video '" + v.video_id + "' segments " + std::to_string(i - 1) + " and " +
                                   std::to_string(i) + " overlap");
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace {

std::string group_key_of(const CaseManifest& c, SplitScheme scheme) {
    switch (scheme) {
        case SplitScheme::room: return c.room_id;
        case SplitScheme::procedure: return c.procedure_type;
        case SplitScheme::surgeon: return c.surgeon_id;
        default: return {};
    }
}

SplitSpec finish_split(SplitScheme scheme, std::uint64_t seed, const SplitParams& params,
                       std::vector<std::string> train, std::vector<std::string> test) {
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    SplitSpec spec;
    spec.scheme = scheme;
    spec.seed = seed;
    spec.params_json = params.to_json(scheme);
    spec.train_video_ids = std::move(train);
    spec.test_video_ids = std::move(test);
    return spec;
}

SplitSpec make_random_split(const DatasetManifest& manifest, const SplitParams& params,
                            std::uint64_t seed) {
    if (!params.train_fraction)
        throw std::invalid_argument("random split requires train_fraction");
    const double f = *params.train_fraction;
    if (f <= 0.0 || f >= 1.0)
        throw std::invalid_argument("train_fraction must lie in (0, 1)");

    std::vector<std::string> ids;
    ids.reserve(manifest.videos.size());
    for (const auto& v : manifest.videos) ids.push_back(v.video_id);

    // Fisher-Yates over the manifest order; videos are sampled independently
    // of their case, so all views of a case may land on either side.
    Rng rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    const auto n_train = static_cast<std::size_t>(std::llround(f * static_cast<double>(ids.size())));
    if (n_train == 0 || n_train >= ids.size())
        throw std::invalid_argument("train_fraction " + std::to_string(f) +
                                    " leaves an empty split side");
    std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::string> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    return finish_split(SplitScheme::random, seed, params, std::move(train), std::move(test));
}

SplitSpec make_room_split(const DatasetManifest& manifest, const SplitParams& params,
                          std::uint64_t seed) {
    if (params.train_rooms.empty())
        throw std::invalid_argument("room split requires train_rooms");
    std::set<std::string> rooms_present;
    for (const auto& c : manifest.cases) rooms_present.insert(c.room_id);
    std::set<std::string> train_rooms(params.train_rooms.begin(), params.train_rooms.end());
    for (const auto& r : train_rooms)
        if (!rooms_present.count(r))
            throw std::invalid_argument("unknown room '" + r + "'");

    std::vector<std::string> train, test;
    for (const auto& v : manifest.videos) {
        const CaseManifest* c = manifest.find_case(v.case_id);
        if (!c) throw ValidationError("video '" + v.video_id + "' has no case; validate the manifest");
        (train_rooms.count(c->room_id) ? train : test).push_back(v.video_id);
    }
    if (train.empty() || test.empty())
        throw std::invalid_argument("room split leaves an empty side (train rooms cover " +
                                    std::to_string(train.size()) + " of " +
                                    std::to_string(manifest.videos.size()) + " videos)");
    return finish_split(SplitScheme::room, seed, params, std::move(train), std::move(test));
}

SplitSpec make_group_split(const DatasetManifest& manifest, SplitScheme scheme,
                           const SplitParams& params, std::uint64_t seed) {
    std::map<std::string, std::vector<std::string>> videos_by_group;
    for (const auto& v : manifest.videos) {
        const CaseManifest* c = manifest.find_case(v.case_id);
        if (!c) throw ValidationError("video '" + v.video_id + "' has no case; validate the manifest");
        videos_by_group[group_key_of(*c, scheme)].push_back(v.video_id);
    }

    std::set<std::string> test_keys;
    if (!params.test_groups.empty()) {
        for (const auto& g : params.test_groups) {
            if (!videos_by_group.count(g))
                throw std::invalid_argument("unknown " + to_string(scheme) + " value '" + g + "'");
            test_keys.insert(g);
        }
    } else if (params.test_fraction) {
        const double f = *params.test_fraction;
        if (f <= 0.0 || f >= 1.0)
            throw std::invalid_argument("test_fraction must lie in (0, 1)");
        const auto total = manifest.videos.size();
        const double target = f * static_cast<double>(total);

        // Largest group first, ties by lexicographic key.
        std::vector<std::pair<std::string, std::size_t>> order;
        for (const auto& [key, vids] : videos_by_group) order.emplace_back(key, vids.size());
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });

        std::size_t assigned = 0;
        for (const auto& [key, size] : order) {
            if (static_cast<double>(assigned) >= target) break;
            test_keys.insert(key);
            assigned += size;
        }
        if (assigned >= total) {
            const double before = static_cast<double>(assigned - order.back().second) /
                                  static_cast<double>(total);
            throw std::invalid_argument(
                "test_fraction " + std::to_string(f) + " not reachable with whole " +
                to_string(scheme) + " groups; closest achievable fraction is " +
                std::to_string(before));
        }
    } else {
        throw std::invalid_argument(to_string(scheme) +
                                    " split requires test_groups or test_fraction");
    }

    std::vector<std::string> train, test;
    for (const auto& [key, vids] : videos_by_group) {
        auto& side = test_keys.count(key) ? test : train;
        side.insert(side.end(), vids.begin(), vids.end());
    }
    if (train.empty() || test.empty())
        throw std::invalid_argument(to_string(scheme) + " split leaves an empty side");
    return finish_split(scheme, seed, params, std::move(train), std::move(test));
}

}  // namespace

SplitSpec make_split(const DatasetManifest& manifest, SplitScheme scheme, const SplitParams& params,
                     std::uint64_t seed) {
    if (manifest.videos.size() < 2)
        throw std::invalid_argument("cannot split a manifest with fewer than 2 videos");
    switch (scheme) {
        case SplitScheme::random: return make_random_split(manifest, params, seed);
        case SplitScheme::room: return make_room_split(manifest, params, seed);
        case SplitScheme::procedure:
        case SplitScheme::surgeon: return make_group_split(manifest, scheme, params, seed);
    }
    throw std::invalid_argument("unknown split scheme");
}

// ---------------------------------------------------------------------------
// Clip labeling
// ---------------------------------------------------------------------------

std::vector<int> clip_labels_for_video(const VideoRecord& video, std::int64_t clip_len) {
    if (clip_len < 1) throw std::invalid_argument("clip_len must be >= 1");
    const std::int64_t num_clips = video.num_frames / clip_len;
    std::vector<int> labels(static_cast<std::size_t>(std::max<std::int64_t>(num_clips, 0)),
                            kBackgroundClass);
    for (std::int64_t t = 0; t < num_clips; ++t) {
        const std::int64_t clip_start = t * clip_len;
        const std::int64_t clip_end = clip_start + clip_len;
        std::int64_t best_overlap = 0;
        int best_class = kBackgroundClass;
        std::int64_t best_seg_start = 0;
        for (const auto& seg : video.segments) {
            const std::int64_t lo = std::max(clip_start, seg.start_frame);
            const std::int64_t hi = std::min(clip_end, seg.end_frame);
            const std::int64_t overlap = hi - lo;
            if (overlap <= 0) continue;
            if (overlap > best_overlap ||
                (overlap == best_overlap && seg.start_frame < best_seg_start)) {
                best_overlap = overlap;
                best_class = seg.class_id;
                best_seg_start = seg.start_frame;
            }
        }
        labels[static_cast<std::size_t>(t)] = best_class;
    }
    return labels;
}

}  // namespace orflow
