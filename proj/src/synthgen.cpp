#include "orflow/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "orflow/dataset.hpp"

namespace orflow {

using nlohmann::json;

WorkflowProfile WorkflowProfile::default_profile() {
    WorkflowProfile p;
    p.class_names = {"sterile_preparation", "patient_roll_in", "patient_preparation",
                     "robot_roll_up",       "robot_docking",   "surgery",
                     "robot_undocking",     "robot_roll_back", "patient_close",
                     "patient_roll_out"};
    p.duration_mean_clips = {10, 5, 10, 4, 6, 24, 6, 4, 8, 4};
    p.duration_std_clips = {3, 1.5, 3, 1.2, 1.8, 7, 1.8, 1.2, 2.4, 1.2};
    p.feature_dim = 16;
    p.noise_scale = 0.45;
    p.confusion_pairs = {{"patient_roll_in", "patient_roll_out", 0.8},
                         {"robot_docking", "robot_undocking", 0.9}};
    p.rooms = {"OR1", "OR2"};
    p.procedures = {"prostatectomy", "nephrectomy", "hysterectomy", "colectomy", "cystectomy"};
    p.surgeons = {"surg_a", "surg_b", "surg_c", "surg_d"};
    p.clip_len = 16;
    p.pixel_size = 32;
    return p;
}

namespace {

void check_profile(const WorkflowProfile& p) {
    const std::size_t K = p.num_classes();
    if (K < 2) throw ConfigError("profile: need at least 2 classes");
    if (p.duration_mean_clips.size() != K || p.duration_std_clips.size() != K)
        throw ConfigError("profile: duration lists must match class count");
    for (double m : p.duration_mean_clips)
        if (m <= 0.0) throw ConfigError("profile: duration means must be > 0");
    for (const auto& cp : p.confusion_pairs) {
        if (cp.overlap < 0.0 || cp.overlap > 1.0)
            throw ConfigError("profile: confusion overlap must lie in [0, 1]");
        const auto& names = p.class_names;
        if (std::find(names.begin(), names.end(), cp.class_a) == names.end() ||
            std::find(names.begin(), names.end(), cp.class_b) == names.end())
            throw ConfigError("profile: confusion pair names unknown class '" + cp.class_a +
                              "'/'" + cp.class_b + "'");
    }
    if (p.feature_dim < K)
        throw ConfigError("profile: feature_dim must be >= number of classes (one-hot prototypes)");
    if (p.clip_len < 1) throw ConfigError("profile: clip_len must be >= 1");
    if (p.rooms.empty() || p.procedures.empty() || p.surgeons.empty())
        throw ConfigError("profile: rooms/procedures/surgeons must be non-empty");
}

}  // namespace

std::string profile_to_json(const WorkflowProfile& p) {
    json pairs = json::array();
    for (const auto& cp : p.confusion_pairs)
        pairs.push_back(json{{"class_a", cp.class_a}, {"class_b", cp.class_b}, {"overlap", cp.overlap}});
    json j{{"class_names", p.class_names},
           {"duration_mean_clips", p.duration_mean_clips},
           {"duration_std_clips", p.duration_std_clips},
           {"feature_dim", p.feature_dim},
           {"noise_scale", p.noise_scale},
           {"confusion_pairs", std::move(pairs)},
           {"rooms", p.rooms},
           {"procedures", p.procedures},
           {"surgeons", p.surgeons},
           {"clip_len", p.clip_len},
           {"pixel_size", p.pixel_size}};
    return j.dump(2);
}

WorkflowProfile profile_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("profile: ") + e.what());
    }
    WorkflowProfile p = WorkflowProfile::default_profile();
    if (j.contains("class_names")) p.class_names = j["class_names"].get<std::vector<std::string>>();
    if (j.contains("duration_mean_clips"))
        p.duration_mean_clips = j["duration_mean_clips"].get<std::vector<double>>();
    if (j.contains("duration_std_clips"))
        p.duration_std_clips = j["duration_std_clips"].get<std::vector<double>>();
    if (j.contains("feature_dim")) p.feature_dim = j["feature_dim"].get<std::size_t>();
    if (j.contains("noise_scale")) p.noise_scale = j["noise_scale"].get<double>();
    if (j.contains("confusion_pairs")) {
        p.confusion_pairs.clear();
        for (const auto& row : j["confusion_pairs"]) {
            ConfusionPair cp;
            cp.class_a = row.at("class_a").get<std::string>();
            cp.class_b = row.at("class_b").get<std::string>();
            cp.overlap = row.at("overlap").get<double>();
            p.confusion_pairs.push_back(std::move(cp));
        }
    }
    if (j.contains("rooms")) p.rooms = j["rooms"].get<std::vector<std::string>>();
    if (j.contains("procedures")) p.procedures = j["procedures"].get<std::vector<std::string>>();
    if (j.contains("surgeons")) p.surgeons = j["surgeons"].get<std::vector<std::string>>();
    if (j.contains("clip_len")) p.clip_len = j["clip_len"].get<std::int64_t>();
    if (j.contains("pixel_size")) p.pixel_size = j["pixel_size"].get<std::size_t>();
    check_profile(p);
    return p;
}

WorkflowProfile load_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open profile: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return profile_from_json(text);
}

Mat effective_prototypes(const WorkflowProfile& profile) {
    check_profile(profile);
    const std::size_t K = profile.num_classes();
    Mat proto(K, profile.feature_dim);
    for (std::size_t k = 0; k < K; ++k) proto(k, k) = 1.0;
    for (const auto& cp : profile.confusion_pairs) {
        const auto ia = static_cast<std::size_t>(
            std::find(profile.class_names.begin(), profile.class_names.end(), cp.class_a) -
            profile.class_names.begin());
        const auto ib = static_cast<std::size_t>(
            std::find(profile.class_names.begin(), profile.class_names.end(), cp.class_b) -
            profile.class_names.begin());
        for (std::size_t d = 0; d < profile.feature_dim; ++d) {
            const double mid = 0.5 * (proto(ia, d) + proto(ib, d));
            proto(ia, d) += cp.overlap * (mid - proto(ia, d));
            proto(ib, d) += cp.overlap * (mid - proto(ib, d));
        }
    }
    return proto;
}

namespace {

std::int64_t draw_duration_clips(double mean, double std, Rng& rng) {
    // truncated-at-1 rounded normal
    const double v = rng.normal(mean, std);
    return std::max<std::int64_t>(1, std::llround(v));
}

}  // namespace

SyntheticCase generate_case(const WorkflowProfile& profile, Rng& rng, int views,
                            const std::string& case_id, const std::string& room_id,
                            const std::string& procedure_type, const std::string& surgeon_id) {
    check_profile(profile);
    if (views < 1) throw std::invalid_argument("generate_case: views must be >= 1");
    const std::size_t K = profile.num_classes();

    // Shared ground truth: canonical order, contiguous, covering the video.
    std::vector<ActivitySegment> segments;
    std::int64_t frame = 0;
    std::int64_t total_clips = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const std::int64_t clips =
            draw_duration_clips(profile.duration_mean_clips[k], profile.duration_std_clips[k], rng);
        ActivitySegment seg;
        seg.class_id = static_cast<int>(k);
        seg.start_frame = frame;
        seg.end_frame = frame + clips * profile.clip_len;
        segments.push_back(seg);
        frame = seg.end_frame;
        total_clips += clips;
    }

    SyntheticCase out;
    out.case_manifest.case_id = case_id;
    out.case_manifest.room_id = room_id;
    out.case_manifest.procedure_type = procedure_type;
    out.case_manifest.surgeon_id = surgeon_id;

    const Mat proto = effective_prototypes(profile);
    std::vector<int> clip_class(static_cast<std::size_t>(total_clips));
    {
        std::size_t t = 0;
        for (const auto& seg : segments)
            for (std::int64_t c = 0; c < seg.length() / profile.clip_len; ++c)
                clip_class[t++] = seg.class_id;
    }

    for (int v = 0; v < views; ++v) {
        VideoRecord rec;
        rec.video_id = case_id + "_view" + std::to_string(v);
        rec.case_id = case_id;
        rec.num_frames = frame;
        rec.cart_id = "cart" + std::to_string(v);
        rec.camera_id = "cam" + std::to_string(v);
        rec.segments = segments;
        out.videos.push_back(rec);
        out.case_manifest.video_ids.push_back(rec.video_id);

        Mat feats(clip_class.size(), profile.feature_dim);
        for (std::size_t t = 0; t < clip_class.size(); ++t) {
            const double* pk = proto.row_const(static_cast<std::size_t>(clip_class[t]));
            double* row = feats.row(t);
            for (std::size_t d = 0; d < profile.feature_dim; ++d)
                row[d] = pk[d] + profile.noise_scale * rng.normal();
        }
        out.view_features.push_back(std::move(feats));
    }
    return out;
}

PixelVideo render_pixel_video(const WorkflowProfile& profile,
                              const std::vector<ActivitySegment>& segments,
                              std::int64_t num_frames, Rng& rng) {
    PixelVideo video;
    video.num_frames = num_frames;
    video.height = profile.pixel_size;
    video.width = profile.pixel_size;
    video.data.resize(static_cast<std::size_t>(num_frames) * profile.pixel_size *
                      profile.pixel_size);

    const std::size_t K = profile.num_classes();
    std::vector<int> frame_class(static_cast<std::size_t>(num_frames), 0);
    for (const auto& seg : segments)
        for (std::int64_t f = seg.start_frame; f < std::min(seg.end_frame, num_frames); ++f)
            frame_class[static_cast<std::size_t>(f)] = seg.class_id;

    // Per-class drifting grating: orientation encodes the class, the phase
    // advances over frames so motion exists, mild pixel noise on top.
    constexpr double kPeriodPx = 8.0;
    for (std::int64_t f = 0; f < num_frames; ++f) {
        const int k = frame_class[static_cast<std::size_t>(f)];
        const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(K);
        const double ux = std::cos(theta) / kPeriodPx;
        const double uy = std::sin(theta) / kPeriodPx;
        const double phase = 2.0 * std::numbers::pi * 0.07 * static_cast<double>(f);
        for (std::size_t y = 0; y < video.height; ++y)
            for (std::size_t x = 0; x < video.width; ++x) {
                const double wave = std::sin(
                    2.0 * std::numbers::pi *
                        (ux * static_cast<double>(x) + uy * static_cast<double>(y)) +
                    phase);
                double value = 127.5 * (1.0 + wave) + 8.0 * rng.normal();
                value = std::clamp(value, 0.0, 255.0);
                video.at(f, y, x) = static_cast<std::uint8_t>(std::lround(value));
            }
    }
    return video;
}

DatasetManifest generate_dataset(const WorkflowProfile& profile, std::size_t n_cases, int views,
                                 std::uint64_t seed, const std::filesystem::path& out_dir,
                                 bool pixel_mode, std::size_t jobs) {
    check_profile(profile);
    if (n_cases < 1) throw std::invalid_argument("generate_dataset: n_cases must be >= 1");
    if (views < 1) throw std::invalid_argument("generate_dataset: views must be >= 1");

    std::filesystem::create_directories(out_dir);
    const auto payload_dir = out_dir / (pixel_mode ? "videos" : "features");
    std::filesystem::create_directories(payload_dir);

    DatasetManifest manifest;
    for (std::size_t k = 0; k < profile.num_classes(); ++k)
        manifest.label_set.push_back({static_cast<int>(k), profile.class_names[k]});

    // Cases depend only on their own derived streams, so workers may build
    // them in any order; files and manifest rows are then written in case
    // order, keeping the dataset byte-identical for every job count.
    struct CaseOutput {
        SyntheticCase sc;
        std::vector<PixelVideo> pixel_videos;
    };
    std::vector<CaseOutput> built(n_cases);
    auto build_case = [&](std::size_t i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "case_%04zu", i);
        // Round-robin metadata guarantees every room/procedure/surgeon value
        // appears once n_cases covers the longest list.
        const std::string room = profile.rooms[i % profile.rooms.size()];
        const std::string proc = profile.procedures[i % profile.procedures.size()];
        const std::string surg = profile.surgeons[i % profile.surgeons.size()];

        Rng rng = Rng::derived(seed, i + 1);
        CaseOutput& out = built[i];
        out.sc = generate_case(profile, rng, views, buf, room, proc, surg);
        if (pixel_mode) {
            for (std::size_t v = 0; v < out.sc.videos.size(); ++v) {
                Rng vid_rng = Rng::derived(seed, (i + 1) * 1000 + v);
                out.pixel_videos.push_back(render_pixel_video(
                    profile, out.sc.videos[v].segments, out.sc.videos[v].num_frames, vid_rng));
            }
        }
    };

    const std::size_t workers = std::min(jobs, n_cases);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_cases; ++i) build_case(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < n_cases; i = next++) build_case(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (const auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    std::map<std::string, std::string> feature_index;
    for (std::size_t i = 0; i < n_cases; ++i) {
        SyntheticCase& sc = built[i].sc;
        for (std::size_t v = 0; v < sc.videos.size(); ++v) {
            VideoRecord& rec = sc.videos[v];
            if (pixel_mode) {
                const std::string name = rec.video_id + ".orv";
                save_pixel_video(payload_dir / name, built[i].pixel_videos[v]);
                rec.video_path = "videos/" + name;
            } else {
                const std::string name = rec.video_id + ".feat";
                save_feature_file(payload_dir / name, sc.view_features[v]);
                rec.feature_path = "features/" + name;
                feature_index[rec.video_id] = name;
            }
            manifest.videos.push_back(rec);
        }
        manifest.cases.push_back(sc.case_manifest);
    }

    if (!pixel_mode) save_feature_index(payload_dir / "index.json", feature_index);
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace orflow
