#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "orflow/dataset.hpp"

using namespace orflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("orflow_dataset_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Two-class manifest with one case per video; group metadata configurable.
DatasetManifest tiny_manifest(int n_videos) {
    DatasetManifest m;
    m.label_set = {{0, "alpha"}, {1, "beta"}};
    for (int i = 0; i < n_videos; ++i) {
        const std::string cid = "case" + std::to_string(i);
        CaseManifest c;
        c.case_id = cid;
        c.room_id = i % 2 == 0 ? "OR1" : "OR2";
        c.procedure_type = "proc" + std::to_string(i % 3);
        c.surgeon_id = "surg" + std::to_string(i % 2);
        VideoRecord v;
        v.video_id = "vid" + std::to_string(i);
        v.case_id = cid;
        v.num_frames = 160;
        v.cart_id = "cart0";
        v.camera_id = "cam0";
        v.segments = {{0, 0, 80}, {1, 80, 160}};
        c.video_ids = {v.video_id};
        m.cases.push_back(c);
        m.videos.push_back(v);
    }
    return m;
}

}  // namespace

TEST_CASE("manifest JSON round-trip") {
    TempDir tmp;
    DatasetManifest m = tiny_manifest(3);
    m.videos[0].feature_path = "features/vid0.feat";
    m.videos[1].video_path = "videos/vid1.orv";
    const auto path = tmp.path / "manifest.json";
    save_manifest(m, path);
    const DatasetManifest r = load_manifest(path);
    REQUIRE(r.videos.size() == 3);
    REQUIRE(r.cases.size() == 3);
    CHECK(r.label_set.size() == 2);
    CHECK(r.label_set[1].name == "beta");
    CHECK(r.videos[0].feature_path == "features/vid0.feat");
    CHECK(r.videos[1].video_path == "videos/vid1.orv");
    CHECK(r.videos[2].segments.size() == 2);
    CHECK(r.videos[2].segments[1].start_frame == 80);
    CHECK(r.cases[0].video_ids == std::vector<std::string>{"vid0"});
    CHECK(r.find_video("vid1") != nullptr);
    CHECK(r.find_case("case2") != nullptr);
    CHECK(r.find_video("nope") == nullptr);
}

TEST_CASE("annotations parse the documented schema") {
    TempDir tmp;
    const auto path = tmp.path / "ann.csv";
    std::vector<ActivityClass> labels = {{0, "sterile_preparation"}, {1, "surgery"}};
    {
        std::ofstream out(path);
        out << "video_id,class_name,start_frame,end_frame\n";
        out << "vid_001,sterile_preparation,0,4500\n";
        out << "vid_001,surgery,4500,9000\n";
    }
    const auto rows = parse_annotations(path, labels);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].first == "vid_001");
    CHECK(rows[0].second.class_id == 0);
    CHECK(rows[0].second.start_frame == 0);
    CHECK(rows[0].second.end_frame == 4500);
    CHECK(rows[1].second.class_id == 1);
}

TEST_CASE("annotations errors carry line numbers") {
    TempDir tmp;
    std::vector<ActivityClass> labels = {{0, "alpha"}};
    auto write = [&](const std::string& body) {
        const auto path = tmp.path / "ann.csv";
        std::ofstream out(path);
        out << body;
        return path;
    };

    CHECK_THROWS_AS(parse_annotations(write("nope\n"), labels), ParseError);
    CHECK_THROWS_AS(
        parse_annotations(write("video_id,class_name,start_frame,end_frame\nv,alpha,5,5\n"), labels),
        ParseError);
    CHECK_THROWS_AS(
        parse_annotations(write("video_id,class_name,start_frame,end_frame\nv,gamma,0,5\n"), labels),
        ParseError);
    CHECK_THROWS_AS(
        parse_annotations(write("video_id,class_name,start_frame,end_frame\nv,alpha,x,5\n"), labels),
        ParseError);
    CHECK_THROWS_WITH_AS(
        parse_annotations(
            write("video_id,class_name,start_frame,end_frame\nv,alpha,0,10\nv,alpha,5,15\n"),
            labels),
        doctest::Contains("overlapping"), ValidationError);
}

TEST_CASE("annotations round-trip through write_annotations") {
    TempDir tmp;
    const DatasetManifest m = tiny_manifest(2);
    const auto path = tmp.path / "ann.csv";
    write_annotations(m, path);
    const auto rows = parse_annotations(path, m.label_set);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].first == "vid0");
    CHECK(rows[1].second.start_frame == 80);
    CHECK(rows[1].second.end_frame == 160);
}

TEST_CASE("validate_manifest reports every defect") {
    DatasetManifest m = tiny_manifest(2);
    CHECK(validate_manifest(m).ok());

    SUBCASE("dangling case reference") {
        m.videos[0].case_id = "ghost";
        const auto rep = validate_manifest(m);
        CHECK_FALSE(rep.ok());
        CHECK(rep.issues.size() >= 1);
        CHECK(rep.issues[0].category == "dangling_reference");
    }
    SUBCASE("segment past num_frames") {
        m.videos[1].segments[1].end_frame = 999;
        const auto rep = validate_manifest(m);
        REQUIRE_FALSE(rep.ok());
        bool found = false;
        for (const auto& iss : rep.issues)
            found = found || (iss.category == "range" &&
                              iss.message.find("vid1") != std::string::npos &&
                              iss.message.find("999") != std::string::npos);
        CHECK(found);
    }
    SUBCASE("overlapping segments") {
        m.videos[0].segments[1].start_frame = 40;
        CHECK_FALSE(validate_manifest(m).ok());
    }
    SUBCASE("non-dense class ids") {
        m.label_set[1].id = 5;
        CHECK_FALSE(validate_manifest(m).ok());
    }
    SUBCASE("unknown segment class") {
        m.videos[0].segments[0].class_id = 9;
        CHECK_FALSE(validate_manifest(m).ok());
    }
}

TEST_CASE("random split hits round(f*N) exactly and is seeded") {
    const DatasetManifest m = tiny_manifest(10);
    SplitParams params;
    params.train_fraction = 0.8;
    const SplitSpec a = make_split(m, SplitScheme::random, params, 5);
    CHECK(a.train_video_ids.size() == 8);
    CHECK(a.test_video_ids.size() == 2);

    const SplitSpec b = make_split(m, SplitScheme::random, params, 5);
    CHECK(a.train_video_ids == b.train_video_ids);
    CHECK(a.test_video_ids == b.test_video_ids);

    const SplitSpec c = make_split(m, SplitScheme::random, params, 6);
    CHECK(a.train_video_ids != c.train_video_ids);

    // disjoint, union covers everything
    std::set<std::string> all(a.train_video_ids.begin(), a.train_video_ids.end());
    for (const auto& v : a.test_video_ids) CHECK(all.insert(v).second);
    CHECK(all.size() == 10);

    params.train_fraction = 0.01;  // round(0.1) = 0 -> empty train
    CHECK_THROWS_AS(make_split(m, SplitScheme::random, params, 1), std::invalid_argument);
}

TEST_CASE("room split holds out whole rooms") {
    const DatasetManifest m = tiny_manifest(10);
    SplitParams params;
    params.train_rooms = {"OR1"};
    const SplitSpec s = make_split(m, SplitScheme::room, params, 0);
    CHECK(s.train_video_ids.size() == 5);
    CHECK(s.test_video_ids.size() == 5);
    for (const auto& vid : s.train_video_ids) {
        const auto* v = m.find_video(vid);
        CHECK(m.find_case(v->case_id)->room_id == "OR1");
    }

    params.train_rooms = {"OR9"};
    CHECK_THROWS_WITH_AS(make_split(m, SplitScheme::room, params, 0),
                         doctest::Contains("OR9"), std::invalid_argument);
}

TEST_CASE("group split: explicit test groups") {
    const DatasetManifest m = tiny_manifest(9);  // proc0 x3, proc1 x3, proc2 x3
    SplitParams params;
    params.test_groups = {"proc1"};
    const SplitSpec s = make_split(m, SplitScheme::procedure, params, 0);
    CHECK(s.test_video_ids.size() == 3);
    for (const auto& vid : s.test_video_ids)
        CHECK(m.find_case(m.find_video(vid)->case_id)->procedure_type == "proc1");

    params.test_groups = {"proc7"};
    CHECK_THROWS_AS(make_split(m, SplitScheme::procedure, params, 0), std::invalid_argument);
}

TEST_CASE("group split: greedy largest-first with lexicographic ties") {
    // 5 procedure types x 4 cases each, one video per case; target 0.2 ->
    // exactly one whole type lands in test.
    DatasetManifest m;
    m.label_set = {{0, "alpha"}, {1, "beta"}};
    for (int p = 0; p < 5; ++p)
        for (int i = 0; i < 4; ++i) {
            const std::string cid = "c" + std::to_string(p) + "_" + std::to_string(i);
            CaseManifest c;
            c.case_id = cid;
            c.room_id = "OR1";
            c.procedure_type = "proc" + std::to_string(p);
            c.surgeon_id = "s";
            VideoRecord v;
            v.video_id = cid + "_v";
            v.case_id = cid;
            v.num_frames = 16;
            v.segments = {{0, 0, 16}};
            c.video_ids = {v.video_id};
            m.cases.push_back(c);
            m.videos.push_back(v);
        }
    SplitParams params;
    params.test_fraction = 0.2;
    const SplitSpec s = make_split(m, SplitScheme::procedure, params, 0);
    CHECK(s.test_video_ids.size() == 4);
    // all sizes tie at 4, so the lexicographically first key wins
    for (const auto& vid : s.test_video_ids)
        CHECK(m.find_case(m.find_video(vid)->case_id)->procedure_type == "proc0");

    // a single group cannot satisfy any fraction without emptying train
    DatasetManifest single = tiny_manifest(4);
    for (auto& c : single.cases) c.procedure_type = "only";
    CHECK_THROWS_WITH_AS(make_split(single, SplitScheme::procedure, params, 0),
                         doctest::Contains("closest achievable"), std::invalid_argument);
}

TEST_CASE("surgeon split keeps surgeon values disjoint") {
    const DatasetManifest m = tiny_manifest(8);
    SplitParams params;
    params.test_fraction = 0.4;
    const SplitSpec s = make_split(m, SplitScheme::surgeon, params, 0);
    std::set<std::string> train_surg, test_surg;
    for (const auto& vid : s.train_video_ids)
        train_surg.insert(m.find_case(m.find_video(vid)->case_id)->surgeon_id);
    for (const auto& vid : s.test_video_ids)
        test_surg.insert(m.find_case(m.find_video(vid)->case_id)->surgeon_id);
    for (const auto& g : test_surg) CHECK(train_surg.count(g) == 0);
}

TEST_CASE("split JSON round-trip") {
    TempDir tmp;
    const DatasetManifest m = tiny_manifest(10);
    SplitParams params;
    params.train_fraction = 0.8;
    const SplitSpec s = make_split(m, SplitScheme::random, params, 11);
    const auto path = tmp.path / "split.json";
    save_split(s, path);
    const SplitSpec r = load_split(path);
    CHECK(r.scheme == SplitScheme::random);
    CHECK(r.seed == 11);
    CHECK(r.train_video_ids == s.train_video_ids);
    CHECK(r.test_video_ids == s.test_video_ids);
    CHECK(SplitParams::from_json(r.params_json).train_fraction == 0.8);
}

TEST_CASE("clip labels follow majority overlap with the documented ties") {
    VideoRecord v;
    v.video_id = "v";
    v.num_frames = 48;
    v.segments = {{3, 0, 48}};
    CHECK(clip_labels_for_video(v, 16) == std::vector<int>{3, 3, 3});

    v.num_frames = 32;
    v.segments = {{0, 0, 20}, {1, 20, 32}};
    CHECK(clip_labels_for_video(v, 16) == std::vector<int>{0, 1});

    v.num_frames = 40;
    v.segments = {{2, 0, 8}};
    CHECK(clip_labels_for_video(v, 16) == std::vector<int>{2, -1});

    // exact tie: both segments overlap 8 frames; earlier start wins
    v.num_frames = 16;
    v.segments = {{0, 0, 8}, {1, 8, 16}};
    CHECK(clip_labels_for_video(v, 16) == std::vector<int>{0});
}
