// orflow: ordered-workflow activity recognition pipeline.
//
// Stage-per-command design: synth -> split -> [train_clip] -> extract ->
// train_seq -> eval, each stage consuming the previous stage's artifacts by
// path. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "orflow/backbone.hpp"
#include "orflow/clipper.hpp"
#include "orflow/dataset.hpp"
#include "orflow/metrics.hpp"
#include "orflow/seqmodel.hpp"
#include "orflow/synthgen.hpp"
#include "orflow/trainer.hpp"
#include "orflow/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace orflow;

namespace {

// ---------------------------------------------------------------------------
// JSON config files: flat {"option": value} objects; explicit flags override.
// Applied after parsing, so a config value fills exactly the options the
// command line left untouched.
// ---------------------------------------------------------------------------

std::string config_scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::FileError("config values must be scalars or arrays of scalars");
}

void apply_json_config(CLI::App* sub, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw CLI::FileError("config file not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::FileError("config root must be a JSON object");

    for (const auto& [key, value] : j.items()) {
        if (key == "config") throw CLI::FileError("a config file cannot set --config");
        std::string dashed = key;  // underscore spelling is accepted too
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        CLI::Option* op = sub->get_option_no_throw("--" + key);
        if (!op) op = sub->get_option_no_throw(key);
        if (!op) op = sub->get_option_no_throw("--" + dashed);
        if (!op)
            throw CLI::FileError("unknown config key '" + key + "' for " + sub->get_name());
        if (!op->empty()) continue;  // explicit flags win
        std::vector<std::string> inputs;
        if (value.is_array())
            for (const auto& v : value) inputs.push_back(config_scalar(v));
        else
            inputs.push_back(config_scalar(value));
        if (op->get_expected_min() == 0 && inputs.size() == 1)
            op->add_result(op->get_flag_value(key, inputs.front()));
        else
            op->add_result(inputs);
        op->run_callback();
    }
}

// Deferred required-option check: a mandatory value may come from the command
// line or from the config file.
void check_required(CLI::App* sub, const std::vector<std::string>& names) {
    for (const std::string& name : names)
        if (sub->get_option(name)->empty()) throw CLI::RequiredError(name);
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string fmt_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// The fully resolved run configuration, echoed as a reproducible command line.
class EchoLine {
  public:
    explicit EchoLine(const std::string& command) : line_("config: " + command) {}

    EchoLine& opt(const std::string& name, const std::string& value) {
        line_ += " " + name + " " + value;
        return *this;
    }
    EchoLine& opt(const std::string& name, const char* value) {
        return opt(name, std::string(value));
    }
    template <typename T>
        requires std::integral<T>
    EchoLine& opt(const std::string& name, T value) {
        return opt(name, std::to_string(value));
    }
    EchoLine& opt(const std::string& name, double value) { return opt(name, fmt_double(value)); }
    EchoLine& opt_if(const std::string& name, const std::string& value) {
        if (!value.empty()) opt(name, value);
        return *this;
    }
    EchoLine& opt_if(const std::string& name, const std::optional<double>& value) {
        if (value) opt(name, *value);
        return *this;
    }
    EchoLine& opt_if(const std::string& name, const std::vector<std::string>& values) {
        if (!values.empty()) opt(name, join(values));
        return *this;
    }
    EchoLine& flag_if(const std::string& name, bool on) {
        if (on) line_ += " " + name;
        return *this;
    }
    void print() const { std::cout << line_ << "\n"; }

  private:
    static std::string join(const std::vector<std::string>& values) {
        std::string out;
        for (const auto& v : values) out += (out.empty() ? "" : ",") + v;
        return out;
    }
    std::string line_;
};

fs::path require_file(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw FormatError(what + " not found: " + path.string());
    return path;
}

void ensure_parent_dir(const fs::path& path) {
    const fs::path parent = path.parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::vector<std::string> class_names(const DatasetManifest& manifest) {
    std::vector<std::string> names;
    names.reserve(manifest.label_set.size());
    for (const ActivityClass& c : manifest.label_set) names.push_back(c.name);
    return names;
}

// Payload paths in a manifest are relative to the manifest's directory.
fs::path dataset_root(const fs::path& manifest_path) {
    const fs::path parent = manifest_path.parent_path();
    return parent.empty() ? fs::path(".") : parent;
}

const VideoRecord& require_video(const DatasetManifest& manifest, const std::string& video_id) {
    const VideoRecord* rec = manifest.find_video(video_id);
    if (!rec) throw ValidationError("split references unknown video '" + video_id + "'");
    return *rec;
}

// Per-clip feature rows plus labels for every video in `video_ids`.
std::vector<SequenceSample> load_samples(const DatasetManifest& manifest, const fs::path& root,
                                         const std::vector<std::string>& video_ids,
                                         std::int64_t clip_len) {
    if (video_ids.empty()) throw ValidationError("the selected split side has no videos");
    std::vector<SequenceSample> samples;
    samples.reserve(video_ids.size());
    for (const std::string& id : video_ids) {
        const VideoRecord& rec = require_video(manifest, id);
        if (rec.feature_path.empty())
            throw FormatError("video '" + id + "' has no feature file; run extract first");
        SequenceSample s;
        s.video_id = id;
        s.features = load_feature_file(require_file(root / rec.feature_path, "feature file"));
        s.labels = clip_labels_for_video(rec, clip_len);
        if (s.labels.size() != s.features.rows)
            throw ConfigError("video '" + id + "': " + std::to_string(s.features.rows) +
                              " feature rows vs " + std::to_string(s.labels.size()) +
                              " clips of " + std::to_string(clip_len) +
                              " frames; clip length disagrees with the extraction");
        samples.push_back(std::move(s));
    }
    return samples;
}

json parse_checkpoint_config(const Checkpoint& ckpt) {
    try {
        json j = json::parse(ckpt.config_json);
        if (!j.is_object()) throw FormatError("checkpoint config is not a JSON object");
        return j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
}

template <typename T>
T config_field(const json& j, const std::string& key) {
    if (!j.contains(key))
        throw FormatError("checkpoint config lacks the '" + key + "' field");
    try {
        return j[key].get<T>();
    } catch (const json::exception&) {
        throw FormatError("checkpoint config field '" + key + "' has the wrong type");
    }
}

// A sequence or baseline model restored from a checkpoint, together with the
// raw tensors (for optimizer state) and the bookkeeping fields.
struct LoadedModel {
    Checkpoint ckpt;
    std::string kind;  // "sequence" | "baseline"
    std::int64_t clip_len = 0;
    std::size_t completed_epochs = 0;
    std::optional<SequenceModel> seq;
    std::optional<BaselineModel> baseline;

    std::vector<Param*> params() { return seq ? seq->params() : baseline->params(); }
    Mat score(const Mat& features) {
        return seq ? seq->forward(features).post_logits : baseline->forward(features);
    }
};

LoadedModel load_model_checkpoint(const fs::path& path) {
    LoadedModel m;
    m.ckpt = load_checkpoint(require_file(path, "checkpoint"));
    const json cfg = parse_checkpoint_config(m.ckpt);
    m.kind = config_field<std::string>(cfg, "model");
    m.clip_len = config_field<std::int64_t>(cfg, "clip_len");
    m.completed_epochs = config_field<std::size_t>(cfg, "completed_epochs");
    if (!cfg.contains("model_config"))
        throw FormatError("checkpoint config lacks the 'model_config' field");
    Rng rng(0);  // overwritten by the restore
    if (m.kind == "sequence") {
        m.seq.emplace(sequence_config_from_json(cfg["model_config"].dump()), rng);
        restore_params(m.ckpt, m.seq->params());
    } else if (m.kind == "baseline") {
        m.baseline.emplace(config_field<std::size_t>(cfg["model_config"], "feature_dim"),
                           config_field<std::size_t>(cfg["model_config"], "num_classes"), rng);
        restore_params(m.ckpt, m.baseline->params());
    } else {
        throw ConfigError("checkpoint holds a '" + m.kind +
                          "' model; expected sequence or baseline");
    }
    return m;
}

ToyBackbone copy_backbone(ToyBackbone& src) {
    Rng rng(0);
    ToyBackbone dst(src.config(), rng);
    const auto sp = src.params();
    const auto dp = dst.params();
    for (std::size_t i = 0; i < sp.size(); ++i) dp[i]->value = sp[i]->value;
    return dst;
}

// Runs fn(i) for i in [0, n) on `jobs` threads; any exception is rethrown on
// the caller's thread after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
    std::string out;
    std::size_t cases = 20;
    int views = 2;
    std::uint64_t seed = 0;
    std::string profile_path;
    bool pixel = false;
    std::size_t jobs = 1;
    std::string config;
};

int cmd_synth(const SynthOpts& o) {
    EchoLine("synth")
        .opt("--out", o.out)
        .opt("--cases", o.cases)
        .opt("--views", o.views)
        .opt("--seed", o.seed)
        .opt_if("--profile", o.profile_path)
        .flag_if("--pixel", o.pixel)
        .opt("--jobs", o.jobs)
        .print();

    const WorkflowProfile profile =
        o.profile_path.empty() ? WorkflowProfile::default_profile()
                               : load_profile(require_file(o.profile_path, "profile"));
    const DatasetManifest manifest =
        generate_dataset(profile, o.cases, o.views, o.seed, o.out, o.pixel, o.jobs);
    std::cout << "synth: " << manifest.cases.size() << " cases, " << manifest.videos.size()
              << " videos, " << manifest.num_classes() << " classes -> "
              << (fs::path(o.out) / "manifest.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

struct SplitOpts {
    std::string manifest;
    std::string out;
    std::string scheme;
    std::optional<double> train_frac;
    std::optional<double> test_frac;
    std::vector<std::string> train_rooms;
    std::vector<std::string> test_groups;
    std::uint64_t seed = 0;
    std::string config;
};

int cmd_split(SplitOpts o) {
    const SplitScheme scheme = split_scheme_from_string(o.scheme);
    if (scheme == SplitScheme::random && !o.train_frac) o.train_frac = 0.8;

    EchoLine("split")
        .opt("--manifest", o.manifest)
        .opt("--out", o.out)
        .opt("--scheme", o.scheme)
        .opt_if("--train-frac", o.train_frac)
        .opt_if("--test-frac", o.test_frac)
        .opt_if("--train-rooms", o.train_rooms)
        .opt_if("--test-groups", o.test_groups)
        .opt("--seed", o.seed)
        .print();

    const DatasetManifest manifest = load_manifest(require_file(o.manifest, "manifest"));
    SplitParams params;
    params.train_fraction = o.train_frac;
    params.test_fraction = o.test_frac;
    params.train_rooms = o.train_rooms;
    params.test_groups = o.test_groups;
    const SplitSpec split = make_split(manifest, scheme, params, o.seed);
    ensure_parent_dir(o.out);
    save_split(split, o.out);
    std::cout << "split " << o.scheme << ": train=" << split.train_video_ids.size()
              << " test=" << split.test_video_ids.size() << " -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train_clip
// ---------------------------------------------------------------------------

struct TrainClipOpts {
    std::string manifest;
    std::string split;
    std::string out;
    std::size_t epochs = 5;
    double lr = 1e-3;
    std::string optimizer = "adam";
    std::uint64_t seed = 0;
    std::int64_t clip_len = 64;
    std::size_t batch_size = 16;
    std::string history;
    std::string config;
};

int cmd_train_clip(const TrainClipOpts& o) {
    EchoLine("train_clip")
        .opt("--manifest", o.manifest)
        .opt("--split", o.split)
        .opt("--out", o.out)
        .opt("--epochs", o.epochs)
        .opt("--lr", o.lr)
        .opt("--optimizer", o.optimizer)
        .opt("--seed", o.seed)
        .opt("--clip-len", o.clip_len)
        .opt("--batch-size", o.batch_size)
        .opt_if("--history", o.history)
        .print();

    const DatasetManifest manifest = load_manifest(require_file(o.manifest, "manifest"));
    const SplitSpec split = load_split(require_file(o.split, "split"));
    const fs::path root = dataset_root(o.manifest);
    if (split.train_video_ids.empty()) throw ValidationError("the split has no training videos");
    for (const std::string& id : split.train_video_ids) {
        const VideoRecord& rec = require_video(manifest, id);
        if (rec.video_path.empty())
            throw FormatError("video '" + id +
                              "' has no raw video; clip training needs a pixel-mode dataset");
        require_file(root / rec.video_path, "video file");
    }

    std::map<std::string, PixelVideo> cache;
    auto video_for = [&](const std::string& id) -> const PixelVideo& {
        auto it = cache.find(id);
        if (it == cache.end()) {
            const VideoRecord& rec = require_video(manifest, id);
            it = cache.emplace(id, load_pixel_video(root / rec.video_path)).first;
        }
        return it->second;
    };

    const PixelVideo& probe = video_for(split.train_video_ids.front());
    if (probe.height != probe.width)
        throw ConfigError("video frames must be square, got " + std::to_string(probe.height) +
                          "x" + std::to_string(probe.width));
    ToyBackboneConfig bc;
    bc.input_size = probe.height;
    bc.num_classes = static_cast<std::size_t>(manifest.num_classes());
    Rng rng(o.seed);
    ToyBackbone backbone(bc, rng);

    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.learning_rate = o.lr;
    tc.optimizer = optimizer_from_string(o.optimizer);
    tc.seed = o.seed;
    tc.clip_batch_size = o.batch_size;
    const auto load_clip = [&](const TrainingClip& clip) {
        return clip_from_video(video_for(clip.video_id), clip.range,
                               static_cast<std::size_t>(o.clip_len));
    };
    const TrainHistory history =
        clip_fit(backbone, manifest, split.train_video_ids, o.clip_len, load_clip, tc);

    const json cfg = {{"model", "backbone"},
                      {"clip_len", o.clip_len},
                      {"completed_epochs", o.epochs},
                      {"model_config", json::parse(backbone_config_to_json(bc))}};
    ensure_parent_dir(o.out);
    save_checkpoint(o.out, cfg.dump(), backbone.params());
    if (!o.history.empty()) {
        ensure_parent_dir(o.history);
        save_history_jsonl(history, o.history);
    }

    const EpochRecord& last = history.records.back();
    std::cout << "train_clip: " << o.epochs << " epochs, final loss " << fmt_rate(last.loss)
              << ", train accuracy " << fmt_rate(last.train_accuracy.value_or(0.0)) << " -> "
              << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractOpts {
    std::string manifest;
    std::string out;
    std::string backbone;
    std::int64_t clip_len = 16;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string config;
};

int cmd_extract(const ExtractOpts& o) {
    EchoLine("extract")
        .opt("--manifest", o.manifest)
        .opt("--out", o.out)
        .opt_if("--backbone", o.backbone)
        .opt("--clip-len", o.clip_len)
        .opt("--seed", o.seed)
        .opt("--jobs", o.jobs)
        .print();

    DatasetManifest manifest = load_manifest(require_file(o.manifest, "manifest"));
    const fs::path root = dataset_root(o.manifest);
    if (manifest.videos.empty()) throw ValidationError("manifest lists no videos");
    for (const VideoRecord& rec : manifest.videos) {
        if (rec.video_path.empty())
            throw FormatError("video '" + rec.video_id +
                              "' has no raw video; extraction needs a pixel-mode dataset");
        require_file(root / rec.video_path, "video file");
    }

    ToyBackbone backbone = [&] {
        if (!o.backbone.empty()) {
            const Checkpoint ckpt = load_checkpoint(require_file(o.backbone, "checkpoint"));
            const json cfg = parse_checkpoint_config(ckpt);
            const auto kind = config_field<std::string>(cfg, "model");
            if (kind != "backbone")
                throw ConfigError("checkpoint holds a '" + kind + "' model; expected backbone");
            if (!cfg.contains("model_config"))
                throw FormatError("checkpoint config lacks the 'model_config' field");
            Rng rng(0);
            ToyBackbone bb(backbone_config_from_json(cfg["model_config"].dump()), rng);
            restore_params(ckpt, bb.params());
            return bb;
        }
        // no fine-tuned backbone given: extract with a seed-initialized one
        const PixelVideo probe = load_pixel_video(root / manifest.videos.front().video_path);
        if (probe.height != probe.width)
            throw ConfigError("video frames must be square, got " + std::to_string(probe.height) +
                              "x" + std::to_string(probe.width));
        ToyBackboneConfig bc;
        bc.input_size = probe.height;
        bc.num_classes = static_cast<std::size_t>(manifest.num_classes());
        Rng rng(o.seed);
        return ToyBackbone(bc, rng);
    }();

    // forward passes cache activations, so each worker owns a backbone copy
    std::vector<Mat> features(manifest.videos.size());
    if (o.jobs <= 1) {
        for (std::size_t i = 0; i < manifest.videos.size(); ++i) {
            const VideoRecord& rec = manifest.videos[i];
            const PixelVideo video = load_pixel_video(root / rec.video_path);
            features[i] = extract_features(video, rec.video_id, backbone, o.clip_len).features;
        }
    } else {
        std::vector<ToyBackbone> copies;
        const std::size_t workers = std::min(o.jobs, manifest.videos.size());
        for (std::size_t w = 0; w < workers; ++w) copies.push_back(copy_backbone(backbone));
        std::atomic<std::size_t> next{0};
        parallel_for(workers, workers, [&](std::size_t w) {
            for (std::size_t i = next++; i < manifest.videos.size(); i = next++) {
                const VideoRecord& rec = manifest.videos[i];
                const PixelVideo video = load_pixel_video(root / rec.video_path);
                features[i] =
                    extract_features(video, rec.video_id, copies[w], o.clip_len).features;
            }
        });
    }

    const fs::path out_dir(o.out);
    fs::create_directories(out_dir / "features");
    std::map<std::string, std::string> index;
    std::size_t total_clips = 0;
    for (std::size_t i = 0; i < manifest.videos.size(); ++i) {
        VideoRecord& rec = manifest.videos[i];
        const std::string name = rec.video_id + ".feat";
        save_feature_file(out_dir / "features" / name, features[i]);
        rec.feature_path = "features/" + name;
        index[rec.video_id] = name;
        total_clips += features[i].rows;
        // keep the raw video reachable from the new manifest location
        const fs::path src = root / rec.video_path;
        std::error_code ec;
        const fs::path rel = fs::relative(src, out_dir, ec);
        rec.video_path = (ec || rel.empty()) ? fs::absolute(src).generic_string()
                                             : rel.generic_string();
    }
    save_feature_index(out_dir / "features" / "index.json", index);
    save_manifest(manifest, out_dir / "manifest.json");
    std::cout << "extract: " << manifest.videos.size() << " videos, " << total_clips
              << " clips -> " << (out_dir / "manifest.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train_seq
// ---------------------------------------------------------------------------

struct TrainSeqOpts {
    std::string manifest;
    std::string split;
    std::string out;
    std::string model = "sequence";
    bool model_given = false;
    std::size_t epochs = 30;
    double lr = 1e-3;
    std::string optimizer = "adam";
    std::uint64_t seed = 0;
    std::int64_t clip_len = 16;
    double w_pre = 1.0;
    double w_post = 1.0;
    std::optional<double> grad_clip;
    std::size_t proj_dim = 64;
    std::size_t tgm_layers = 3;
    std::size_t kernel_length = 9;
    std::size_t gaussians = 16;
    std::size_t hidden = 64;
    bool unidirectional = false;
    std::size_t head_kernel = 1;
    std::string lstm_input = "pre_logits";
    std::string resume;
    std::string history;
    std::string config;
};

int cmd_train_seq(const TrainSeqOpts& o) {
    // a resumed run takes its architecture and clip length from the checkpoint
    std::optional<LoadedModel> resumed;
    if (!o.resume.empty()) {
        resumed = load_model_checkpoint(o.resume);
        if (o.model_given && o.model != resumed->kind)
            throw ConfigError("--model " + o.model + " disagrees with the '" + resumed->kind +
                              "' checkpoint being resumed");
    }
    const std::string kind = resumed ? resumed->kind : o.model;
    const std::int64_t clip_len = resumed ? resumed->clip_len : o.clip_len;
    const std::size_t completed = resumed ? resumed->completed_epochs : 0;
    if (o.epochs <= completed)
        throw ConfigError("--epochs " + std::to_string(o.epochs) +
                          " but the resumed checkpoint already holds " +
                          std::to_string(completed) + " epochs");

    EchoLine echo("train_seq");
    echo.opt("--manifest", o.manifest)
        .opt("--split", o.split)
        .opt("--out", o.out)
        .opt("--model", kind)
        .opt("--epochs", o.epochs)
        .opt("--lr", o.lr)
        .opt("--optimizer", o.optimizer)
        .opt("--seed", o.seed)
        .opt("--clip-len", clip_len)
        .opt("--w-pre", o.w_pre)
        .opt("--w-post", o.w_post)
        .opt_if("--grad-clip", o.grad_clip);
    if (kind == "sequence" && !resumed)
        echo.opt("--proj-dim", o.proj_dim)
            .opt("--tgm-layers", o.tgm_layers)
            .opt("--kernel-length", o.kernel_length)
            .opt("--gaussians", o.gaussians)
            .opt("--hidden", o.hidden)
            .flag_if("--unidirectional", o.unidirectional)
            .opt("--head-kernel", o.head_kernel)
            .opt("--lstm-input", o.lstm_input);
    echo.opt_if("--resume", o.resume).opt_if("--history", o.history).print();

    const DatasetManifest manifest = load_manifest(require_file(o.manifest, "manifest"));
    const SplitSpec split = load_split(require_file(o.split, "split"));
    const fs::path root = dataset_root(o.manifest);
    const auto samples = load_samples(manifest, root, split.train_video_ids, clip_len);
    const std::size_t feature_dim = samples.front().features.cols;
    const std::size_t num_classes = static_cast<std::size_t>(manifest.num_classes());

    TrainConfig tc;
    tc.epochs = o.epochs - completed;
    tc.epoch_offset = completed;
    tc.learning_rate = o.lr;
    tc.optimizer = optimizer_from_string(o.optimizer);
    tc.seed = o.seed;
    tc.grad_clip_norm = o.grad_clip;
    tc.w_pre = o.w_pre;
    tc.w_post = o.w_post;

    TrainHistory history;
    json model_config;
    std::vector<Param*> params;
    std::optional<SequenceModel> seq;
    std::optional<BaselineModel> baseline;
    if (kind == "sequence") {
        if (resumed) {
            seq = std::move(resumed->seq);
        } else {
            SequenceModelConfig mc;
            mc.num_classes = num_classes;
            mc.feature_dim = feature_dim;
            mc.proj_dim = o.proj_dim;
            mc.num_tgm_layers = o.tgm_layers;
            mc.tgm_kernel_length = o.kernel_length;
            mc.tgm_num_gaussians = o.gaussians;
            mc.lstm_hidden = o.hidden;
            mc.bidirectional = !o.unidirectional;
            mc.head_kernel = o.head_kernel;
            if (o.lstm_input == "pre_logits")
                mc.lstm_input = LstmInput::pre_logits;
            else if (o.lstm_input == "concat_features")
                mc.lstm_input = LstmInput::concat_features;
            else
                throw ConfigError("unknown --lstm-input '" + o.lstm_input + "'");
            Rng rng(o.seed);
            seq.emplace(mc, rng);
        }
        if (seq->config().num_classes != num_classes)
            throw ConfigError("model has " + std::to_string(seq->config().num_classes) +
                              " classes but the manifest has " + std::to_string(num_classes));
        model_config = json::parse(sequence_config_to_json(seq->config()));
        params = seq->params();
    } else if (kind == "baseline") {
        if (resumed) {
            baseline = std::move(resumed->baseline);
        } else {
            Rng rng(o.seed);
            baseline.emplace(feature_dim, num_classes, rng);
        }
        if (baseline->num_classes() != num_classes)
            throw ConfigError("model has " + std::to_string(baseline->num_classes()) +
                              " classes but the manifest has " + std::to_string(num_classes));
        model_config = {{"feature_dim", baseline->feature_dim()},
                        {"num_classes", baseline->num_classes()}};
        params = baseline->params();
    } else {
        throw ConfigError("unknown --model '" + kind + "'");
    }

    Optimizer opt(params, tc);
    if (resumed) opt.import_state(resumed->ckpt.tensors);
    history = seq ? sequence_fit(*seq, samples, tc, opt)
                  : baseline_fit(*baseline, samples, tc, opt);

    const json cfg = {{"model", kind},
                      {"clip_len", clip_len},
                      {"completed_epochs", o.epochs},
                      {"model_config", model_config}};
    ensure_parent_dir(o.out);
    save_checkpoint(o.out, cfg.dump(), params, opt.export_state());
    if (!o.history.empty()) {
        ensure_parent_dir(o.history);
        save_history_jsonl(history, o.history);
    }

    std::cout << "train_seq[" << kind << "]: epochs " << (completed + 1) << ".." << o.epochs
              << ", final loss " << fmt_rate(history.records.back().loss) << " -> " << o.out
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string manifest;
    std::string split;
    std::string ckpt;
    std::string out;
    std::string model;
    std::string subset = "test";
    std::string config;
};

int cmd_eval(const EvalOpts& o) {
    EchoLine("eval")
        .opt("--manifest", o.manifest)
        .opt("--split", o.split)
        .opt("--ckpt", o.ckpt)
        .opt("--out", o.out)
        .opt_if("--model", o.model)
        .opt("--subset", o.subset)
        .print();

    const DatasetManifest manifest = load_manifest(require_file(o.manifest, "manifest"));
    const SplitSpec split = load_split(require_file(o.split, "split"));
    LoadedModel model = load_model_checkpoint(o.ckpt);
    if (!o.model.empty() && o.model != model.kind)
        throw ConfigError("--model " + o.model + " disagrees with the '" + model.kind +
                          "' checkpoint");

    const fs::path root = dataset_root(o.manifest);
    const auto& ids = (o.subset == "train") ? split.train_video_ids : split.test_video_ids;
    const auto samples = load_samples(manifest, root, ids, model.clip_len);

    std::size_t total = 0;
    for (const auto& s : samples) total += s.features.rows;
    const std::size_t num_classes = static_cast<std::size_t>(manifest.num_classes());
    Mat scores(total, num_classes);
    std::vector<int> labels;
    labels.reserve(total);
    std::size_t row = 0;
    for (const auto& s : samples) {
        const Mat logits = model.score(s.features);
        if (logits.cols != num_classes)
            throw ConfigError("checkpoint scores " + std::to_string(logits.cols) +
                              " classes but the manifest has " + std::to_string(num_classes));
        for (std::size_t t = 0; t < logits.rows; ++t, ++row)
            for (std::size_t k = 0; k < num_classes; ++k) scores(row, k) = logits(t, k);
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    }

    const std::string descriptor = to_string(split.scheme) + "/" + o.subset;
    const EvalReport report = build_report(descriptor, class_names(manifest), scores, labels);
    ensure_parent_dir(o.out);
    emit_report(report, o.out + ".json", ReportFormat::json);
    emit_report(report, o.out + ".csv", ReportFormat::csv);
    emit_report(report, o.out + ".md", ReportFormat::markdown_table);
    std::cout << "eval " << model.kind << " on " << descriptor << ": mAP " << fmt_rate(report.map)
              << ", accuracy " << fmt_rate(report.accuracy) << " (" << report.labeled_clips
              << " labeled clips) -> " << o.out << ".{json,csv,md}\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ordered-workflow activity recognition pipeline"};
    app.require_subcommand(1);
    const auto add_config = [](CLI::App* sub, std::string& target) {
        sub->add_option("--config", target, "JSON file of option defaults (explicit flags win)");
    };

    SynthOpts so;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic workflow dataset");
    add_config(synth, so.config);
    synth->add_option("--out", so.out, "output dataset directory (required)");
    synth->add_option("--cases", so.cases, "number of cases");
    synth->add_option("--views", so.views, "camera views per case");
    synth->add_option("--seed", so.seed, "generator seed")->envname("ORFLOW_SEED");
    synth->add_option("--profile", so.profile_path, "workflow profile JSON (default: built-in)");
    synth->add_flag("--pixel", so.pixel, "emit raw intensity videos instead of features");
    synth->add_option("--jobs", so.jobs, "worker threads for case generation");

    SplitOpts po;
    CLI::App* split = app.add_subcommand("split", "build a train/test split");
    add_config(split, po.config);
    split->add_option("--manifest", po.manifest, "dataset manifest (required)");
    split->add_option("--out", po.out, "output split JSON (required)");
    split->add_option("--scheme", po.scheme, "split scheme (required)")
        ->check(CLI::IsMember({"random", "room", "procedure", "surgeon"}));
    split->add_option("--train-frac", po.train_frac, "train fraction (random; default 0.8)");
    split->add_option("--test-frac", po.test_frac, "test fraction target (group schemes)");
    split->add_option("--train-rooms", po.train_rooms, "rooms held in train (room scheme)")
        ->delimiter(',');
    split->add_option("--test-groups", po.test_groups, "explicit held-out group values")
        ->delimiter(',');
    split->add_option("--seed", po.seed, "shuffle seed")->envname("ORFLOW_SEED");

    TrainClipOpts co;
    CLI::App* train_clip =
        app.add_subcommand("train_clip", "fine-tune the clip backbone on pixel data");
    add_config(train_clip, co.config);
    train_clip->add_option("--manifest", co.manifest, "dataset manifest (required)");
    train_clip->add_option("--split", co.split, "split JSON (required)");
    train_clip->add_option("--out", co.out, "output checkpoint (required)");
    train_clip->add_option("--epochs", co.epochs, "training epochs");
    train_clip->add_option("--lr", co.lr, "learning rate");
    train_clip->add_option("--optimizer", co.optimizer, "optimizer")
        ->check(CLI::IsMember({"adam", "sgd_momentum"}));
    train_clip->add_option("--seed", co.seed, "training seed")->envname("ORFLOW_SEED");
    train_clip->add_option("--clip-len", co.clip_len, "training clip length in frames");
    train_clip->add_option("--batch-size", co.batch_size, "clips per optimizer step");
    train_clip->add_option("--history", co.history, "write per-epoch history JSONL here");

    ExtractOpts xo;
    CLI::App* extract = app.add_subcommand("extract", "extract per-clip features");
    add_config(extract, xo.config);
    extract->add_option("--manifest", xo.manifest, "dataset manifest (required)");
    extract->add_option("--out", xo.out, "output dataset directory (required)");
    extract->add_option("--backbone", xo.backbone,
                        "backbone checkpoint (default: seed-initialized)");
    extract->add_option("--clip-len", xo.clip_len, "clip length in frames");
    extract->add_option("--seed", xo.seed, "backbone init seed when no checkpoint is given")
        ->envname("ORFLOW_SEED");
    extract->add_option("--jobs", xo.jobs, "worker threads for extraction");

    TrainSeqOpts to;
    CLI::App* train_seq =
        app.add_subcommand("train_seq", "train the sequence model or per-clip baseline");
    add_config(train_seq, to.config);
    train_seq->add_option("--manifest", to.manifest, "dataset manifest (required)");
    train_seq->add_option("--split", to.split, "split JSON (required)");
    train_seq->add_option("--out", to.out, "output checkpoint (required)");
    CLI::Option* model_opt = train_seq->add_option("--model", to.model, "model to train")
                                 ->check(CLI::IsMember({"sequence", "baseline"}));
    train_seq->add_option("--epochs", to.epochs, "total epochs (including any resumed)");
    train_seq->add_option("--lr", to.lr, "learning rate");
    train_seq->add_option("--optimizer", to.optimizer, "optimizer")
        ->check(CLI::IsMember({"adam", "sgd_momentum"}));
    train_seq->add_option("--seed", to.seed, "init + shuffle seed")->envname("ORFLOW_SEED");
    train_seq->add_option("--clip-len", to.clip_len, "clip length the features were built with");
    train_seq->add_option("--w-pre", to.w_pre, "pre-head loss weight");
    train_seq->add_option("--w-post", to.w_post, "post-head loss weight");
    train_seq->add_option("--grad-clip", to.grad_clip, "global gradient-norm clip");
    train_seq->add_option("--proj-dim", to.proj_dim, "channel projection width");
    train_seq->add_option("--tgm-layers", to.tgm_layers, "temporal mixture layers");
    train_seq->add_option("--kernel-length", to.kernel_length, "temporal kernel length (odd)");
    train_seq->add_option("--gaussians", to.gaussians, "mixture components per kernel");
    train_seq->add_option("--hidden", to.hidden, "recurrent hidden size");
    train_seq->add_flag("--unidirectional", to.unidirectional, "disable the backward pass");
    train_seq->add_option("--head-kernel", to.head_kernel, "classifier kernel length (odd)");
    train_seq->add_option("--lstm-input", to.lstm_input, "recurrent input")
        ->check(CLI::IsMember({"pre_logits", "concat_features"}));
    train_seq->add_option("--resume", to.resume,
                          "continue from this checkpoint (architecture comes from it)");
    train_seq->add_option("--history", to.history, "write per-epoch history JSONL here");

    EvalOpts eo;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_config(eval, eo.config);
    eval->add_option("--manifest", eo.manifest, "dataset manifest (required)");
    eval->add_option("--split", eo.split, "split JSON (required)");
    eval->add_option("--ckpt", eo.ckpt, "model checkpoint (required)");
    eval->add_option("--out", eo.out, "report path prefix (.json/.csv/.md appended; required)");
    eval->add_option("--model", eo.model, "expected model kind")
        ->check(CLI::IsMember({"sequence", "baseline"}));
    eval->add_option("--subset", eo.subset, "split side to evaluate")
        ->check(CLI::IsMember({"test", "train"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    // config files fill in unset options, then mandatory values are enforced
    struct SubSpec {
        CLI::App* sub;
        const std::string* config;
        std::vector<std::string> required;
    };
    const std::vector<SubSpec> specs = {
        {synth, &so.config, {"--out"}},
        {split, &po.config, {"--manifest", "--out", "--scheme"}},
        {train_clip, &co.config, {"--manifest", "--split", "--out"}},
        {extract, &xo.config, {"--manifest", "--out"}},
        {train_seq, &to.config, {"--manifest", "--split", "--out"}},
        {eval, &eo.config, {"--manifest", "--split", "--ckpt", "--out"}},
    };
    try {
        for (const SubSpec& spec : specs)
            if (spec.sub->parsed()) {
                apply_json_config(spec.sub, *spec.config);
                check_required(spec.sub, spec.required);
            }
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\nRun with --help for more information.\n";
        return 2;
    }
    to.model_given = model_opt->count() > 0;

    try {
        if (synth->parsed()) return cmd_synth(so);
        if (split->parsed()) return cmd_split(po);
        if (train_clip->parsed()) return cmd_train_clip(co);
        if (extract->parsed()) return cmd_extract(xo);
        if (train_seq->parsed()) return cmd_train_seq(to);
        if (eval->parsed()) return cmd_eval(eo);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
