#include "orflow/backbone.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace orflow {

static_assert(std::endian::native == std::endian::little,
              "feature/video file I/O assumes a little-endian host");

namespace {

constexpr char kFeatMagic[8] = {'O', 'R', 'F', 'E', 'A', 'T', '0', '1'};
constexpr char kVidMagic[8] = {'O', 'R', 'V', 'I', 'D', '0', '0', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path, const char* what) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
        throw FormatError(path + ": truncated " + what);
    return v;
}

void check_magic(std::istream& in, const char (&magic)[8], const std::string& path) {
    char buf[8];
    if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0)
        throw FormatError(path + ": bad magic, not a " + std::string(magic, 8) + " file");
}

}  // namespace

void save_feature_file(const std::filesystem::path& path, const Mat& features) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write feature file: " + path.string());
    out.write(kFeatMagic, 8);
    write_u32(out, static_cast<std::uint32_t>(features.rows));
    write_u32(out, static_cast<std::uint32_t>(features.cols));
    std::vector<float> buf(features.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(features.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw std::runtime_error("short write: " + path.string());
}

Mat load_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open feature file: " + path.string());
    check_magic(in, kFeatMagic, path.string());
    const std::uint32_t T = read_u32(in, path.string(), "header");
    const std::uint32_t D = read_u32(in, path.string(), "header");
    std::vector<float> buf(static_cast<std::size_t>(T) * D);
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float))))
        throw FormatError(path.string() + ": truncated payload, expected " +
                          std::to_string(buf.size()) + " floats");
    // Anything left over means the header disagrees with the payload.
    char extra;
    if (in.read(&extra, 1))
        throw FormatError(path.string() + ": payload longer than header T*D");
    Mat m(T, D);
    for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = static_cast<double>(buf[i]);
    return m;
}

void save_feature_index(const std::filesystem::path& path,
                        const std::map<std::string, std::string>& index) {
    nlohmann::json j(index);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write feature index: " + path.string());
    out << j.dump(2) << "\n";
}

std::map<std::string, std::string> load_feature_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open feature index: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("feature index " + path.string() + ": " + e.what());
    }
    return j.get<std::map<std::string, std::string>>();
}

void save_pixel_video(const std::filesystem::path& path, const PixelVideo& video) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write video file: " + path.string());
    out.write(kVidMagic, 8);
    write_u32(out, static_cast<std::uint32_t>(video.num_frames));
    write_u32(out, static_cast<std::uint32_t>(video.height));
    write_u32(out, static_cast<std::uint32_t>(video.width));
    out.write(reinterpret_cast<const char*>(video.data.data()),
              static_cast<std::streamsize>(video.data.size()));
    if (!out) throw std::runtime_error("short write: " + path.string());
}

PixelVideo load_pixel_video(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open video file: " + path.string());
    check_magic(in, kVidMagic, path.string());
    PixelVideo v;
    v.num_frames = read_u32(in, path.string(), "header");
    v.height = read_u32(in, path.string(), "header");
    v.width = read_u32(in, path.string(), "header");
    v.data.resize(static_cast<std::size_t>(v.num_frames) * v.height * v.width);
    if (!in.read(reinterpret_cast<char*>(v.data.data()),
                 static_cast<std::streamsize>(v.data.size())))
        throw FormatError(path.string() + ": truncated frames payload");
    return v;
}

ClipTensor clip_from_video(const PixelVideo& video, ClipRange range, std::size_t target_frames) {
    if (range.length < 1 || range.start < 0 || range.start + range.length > video.num_frames)
        throw std::invalid_argument("clip range outside video");
    if (target_frames < 1) throw std::invalid_argument("target_frames must be >= 1");
    ClipTensor clip(target_frames, video.height, video.width);
    const std::size_t frame_px = video.height * video.width;
    for (std::size_t f = 0; f < target_frames; ++f) {
        const std::int64_t src =
            range.start + static_cast<std::int64_t>(f) % range.length;
        const std::uint8_t* s = video.data.data() + static_cast<std::size_t>(src) * frame_px;
        double* d = clip.data.data() + f * frame_px;
        for (std::size_t i = 0; i < frame_px; ++i) d[i] = static_cast<double>(s[i]) / 127.5 - 1.0;
    }
    return clip;
}

// ---------------------------------------------------------------------------
// Toy backbone
// ---------------------------------------------------------------------------

std::string backbone_config_to_json(const ToyBackboneConfig& cfg) {
    nlohmann::json j{{"input_size", cfg.input_size},
                     {"channels", cfg.channels},
                     {"num_classes", cfg.num_classes}};
    return j.dump();
}

ToyBackboneConfig backbone_config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ToyBackboneConfig cfg;
    cfg.input_size = j.at("input_size").get<std::size_t>();
    const auto ch = j.at("channels").get<std::vector<std::size_t>>();
    if (ch.size() != 3) throw ConfigError("backbone config: channels must list 3 stages");
    cfg.channels = {ch[0], ch[1], ch[2]};
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    return cfg;
}

namespace {

// Channel-major activation volume.
struct Vol {
    std::size_t c = 0, f = 0, h = 0, w = 0;
    std::vector<double> data;

    Vol() = default;
    Vol(std::size_t c_, std::size_t f_, std::size_t h_, std::size_t w_)
        : c(c_), f(f_), h(h_), w(w_), data(c_ * f_ * h_ * w_, 0.0) {}

    double* plane(std::size_t ci, std::size_t fi) {
        return data.data() + ((ci * f + fi) * h) * w;
    }
    const double* plane(std::size_t ci, std::size_t fi) const {
        return data.data() + ((ci * f + fi) * h) * w;
    }
};

// 3x3x3 convolution, stride 1 temporal / 2 spatial, zero padding 1, tanh.
struct ConvStage {
    Param weight;  // C_out x (C_in*27), w[o, ((ci*3+kf)*3+ky)*3+kx]
    Param bias;    // C_out x 1
    std::size_t c_in, c_out;
    Vol input;       // cached
    Vol activation;  // cached tanh output

    ConvStage(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(name + ".weight", out, in * 27), bias(name + ".bias", out, 1), c_in(in), c_out(out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in * 27));
        for (double& v : weight.value.data) v = rng.uniform(-bound, bound);
    }

    Vol forward(const Vol& x) {
        input = x;
        const std::size_t fo = x.f;                 // stride 1, pad 1
        const std::size_t ho = (x.h + 1) / 2;       // stride 2, pad 1
        const std::size_t wo = (x.w + 1) / 2;
        activation = Vol(c_out, fo, ho, wo);
        for (std::size_t o = 0; o < c_out; ++o) {
            const double* wrow = weight.value.row(o);
            for (std::size_t f = 0; f < fo; ++f)
                for (std::size_t y = 0; y < ho; ++y)
                    for (std::size_t xw = 0; xw < wo; ++xw) {
                        double acc = bias.value.data[o];
                        for (std::size_t ci = 0; ci < c_in; ++ci)
                            for (int kf = 0; kf < 3; ++kf) {
                                const std::ptrdiff_t sf =
                                    static_cast<std::ptrdiff_t>(f) + kf - 1;
                                if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(x.f)) continue;
                                const double* pl = x.plane(ci, static_cast<std::size_t>(sf));
                                for (int ky = 0; ky < 3; ++ky) {
                                    const std::ptrdiff_t sy =
                                        static_cast<std::ptrdiff_t>(2 * y) + ky - 1;
                                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(x.h)) continue;
                                    for (int kx = 0; kx < 3; ++kx) {
                                        const std::ptrdiff_t sx =
                                            static_cast<std::ptrdiff_t>(2 * xw) + kx - 1;
                                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(x.w))
                                            continue;
                                        acc += wrow[((ci * 3 + kf) * 3 + ky) * 3 + kx] *
                                               pl[sy * static_cast<std::ptrdiff_t>(x.w) + sx];
                                    }
                                }
                            }
                        activation.plane(o, f)[y * wo + xw] = std::tanh(acc);
                    }
        }
        return activation;
    }

    Vol backward(const Vol& dact) {
        const Vol& x = input;
        Vol dx(x.c, x.f, x.h, x.w);
        const std::size_t fo = dact.f, ho = dact.h, wo = dact.w;
        for (std::size_t o = 0; o < c_out; ++o) {
            const double* wrow = weight.value.row(o);
            double* dwrow = weight.grad.row(o);
            for (std::size_t f = 0; f < fo; ++f) {
                const double* ap = activation.plane(o, f);
                const double* dp = dact.plane(o, f);
                for (std::size_t y = 0; y < ho; ++y)
                    for (std::size_t xw = 0; xw < wo; ++xw) {
                        const double a = ap[y * wo + xw];
                        const double g = dp[y * wo + xw] * (1.0 - a * a);  // through tanh
                        if (g == 0.0) continue;
                        bias.grad.data[o] += g;
                        for (std::size_t ci = 0; ci < c_in; ++ci)
                            for (int kf = 0; kf < 3; ++kf) {
                                const std::ptrdiff_t sf =
                                    static_cast<std::ptrdiff_t>(f) + kf - 1;
                                if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(x.f)) continue;
                                const double* pl = x.plane(ci, static_cast<std::size_t>(sf));
                                double* dpl = dx.plane(ci, static_cast<std::size_t>(sf));
                                for (int ky = 0; ky < 3; ++ky) {
                                    const std::ptrdiff_t sy =
                                        static_cast<std::ptrdiff_t>(2 * y) + ky - 1;
                                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(x.h)) continue;
                                    for (int kx = 0; kx < 3; ++kx) {
                                        const std::ptrdiff_t sx =
                                            static_cast<std::ptrdiff_t>(2 * xw) + kx - 1;
                                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(x.w))
                                            continue;
                                        const std::size_t wi = ((ci * 3 + kf) * 3 + ky) * 3 + kx;
                                        const std::ptrdiff_t pi =
                                            sy * static_cast<std::ptrdiff_t>(x.w) + sx;
                                        dwrow[wi] += g * pl[pi];
                                        dpl[pi] += g * wrow[wi];
                                    }
                                }
                            }
                    }
            }
        }
        return dx;
    }
};

}  // namespace

struct ToyBackbone::Impl {
    std::vector<ConvStage> stages;
    Linear head;
    Vol pooled_src;  // stage-3 activations of the last forward
    std::vector<double> feature;

    Impl(const ToyBackboneConfig& cfg, Rng& rng)
        : head("backbone.head", cfg.feature_dim(), cfg.num_classes, rng) {
        stages.reserve(3);
        stages.emplace_back("backbone.stage0", 1, cfg.channels[0], rng);
        stages.emplace_back("backbone.stage1", cfg.channels[0], cfg.channels[1], rng);
        stages.emplace_back("backbone.stage2", cfg.channels[1], cfg.channels[2], rng);
    }
};

ToyBackbone::ToyBackbone(const ToyBackboneConfig& cfg, Rng& rng)
    : cfg_(cfg), impl_(std::make_unique<Impl>(cfg, rng)) {
    if (cfg.input_size < 8) throw ConfigError("backbone: input_size must be >= 8");
    if (cfg.num_classes < 2) throw ConfigError("backbone: num_classes must be >= 2");
    for (auto c : cfg.channels)
        if (c < 1) throw ConfigError("backbone: channel counts must be >= 1");
}

ToyBackbone::~ToyBackbone() = default;
ToyBackbone::ToyBackbone(ToyBackbone&&) noexcept = default;
ToyBackbone& ToyBackbone::operator=(ToyBackbone&&) noexcept = default;

std::vector<Param*> ToyBackbone::params() {
    std::vector<Param*> out;
    for (auto& s : impl_->stages) {
        out.push_back(&s.weight);
        out.push_back(&s.bias);
    }
    auto h = impl_->head.params();
    out.insert(out.end(), h.begin(), h.end());
    return out;
}

ToyBackbone::Output ToyBackbone::forward(const ClipTensor& clip) {
    if (clip.height != cfg_.input_size || clip.width != cfg_.input_size)
        throw ConfigError("backbone: clip is " + std::to_string(clip.height) + "x" +
                          std::to_string(clip.width) + ", configured input_size is " +
                          std::to_string(cfg_.input_size));
    if (clip.frames < 1) throw std::invalid_argument("backbone: empty clip");

    Vol x(1, clip.frames, clip.height, clip.width);
    x.data = clip.data;
    for (auto& stage : impl_->stages) x = stage.forward(x);
    impl_->pooled_src = x;

    const std::size_t D = cfg_.feature_dim();
    const std::size_t per_chan = x.f * x.h * x.w;
    impl_->feature.assign(D, 0.0);
    for (std::size_t c = 0; c < D; ++c) {
        const double* base = x.data.data() + c * per_chan;
        double acc = 0.0;
        for (std::size_t i = 0; i < per_chan; ++i) acc += base[i];
        impl_->feature[c] = acc / static_cast<double>(per_chan);
    }

    Mat frow(1, D);
    std::copy(impl_->feature.begin(), impl_->feature.end(), frow.data.begin());
    const Mat logits = impl_->head.forward(frow);
    for (double v : logits.data)
        if (!std::isfinite(v)) throw std::runtime_error("backbone: non-finite activations");

    Output out;
    out.feature = impl_->feature;
    out.logits.assign(logits.data.begin(), logits.data.end());
    return out;
}

void ToyBackbone::backward(const std::vector<double>& dlogits) {
    const std::size_t K = cfg_.num_classes;
    if (dlogits.size() != K) throw std::invalid_argument("backbone: dlogits size mismatch");
    Mat dl(1, K);
    std::copy(dlogits.begin(), dlogits.end(), dl.data.begin());
    const Mat dfeat = impl_->head.backward(dl);

    const Vol& top = impl_->pooled_src;
    const std::size_t per_chan = top.f * top.h * top.w;
    Vol dtop(top.c, top.f, top.h, top.w);
    for (std::size_t c = 0; c < top.c; ++c) {
        const double g = dfeat.data[c] / static_cast<double>(per_chan);
        double* base = dtop.data.data() + c * per_chan;
        std::fill(base, base + per_chan, g);
    }
    Vol d = dtop;
    for (std::size_t i = impl_->stages.size(); i-- > 0;) d = impl_->stages[i].backward(d);
}

FeatureSequence extract_features(const PixelVideo& video, const std::string& video_id,
                                 ToyBackbone& backbone, std::int64_t clip_len) {
    const auto clips = partition_uniform(video.num_frames, clip_len);
    FeatureSequence seq;
    seq.video_id = video_id;
    seq.clip_len = clip_len;
    seq.features = Mat(clips.size(), backbone.feature_dim());
    for (std::size_t t = 0; t < clips.size(); ++t) {
        const ClipTensor clip =
            clip_from_video(video, clips[t], static_cast<std::size_t>(clip_len));
        const auto out = backbone.forward(clip);
        std::copy(out.feature.begin(), out.feature.end(), seq.features.row(t));
    }
    return seq;
}

}  // namespace orflow
