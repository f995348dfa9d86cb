#include "orflow/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace orflow {

using nlohmann::json;

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd_momentum") return OptimizerKind::sgd_momentum;
    throw ConfigError("unknown optimizer: '" + name + "'");
}

void save_history_jsonl(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write history: " + path.string());
    for (const auto& r : history.records) {
        json j{{"epoch", r.epoch}, {"loss", r.loss}, {"loss_pre", r.loss_pre},
               {"loss_post", r.loss_post}};
        if (r.train_accuracy) j["train_accuracy"] = *r.train_accuracy;
        if (r.eval_map) j["eval_map"] = *r.eval_map;
        out << j.dump() << "\n";
    }
}

double cross_entropy(const double* logits, std::size_t num_classes, int target) {
    if (target == kBackgroundClass) return 0.0;
    if (target < 0 || static_cast<std::size_t>(target) >= num_classes)
        throw std::invalid_argument("cross_entropy: target " + std::to_string(target) +
                                    " outside [0, " + std::to_string(num_classes) + ")");
    for (std::size_t k = 0; k < num_classes; ++k)
        if (!std::isfinite(logits[k])) throw NumericError("cross_entropy: non-finite logits");
    return logsumexp(logits, num_classes) - logits[target];
}

double mean_cross_entropy(const Mat& logits, const std::vector<int>& targets, double weight,
                          Mat* grad_accum) {
    if (targets.size() != logits.rows)
        throw std::invalid_argument("mean_cross_entropy: labels/logits length mismatch");
    std::size_t labeled = 0;
    for (int t : targets)
        if (t != kBackgroundClass) ++labeled;
    if (labeled == 0) return 0.0;

    double total = 0.0;
    const double scale = weight / static_cast<double>(labeled);
    std::vector<double> probs(logits.cols);
    for (std::size_t t = 0; t < logits.rows; ++t) {
        const int target = targets[t];
        if (target == kBackgroundClass) continue;
        const double* row = logits.row_const(t);
        total += cross_entropy(row, logits.cols, target);
        if (grad_accum) {
            std::copy(row, row + logits.cols, probs.begin());
            softmax_inplace(probs.data(), probs.size());
            double* g = grad_accum->row(t);
            for (std::size_t k = 0; k < logits.cols; ++k) g[k] += scale * probs[k];
            g[target] -= scale;
        }
    }
    return total / static_cast<double>(labeled);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

namespace {
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kMomentum = 0.9;
}  // namespace

Optimizer::Optimizer(std::vector<Param*> params, const TrainConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg.learning_rate <= 0.0) throw ConfigError("optimizer: learning_rate must be > 0");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->size(), 0.0);
        if (cfg_.optimizer == OptimizerKind::adam) v_[i].assign(params_[i]->size(), 0.0);
    }
}

void Optimizer::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

void Optimizer::step() {
    if (cfg_.grad_clip_norm) {
        double sq = 0.0;
        for (Param* p : params_)
            for (double g : p->grad.data) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > *cfg_.grad_clip_norm && norm > 0.0) {
            const double scale = *cfg_.grad_clip_norm / norm;
            for (Param* p : params_)
                for (double& g : p->grad.data) g *= scale;
        }
    }
    ++t_;
    const double lr = cfg_.learning_rate;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        if (cfg_.optimizer == OptimizerKind::adam) {
            const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
            const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double g = p.grad.data[k];
                m_[i][k] = kAdamBeta1 * m_[i][k] + (1.0 - kAdamBeta1) * g;
                v_[i][k] = kAdamBeta2 * v_[i][k] + (1.0 - kAdamBeta2) * g * g;
                const double mhat = m_[i][k] / c1;
                const double vhat = v_[i][k] / c2;
                p.value.data[k] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
            }
        } else {
            for (std::size_t k = 0; k < p.size(); ++k) {
                m_[i][k] = kMomentum * m_[i][k] + p.grad.data[k];
                p.value.data[k] -= lr * m_[i][k];
            }
        }
    }
}

std::vector<std::pair<std::string, Mat>> Optimizer::export_state() const {
    std::vector<std::pair<std::string, Mat>> out;
    Mat t(1, 1);
    t.data[0] = static_cast<double>(t_);
    out.emplace_back("opt.t", std::move(t));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Mat m(1, m_[i].size());
        m.data = m_[i];
        out.emplace_back("opt.m." + params_[i]->name, std::move(m));
        if (cfg_.optimizer == OptimizerKind::adam) {
            Mat v(1, v_[i].size());
            v.data = v_[i];
            out.emplace_back("opt.v." + params_[i]->name, std::move(v));
        }
    }
    return out;
}

void Optimizer::import_state(const std::vector<std::pair<std::string, Mat>>& tensors) {
    auto find = [&](const std::string& name) -> const Mat* {
        for (const auto& [n, m] : tensors)
            if (n == name) return &m;
        return nullptr;
    };
    const Mat* t = find("opt.t");
    if (!t) throw ConfigError("optimizer state: missing step count 'opt.t'");
    t_ = static_cast<std::size_t>(t->data[0]);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Mat* m = find("opt.m." + params_[i]->name);
        if (!m || m->data.size() != m_[i].size())
            throw ConfigError("optimizer state: bad moment buffer for '" + params_[i]->name + "'");
        m_[i] = m->data;
        if (cfg_.optimizer == OptimizerKind::adam) {
            const Mat* v = find("opt.v." + params_[i]->name);
            if (!v || v->data.size() != v_[i].size())
                throw ConfigError("optimizer state: bad moment buffer for '" +
                                  params_[i]->name + "'");
            v_[i] = v->data;
        }
    }
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

void check_train_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (cfg.learning_rate <= 0.0) throw ConfigError("train: learning_rate must be > 0");
    if (cfg.w_pre < 0.0 || cfg.w_post < 0.0 || (cfg.w_pre == 0.0 && cfg.w_post == 0.0))
        throw ConfigError("train: loss weights must be >= 0 and not both 0");
}

std::vector<Mat> snapshot(const std::vector<Param*>& params) {
    std::vector<Mat> out;
    out.reserve(params.size());
    for (Param* p : params) out.push_back(p->value);
    return out;
}

void restore(const std::vector<Param*>& params, const std::vector<Mat>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(
                                  0, static_cast<std::int64_t>(i) - 1))]);
}

// Shared epoch driver for the two whole-video trainers; `step_video` runs
// forward+backward for one sample and reports (pre, post) loss terms.
TrainHistory run_video_epochs(
    const std::vector<Param*>& params, const std::vector<SequenceSample>& samples,
    const TrainConfig& cfg, Optimizer& opt,
    const std::function<std::pair<double, double>(const SequenceSample&)>& step_video) {
    if (samples.empty()) throw std::invalid_argument("train: no training samples");
    check_train_config(cfg);
    for (const auto& s : samples)
        if (s.labels.size() != s.features.rows)
            throw std::invalid_argument("train: video '" + s.video_id +
                                        "' labels/features length mismatch");

    TrainHistory history;
    std::vector<std::size_t> order(samples.size());

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const std::size_t epoch = cfg.epoch_offset + e;
        const auto snap = snapshot(params);
        Rng rng = Rng::derived(cfg.seed, epoch + 1);
        // reset to identity so the permutation is a pure function of
        // (seed, epoch) and a resumed run visits videos in the same order
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_indices(order, rng);

        double sum_pre = 0.0, sum_post = 0.0;
        for (std::size_t i : order) {
            opt.zero_grad();
            std::pair<double, double> losses;
            try {
                losses = step_video(samples[i]);
            } catch (const NumericError&) {
                losses = {std::numeric_limits<double>::quiet_NaN(), 0.0};
            }
            if (!std::isfinite(losses.first) || !std::isfinite(losses.second)) {
                restore(params, snap);
                throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) +
                                    " on video '" + samples[i].video_id +
                                    "'; parameters restored to last epoch start");
            }
            opt.step();
            sum_pre += losses.first;
            sum_post += losses.second;
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.loss_pre = sum_pre / static_cast<double>(samples.size());
        rec.loss_post = sum_post / static_cast<double>(samples.size());
        rec.loss = cfg.w_pre * rec.loss_pre + cfg.w_post * rec.loss_post;
        history.records.push_back(rec);
    }
    return history;
}

}  // namespace

TrainHistory sequence_fit(SequenceModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg) {
    Optimizer opt(model.params(), cfg);
    return sequence_fit(model, samples, cfg, opt);
}

TrainHistory sequence_fit(SequenceModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg, Optimizer& opt) {
    for (const auto& s : samples)
        if (s.features.cols != model.config().feature_dim)
            throw ConfigError("train: video '" + s.video_id + "' feature dim " +
                              std::to_string(s.features.cols) + " != model feature_dim " +
                              std::to_string(model.config().feature_dim));
    return run_video_epochs(
        model.params(), samples, cfg, opt, [&](const SequenceSample& s) {
            const SequenceOutputs out = model.forward(s.features);
            Mat dpre(out.pre_logits.rows, out.pre_logits.cols);
            Mat dpost(out.post_logits.rows, out.post_logits.cols);
            const double lp = mean_cross_entropy(out.pre_logits, s.labels, cfg.w_pre, &dpre);
            const double lpost = mean_cross_entropy(out.post_logits, s.labels, cfg.w_post, &dpost);
            model.backward(dpre, dpost);
            return std::make_pair(lp, lpost);
        });
}

TrainHistory baseline_fit(BaselineModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg) {
    Optimizer opt(model.params(), cfg);
    return baseline_fit(model, samples, cfg, opt);
}

TrainHistory baseline_fit(BaselineModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg, Optimizer& opt) {
    return run_video_epochs(
        model.params(), samples, cfg, opt, [&](const SequenceSample& s) {
            const Mat logits = model.forward(s.features);
            Mat dlogits(logits.rows, logits.cols);
            const double loss = mean_cross_entropy(logits, s.labels, cfg.w_post, &dlogits);
            model.backward(dlogits);
            return std::make_pair(0.0, loss);
        });
}

TrainHistory clip_fit(ToyBackbone& backbone, const DatasetManifest& manifest,
                      const std::vector<std::string>& train_video_ids, std::int64_t clip_len,
                      const std::function<ClipTensor(const TrainingClip&)>& load_clip,
                      const TrainConfig& cfg) {
    check_train_config(cfg);
    if (cfg.clip_batch_size < 1) throw ConfigError("train: clip_batch_size must be >= 1");

    const auto params = backbone.params();
    Optimizer opt(params, cfg);
    TrainHistory history;

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const std::size_t epoch = cfg.epoch_offset + e;
        const auto snap = snapshot(params);
        Rng rng = Rng::derived(cfg.seed, epoch + 1);
        auto clips = epoch_training_set(manifest, train_video_ids, clip_len, rng);
        if (clips.empty()) throw std::invalid_argument("train: no training clips");
        std::vector<std::size_t> order(clips.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_indices(order, rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        opt.zero_grad();
        std::size_t in_batch = 0;
        for (std::size_t n = 0; n < order.size(); ++n) {
            const TrainingClip& clip = clips[order[n]];
            const ClipTensor tensor = load_clip(clip);
            ToyBackbone::Output out;
            double loss = std::numeric_limits<double>::quiet_NaN();
            try {
                out = backbone.forward(tensor);
                loss = cross_entropy(out.logits.data(), out.logits.size(), clip.class_id);
            } catch (const NumericError&) {
            }
            if (!std::isfinite(loss)) {
                restore(params, snap);
                throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) +
                                    "; parameters restored to last epoch start");
            }
            loss_sum += loss;
            const auto pred = std::max_element(out.logits.begin(), out.logits.end()) -
                              out.logits.begin();
            if (static_cast<int>(pred) == clip.class_id) ++correct;

            std::vector<double> dlogits(out.logits);
            softmax_inplace(dlogits.data(), dlogits.size());
            dlogits[static_cast<std::size_t>(clip.class_id)] -= 1.0;
            const double scale = 1.0 / static_cast<double>(cfg.clip_batch_size);
            for (double& g : dlogits) g *= scale;
            backbone.backward(dlogits);

            if (++in_batch == cfg.clip_batch_size || n + 1 == order.size()) {
                opt.step();
                opt.zero_grad();
                in_batch = 0;
            }
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.loss = loss_sum / static_cast<double>(clips.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(clips.size());
        history.records.push_back(rec);
    }
    return history;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'O', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCkptVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
        throw FormatError("corrupt checkpoint (truncated): " + path);
    return v;
}

std::string read_str(std::istream& in, std::size_t n, const std::string& path) {
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n)))
        throw FormatError("corrupt checkpoint (truncated): " + path);
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const std::vector<Param*>& params,
                     const std::vector<std::pair<std::string, Mat>>& extra_tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write(kCkptMagic, 8);
    write_u32(out, kCkptVersion);
    write_u32(out, static_cast<std::uint32_t>(config_json.size()));
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_u32(out, static_cast<std::uint32_t>(params.size() + extra_tensors.size()));
    auto write_tensor = [&](const std::string& name, const Mat& value) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(value.rows));
        write_u32(out, static_cast<std::uint32_t>(value.cols));
        out.write(reinterpret_cast<const char*>(value.data.data()),
                  static_cast<std::streamsize>(value.data.size() * sizeof(double)));
    };
    for (const Param* p : params) write_tensor(p->name, p->value);
    for (const auto& [name, value] : extra_tensors) write_tensor(name, value);
    if (!out) throw std::runtime_error("short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw FormatError("not a checkpoint file: " + path.string());
    const std::uint32_t version = read_u32(in, path.string());
    if (version != kCkptVersion)
        throw FormatError("checkpoint " + path.string() + " has version " +
                          std::to_string(version) + ", expected " + std::to_string(kCkptVersion));
    Checkpoint ckpt;
    const std::uint32_t cfg_len = read_u32(in, path.string());
    ckpt.config_json = read_str(in, cfg_len, path.string());
    const std::uint32_t n = read_u32(in, path.string());
    ckpt.tensors.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t name_len = read_u32(in, path.string());
        std::string name = read_str(in, name_len, path.string());
        const std::uint32_t rows = read_u32(in, path.string());
        const std::uint32_t cols = read_u32(in, path.string());
        Mat m(rows, cols);
        if (!in.read(reinterpret_cast<char*>(m.data.data()),
                     static_cast<std::streamsize>(m.data.size() * sizeof(double))))
            throw FormatError("corrupt checkpoint (truncated tensor '" + name + "'): " +
                              path.string());
        ckpt.tensors.emplace_back(std::move(name), std::move(m));
    }
    return ckpt;
}

void restore_params(const Checkpoint& ckpt, const std::vector<Param*>& params) {
    for (Param* p : params) {
        const Mat* found = nullptr;
        for (const auto& [name, m] : ckpt.tensors)
            if (name == p->name) {
                found = &m;
                break;
            }
        if (!found) throw ConfigError("checkpoint is missing parameter '" + p->name + "'");
        if (found->rows != p->value.rows || found->cols != p->value.cols)
            throw ConfigError("checkpoint parameter '" + p->name + "' is " +
                              std::to_string(found->rows) + "x" + std::to_string(found->cols) +
                              ", model expects " + std::to_string(p->value.rows) + "x" +
                              std::to_string(p->value.cols));
        p->value = *found;
    }
}

}  // namespace orflow
