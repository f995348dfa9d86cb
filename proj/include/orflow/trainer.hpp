#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "orflow/backbone.hpp"
#include "orflow/clipper.hpp"
#include "orflow/ndarray.hpp"
#include "orflow/nn.hpp"
#include "orflow/seqmodel.hpp"
#include "orflow/types.hpp"

namespace orflow {

enum class OptimizerKind { sgd_momentum, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 1;  // epochs to run in this call
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 0;
    std::optional<double> grad_clip_norm;
    double w_pre = 1.0;   // dual-loss weights
    double w_post = 1.0;
    std::size_t clip_batch_size = 16;  // clip_fit only; sequence training steps per video
    // Epochs already completed before this call (resume): shuffle streams and
    // recorded epoch numbers continue from here, so a resumed run replays the
    // uninterrupted schedule.
    std::size_t epoch_offset = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;      // mean total loss over optimizer steps
    double loss_pre = 0.0;  // mean pre-head term (sequence training)
    double loss_post = 0.0;
    std::optional<double> train_accuracy;  // clip training
    std::optional<double> eval_map;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
};

void save_history_jsonl(const TrainHistory& history, const std::filesystem::path& path);

// Negative log-likelihood of `target` under softmax(logits); target -1
// (background) contributes 0. Throws on non-finite logits.
double cross_entropy(const double* logits, std::size_t num_classes, int target);

// Mean CE over rows with target != -1 (0 if none are labeled). When
// grad_accum is non-null, adds weight * d(meanCE)/dlogits into it.
double mean_cross_entropy(const Mat& logits, const std::vector<int>& targets,
                          double weight = 1.0, Mat* grad_accum = nullptr);

// Flat-parameter optimizer over accumulated grads.
class Optimizer {
  public:
    Optimizer(std::vector<Param*> params, const TrainConfig& cfg);

    void zero_grad();
    void step();

    // Moment buffers and step count as named tensors ("opt.*"), for storing
    // in checkpoints so a resumed run continues bit-exactly.
    std::vector<std::pair<std::string, Mat>> export_state() const;
    void import_state(const std::vector<std::pair<std::string, Mat>>& tensors);

  private:
    std::vector<Param*> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_;  // adam first moment / sgd momentum buffer
    std::vector<std::vector<double>> v_;  // adam second moment
    std::size_t t_ = 0;
};

// One untrimmed training video: per-clip features and labels.
struct SequenceSample {
    std::string video_id;
    Mat features;             // T x D
    std::vector<int> labels;  // length T, -1 = background
};

// Full-video training with the dual-head loss, one optimizer step per video,
// videos shuffled per epoch by cfg.seed. Throws TrainingError (with
// parameters restored to the last epoch start) if the loss goes non-finite.
// The Optimizer overloads continue with caller-held state (resume).
TrainHistory sequence_fit(SequenceModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg);
TrainHistory sequence_fit(SequenceModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg, Optimizer& opt);

// Same driver for the per-clip baseline (single head; w_pre ignored).
TrainHistory baseline_fit(BaselineModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg);
TrainHistory baseline_fit(BaselineModel& model, const std::vector<SequenceSample>& samples,
                          const TrainConfig& cfg, Optimizer& opt);

// Clip-classification fine-tuning of the toy backbone. Every epoch draws a
// fresh epoch_training_set (one random clip per segment) and steps once per
// mini-batch of cfg.clip_batch_size clips. `load_clip` materializes a
// normalized fixed-length tensor for a sampled clip.
TrainHistory clip_fit(ToyBackbone& backbone, const DatasetManifest& manifest,
                      const std::vector<std::string>& train_video_ids, std::int64_t clip_len,
                      const std::function<ClipTensor(const TrainingClip&)>& load_clip,
                      const TrainConfig& cfg);

// Versioned binary checkpoint: every parameter array by name plus an opaque
// model-config JSON blob.
struct Checkpoint {
    std::string config_json;
    std::vector<std::pair<std::string, Mat>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const std::vector<Param*>& params,
                     const std::vector<std::pair<std::string, Mat>>& extra_tensors = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into params, matching by name; every param must
// be present with identical shape.
void restore_params(const Checkpoint& ckpt, const std::vector<Param*>& params);

}  // namespace orflow
