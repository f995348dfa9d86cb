#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "orflow/ndarray.hpp"

namespace orflow {

// Per-class confusion counts over clip-level argmax predictions; positions
// with true label -1 are excluded entirely.
struct ConfusionCounts {
    std::vector<std::int64_t> tp, fp, fn;
    std::int64_t labeled_clips = 0;

    std::size_t num_classes() const { return tp.size(); }
};

ConfusionCounts count_confusion(const std::vector<int>& pred_labels,
                                const std::vector<int>& true_labels, std::size_t num_classes);

struct ClassPRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;  // positives in truth
    bool no_support = false;   // class absent from truth and predictions
};

// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); 0 on division by zero.
std::vector<ClassPRF> precision_recall_f1(const std::vector<int>& pred_labels,
                                          const std::vector<int>& true_labels,
                                          std::size_t num_classes);

// Fraction of labeled clips predicted exactly right.
double micro_accuracy(const ConfusionCounts& counts);

// Non-interpolated average precision: rank by descending score (ties by
// original index ascending), AP = mean over positives of precision at each
// positive's rank. Requires at least one positive.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives);

struct MeanApResult {
    std::vector<double> per_class_ap;  // meaningful where has_positives
    std::vector<bool> has_positives;
    double map = 0.0;
};

// Softmaxes each score row, then scores class c's clips by probability column
// c with positives = clips labeled c. Classes without positives are excluded
// from the mean; labels of -1 count as negatives everywhere. Errors if no
// class has a positive.
MeanApResult mean_ap(const Mat& class_scores, const std::vector<int>& true_labels);

struct EvalReport {
    std::string split_descriptor;
    std::vector<std::string> class_names;
    std::vector<ClassPRF> prf;        // per class
    std::vector<double> ap;           // per class; valid where ap_valid
    std::vector<bool> ap_valid;
    double map = 0.0;
    double accuracy = 0.0;
    std::int64_t total_clips = 0;
    std::int64_t labeled_clips = 0;
};

enum class ReportFormat { json, csv, markdown_table };

// Builds the full report from per-clip scores and labels.
EvalReport build_report(const std::string& split_descriptor,
                        const std::vector<std::string>& class_names, const Mat& class_scores,
                        const std::vector<int>& true_labels);

void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport load_report_json(const std::filesystem::path& path);

}  // namespace orflow
