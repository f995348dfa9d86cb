#include "orflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "orflow/nn.hpp"
#include "orflow/types.hpp"

namespace orflow {

using nlohmann::json;

namespace {

void check_labels(const std::vector<int>& labels, std::size_t num_classes, const char* what) {
    for (int v : labels)
        if (v != kBackgroundClass && (v < 0 || static_cast<std::size_t>(v) >= num_classes))
            throw std::invalid_argument(std::string(what) + " label " + std::to_string(v) +
                                        " outside [0, " + std::to_string(num_classes) + ") u {-1}");
}

}  // namespace

ConfusionCounts count_confusion(const std::vector<int>& pred_labels,
                                const std::vector<int>& true_labels, std::size_t num_classes) {
    if (pred_labels.size() != true_labels.size())
        throw std::invalid_argument("confusion: prediction/truth length mismatch");
    check_labels(pred_labels, num_classes, "predicted");
    check_labels(true_labels, num_classes, "true");
    ConfusionCounts c;
    c.tp.assign(num_classes, 0);
    c.fp.assign(num_classes, 0);
    c.fn.assign(num_classes, 0);
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        const int truth = true_labels[i];
        if (truth == kBackgroundClass) continue;  // excluded from clip eval
        ++c.labeled_clips;
        const int pred = pred_labels[i];
        if (pred == truth) {
            ++c.tp[static_cast<std::size_t>(truth)];
        } else {
            ++c.fn[static_cast<std::size_t>(truth)];
            if (pred != kBackgroundClass) ++c.fp[static_cast<std::size_t>(pred)];
        }
    }
    return c;
}

std::vector<ClassPRF> precision_recall_f1(const std::vector<int>& pred_labels,
                                          const std::vector<int>& true_labels,
                                          std::size_t num_classes) {
    const ConfusionCounts c = count_confusion(pred_labels, true_labels, num_classes);
    std::vector<ClassPRF> out(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double tp = static_cast<double>(c.tp[k]);
        const double fp = static_cast<double>(c.fp[k]);
        const double fn = static_cast<double>(c.fn[k]);
        ClassPRF& r = out[k];
        r.support = c.tp[k] + c.fn[k];
        r.no_support = r.support == 0 && c.fp[k] == 0;
        r.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        r.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        r.f1 = r.precision + r.recall > 0.0
                   ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                   : 0.0;
    }
    return out;
}

double micro_accuracy(const ConfusionCounts& counts) {
    if (counts.labeled_clips == 0) return 0.0;
    const std::int64_t tp = std::accumulate(counts.tp.begin(), counts.tp.end(), std::int64_t{0});
    return static_cast<double>(tp) / static_cast<double>(counts.labeled_clips);
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives) {
    if (scores.size() != positives.size())
        throw std::invalid_argument("average_precision: scores/positives length mismatch");
    const std::size_t P =
        static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
    if (P == 0) throw std::invalid_argument("average_precision: no positives");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument("average_precision: non-finite score");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (!positives[order[rank]]) continue;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
    return ap / static_cast<double>(P);
}

MeanApResult mean_ap(const Mat& class_scores, const std::vector<int>& true_labels) {
    if (class_scores.rows != true_labels.size())
        throw std::invalid_argument("mean_ap: scores/labels length mismatch");
    const std::size_t K = class_scores.cols;
    check_labels(true_labels, K, "true");
    for (double v : class_scores.data)
        if (!std::isfinite(v)) throw std::invalid_argument("mean_ap: non-finite score");

    const Mat probs = softmax_rows(class_scores);
    MeanApResult res;
    res.per_class_ap.assign(K, 0.0);
    res.has_positives.assign(K, false);

    double sum = 0.0;
    std::size_t counted = 0;
    std::vector<double> col(probs.rows);
    std::vector<bool> pos(probs.rows);
    for (std::size_t k = 0; k < K; ++k) {
        bool any = false;
        for (std::size_t t = 0; t < probs.rows; ++t) {
            col[t] = probs(t, k);
            pos[t] = true_labels[t] == static_cast<int>(k);
            any = any || pos[t];
        }
        res.has_positives[k] = any;
        if (!any) continue;
        res.per_class_ap[k] = average_precision(col, pos);
        sum += res.per_class_ap[k];
        ++counted;
    }
    if (counted == 0) throw std::invalid_argument("mean_ap: no class has a positive clip");
    res.map = sum / static_cast<double>(counted);
    return res;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

EvalReport build_report(const std::string& split_descriptor,
                        const std::vector<std::string>& class_names, const Mat& class_scores,
                        const std::vector<int>& true_labels) {
    if (class_names.empty()) throw std::invalid_argument("report: empty class list");
    if (class_names.size() != class_scores.cols)
        throw std::invalid_argument("report: class_names/scores width mismatch");
    const std::size_t K = class_names.size();

    std::vector<int> pred(class_scores.rows);
    for (std::size_t t = 0; t < class_scores.rows; ++t) {
        const double* row = class_scores.row_const(t);
        pred[t] = static_cast<int>(std::max_element(row, row + K) - row);
    }

    EvalReport rep;
    rep.split_descriptor = split_descriptor;
    rep.class_names = class_names;
    rep.prf = precision_recall_f1(pred, true_labels, K);
    const auto map_res = mean_ap(class_scores, true_labels);
    rep.ap = map_res.per_class_ap;
    rep.ap_valid = map_res.has_positives;
    rep.map = map_res.map;
    const auto counts = count_confusion(pred, true_labels, K);
    rep.accuracy = micro_accuracy(counts);
    rep.total_clips = static_cast<std::int64_t>(true_labels.size());
    rep.labeled_clips = counts.labeled_clips;
    return rep;
}

namespace {

json report_to_json(const EvalReport& r) {
    json classes = json::array();
    for (std::size_t k = 0; k < r.class_names.size(); ++k) {
        json row{{"class", r.class_names[k]},
                 {"precision", r.prf[k].precision},
                 {"recall", r.prf[k].recall},
                 {"f1", r.prf[k].f1},
                 {"support", r.prf[k].support}};
        if (r.ap_valid[k])
            row["ap"] = r.ap[k];
        else
            row["ap"] = nullptr;  // excluded from mAP: no positives in this split
        classes.push_back(std::move(row));
    }
    return json{{"split", r.split_descriptor},
                {"classes", std::move(classes)},
                {"map", r.map},
                {"accuracy", r.accuracy},
                {"total_clips", r.total_clips},
                {"labeled_clips", r.labeled_clips}};
}

std::string format_rate(double v) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(1);
    ss << v * 100.0;
    return ss.str();
}

}  // namespace

void emit_report(const EvalReport& report, const std::filesystem::path& path,
                 ReportFormat format) {
    if (report.class_names.empty()) throw std::invalid_argument("report: empty class list");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path.string());
    switch (format) {
        case ReportFormat::json:
            out << report_to_json(report).dump(2) << "\n";
            break;
        case ReportFormat::csv: {
            out << "class,precision,recall,f1,ap,support\n";
            for (std::size_t k = 0; k < report.class_names.size(); ++k) {
                out << report.class_names[k] << "," << report.prf[k].precision << ","
                    << report.prf[k].recall << "," << report.prf[k].f1 << ",";
                if (report.ap_valid[k]) out << report.ap[k];
                out << "," << report.prf[k].support << "\n";
            }
            out << "__summary__,,,," << report.map << "," << report.labeled_clips << "\n";
            break;
        }
        case ReportFormat::markdown_table: {
            out << "| Class | Prec. | Rec. | F1 | AP |\n";
            out << "| --- | --- | --- | --- | --- |\n";
            for (std::size_t k = 0; k < report.class_names.size(); ++k) {
                out << "| " << report.class_names[k] << " | "
                    << format_rate(report.prf[k].precision) << " | "
                    << format_rate(report.prf[k].recall) << " | " << format_rate(report.prf[k].f1)
                    << " | " << (report.ap_valid[k] ? format_rate(report.ap[k]) : "-") << " |\n";
            }
            out << "| **mAP / accuracy** |  |  | " << format_rate(report.accuracy) << " | "
                << format_rate(report.map) << " |\n";
            break;
        }
    }
    if (!out) throw std::runtime_error("short write: " + path.string());
}

EvalReport load_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("report " + path.string() + ": " + e.what());
    }
    EvalReport r;
    r.split_descriptor = j.at("split").get<std::string>();
    for (const auto& row : j.at("classes")) {
        r.class_names.push_back(row.at("class").get<std::string>());
        ClassPRF p;
        p.precision = row.at("precision").get<double>();
        p.recall = row.at("recall").get<double>();
        p.f1 = row.at("f1").get<double>();
        p.support = row.at("support").get<std::int64_t>();
        p.no_support = p.support == 0;
        r.prf.push_back(p);
        if (row.at("ap").is_null()) {
            r.ap.push_back(0.0);
            r.ap_valid.push_back(false);
        } else {
            r.ap.push_back(row.at("ap").get<double>());
            r.ap_valid.push_back(true);
        }
    }
    r.map = j.at("map").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.total_clips = j.at("total_clips").get<std::int64_t>();
    r.labeled_clips = j.at("labeled_clips").get<std::int64_t>();
    return r;
}

}  // namespace orflow
