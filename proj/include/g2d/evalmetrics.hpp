#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "g2d/datagen.hpp"
#include "g2d/errors.hpp"
#include "g2d/losses.hpp"
#include "g2d/models.hpp"
#include "g2d/scoring.hpp"

namespace g2d {

namespace detail {

inline std::size_t argmax_row(const Tensor& t, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < t.cols(); ++c) {
        // strict > keeps the lowest index on ties
        if (t.at(row, c) > t.at(row, best)) best = c;
    }
    return best;
}

} // namespace detail

// Fraction of argmax-correct predictions on a split. isolate >= 0 evaluates
// one modality via the per-modality convention (own head for late fusion,
// other features zeroed otherwise).
inline double accuracy(const Student& student, const Split& split, int isolate = -1) {
    if (split.size() == 0) throw ContractError("accuracy: empty split");
    Graph g;
    MultimodalBatch batch = split.full_batch();
    const Tensor logits = g.value(student.forward(g, batch, isolate).fused_logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (static_cast<int>(detail::argmax_row(logits, i)) == split.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

// Unimodal teacher accuracy over the rows where its modality is present.
inline double teacher_accuracy(const Teacher& teacher, const Split& split, std::size_t m) {
    auto [f, logits] = teacher.evaluate(split.inputs[m]);
    std::size_t correct = 0, count = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (!split.present[m][i]) continue;
        ++count;
        if (static_cast<int>(detail::argmax_row(logits, i)) == split.labels[i]) ++correct;
    }
    if (count == 0) throw ContractError("teacher_accuracy: no present samples");
    return static_cast<double>(correct) / static_cast<double>(count);
}

inline double mape(const std::vector<double>& pred, const std::vector<double>& y) {
    if (pred.size() != y.size() || y.empty()) throw ContractError("mape: size mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0) throw ContractError("mape: zero target at index " + std::to_string(i));
        sum += std::abs((pred[i] - y[i]) / y[i]);
    }
    return 100.0 * sum / static_cast<double>(y.size());
}

inline double r_squared(const std::vector<double>& pred, const std::vector<double>& y) {
    if (pred.size() != y.size() || y.empty()) throw ContractError("r_squared: size mismatch");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - pred[i]) * (y[i] - pred[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) throw ContractError("r_squared: zero-variance target");
    return 1.0 - ss_res / ss_tot;
}

// Regression predictions: sigmoid of the fused logit per sample.
inline std::vector<double> student_predictions(const Student& student, const Split& split,
                                               int isolate = -1) {
    Graph g;
    MultimodalBatch batch = split.full_batch();
    const Tensor logits = g.value(student.forward(g, batch, isolate).fused_logits);
    std::vector<double> pred(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i)
        pred[i] = Graph::stable_sigmoid(logits.at(i, 0));
    return pred;
}

// Mean cosine similarity between student and teacher features for one
// modality. Zero-vector features contribute similarity 0.
inline double feature_alignment(const Student& student, const Teacher& teacher,
                                const Split& split, std::size_t m) {
    Graph g;
    MultimodalBatch batch = split.full_batch();
    const Tensor f_s = g.value(student.forward(g, batch).features[m]);
    auto [f_t, l_t] = teacher.evaluate(split.inputs[m]);
    require_same_shape(f_s, f_t, "feature_alignment");
    double sum = 0.0;
    for (std::size_t i = 0; i < f_s.rows(); ++i) {
        double dot = 0.0, ns = 0.0, nt = 0.0;
        for (std::size_t j = 0; j < f_s.cols(); ++j) {
            dot += f_s.at(i, j) * f_t.at(i, j);
            ns += f_s.at(i, j) * f_s.at(i, j);
            nt += f_t.at(i, j) * f_t.at(i, j);
        }
        if (ns > 0.0 && nt > 0.0) sum += dot / (std::sqrt(ns) * std::sqrt(nt));
    }
    return sum / static_cast<double>(f_s.rows());
}

// Scalar modality-gap proxy: Euclidean distance between L2-normalized
// per-modality mean embeddings, averaged over modality pairs.
inline double modality_gap(const Student& student, const Split& split) {
    const std::size_t k = student.config().num_modalities();
    if (k < 2) throw ContractError("modality_gap: need at least 2 modalities");
    Graph g;
    MultimodalBatch batch = split.full_batch();
    auto out = student.forward(g, batch);
    std::vector<std::vector<double>> centroids;
    for (std::size_t m = 0; m < k; ++m) {
        const Tensor& f = g.value(out.features[m]);
        std::vector<double> c(f.cols(), 0.0);
        for (std::size_t i = 0; i < f.rows(); ++i)
            for (std::size_t j = 0; j < f.cols(); ++j) c[j] += f.at(i, j);
        double norm = 0.0;
        for (double& v : c) {
            v /= static_cast<double>(f.rows());
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            throw ContractError("modality_gap: all-zero embeddings for modality " +
                                std::to_string(m));
        }
        for (double& v : c) v /= norm;
        centroids.push_back(std::move(c));
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            double d2 = 0.0;
            const std::size_t dim = std::min(centroids[a].size(), centroids[b].size());
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = centroids[a][j] - centroids[b][j];
                d2 += diff * diff;
            }
            // dimensions beyond the common prefix (unequal feature dims)
            for (std::size_t j = dim; j < centroids[a].size(); ++j)
                d2 += centroids[a][j] * centroids[a][j];
            for (std::size_t j = dim; j < centroids[b].size(); ++j)
                d2 += centroids[b][j] * centroids[b][j];
            sum += std::sqrt(d2);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

// Everything the evaluation protocol reports for one trained student.
struct EvalReport {
    Task task = Task::Classify;
    double multi_accuracy = 0.0;             // classification
    double multi_mape = 0.0, multi_r2 = 0.0; // regression
    std::vector<double> per_modality;        // accuracy (or R^2) per modality
    std::vector<double> teacher_scores;      // unimodal teacher accuracy (or R^2)
    std::vector<double> alignment;           // mean cosine per modality
    std::vector<double> confidence_ratios;   // per modality; dominant entry ~1 by definition
    std::vector<int> weak_modalities;        // all but the teacher-ranked dominant one
    double gap = 0.0;
};

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["task"] = r.task == Task::Classify ? "classify" : "regress";
    if (r.task == Task::Classify) {
        j["multi_accuracy"] = r.multi_accuracy;
    } else {
        j["multi_mape"] = r.multi_mape;
        j["multi_r2"] = r.multi_r2;
    }
    j["per_modality"] = r.per_modality;
    if (!r.teacher_scores.empty()) j["teacher_scores"] = r.teacher_scores;
    if (!r.alignment.empty()) j["feature_alignment"] = r.alignment;
    if (!r.confidence_ratios.empty()) j["confidence_ratios"] = r.confidence_ratios;
    if (!r.weak_modalities.empty()) j["weak_modalities"] = r.weak_modalities;
    j["modality_gap"] = r.gap;
    return j;
}

// Full evaluation on the test split. Teacher-dependent quantities (alignment,
// confidence ratios, teacher scores) are filled only when teachers are given.
inline EvalReport evaluate_student(const Student& student, const MultimodalDataset& ds,
                                   const std::vector<Teacher>* teachers, Task task) {
    EvalReport r;
    r.task = task;
    const std::size_t k = student.config().num_modalities();
    const Split& test = ds.test;
    if (task == Task::Classify) {
        r.multi_accuracy = accuracy(student, test);
        for (std::size_t m = 0; m < k; ++m)
            r.per_modality.push_back(accuracy(student, test, static_cast<int>(m)));
    } else {
        const std::vector<double> pred = student_predictions(student, test);
        r.multi_mape = mape(pred, test.targets);
        r.multi_r2 = r_squared(pred, test.targets);
        for (std::size_t m = 0; m < k; ++m) {
            const std::vector<double> pm = student_predictions(student, test, static_cast<int>(m));
            r.per_modality.push_back(r_squared(pm, test.targets));
        }
    }
    r.gap = modality_gap(student, test);
    if (!teachers) return r;

    std::vector<ConfidenceScore> teacher_scores;
    for (std::size_t m = 0; m < k; ++m) {
        const Teacher& t = (*teachers)[m];
        auto [f_t, l_t] = t.evaluate(test.inputs[m]);
        r.alignment.push_back(feature_alignment(student, t, test, m));
        if (task == Task::Classify) {
            r.teacher_scores.push_back(teacher_accuracy(t, test, m));
            teacher_scores.push_back(confidence(l_t, test.labels, static_cast<int>(m),
                                                &test.present[m], ConfidenceScope::Dataset));
        } else {
            std::vector<double> tp(l_t.rows());
            for (std::size_t i = 0; i < l_t.rows(); ++i)
                tp[i] = Graph::stable_sigmoid(l_t.at(i, 0));
            r.teacher_scores.push_back(r_squared(tp, test.targets));
            teacher_scores.push_back(confidence_regress(l_t, test.targets, static_cast<int>(m),
                                                        &test.present[m],
                                                        ConfidenceScope::Dataset));
        }
    }
    const ModalityRanking ranking = rank_modalities(teacher_scores);
    for (std::size_t m = 0; m < k; ++m) {
        Graph g;
        MultimodalBatch batch = test.full_batch();
        const Tensor logits =
            g.value(student.forward(g, batch, static_cast<int>(m)).fused_logits);
        const ConfidenceScore student_rho =
            task == Task::Classify
                ? confidence(logits, test.labels, static_cast<int>(m), nullptr,
                             ConfidenceScope::Dataset)
                : confidence_regress(logits, test.targets, static_cast<int>(m), nullptr,
                                     ConfidenceScope::Dataset);
        r.confidence_ratios.push_back(confidence_ratio(student_rho.rho, teacher_scores[m].rho));
    }
    for (int m : ranking.order) {
        if (m != ranking.most_confident()) r.weak_modalities.push_back(m);
    }
    return r;
}

} // namespace g2d
