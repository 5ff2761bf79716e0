#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "g2d/datagen.hpp"
#include "g2d/errors.hpp"
#include "g2d/graph.hpp"
#include "g2d/models.hpp"

namespace g2d {

struct LossWeights {
    double alpha = 1.0; // feature-distillation weight
    double beta = 1.0;  // logit-distillation weight

    void validate() const {
        if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
            throw ConfigError("loss weights alpha/beta must be finite and >= 0");
        }
    }
};

// total = student + alpha * sum(feat) + beta * sum(logit), all batch-mean.
struct LossBreakdown {
    double student = 0.0;
    std::vector<double> feat;  // per modality
    std::vector<double> logit; // per modality
    double total = 0.0;
};

// Teacher outputs aligned with one student batch, detached by construction:
// they enter the loss graph as constants, so no gradient can reach a teacher.
struct TeacherBatchOutputs {
    std::vector<Tensor> feats;  // per modality, {n, feat_dim}
    std::vector<Tensor> logits; // per modality, {n, outputs}
};

// Supervised task loss: batch-mean cross-entropy on logits for
// classification, batch-mean squared error on sigmoid(logits) for
// regression.
inline Var student_loss(Graph& g, Var logits, const MultimodalBatch& batch, Task task) {
    const Tensor& l = g.value(logits);
    if (l.rows() == 0) throw ContractError("student_loss: empty batch");
    if (task == Task::Classify) {
        if (batch.labels.size() != l.rows()) {
            throw ContractError("student_loss: label count mismatch");
        }
        return g.neg_mean_gather(g.log_softmax(logits), batch.labels);
    }
    if (batch.targets.size() != l.rows() || l.cols() != 1) {
        throw ContractError("student_loss: regression needs {n,1} logits and n targets");
    }
    Tensor y({l.rows(), 1});
    for (std::size_t i = 0; i < l.rows(); ++i) y.at(i, 0) = batch.targets[i];
    Var d = g.sub(g.sigmoid(logits), g.constant(std::move(y)));
    return g.mean_all(g.mul(d, d));
}

// Batch-mean squared Euclidean distance between student and teacher
// features (teacher side constant).
inline Var feat_loss(Graph& g, Var f_s, const Tensor& f_t) {
    require_same_shape(g.value(f_s), f_t, "feat_loss");
    Var d = g.sub(f_s, g.constant(f_t));
    return g.scale(g.sum_all(g.mul(d, d)), 1.0 / static_cast<double>(f_t.rows()));
}

namespace detail {

// KL(softmax(l_t) || softmax(l_s)) averaged over rows whose weight is 1.
// Teacher probabilities and the teacher entropy term are computed outside
// the graph; only -p * log_softmax(l_s) flows gradients.
inline Var kl_divergence_rows(Graph& g, const Tensor& teacher_logits, Var student_logits,
                              const std::vector<std::uint8_t>* row_mask, double inv_rows) {
    Tensor p = Graph::softmax_value(teacher_logits);
    double teacher_entropy_sum = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        if (row_mask && !(*row_mask)[i]) {
            for (std::size_t j = 0; j < p.cols(); ++j) p.at(i, j) = 0.0;
            continue;
        }
        for (std::size_t j = 0; j < p.cols(); ++j) {
            const double v = p.at(i, j);
            if (v > 0.0) teacher_entropy_sum += v * std::log(v);
        }
    }
    Var cross = g.scale(g.sum_all(g.mul(g.constant(std::move(p)), g.log_softmax(student_logits))),
                        -inv_rows);
    return g.add_const(cross, teacher_entropy_sum * inv_rows);
}

// Squared error between sigmoided teacher and student predictions over the
// masked rows; the regression analogue of the KL term.
inline Var regress_logit_rows(Graph& g, const Tensor& teacher_logits, Var student_logits,
                              const std::vector<std::uint8_t>* row_mask, double inv_rows) {
    Tensor tp = teacher_logits;
    for (double& v : tp.data) v = Graph::stable_sigmoid(v);
    Var d = g.sub(g.sigmoid(student_logits), g.constant(std::move(tp)));
    Var sq = g.mul(d, d);
    if (row_mask) {
        Tensor mask({teacher_logits.rows(), teacher_logits.cols()});
        for (std::size_t i = 0; i < mask.rows(); ++i) {
            const double v = (*row_mask)[i] ? 1.0 : 0.0;
            for (std::size_t j = 0; j < mask.cols(); ++j) mask.at(i, j) = v;
        }
        sq = g.mul(sq, g.constant(std::move(mask)));
    }
    return g.scale(g.sum_all(sq), inv_rows);
}

} // namespace detail

// Logit distillation: KL from the teacher's class distribution to the
// student's (teacher first), batch-mean, temperature fixed at 1. Regression
// uses squared error between the sigmoided predictions.
inline Var logit_loss(Graph& g, const Tensor& teacher_logits, Var student_logits, Task task) {
    const Tensor& ls = g.value(student_logits);
    if (teacher_logits.rows() != ls.rows() || teacher_logits.cols() != ls.cols()) {
        throw DimensionError("logit_loss: teacher " + Tensor::shape_string(teacher_logits.shape) +
                             " vs student " + Tensor::shape_string(ls.shape));
    }
    const double inv = 1.0 / static_cast<double>(teacher_logits.rows());
    if (task == Task::Classify) {
        return detail::kl_divergence_rows(g, teacher_logits, student_logits, nullptr, inv);
    }
    return detail::regress_logit_rows(g, teacher_logits, student_logits, nullptr, inv);
}

struct G2dLossResult {
    Var total;
    LossBreakdown breakdown;
};

// Full training objective over one batch: supervised student loss plus
// weighted per-modality feature and logit distillation. Absent
// (sample, modality) cells are excluded from both distillation terms; each
// modality's term averages over its present rows.
inline G2dLossResult g2d_loss(Graph& g, const MultimodalBatch& batch,
                              const Student::Outputs& student_out,
                              const TeacherBatchOutputs& teacher_out, const LossWeights& weights,
                              Task task) {
    weights.validate();
    const std::size_t k = batch.num_modalities();
    if (teacher_out.feats.size() != k || teacher_out.logits.size() != k) {
        throw PipelineError("g2d_loss: teacher outputs cover " +
                            std::to_string(teacher_out.feats.size()) + " of " +
                            std::to_string(k) + " modalities");
    }

    G2dLossResult res;
    Var student = student_loss(g, student_out.fused_logits, batch, task);
    res.breakdown.student = g.value(student).scalar_value();

    Var total = student;
    for (std::size_t m = 0; m < k; ++m) {
        const std::vector<std::uint8_t>& present = batch.present[m];
        std::size_t n_present = 0;
        for (std::uint8_t v : present) n_present += v ? 1 : 0;
        if (n_present == 0) {
            // Modality entirely absent from the batch: no distillation signal.
            res.breakdown.feat.push_back(0.0);
            res.breakdown.logit.push_back(0.0);
            continue;
        }
        const double inv = 1.0 / static_cast<double>(n_present);
        const bool complete = n_present == present.size();

        // Feature term. Student features of absent rows are already zero;
        // zeroing the teacher side makes those rows vanish from the sum.
        Tensor ft = teacher_out.feats[m];
        if (!complete) {
            for (std::size_t i = 0; i < ft.rows(); ++i) {
                if (present[i]) continue;
                for (std::size_t j = 0; j < ft.cols(); ++j) ft.at(i, j) = 0.0;
            }
        }
        require_same_shape(g.value(student_out.features[m]), ft, "g2d_loss feat");
        Var d = g.sub(student_out.features[m], g.constant(std::move(ft)));
        Var feat = g.scale(g.sum_all(g.mul(d, d)), inv);

        Var logit = task == Task::Classify
                        ? detail::kl_divergence_rows(g, teacher_out.logits[m],
                                                     student_out.fused_logits,
                                                     complete ? nullptr : &present, inv)
                        : detail::regress_logit_rows(g, teacher_out.logits[m],
                                                     student_out.fused_logits,
                                                     complete ? nullptr : &present, inv);

        res.breakdown.feat.push_back(g.value(feat).scalar_value());
        res.breakdown.logit.push_back(g.value(logit).scalar_value());
        if (weights.alpha != 0.0) total = g.add(total, g.scale(feat, weights.alpha));
        if (weights.beta != 0.0) total = g.add(total, g.scale(logit, weights.beta));
    }
    res.total = total;
    res.breakdown.total = g.value(total).scalar_value();
    return res;
}

} // namespace g2d
