#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "g2d/errors.hpp"
#include "g2d/graph.hpp"
#include "g2d/tensor.hpp"

namespace g2d {

enum class ConfidenceScope { Batch, RunningEpoch, Dataset };

struct ConfidenceScore {
    int modality = -1;
    double rho = 0.0; // in [0, 1]
    ConfidenceScope scope = ConfidenceScope::Batch;
};

// Teacher confidence: mean probability assigned to the ground-truth label.
// Rows excluded by the mask (absent modality cells) do not contribute; if no
// rows remain the score is 0, i.e. the modality ranks least confident.
inline ConfidenceScore confidence(const Tensor& logits, const std::vector<int>& labels,
                                  int modality,
                                  const std::vector<std::uint8_t>* row_mask = nullptr,
                                  ConfidenceScope scope = ConfidenceScope::Batch) {
    if (logits.rows() == 0 || labels.empty()) {
        throw ContractError("confidence: empty batch");
    }
    if (labels.size() != logits.rows()) {
        throw ContractError("confidence: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(logits.rows()) + " rows");
    }
    const Tensor p = Graph::softmax_value(logits);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        if (row_mask && !(*row_mask)[i]) continue;
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= p.cols()) {
            throw DataError("confidence: label " + std::to_string(y) + " out of range");
        }
        sum += p.at(i, static_cast<std::size_t>(y));
        ++count;
    }
    return {modality, count == 0 ? 0.0 : sum / static_cast<double>(count), scope};
}

// Regression analogue: 1 - mean|sigmoid(logit) - target|, clamped to [0, 1].
inline ConfidenceScore confidence_regress(const Tensor& logits,
                                          const std::vector<double>& targets, int modality,
                                          const std::vector<std::uint8_t>* row_mask = nullptr,
                                          ConfidenceScope scope = ConfidenceScope::Batch) {
    if (logits.rows() == 0 || targets.empty()) {
        throw ContractError("confidence_regress: empty batch");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (row_mask && !(*row_mask)[i]) continue;
        sum += std::abs(Graph::stable_sigmoid(logits.at(i, 0)) - targets[i]);
        ++count;
    }
    const double rho = count == 0 ? 0.0 : std::clamp(1.0 - sum / static_cast<double>(count),
                                                     0.0, 1.0);
    return {modality, rho, scope};
}

// Ascending confidence order: order[0] is the least confident modality and
// order[k-1] the dominant one. Ties break by ascending modality index.
struct ModalityRanking {
    std::vector<int> order;

    int least_confident() const { return order.front(); }
    int most_confident() const { return order.back(); }
};

inline ModalityRanking rank_modalities(std::vector<ConfidenceScore> scores) {
    if (scores.empty()) throw ContractError("rank_modalities: no scores");
    std::vector<int> seen;
    for (const auto& s : scores) seen.push_back(s.modality);
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
        throw ContractError("rank_modalities: duplicate modality ids");
    }
    std::sort(scores.begin(), scores.end(), [](const ConfidenceScore& a, const ConfidenceScore& b) {
        if (a.rho != b.rho) return a.rho < b.rho;
        return a.modality < b.modality;
    });
    ModalityRanking r;
    for (const auto& s : scores) r.order.push_back(s.modality);
    return r;
}

// Student weak-modality confidence relative to its unimodal teacher; values
// near 1 mean the modality survived multimodal training intact.
inline double confidence_ratio(double student_rho_weak, double teacher_rho_weak) {
    if (!(teacher_rho_weak > 0.0)) {
        throw ContractError("confidence_ratio: teacher confidence must be positive");
    }
    return student_rho_weak / teacher_rho_weak;
}

} // namespace g2d
