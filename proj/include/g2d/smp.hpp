#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "g2d/errors.hpp"
#include "g2d/scoring.hpp"

namespace g2d {

// Sequential modality prioritization schedule: tau[j] epochs for phase j.
// Phases 0..k-2 train one modality in isolation (weakest first); the final
// phase trains all modalities jointly and must be non-empty.
struct Schedule {
    std::vector<std::size_t> tau;

    std::size_t total_epochs() const {
        std::size_t t = 0;
        for (std::size_t v : tau) t += v;
        return t;
    }

    void validate(std::size_t num_modalities) const {
        if (tau.size() != num_modalities) {
            throw ConfigError("schedule: " + std::to_string(tau.size()) + " phases for " +
                              std::to_string(num_modalities) + " modalities");
        }
        if (tau.empty() || tau.back() == 0) {
            throw ConfigError("schedule: the final joint phase needs at least one epoch");
        }
    }

    // 1-based phase index of a 1-based epoch: the smallest j with
    // e <= tau_1 + ... + tau_j. Zero-length phases are skipped naturally.
    std::size_t phase_of(std::size_t epoch) const {
        if (epoch < 1 || epoch > total_epochs()) {
            throw ContractError("schedule: epoch " + std::to_string(epoch) +
                                " outside [1, " + std::to_string(total_epochs()) + "]");
        }
        std::size_t prefix = 0;
        for (std::size_t j = 0; j < tau.size(); ++j) {
            prefix += tau[j];
            if (epoch <= prefix) return j + 1;
        }
        throw ContractError("schedule: unreachable epoch mapping");
    }
};

// The set of modalities receiving gradient updates at the given epoch:
// singleton {pi[j]} during phase j < k, every modality in the final phase.
inline std::vector<int> prioritized_set(std::size_t epoch, const Schedule& schedule,
                                        const ModalityRanking& ranking) {
    schedule.validate(ranking.order.size());
    const std::size_t k = ranking.order.size();
    const std::size_t phase = schedule.phase_of(epoch);
    if (phase < k) return {ranking.order[phase - 1]};
    return ranking.order;
}

// Per-modality update coefficients. Complete suppression is binary:
// prioritized modalities get 1, the rest 0. Fusion and classifier groups are
// never masked; the trainer always steps them with kappa = 1.
struct ModulationMask {
    std::vector<double> kappa; // per modality
    std::size_t phase = 0;     // 1-based; 0 when no phase applies
};

inline ModulationMask modulation_mask(const std::vector<int>& prioritized,
                                      std::size_t num_modalities, std::size_t phase = 0) {
    if (prioritized.empty()) {
        throw ContractError("modulation_mask: empty prioritized set");
    }
    ModulationMask mask;
    mask.phase = phase;
    mask.kappa.assign(num_modalities, 0.0);
    for (int m : prioritized) {
        if (m < 0 || static_cast<std::size_t>(m) >= num_modalities) {
            throw ContractError("modulation_mask: modality " + std::to_string(m) +
                                " outside [0, " + std::to_string(num_modalities) + ")");
        }
        mask.kappa[static_cast<std::size_t>(m)] = 1.0;
    }
    return mask;
}

// Partial-suppression variant: the weakest modality keeps kappa = 1, every
// other modality m is damped by 1 - tanh(rho_m / rho_weakest).
inline ModulationMask partial_mask(const std::vector<ConfidenceScore>& scores) {
    const ModalityRanking ranking = rank_modalities(scores);
    const int weakest = ranking.least_confident();
    double rho_weak = 0.0;
    for (const auto& s : scores)
        if (s.modality == weakest) rho_weak = s.rho;
    if (!(rho_weak > 0.0)) {
        throw ContractError("partial_mask: weakest modality has zero confidence");
    }
    ModulationMask mask;
    mask.kappa.assign(scores.size(), 1.0);
    for (const auto& s : scores) {
        if (s.modality < 0 || static_cast<std::size_t>(s.modality) >= scores.size()) {
            throw ContractError("partial_mask: modality ids must be dense in [0, k)");
        }
        if (s.modality == weakest) continue;
        mask.kappa[static_cast<std::size_t>(s.modality)] = 1.0 - std::tanh(s.rho / rho_weak);
    }
    return mask;
}

} // namespace g2d
