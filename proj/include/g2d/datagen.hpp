#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "g2d/errors.hpp"
#include "g2d/rng.hpp"
#include "g2d/tensor.hpp"

namespace g2d {

enum class Task { Classify, Regress };

enum class RegressionLink { Tanh, Identity };

struct ModalitySpec {
    std::size_t feature_dim = 12;
    double signal_strength = 1.0; // in (0, 1]
    double noise_scale = 1.0;     // > 0
};

// Full recipe for one synthetic dataset. (spec, seed) determines every byte
// of the output.
struct DatasetSpec {
    Task task = Task::Classify;
    int num_classes = 4; // ignored for regression
    std::vector<ModalitySpec> modalities;
    std::size_t train_samples = 512;
    std::size_t val_samples = 256;
    std::size_t test_samples = 512;
    std::uint64_t seed = 999;

    // Regression-only knobs.
    std::size_t latent_dim = 4;
    double latent_scale = 1.0;
    RegressionLink link = RegressionLink::Tanh;
    double target_noise = 0.02;

    std::size_t num_modalities() const { return modalities.size(); }

    void validate() const {
        if (modalities.size() < 2) {
            throw ConfigError("dataset spec: need at least 2 modalities, got " +
                              std::to_string(modalities.size()));
        }
        if (task == Task::Classify && num_classes < 2) {
            throw ConfigError("dataset spec: need at least 2 classes, got " +
                              std::to_string(num_classes));
        }
        if (train_samples == 0 || val_samples == 0 || test_samples == 0) {
            throw ConfigError("dataset spec: all splits need a positive sample count");
        }
        for (std::size_t m = 0; m < modalities.size(); ++m) {
            const ModalitySpec& ms = modalities[m];
            if (ms.feature_dim == 0) {
                throw ConfigError("dataset spec: modality " + std::to_string(m) +
                                  " has zero feature_dim");
            }
            if (!(ms.signal_strength > 0.0 && ms.signal_strength <= 1.0)) {
                throw ConfigError("dataset spec: modality " + std::to_string(m) +
                                  " signal_strength must lie in (0, 1]");
            }
            if (!(ms.noise_scale > 0.0)) {
                throw ConfigError("dataset spec: modality " + std::to_string(m) +
                                  " noise_scale must be positive");
            }
        }
        if (task == Task::Regress) {
            if (latent_dim == 0) throw ConfigError("dataset spec: latent_dim must be positive");
            if (latent_scale <= 0.0) {
                throw ConfigError("dataset spec: constant latent (latent_scale <= 0) "
                                  "yields a zero-variance target");
            }
            if (target_noise < 0.0) throw ConfigError("dataset spec: target_noise must be >= 0");
        }
    }
};

// One batch of aligned multimodal samples. Absent cells carry zero inputs
// and present[m][i] == 0.
struct MultimodalBatch {
    std::vector<Tensor> inputs; // per modality, {n, d_m}
    std::vector<int> labels;
    std::vector<double> targets;
    std::vector<std::vector<std::uint8_t>> present; // [modality][sample]
    std::vector<std::size_t> indices;               // positions in the source split

    std::size_t size() const { return indices.size(); }
    std::size_t num_modalities() const { return inputs.size(); }
};

struct Split {
    std::vector<Tensor> inputs; // per modality {N, d_m}
    std::vector<int> labels;
    std::vector<double> targets;
    std::vector<std::vector<std::uint8_t>> present;

    std::size_t size() const {
        return inputs.empty() ? 0 : inputs[0].rows();
    }

    MultimodalBatch gather(const std::vector<std::size_t>& idx) const {
        MultimodalBatch b;
        b.indices = idx;
        b.inputs.reserve(inputs.size());
        for (std::size_t m = 0; m < inputs.size(); ++m) {
            const Tensor& full = inputs[m];
            Tensor t({idx.size(), full.cols()});
            std::vector<std::uint8_t> pres(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) {
                for (std::size_t c = 0; c < full.cols(); ++c)
                    t.at(r, c) = full.at(idx[r], c);
                pres[r] = present[m][idx[r]];
            }
            b.inputs.push_back(std::move(t));
            b.present.push_back(std::move(pres));
        }
        for (std::size_t r : idx) {
            if (!labels.empty()) b.labels.push_back(labels[r]);
            if (!targets.empty()) b.targets.push_back(targets[r]);
        }
        return b;
    }

    MultimodalBatch full_batch() const {
        std::vector<std::size_t> idx(size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return gather(idx);
    }
};

struct MultimodalDataset {
    DatasetSpec spec;
    Split train, val, test;
    // Monte-Carlo estimate of the best achievable per-modality score under
    // the generating model: accuracy of the true-prototype rule for
    // classification, R^2 of the Bayes predictor for regression.
    std::vector<double> bayes_estimate;

    const Split& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw ContractError("unknown split '" + name + "'");
    }
};

namespace detail {

// Class prototypes, one per (modality, class), drawn once from the seed.
inline std::vector<std::vector<Tensor>> class_prototypes(const DatasetSpec& spec) {
    Rng rng(derive_seed(spec.seed, "prototypes"));
    std::vector<std::vector<Tensor>> protos(spec.num_modalities());
    for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
        protos[m].reserve(spec.num_classes);
        for (int c = 0; c < spec.num_classes; ++c) {
            Tensor p({spec.modalities[m].feature_dim});
            for (double& v : p.data) v = rng.normal();
            protos[m].push_back(std::move(p));
        }
    }
    return protos;
}

// Class-balanced labels: round-robin assignment, then a seeded shuffle, so
// per-class counts differ by at most one.
inline std::vector<int> balanced_labels(std::size_t n, int num_classes, Rng& rng) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % num_classes);
    rng.shuffle(labels);
    return labels;
}

inline Split make_classification_split(const DatasetSpec& spec,
                                       const std::vector<std::vector<Tensor>>& protos,
                                       std::size_t n, std::uint64_t split_index) {
    Rng label_rng(derive_seed(spec.seed, "labels", split_index));
    Rng noise_rng(derive_seed(spec.seed, "noise", split_index));
    Split split;
    split.labels = balanced_labels(n, spec.num_classes, label_rng);
    for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
        split.inputs.emplace_back(
            std::vector<std::size_t>{n, spec.modalities[m].feature_dim});
        split.present.emplace_back(n, std::uint8_t{1});
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
            const ModalitySpec& ms = spec.modalities[m];
            const Tensor& proto = protos[m][static_cast<std::size_t>(split.labels[i])];
            for (std::size_t d = 0; d < ms.feature_dim; ++d) {
                split.inputs[m].at(i, d) =
                    ms.signal_strength * proto.data[d] + ms.noise_scale * noise_rng.normal();
            }
        }
    }
    return split;
}

// Nearest true prototype under the generating model (isotropic noise, equal
// priors) is the Bayes rule; its accuracy is estimated on fresh draws.
inline double bayes_accuracy_estimate(const DatasetSpec& spec,
                                      const std::vector<std::vector<Tensor>>& protos,
                                      std::size_t m, std::size_t trials = 4096) {
    Rng rng(derive_seed(spec.seed, "bayes", m));
    const ModalitySpec& ms = spec.modalities[m];
    std::size_t correct = 0;
    std::vector<double> x(ms.feature_dim);
    for (std::size_t t = 0; t < trials; ++t) {
        const int y = static_cast<int>(t % static_cast<std::size_t>(spec.num_classes));
        for (std::size_t d = 0; d < ms.feature_dim; ++d) {
            x[d] = ms.signal_strength * protos[m][static_cast<std::size_t>(y)].data[d] +
                   ms.noise_scale * rng.normal();
        }
        int best = 0;
        double best_dist = 0.0;
        for (int c = 0; c < spec.num_classes; ++c) {
            double dist = 0.0;
            for (std::size_t d = 0; d < ms.feature_dim; ++d) {
                const double diff = x[d] - ms.signal_strength * protos[m][c].data[d];
                dist += diff * diff;
            }
            if (c == 0 || dist < best_dist) {
                best = c;
                best_dist = dist;
            }
        }
        if (best == y) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(trials);
}

struct RegressionModel {
    std::vector<Tensor> mixing; // per modality {latent_dim, d_m}
    Tensor target_weight;       // {latent_dim}
    double weight_norm = 0.0;
};

inline RegressionModel regression_model(const DatasetSpec& spec) {
    Rng rng(derive_seed(spec.seed, "regression-model"));
    RegressionModel model;
    const double col_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
        Tensor mix({spec.latent_dim, spec.modalities[m].feature_dim});
        for (double& v : mix.data) v = col_scale * rng.normal();
        model.mixing.push_back(std::move(mix));
    }
    model.target_weight = Tensor({spec.latent_dim});
    double norm2 = 0.0;
    for (double& v : model.target_weight.data) {
        v = rng.normal();
        norm2 += v * v;
    }
    model.weight_norm = std::sqrt(norm2);
    if (model.weight_norm == 0.0) model.weight_norm = 1.0;
    return model;
}

inline double regression_target(const DatasetSpec& spec, const RegressionModel& model,
                                const std::vector<double>& z, double noise) {
    double u = 0.0;
    for (std::size_t d = 0; d < spec.latent_dim; ++d) u += model.target_weight.data[d] * z[d];
    u /= model.weight_norm * spec.latent_scale;
    const double t = spec.link == RegressionLink::Tanh ? std::tanh(u) : u;
    double y = 0.55 + 0.35 * t + noise;
    if (spec.link == RegressionLink::Tanh) y = std::clamp(y, 0.05, 0.95);
    return y;
}

inline Split make_regression_split(const DatasetSpec& spec, const RegressionModel& model,
                                   std::size_t n, std::uint64_t split_index) {
    Rng rng(derive_seed(spec.seed, "regression-noise", split_index));
    Split split;
    split.targets.resize(n);
    for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
        split.inputs.emplace_back(
            std::vector<std::size_t>{n, spec.modalities[m].feature_dim});
        split.present.emplace_back(n, std::uint8_t{1});
    }
    std::vector<double> z(spec.latent_dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : z) v = spec.latent_scale * rng.normal();
        for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
            const ModalitySpec& ms = spec.modalities[m];
            const Tensor& mix = model.mixing[m];
            for (std::size_t d = 0; d < ms.feature_dim; ++d) {
                double clean = 0.0;
                for (std::size_t r = 0; r < spec.latent_dim; ++r)
                    clean += z[r] * mix.at(r, d);
                split.inputs[m].at(i, d) =
                    ms.signal_strength * clean + ms.noise_scale * rng.normal();
            }
        }
        split.targets[i] = regression_target(spec, model, z,
                                             spec.target_noise * rng.normal());
    }
    return split;
}

// R^2 of the Bayes predictor (true link applied to the noiseless latent
// score) against noisy targets, on fresh draws.
inline double bayes_r2_estimate(const DatasetSpec& spec, const RegressionModel& model,
                                std::size_t trials = 4096) {
    Rng rng(derive_seed(spec.seed, "bayes-regression"));
    std::vector<double> z(spec.latent_dim);
    std::vector<double> y(trials), pred(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        for (double& v : z) v = spec.latent_scale * rng.normal();
        pred[t] = regression_target(spec, model, z, 0.0);
        y[t] = regression_target(spec, model, z, spec.target_noise * rng.normal());
    }
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(trials);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        ss_res += (y[t] - pred[t]) * (y[t] - pred[t]);
        ss_tot += (y[t] - mean) * (y[t] - mean);
    }
    if (ss_tot == 0.0) {
        throw ConfigError("regression spec produces a zero-variance target");
    }
    return 1.0 - ss_res / ss_tot;
}

} // namespace detail

inline MultimodalDataset gen_classification(const DatasetSpec& spec) {
    spec.validate();
    if (spec.task != Task::Classify) {
        throw ConfigError("gen_classification called with a regression spec");
    }
    auto protos = detail::class_prototypes(spec);
    MultimodalDataset ds;
    ds.spec = spec;
    ds.train = detail::make_classification_split(spec, protos, spec.train_samples, 0);
    ds.val = detail::make_classification_split(spec, protos, spec.val_samples, 1);
    ds.test = detail::make_classification_split(spec, protos, spec.test_samples, 2);
    for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
        ds.bayes_estimate.push_back(detail::bayes_accuracy_estimate(spec, protos, m));
    }
    return ds;
}

inline MultimodalDataset gen_regression(const DatasetSpec& spec) {
    spec.validate();
    if (spec.task != Task::Regress) {
        throw ConfigError("gen_regression called with a classification spec");
    }
    auto model = detail::regression_model(spec);
    MultimodalDataset ds;
    ds.spec = spec;
    ds.train = detail::make_regression_split(spec, model, spec.train_samples, 0);
    ds.val = detail::make_regression_split(spec, model, spec.val_samples, 1);
    ds.test = detail::make_regression_split(spec, model, spec.test_samples, 2);
    const double r2 = detail::bayes_r2_estimate(spec, model);
    for (std::size_t m = 0; m < spec.num_modalities(); ++m) ds.bayes_estimate.push_back(r2);
    return ds;
}

inline MultimodalDataset generate_dataset(const DatasetSpec& spec) {
    return spec.task == Task::Classify ? gen_classification(spec) : gen_regression(spec);
}

// Per-modality best-achievable score under the generating model, without
// materializing any split.
inline std::vector<double> bayes_estimates(const DatasetSpec& spec) {
    spec.validate();
    std::vector<double> est;
    if (spec.task == Task::Classify) {
        auto protos = detail::class_prototypes(spec);
        for (std::size_t m = 0; m < spec.num_modalities(); ++m)
            est.push_back(detail::bayes_accuracy_estimate(spec, protos, m));
    } else {
        const double r2 = detail::bayes_r2_estimate(spec, detail::regression_model(spec));
        est.assign(spec.num_modalities(), r2);
    }
    return est;
}

namespace detail {

inline void mask_split(Split& split, double miss_rate, Rng& rng) {
    const std::size_t k = split.inputs.size();
    std::vector<std::uint8_t> mask(k);
    for (std::size_t i = 0; i < split.size(); ++i) {
        // Redraw until at least one modality stays present.
        while (true) {
            bool any = false;
            for (std::size_t m = 0; m < k; ++m) {
                mask[m] = rng.bernoulli(miss_rate) ? 0 : 1;
                any = any || mask[m];
            }
            if (any) break;
        }
        for (std::size_t m = 0; m < k; ++m) {
            if (mask[m]) continue;
            split.present[m][i] = 0;
            for (std::size_t d = 0; d < split.inputs[m].cols(); ++d)
                split.inputs[m].at(i, d) = 0.0;
        }
    }
}

} // namespace detail

// Marks each (sample, modality) absent independently with probability
// miss_rate, redrawing a sample's mask until at least one modality remains.
// Absent inputs are zeroed and flagged in the presence mask.
inline MultimodalDataset apply_missing_mask(const MultimodalDataset& ds, double miss_rate,
                                            std::uint64_t seed) {
    if (miss_rate < 0.0 || miss_rate >= 1.0) {
        throw ConfigError("miss_rate must lie in [0, 1), got " + std::to_string(miss_rate));
    }
    MultimodalDataset out = ds;
    if (miss_rate == 0.0) return out;
    Rng train_rng(derive_seed(seed, "missing", 0));
    Rng val_rng(derive_seed(seed, "missing", 1));
    Rng test_rng(derive_seed(seed, "missing", 2));
    detail::mask_split(out.train, miss_rate, train_rng);
    detail::mask_split(out.val, miss_rate, val_rng);
    detail::mask_split(out.test, miss_rate, test_rng);
    return out;
}

} // namespace g2d
