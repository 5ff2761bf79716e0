#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "g2d/checkpoint.hpp"
#include "g2d/datagen.hpp"
#include "g2d/evalmetrics.hpp"
#include "g2d/losses.hpp"
#include "g2d/models.hpp"
#include "g2d/scoring.hpp"
#include "g2d/smp.hpp"

namespace g2d {

enum class Suppression { Complete, Partial, None };

inline const char* suppression_name(Suppression s) {
    switch (s) {
        case Suppression::Complete: return "complete";
        case Suppression::Partial: return "partial";
        case Suppression::None: return "none";
    }
    return "?";
}

inline Suppression suppression_from_name(const std::string& s) {
    if (s == "complete") return Suppression::Complete;
    if (s == "partial") return Suppression::Partial;
    if (s == "none") return Suppression::None;
    throw ConfigError("unknown suppression mode '" + s + "'");
}

enum class RankingFreeze { Never, PerPhase };

// All hyperparameters of one reproducible run. Defaults mirror the reference
// regime: SGD momentum 0.9, weight decay 1e-4, lr 0.001 decayed by 0.1 per
// interval, batch 16, alpha = beta = 1.
struct RunConfig {
    LossWeights weights{1.0, 1.0};
    std::vector<std::size_t> tau; // empty -> default_schedule(k, epochs)
    FusionStrategy fusion = FusionStrategy::LateFusion;
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lr_decay_factor = 0.1;
    std::size_t lr_decay_interval = 200;
    std::size_t batch_size = 16;
    std::size_t epochs = 60;
    std::uint64_t seed = 999;
    Suppression suppression = Suppression::Complete;
    Task task = Task::Classify;
    RankingFreeze ranking_freeze = RankingFreeze::Never;

    std::size_t encoder_width = 64;
    std::size_t feat_dim = 32;
    std::size_t fusion_dim = 32;
    int cond_modality = -1; // -1: teacher-ranked dominant modality (modality 0 without teachers)

    std::size_t teacher_max_epochs = 150;
    std::size_t teacher_patience = 20;

    // Half the budget for the isolation phases (split evenly over the k-1
    // weaker modalities), the other half for the joint phase.
    static std::vector<std::size_t> default_schedule(std::size_t k, std::size_t epochs) {
        std::vector<std::size_t> tau(k, 0);
        if (k == 1) {
            tau[0] = epochs;
            return tau;
        }
        const std::size_t per = epochs / (2 * (k - 1));
        std::size_t used = 0;
        for (std::size_t j = 0; j + 1 < k; ++j) {
            tau[j] = per;
            used += per;
        }
        tau[k - 1] = epochs - used;
        return tau;
    }

    Schedule schedule(std::size_t k) const {
        Schedule s{tau.empty() ? default_schedule(k, epochs) : tau};
        return s;
    }

    void validate(std::size_t k) const {
        weights.validate();
        if (lr <= 0.0) throw ConfigError("lr must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0) {
            throw ConfigError("lr_decay_factor must lie in (0, 1]");
        }
        if (lr_decay_interval == 0) throw ConfigError("lr_decay_interval must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (encoder_width == 0 || feat_dim == 0 || fusion_dim == 0) {
            throw ConfigError("model dims must be positive");
        }
        if (suppression == Suppression::Complete) {
            const Schedule s = schedule(k);
            s.validate(k);
            if (s.total_epochs() != epochs) {
                throw ConfigError("complete suppression requires sum(tau) == epochs, got " +
                                  std::to_string(s.total_epochs()) + " vs " +
                                  std::to_string(epochs));
            }
        }
    }

    double lr_at_epoch(std::size_t epoch) const {
        const auto steps = static_cast<double>((epoch - 1) / lr_decay_interval);
        return lr * std::pow(lr_decay_factor, steps);
    }
};

// Frozen teacher outputs over the training split, content-addressed by the
// teacher checkpoint hashes so stale caches are rejected at load.
struct TeacherCache {
    std::vector<std::string> teacher_hashes;
    std::string dataset_hash_hex;
    std::vector<Tensor> feats;  // per modality {N_train, feat_dim}
    std::vector<Tensor> logits; // per modality {N_train, outputs}

    std::size_t num_rows() const { return feats.empty() ? 0 : feats[0].rows(); }

    TeacherBatchOutputs gather(const std::vector<std::size_t>& idx) const {
        TeacherBatchOutputs out;
        for (std::size_t m = 0; m < feats.size(); ++m) {
            Tensor f({idx.size(), feats[m].cols()});
            Tensor l({idx.size(), logits[m].cols()});
            for (std::size_t r = 0; r < idx.size(); ++r) {
                for (std::size_t c = 0; c < f.cols(); ++c) f.at(r, c) = feats[m].at(idx[r], c);
                for (std::size_t c = 0; c < l.cols(); ++c) l.at(r, c) = logits[m].at(idx[r], c);
            }
            out.feats.push_back(std::move(f));
            out.logits.push_back(std::move(l));
        }
        return out;
    }
};

inline std::string teacher_hash(const Teacher& t) { return checkpoint_hash({&t.group()}); }

// Cheap integrity hash over the raw bits of the training inputs and labels.
inline std::string train_split_hash(const MultimodalDataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t bits) {
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    for (const Tensor& t : ds.train.inputs)
        for (double v : t.data) mix(std::bit_cast<std::uint64_t>(v));
    for (int y : ds.train.labels) mix(static_cast<std::uint64_t>(y));
    for (double y : ds.train.targets) mix(std::bit_cast<std::uint64_t>(y));
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    return os.str();
}

// Forward every training sample through every frozen teacher once.
inline TeacherCache build_teacher_cache(const std::vector<Teacher>& teachers,
                                        const MultimodalDataset& ds) {
    TeacherCache cache;
    for (const Teacher& t : teachers) {
        auto [f, l] = t.evaluate(ds.train.inputs[static_cast<std::size_t>(t.modality())]);
        cache.feats.push_back(std::move(f));
        cache.logits.push_back(std::move(l));
        cache.teacher_hashes.push_back(teacher_hash(t));
    }
    cache.dataset_hash_hex = train_split_hash(ds);
    return cache;
}

// Cache file: header with the content addresses, then per modality the
// cached feature and logit blocks in hex (bit-exact round trip).
inline std::string serialize_cache(const TeacherCache& cache) {
    std::ostringstream os;
    os << "g2d-teacher-cache v1\n";
    os << "dataset " << cache.dataset_hash_hex << "\n";
    os << "modalities " << cache.feats.size() << " rows " << cache.num_rows() << "\n";
    for (std::size_t m = 0; m < cache.feats.size(); ++m) {
        os << "teacher " << m << " " << cache.teacher_hashes[m] << " " << cache.feats[m].cols()
           << " " << cache.logits[m].cols() << "\n";
        for (const Tensor* block : {&cache.feats[m], &cache.logits[m]}) {
            for (std::size_t i = 0; i < block->numel(); ++i) {
                if (i) os << " ";
                os << detail::double_to_hex(block->data[i]);
            }
            os << "\n";
        }
    }
    return os.str();
}

inline TeacherCache parse_cache(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "g2d-teacher-cache v1") {
        throw PipelineError("teacher cache: bad or missing header");
    }
    TeacherCache cache;
    std::string kw;
    in >> kw >> cache.dataset_hash_hex;
    if (kw != "dataset") throw PipelineError("teacher cache: expected dataset hash");
    std::size_t k = 0, rows = 0;
    in >> kw >> k >> kw >> rows;
    for (std::size_t m = 0; m < k; ++m) {
        std::size_t idx = 0, feat_cols = 0, logit_cols = 0;
        std::string hash;
        in >> kw >> idx >> hash >> feat_cols >> logit_cols;
        if (kw != "teacher" || idx != m) {
            throw PipelineError("teacher cache: expected record for modality " +
                                std::to_string(m));
        }
        cache.teacher_hashes.push_back(hash);
        Tensor f({rows, feat_cols});
        Tensor l({rows, logit_cols});
        for (Tensor* block : {&f, &l}) {
            for (std::size_t i = 0; i < block->numel(); ++i) {
                std::string hex;
                if (!(in >> hex)) {
                    throw PipelineError("teacher cache: truncated at modality " +
                                        std::to_string(m) + ", value " + std::to_string(i) +
                                        " of " + std::to_string(block->numel()));
                }
                block->data[i] = detail::hex_to_double(hex);
            }
        }
        cache.feats.push_back(std::move(f));
        cache.logits.push_back(std::move(l));
    }
    return cache;
}

inline void save_cache(const std::string& path, const TeacherCache& cache) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("teacher cache: cannot open '" + path + "' for writing");
    out << serialize_cache(cache);
}

inline TeacherCache load_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("teacher cache: cannot open '" + path + "'");
    return parse_cache(in);
}

// Content-address check: a cache built from different teacher weights or a
// different dataset must be rejected rather than silently reused.
inline void verify_cache(const TeacherCache& cache, const std::vector<Teacher>& teachers,
                         const MultimodalDataset& ds) {
    if (cache.teacher_hashes.size() != teachers.size()) {
        throw PipelineError("teacher cache: covers " +
                            std::to_string(cache.teacher_hashes.size()) + " modalities, need " +
                            std::to_string(teachers.size()));
    }
    for (std::size_t m = 0; m < teachers.size(); ++m) {
        const std::string now = teacher_hash(teachers[m]);
        if (cache.teacher_hashes[m] != now) {
            throw PipelineError("teacher cache: stale hash for modality " + std::to_string(m) +
                                " (cache " + cache.teacher_hashes[m] + ", teacher " + now + ")");
        }
    }
    if (cache.dataset_hash_hex != train_split_hash(ds)) {
        throw PipelineError("teacher cache: dataset hash mismatch");
    }
    if (cache.num_rows() != ds.train.size()) {
        throw PipelineError("teacher cache: " + std::to_string(cache.num_rows()) +
                            " cached rows for " + std::to_string(ds.train.size()) +
                            " training samples");
    }
}

// -------------------------------------------------------------------------
// Teacher pretraining
// -------------------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> present_indices(const Split& split, std::size_t m) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split.present[m][i]) idx.push_back(i);
    return idx;
}

} // namespace detail

// Unimodal supervised pretraining with best-validation early stopping
// (classification: val accuracy; regression: val loss). Deterministic given
// (dataset, modality, cfg.seed).
inline Teacher train_teacher(const MultimodalDataset& ds, std::size_t m, const RunConfig& cfg) {
    const std::size_t k = ds.spec.num_modalities();
    if (m >= k) throw ContractError("train_teacher: modality out of range");
    const std::size_t outputs =
        cfg.task == Task::Classify ? static_cast<std::size_t>(ds.spec.num_classes) : 1;

    Rng init_rng(derive_seed(cfg.seed, "teacher-init", m));
    Teacher teacher(static_cast<int>(m), ds.spec.modalities[m].feature_dim, cfg.encoder_width,
                    cfg.feat_dim, outputs, init_rng);

    const std::vector<std::size_t> train_idx = detail::present_indices(ds.train, m);
    const std::vector<std::size_t> val_idx = detail::present_indices(ds.val, m);
    if (train_idx.empty() || val_idx.empty()) {
        throw DataError("train_teacher: modality " + std::to_string(m) +
                        " has no present samples");
    }

    Rng shuffle_rng(derive_seed(cfg.seed, "teacher-shuffle", m));
    std::vector<ParamGroup> best; // deep copy of the best-validation params
    double best_score = -1e300;
    std::size_t best_epoch = 0;

    auto val_score = [&]() {
        if (cfg.task == Task::Classify) return teacher_accuracy(teacher, ds.val, m);
        // negative val MSE so that larger is better
        auto [f, l] = teacher.evaluate(ds.val.inputs[m]);
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i : val_idx) {
            const double d = Graph::stable_sigmoid(l.at(i, 0)) - ds.val.targets[i];
            sum += d * d;
            ++count;
        }
        return -sum / static_cast<double>(count);
    };

    for (std::size_t epoch = 1; epoch <= cfg.teacher_max_epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        shuffle_rng.shuffle(order);
        const double lr_e = cfg.lr_at_epoch(epoch);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            MultimodalBatch batch = ds.train.gather(idx);
            try {
                Graph g;
                auto out = teacher.forward(g, g.constant(batch.inputs[m]));
                Var loss = student_loss(g, out.logits, batch, cfg.task);
                g.backward(loss);
                sgd_step(teacher.group(), collect_grads(g, teacher.group()), lr_e, cfg.momentum,
                         cfg.weight_decay, 1.0);
            } catch (const TrainingError& e) {
                throw TrainingError("teacher " + std::to_string(m) + " diverged at epoch " +
                                    std::to_string(epoch) + ": " + e.what());
            }
        }
        const double score = val_score();
        if (score > best_score) {
            best_score = score;
            best_epoch = epoch;
            best.clear();
            best.push_back(teacher.group()); // copy
        } else if (epoch - best_epoch >= cfg.teacher_patience) {
            break;
        }
    }
    if (!best.empty()) copy_group_values(best[0], teacher.group());
    return teacher;
}

inline std::vector<Teacher> train_all_teachers(const MultimodalDataset& ds,
                                               const RunConfig& cfg) {
    std::vector<Teacher> teachers;
    for (std::size_t m = 0; m < ds.spec.num_modalities(); ++m)
        teachers.push_back(train_teacher(ds, m, cfg));
    return teachers;
}

// -------------------------------------------------------------------------
// Student training (the G2D loop and its joint-train degenerate)
// -------------------------------------------------------------------------

struct EpochMetrics {
    std::size_t epoch = 0;
    std::size_t phase = 0; // 0 when no schedule applies
    double lr = 0.0;
    double loss_student = 0.0, loss_total = 0.0;
    std::vector<double> loss_feat, loss_logit; // per modality, epoch means
    std::vector<double> rho;                   // per modality, epoch means
    std::vector<double> kappa;                 // last iteration of the epoch
    std::size_t rank_flips = 0;
    double val_multi = 0.0;                 // accuracy, or R^2 for regression
    std::vector<double> val_per_modality;   // accuracy (or R^2) per modality
};

struct TrainResult {
    std::unique_ptr<Student> student;
    std::vector<EpochMetrics> history;
    std::string metrics_csv; // one row per epoch
    std::string losses_csv;  // one row per iteration
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string metrics_header(std::size_t k, Task task) {
    std::ostringstream os;
    os << "epoch,phase,lr,loss_student";
    for (std::size_t m = 0; m < k; ++m) os << ",loss_feat_m" << m;
    for (std::size_t m = 0; m < k; ++m) os << ",loss_logit_m" << m;
    os << ",loss_total";
    for (std::size_t m = 0; m < k; ++m) os << ",rho_m" << m;
    for (std::size_t m = 0; m < k; ++m) os << ",kappa_m" << m;
    os << ",rank_flips," << (task == Task::Classify ? "val_acc_multi" : "val_r2_multi");
    for (std::size_t m = 0; m < k; ++m)
        os << "," << (task == Task::Classify ? "val_acc_m" : "val_r2_m") << m;
    os << "\n";
    return os.str();
}

inline void append_metrics_row(std::string& csv, const EpochMetrics& em) {
    std::ostringstream os;
    os << em.epoch << "," << em.phase << "," << fmt_double(em.lr) << ","
       << fmt_double(em.loss_student);
    for (double v : em.loss_feat) os << "," << fmt_double(v);
    for (double v : em.loss_logit) os << "," << fmt_double(v);
    os << "," << fmt_double(em.loss_total);
    for (double v : em.rho) os << "," << fmt_double(v);
    for (double v : em.kappa) os << "," << fmt_double(v);
    os << "," << em.rank_flips << "," << fmt_double(em.val_multi);
    for (double v : em.val_per_modality) os << "," << fmt_double(v);
    os << "\n";
    csv += os.str();
}

inline std::string losses_header(std::size_t k) {
    std::ostringstream os;
    os << "epoch,iter,loss_student";
    for (std::size_t m = 0; m < k; ++m) os << ",loss_feat_m" << m;
    for (std::size_t m = 0; m < k; ++m) os << ",loss_logit_m" << m;
    os << ",loss_total\n";
    return os.str();
}

inline void append_losses_row(std::string& csv, std::size_t epoch, std::size_t iter,
                              const LossBreakdown& bd) {
    std::ostringstream os;
    os << epoch << "," << iter << "," << fmt_double(bd.student);
    for (double v : bd.feat) os << "," << fmt_double(v);
    for (double v : bd.logit) os << "," << fmt_double(v);
    os << "," << fmt_double(bd.total) << "\n";
    csv += os.str();
}

} // namespace detail

// Observer called after construction (epoch 0) and after every completed
// epoch; used by tests to snapshot parameter state.
using EpochObserver = std::function<void(std::size_t epoch, const Student&)>;

// Core training loop shared by G2D and the joint baseline. Teachers are
// consulted only when the configuration actually uses them (alpha > 0,
// beta > 0, or suppression != none); a degenerate G2D run therefore produces
// byte-identical logs to the joint baseline on the same seed.
inline TrainResult train_student_core(const MultimodalDataset& ds, const TeacherCache* cache,
                                      const RunConfig& cfg,
                                      const EpochObserver& observer = nullptr) {
    const std::size_t k = ds.spec.num_modalities();
    cfg.validate(k);
    const bool needs_teachers = cfg.weights.alpha > 0.0 || cfg.weights.beta > 0.0 ||
                                cfg.suppression != Suppression::None;
    if (needs_teachers) {
        if (!cache) {
            throw PipelineError("g2d training requires a teacher cache (alpha/beta > 0 "
                                "or suppression enabled) and none was supplied");
        }
        if (cache->num_rows() != ds.train.size() || cache->feats.size() != k) {
            throw PipelineError("teacher cache covers " + std::to_string(cache->num_rows()) +
                                " of " + std::to_string(ds.train.size()) + " training rows");
        }
    }

    // Model construction; conditioning modality defaults to the
    // teacher-ranked dominant one.
    StudentConfig scfg;
    for (std::size_t m = 0; m < k; ++m) {
        scfg.input_dims.push_back(ds.spec.modalities[m].feature_dim);
        scfg.feat_dims.push_back(cfg.feat_dim);
    }
    scfg.encoder_width = cfg.encoder_width;
    scfg.fusion_dim = cfg.fusion_dim;
    scfg.num_outputs = cfg.task == Task::Classify
                           ? static_cast<std::size_t>(ds.spec.num_classes)
                           : 1;
    scfg.strategy = cfg.fusion;
    scfg.cond_modality = cfg.cond_modality;
    const bool needs_cond =
        cfg.fusion == FusionStrategy::FiLM || cfg.fusion == FusionStrategy::BiGated;
    if (needs_cond && scfg.cond_modality < 0) {
        if (needs_teachers) {
            std::vector<ConfidenceScore> scores;
            std::vector<std::size_t> all(ds.train.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            for (std::size_t m = 0; m < k; ++m) {
                scores.push_back(cfg.task == Task::Classify
                                     ? confidence(cache->logits[m], ds.train.labels,
                                                  static_cast<int>(m), &ds.train.present[m])
                                     : confidence_regress(cache->logits[m], ds.train.targets,
                                                          static_cast<int>(m),
                                                          &ds.train.present[m]));
            }
            scfg.cond_modality = rank_modalities(scores).most_confident();
        } else {
            scfg.cond_modality = 0;
        }
    }

    Rng init_rng(derive_seed(cfg.seed, "student-init"));
    TrainResult result;
    result.student = std::make_unique<Student>(scfg, init_rng);
    Student& student = *result.student;
    student.audit_roles();
    if (observer) observer(0, student);

    const Schedule schedule = cfg.schedule(k);
    Rng shuffle_rng(derive_seed(cfg.seed, "student-shuffle"));

    result.metrics_csv = detail::metrics_header(k, cfg.task);
    result.losses_csv = detail::losses_header(k);

    std::vector<int> frozen_ranking; // per-phase frozen ranking, when enabled
    std::size_t frozen_phase = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr_e = cfg.lr_at_epoch(epoch);
        const std::size_t phase =
            cfg.suppression == Suppression::Complete ? schedule.phase_of(epoch) : 0;

        std::vector<std::size_t> order(ds.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        EpochMetrics em;
        em.epoch = epoch;
        em.phase = phase;
        em.lr = lr_e;
        em.loss_feat.assign(k, 0.0);
        em.loss_logit.assign(k, 0.0);
        em.rho.assign(k, 0.0);
        em.kappa.assign(k, 1.0);
        std::size_t iters = 0;
        std::vector<int> prev_ranking;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            MultimodalBatch batch = ds.train.gather(idx);
            ++iters;
            try {
                Graph g;
                auto out = student.forward(g, batch);
                LossBreakdown bd;
                Var total{};
                std::vector<double> kappa(k, 1.0);

                if (needs_teachers) {
                    TeacherBatchOutputs tb = cache->gather(idx);
                    auto res = g2d_loss(g, batch, out, tb, cfg.weights, cfg.task);
                    bd = res.breakdown;
                    total = res.total;

                    std::vector<ConfidenceScore> scores;
                    for (std::size_t m = 0; m < k; ++m) {
                        scores.push_back(cfg.task == Task::Classify
                                             ? confidence(tb.logits[m], batch.labels,
                                                          static_cast<int>(m), &batch.present[m])
                                             : confidence_regress(tb.logits[m], batch.targets,
                                                                  static_cast<int>(m),
                                                                  &batch.present[m]));
                        em.rho[m] += scores[m].rho;
                    }
                    ModalityRanking ranking = rank_modalities(scores);
                    if (cfg.ranking_freeze == RankingFreeze::PerPhase &&
                        cfg.suppression == Suppression::Complete) {
                        if (frozen_phase != phase) {
                            frozen_ranking = ranking.order;
                            frozen_phase = phase;
                        }
                        ranking.order = frozen_ranking;
                    }
                    if (!prev_ranking.empty() && ranking.order != prev_ranking) ++em.rank_flips;
                    prev_ranking = ranking.order;

                    if (cfg.suppression == Suppression::Complete) {
                        kappa = modulation_mask(prioritized_set(epoch, schedule, ranking), k,
                                                phase)
                                    .kappa;
                    } else if (cfg.suppression == Suppression::Partial) {
                        kappa = partial_mask(scores).kappa;
                    }
                } else {
                    Var sl = student_loss(g, out.fused_logits, batch, cfg.task);
                    bd.student = g.value(sl).scalar_value();
                    bd.feat.assign(k, 0.0);
                    bd.logit.assign(k, 0.0);
                    bd.total = bd.student;
                    total = sl;
                }

                g.backward(total);
                for (std::size_t m = 0; m < k; ++m) {
                    ParamGroup& group = student.modality_group(m);
                    sgd_step(group, collect_grads(g, group), lr_e, cfg.momentum,
                             cfg.weight_decay, kappa[m]);
                }
                if (student.fusion_group()) {
                    sgd_step(*student.fusion_group(), collect_grads(g, *student.fusion_group()),
                             lr_e, cfg.momentum, cfg.weight_decay, 1.0);
                }
                if (student.classifier_group()) {
                    sgd_step(*student.classifier_group(),
                             collect_grads(g, *student.classifier_group()), lr_e, cfg.momentum,
                             cfg.weight_decay, 1.0);
                }

                em.loss_student += bd.student;
                em.loss_total += bd.total;
                for (std::size_t m = 0; m < k; ++m) {
                    em.loss_feat[m] += bd.feat[m];
                    em.loss_logit[m] += bd.logit[m];
                }
                em.kappa = kappa;
                detail::append_losses_row(result.losses_csv, epoch, iters, bd);
            } catch (const TrainingError& e) {
                throw TrainingError("student training diverged at epoch " +
                                    std::to_string(epoch) + ", iteration " +
                                    std::to_string(iters) + ": " + e.what());
            }
        }

        const double inv_iters = 1.0 / static_cast<double>(iters);
        em.loss_student *= inv_iters;
        em.loss_total *= inv_iters;
        for (std::size_t m = 0; m < k; ++m) {
            em.loss_feat[m] *= inv_iters;
            em.loss_logit[m] *= inv_iters;
            em.rho[m] *= inv_iters;
        }

        if (cfg.task == Task::Classify) {
            em.val_multi = accuracy(student, ds.val);
            for (std::size_t m = 0; m < k; ++m)
                em.val_per_modality.push_back(accuracy(student, ds.val, static_cast<int>(m)));
        } else {
            em.val_multi = r_squared(student_predictions(student, ds.val), ds.val.targets);
            for (std::size_t m = 0; m < k; ++m)
                em.val_per_modality.push_back(r_squared(
                    student_predictions(student, ds.val, static_cast<int>(m)), ds.val.targets));
        }
        detail::append_metrics_row(result.metrics_csv, em);
        result.history.push_back(std::move(em));
        if (observer) observer(epoch, student);
    }
    return result;
}

// Algorithm-1 training: distillation plus sequential modality
// prioritization, driven by the supplied teacher cache.
inline TrainResult train_student_g2d(const MultimodalDataset& ds, const TeacherCache& cache,
                                     const RunConfig& cfg,
                                     const EpochObserver& observer = nullptr) {
    return train_student_core(ds, &cache, cfg, observer);
}

// Joint-train baseline: the same loop with alpha = beta = 0, no suppression,
// and no teachers.
inline TrainResult train_student_joint(const MultimodalDataset& ds, const RunConfig& cfg,
                                       const EpochObserver& observer = nullptr) {
    RunConfig joint = cfg;
    joint.weights = {0.0, 0.0};
    joint.suppression = Suppression::None;
    return train_student_core(ds, nullptr, joint, observer);
}

} // namespace g2d
