#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "g2d/datagen.hpp"
#include "g2d/errors.hpp"
#include "g2d/graph.hpp"
#include "g2d/param.hpp"
#include "g2d/rng.hpp"

namespace g2d {

enum class FusionStrategy { Sum, Concat, FiLM, BiGated, LateFusion };

inline const char* fusion_name(FusionStrategy f) {
    switch (f) {
        case FusionStrategy::Sum: return "sum";
        case FusionStrategy::Concat: return "concat";
        case FusionStrategy::FiLM: return "film";
        case FusionStrategy::BiGated: return "bigated";
        case FusionStrategy::LateFusion: return "late";
    }
    return "?";
}

inline FusionStrategy fusion_from_name(const std::string& s) {
    if (s == "sum") return FusionStrategy::Sum;
    if (s == "concat") return FusionStrategy::Concat;
    if (s == "film") return FusionStrategy::FiLM;
    if (s == "bigated") return FusionStrategy::BiGated;
    if (s == "late") return FusionStrategy::LateFusion;
    throw ConfigError("unknown fusion strategy '" + s + "'");
}

namespace detail {

// Pointers into a ParamGroup; the deque storage keeps them stable.
struct AffineRefs {
    Tensor* w = nullptr;
    Tensor* b = nullptr;

    Var apply(Graph& g, Var x) const { return g.affine(x, g.param(*w), g.param(*b)); }
};

inline AffineRefs make_affine(ParamGroup& group, std::size_t in, std::size_t out, Rng& rng) {
    AffineRefs a;
    a.w = &group.add(init_weight(in, out, rng));
    a.b = &group.add(init_bias(out));
    return a;
}

// Two-layer affine+relu stack; the feature space is the post-relu output of
// the second layer.
struct EncoderRefs {
    AffineRefs l1, l2;

    Var apply(Graph& g, Var x) const {
        return g.relu(l2.apply(g, g.relu(l1.apply(g, x))));
    }
};

inline EncoderRefs make_encoder(ParamGroup& group, std::size_t in, std::size_t width,
                                std::size_t feat, Rng& rng) {
    return EncoderRefs{make_affine(group, in, width, rng), make_affine(group, width, feat, rng)};
}

} // namespace detail

// Frozen unimodal model: encoder plus linear classifier head. Structurally
// this is the k=1 late-fusion student.
class Teacher {
public:
    Teacher(int modality, std::size_t input_dim, std::size_t width, std::size_t feat_dim,
            std::size_t num_outputs, Rng& rng)
        : modality_(modality),
          input_dim_(input_dim),
          feat_dim_(feat_dim),
          num_outputs_(num_outputs),
          group_(std::make_unique<ParamGroup>("teacher_m" + std::to_string(modality),
                                              Role::Teacher, modality)) {
        encoder_ = detail::make_encoder(*group_, input_dim, width, feat_dim, rng);
        head_ = detail::make_affine(*group_, feat_dim, num_outputs, rng);
    }

    struct Outputs {
        Var features;
        Var logits;
    };

    Outputs forward(Graph& g, Var x) const {
        if (g.value(x).cols() != input_dim_) {
            throw DimensionError("teacher_forward: input " +
                                 Tensor::shape_string(g.value(x).shape) + " vs expected cols " +
                                 std::to_string(input_dim_));
        }
        Var f = encoder_.apply(g, x);
        return {f, head_.apply(g, f)};
    }

    // Plain-value forward for frozen evaluation and cache building.
    std::pair<Tensor, Tensor> evaluate(const Tensor& x) const {
        Graph g;
        Outputs out = forward(g, g.constant(x));
        return {g.value(out.features), g.value(out.logits)};
    }

    int modality() const { return modality_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t feat_dim() const { return feat_dim_; }
    std::size_t num_outputs() const { return num_outputs_; }
    ParamGroup& group() { return *group_; }
    const ParamGroup& group() const { return *group_; }

private:
    int modality_;
    std::size_t input_dim_, feat_dim_, num_outputs_;
    std::unique_ptr<ParamGroup> group_;
    detail::EncoderRefs encoder_;
    detail::AffineRefs head_;
};

struct StudentConfig {
    std::vector<std::size_t> input_dims; // per modality
    std::vector<std::size_t> feat_dims;  // per modality; must equal teacher dims
    std::size_t encoder_width = 64;
    std::size_t fusion_dim = 32;
    std::size_t num_outputs = 2; // classes, or 1 for regression
    FusionStrategy strategy = FusionStrategy::LateFusion;
    // Conditioning modality for FiLM/BiGated; -1 means unset.
    int cond_modality = -1;

    std::size_t num_modalities() const { return input_dims.size(); }

    void validate() const {
        if (input_dims.empty() || input_dims.size() != feat_dims.size()) {
            throw ConfigError("student config: input_dims/feat_dims must be non-empty and match");
        }
        if (num_outputs == 0 || encoder_width == 0 || fusion_dim == 0) {
            throw ConfigError("student config: zero-sized layer");
        }
        const bool needs_cond = strategy == FusionStrategy::FiLM ||
                                strategy == FusionStrategy::BiGated;
        if (needs_cond &&
            (cond_modality < 0 || static_cast<std::size_t>(cond_modality) >= input_dims.size())) {
            throw ConfigError(std::string(fusion_name(strategy)) +
                              " fusion needs a designated conditioning modality");
        }
    }
};

// Multimodal student: per-modality encoders, a fusion module, and a shared
// classifier head. Late fusion replaces fusion+classifier with per-modality
// heads whose logits are averaged; those heads live in the modality groups,
// so SMP masks a modality's whole pathway.
class Student {
public:
    Student(StudentConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const std::size_t k = cfg_.num_modalities();
        for (std::size_t m = 0; m < k; ++m) {
            modality_groups_.push_back(std::make_unique<ParamGroup>(
                "student_m" + std::to_string(m), Role::Modality, static_cast<int>(m)));
            encoders_.push_back(detail::make_encoder(*modality_groups_[m], cfg_.input_dims[m],
                                                     cfg_.encoder_width, cfg_.feat_dims[m], rng));
            if (cfg_.strategy == FusionStrategy::LateFusion) {
                heads_.push_back(detail::make_affine(*modality_groups_[m], cfg_.feat_dims[m],
                                                     cfg_.num_outputs, rng));
            }
        }
        if (cfg_.strategy != FusionStrategy::LateFusion) {
            fusion_group_ = std::make_unique<ParamGroup>("fusion", Role::Fusion);
            build_fusion(rng);
            classifier_group_ = std::make_unique<ParamGroup>("classifier", Role::Classifier);
            classifier_ = detail::make_affine(*classifier_group_, cfg_.fusion_dim,
                                              cfg_.num_outputs, rng);
        }
    }

    struct Outputs {
        std::vector<Var> features;    // per modality, presence-masked
        Var fused_logits;             // l_s
        std::vector<Var> head_logits; // late fusion only
    };

    // Forward over a batch. isolate >= 0 evaluates one modality in isolation:
    // late fusion routes through that modality's head alone, other strategies
    // zero every other modality's features.
    Outputs forward(Graph& g, const MultimodalBatch& batch, int isolate = -1) const {
        const std::size_t k = cfg_.num_modalities();
        if (batch.num_modalities() != k) {
            throw DimensionError("student_forward: batch has " +
                                 std::to_string(batch.num_modalities()) + " modalities, model " +
                                 std::to_string(k));
        }
        const std::size_t n = batch.inputs[0].rows();
        Outputs out;
        out.features.reserve(k);
        for (std::size_t m = 0; m < k; ++m) {
            Var f = encoders_[m].apply(g, g.constant(batch.inputs[m]));
            if (!all_present(batch.present[m])) {
                f = g.mul(f, g.constant(presence_rows(batch.present[m], cfg_.feat_dims[m])));
            }
            out.features.push_back(f);
        }
        if (cfg_.strategy == FusionStrategy::LateFusion) {
            out.head_logits.reserve(k);
            for (std::size_t m = 0; m < k; ++m)
                out.head_logits.push_back(heads_[m].apply(g, out.features[m]));
            if (isolate >= 0) {
                out.fused_logits = out.head_logits[static_cast<std::size_t>(isolate)];
            } else {
                out.fused_logits = mean_of_present_heads(g, out.head_logits, batch, n);
            }
            return out;
        }
        std::vector<Var> feats = out.features;
        if (isolate >= 0) {
            for (std::size_t m = 0; m < k; ++m) {
                if (static_cast<int>(m) != isolate) {
                    feats[m] = g.constant(Tensor({n, cfg_.feat_dims[m]}));
                }
            }
        }
        Var fused = fuse(g, feats);
        out.fused_logits = classifier_.apply(g, fused);
        return out;
    }

    // Fusion over per-modality feature tensors, per strategy:
    //   Sum:     sum of per-modality projections
    //   Concat:  concatenation followed by one affine
    //   FiLM:    conditioning modality emits (gamma, delta); the summed
    //            projection h of the other modalities becomes gamma*h + delta
    //   BiGated: sigmoid gate from the conditioning modality multiplies the
    //            other modalities' projections before summation
    Var fuse(Graph& g, std::span<const Var> features) const {
        const std::size_t k = cfg_.num_modalities();
        if (features.size() != k || k < 2) {
            throw ContractError("fuse: need all " + std::to_string(k) + " modality features");
        }
        switch (cfg_.strategy) {
            case FusionStrategy::Sum: {
                Var acc = projections_[0].apply(g, features[0]);
                for (std::size_t m = 1; m < k; ++m)
                    acc = g.add(acc, projections_[m].apply(g, features[m]));
                return acc;
            }
            case FusionStrategy::Concat: {
                std::vector<Var> parts(features.begin(), features.end());
                return projections_[0].apply(g, g.concat_cols(parts));
            }
            case FusionStrategy::FiLM: {
                const auto c = static_cast<std::size_t>(cfg_.cond_modality);
                Var h = sum_excluding(g, features, c);
                Var gamma_delta = cond_affine_.apply(g, features[c]);
                Var gamma = g.slice_cols(gamma_delta, 0, cfg_.fusion_dim);
                Var delta = g.slice_cols(gamma_delta, cfg_.fusion_dim, cfg_.fusion_dim);
                return g.add(g.mul(gamma, h), delta);
            }
            case FusionStrategy::BiGated: {
                const auto c = static_cast<std::size_t>(cfg_.cond_modality);
                Var gate = g.sigmoid(cond_affine_.apply(g, features[c]));
                Var h = sum_excluding(g, features, c);
                return g.add(projections_[c].apply(g, features[c]), g.mul(gate, h));
            }
            case FusionStrategy::LateFusion:
                throw ContractError("fuse: late fusion has no fusion module");
        }
        throw ContractError("fuse: unreachable");
    }

    const StudentConfig& config() const { return cfg_; }

    ParamGroup& modality_group(std::size_t m) { return *modality_groups_[m]; }
    const ParamGroup& modality_group(std::size_t m) const { return *modality_groups_[m]; }
    ParamGroup* fusion_group() { return fusion_group_.get(); }
    ParamGroup* classifier_group() { return classifier_group_.get(); }

    // All trainable groups, modality groups first, in a fixed order.
    std::vector<ParamGroup*> groups() {
        std::vector<ParamGroup*> gs;
        for (auto& g : modality_groups_) gs.push_back(g.get());
        if (fusion_group_) gs.push_back(fusion_group_.get());
        if (classifier_group_) gs.push_back(classifier_group_.get());
        return gs;
    }

    std::vector<const ParamGroup*> groups() const {
        std::vector<const ParamGroup*> gs;
        for (const auto& g : modality_groups_) gs.push_back(g.get());
        if (fusion_group_) gs.push_back(fusion_group_.get());
        if (classifier_group_) gs.push_back(classifier_group_.get());
        return gs;
    }

    // Structural audit: every trainable tensor sits in exactly one
    // role-tagged group and the layout matches the strategy.
    void audit_roles() const {
        const std::size_t k = cfg_.num_modalities();
        const std::size_t per_modality =
            4 + (cfg_.strategy == FusionStrategy::LateFusion ? 2 : 0);
        for (std::size_t m = 0; m < k; ++m) {
            const ParamGroup& g = *modality_groups_[m];
            if (g.role() != Role::Modality || g.modality() != static_cast<int>(m) ||
                g.size() != per_modality) {
                throw ContractError("audit: bad modality group " + g.name());
            }
            if (g.velocity().size() != g.size()) {
                throw ContractError("audit: velocity mismatch in " + g.name());
            }
            for (std::size_t i = 0; i < g.size(); ++i)
                require_same_shape(g.tensors()[i], g.velocity()[i], "audit");
        }
        const bool late = cfg_.strategy == FusionStrategy::LateFusion;
        if (late != (fusion_group_ == nullptr) || late != (classifier_group_ == nullptr)) {
            throw ContractError("audit: fusion/classifier groups inconsistent with strategy");
        }
        if (!late) {
            if (fusion_group_->role() != Role::Fusion ||
                classifier_group_->role() != Role::Classifier) {
                throw ContractError("audit: wrong roles on fusion/classifier groups");
            }
            if (classifier_group_->size() != 2 || fusion_group_->size() == 0) {
                throw ContractError("audit: unexpected fusion/classifier layout");
            }
        }
    }

    void validate_against_teachers(const std::vector<Teacher>& teachers) const {
        if (teachers.size() != cfg_.num_modalities()) {
            throw DimensionError("student/teacher modality count mismatch");
        }
        for (std::size_t m = 0; m < teachers.size(); ++m) {
            if (teachers[m].feat_dim() != cfg_.feat_dims[m]) {
                throw DimensionError("modality " + std::to_string(m) +
                                     ": student feature dim " + std::to_string(cfg_.feat_dims[m]) +
                                     " != teacher feature dim " +
                                     std::to_string(teachers[m].feat_dim()));
            }
        }
    }

private:
    void build_fusion(Rng& rng) {
        const std::size_t k = cfg_.num_modalities();
        switch (cfg_.strategy) {
            case FusionStrategy::Sum:
                for (std::size_t m = 0; m < k; ++m)
                    projections_.push_back(
                        detail::make_affine(*fusion_group_, cfg_.feat_dims[m], cfg_.fusion_dim, rng));
                break;
            case FusionStrategy::Concat: {
                std::size_t total = 0;
                for (std::size_t d : cfg_.feat_dims) total += d;
                projections_.push_back(
                    detail::make_affine(*fusion_group_, total, cfg_.fusion_dim, rng));
                break;
            }
            case FusionStrategy::FiLM: {
                for (std::size_t m = 0; m < k; ++m) {
                    if (static_cast<int>(m) == cfg_.cond_modality) {
                        projections_.push_back({}); // conditioning modality has no projection
                    } else {
                        projections_.push_back(detail::make_affine(*fusion_group_,
                                                                   cfg_.feat_dims[m],
                                                                   cfg_.fusion_dim, rng));
                    }
                }
                cond_affine_ = detail::make_affine(
                    *fusion_group_, cfg_.feat_dims[static_cast<std::size_t>(cfg_.cond_modality)],
                    2 * cfg_.fusion_dim, rng);
                break;
            }
            case FusionStrategy::BiGated: {
                for (std::size_t m = 0; m < k; ++m)
                    projections_.push_back(
                        detail::make_affine(*fusion_group_, cfg_.feat_dims[m], cfg_.fusion_dim, rng));
                cond_affine_ = detail::make_affine(
                    *fusion_group_, cfg_.feat_dims[static_cast<std::size_t>(cfg_.cond_modality)],
                    cfg_.fusion_dim, rng);
                break;
            }
            case FusionStrategy::LateFusion:
                break;
        }
    }

    Var sum_excluding(Graph& g, std::span<const Var> features, std::size_t skip) const {
        Var acc{};
        bool first = true;
        for (std::size_t m = 0; m < features.size(); ++m) {
            if (m == skip) continue;
            Var proj = projections_[m].apply(g, features[m]);
            acc = first ? proj : g.add(acc, proj);
            first = false;
        }
        return acc;
    }

    // Late-fusion combination: average head logits over the modalities
    // present for each sample (plain mean when nothing is missing).
    Var mean_of_present_heads(Graph& g, const std::vector<Var>& heads,
                              const MultimodalBatch& batch, std::size_t n) const {
        const std::size_t k = heads.size();
        bool complete = true;
        for (std::size_t m = 0; m < k && complete; ++m) complete = all_present(batch.present[m]);
        if (complete) {
            Var acc = heads[0];
            for (std::size_t m = 1; m < k; ++m) acc = g.add(acc, heads[m]);
            return g.scale(acc, 1.0 / static_cast<double>(k));
        }
        std::vector<double> inv_count(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            int cnt = 0;
            for (std::size_t m = 0; m < k; ++m) cnt += batch.present[m][i] ? 1 : 0;
            inv_count[i] = 1.0 / static_cast<double>(cnt);
        }
        Var acc{};
        bool first = true;
        for (std::size_t m = 0; m < k; ++m) {
            Tensor weight({n, cfg_.num_outputs});
            for (std::size_t i = 0; i < n; ++i) {
                const double w = batch.present[m][i] ? inv_count[i] : 0.0;
                for (std::size_t c = 0; c < cfg_.num_outputs; ++c) weight.at(i, c) = w;
            }
            Var term = g.mul(heads[m], g.constant(std::move(weight)));
            acc = first ? term : g.add(acc, term);
            first = false;
        }
        return acc;
    }

    static bool all_present(const std::vector<std::uint8_t>& p) {
        for (std::uint8_t v : p)
            if (!v) return false;
        return true;
    }

    static Tensor presence_rows(const std::vector<std::uint8_t>& p, std::size_t dim) {
        Tensor mask({p.size(), dim});
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double v = p[i] ? 1.0 : 0.0;
            for (std::size_t d = 0; d < dim; ++d) mask.at(i, d) = v;
        }
        return mask;
    }

    StudentConfig cfg_;
    std::vector<std::unique_ptr<ParamGroup>> modality_groups_;
    std::unique_ptr<ParamGroup> fusion_group_;
    std::unique_ptr<ParamGroup> classifier_group_;
    std::vector<detail::EncoderRefs> encoders_;
    std::vector<detail::AffineRefs> heads_;       // late fusion
    std::vector<detail::AffineRefs> projections_; // per modality (or single for concat)
    detail::AffineRefs cond_affine_;              // FiLM gamma/delta or BiGated gate
    detail::AffineRefs classifier_;
};

// Checkpoint helpers: teachers and students serialize through the common
// ParamGroup format and reload by value copy into a freshly built model.

inline void load_teacher_values(Teacher& t, const std::vector<ParamGroup>& groups) {
    if (groups.size() != 1) throw PipelineError("teacher checkpoint: expected one group");
    copy_group_values(groups[0], t.group());
}

inline void load_student_values(Student& s, const std::vector<ParamGroup>& groups) {
    auto dst = s.groups();
    if (groups.size() != dst.size()) {
        throw PipelineError("student checkpoint: group count mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) copy_group_values(groups[i], *dst[i]);
}

} // namespace g2d
