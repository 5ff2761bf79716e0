#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "g2d/errors.hpp"
#include "g2d/graph.hpp"
#include "g2d/rng.hpp"
#include "g2d/tensor.hpp"

namespace g2d {

enum class Role {
    Modality,   // per-modality student encoder (and late-fusion head)
    Fusion,     // fusion-module parameters
    Classifier, // shared classifier head
    Teacher,    // frozen unimodal teacher
};

inline const char* role_name(Role r) {
    switch (r) {
        case Role::Modality: return "modality";
        case Role::Fusion: return "fusion";
        case Role::Classifier: return "classifier";
        case Role::Teacher: return "teacher";
    }
    return "?";
}

// Named, role-tagged set of trainable tensors plus matching momentum state.
// The unit of gradient masking: suppression applies per group. Tensors live
// in deques so references handed out by add() stay valid as the group grows
// (graphs bind parameters by address).
class ParamGroup {
public:
    ParamGroup() = default;

    ParamGroup(std::string name, Role role, int modality = -1)
        : name_(std::move(name)), role_(role), modality_(modality) {}

    const std::string& name() const { return name_; }
    Role role() const { return role_; }
    // Modality index for Modality/Teacher roles, -1 otherwise.
    int modality() const { return modality_; }

    Tensor& add(Tensor t) {
        tensors_.push_back(std::move(t));
        velocity_.emplace_back(tensors_.back().shape);
        return tensors_.back();
    }

    std::deque<Tensor>& tensors() { return tensors_; }
    const std::deque<Tensor>& tensors() const { return tensors_; }
    std::deque<Tensor>& velocity() { return velocity_; }
    const std::deque<Tensor>& velocity() const { return velocity_; }

    std::size_t size() const { return tensors_.size(); }

private:
    std::string name_;
    Role role_ = Role::Modality;
    int modality_ = -1;
    std::deque<Tensor> tensors_;
    std::deque<Tensor> velocity_;
};

// Symmetric fan-scaled init: weights uniform in [-s, s] with
// s = sqrt(6 / (fan_in + fan_out)), biases zero.
inline Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_in, fan_out});
    for (double& v : w.data) v = rng.uniform(-s, s);
    return w;
}

inline Tensor init_bias(std::size_t dim) { return Tensor({dim}); }

// Copies tensor values from one group into another with identical layout;
// velocity in the destination is reset to zero.
inline void copy_group_values(const ParamGroup& src, ParamGroup& dst) {
    if (src.size() != dst.size() || src.role() != dst.role() ||
        src.modality() != dst.modality()) {
        throw PipelineError("group layout mismatch loading '" + src.name() + "' into '" +
                            dst.name() + "'");
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        require_same_shape(src.tensors()[i], dst.tensors()[i], "copy_group_values");
        dst.tensors()[i].data = src.tensors()[i].data;
        dst.velocity()[i].data.assign(dst.velocity()[i].numel(), 0.0);
    }
}

// Gradients for one group, in tensor order, pulled from a graph after
// backward(). Tensors the loss never reached come back as zeros.
inline std::vector<Tensor> collect_grads(const Graph& graph, const ParamGroup& group) {
    std::vector<Tensor> grads;
    grads.reserve(group.size());
    for (const Tensor& t : group.tensors()) grads.push_back(graph.grad_for(t));
    return grads;
}

// Momentum SGD step with coupled L2 weight decay and a modulation
// coefficient kappa on the whole update:
//
//   g' = kappa * (grad + weight_decay * theta)
//   v  = momentum * v + g'
//   theta -= lr * v
//
// kappa == 0 is a bit-exact no-op: the velocity is frozen too, so a
// suppressed group resumes from a clean state rather than drifting on stale
// momentum.
inline void sgd_step(ParamGroup& group, const std::vector<Tensor>& grads, double lr,
                     double momentum, double weight_decay, double kappa) {
    if (lr <= 0.0) throw ConfigError("sgd_step: lr must be positive, got " + std::to_string(lr));
    if (grads.size() != group.size()) {
        throw ContractError("sgd_step: " + std::to_string(grads.size()) + " grads for " +
                            std::to_string(group.size()) + " tensors in group " + group.name());
    }
    if (kappa == 0.0) return;
    for (std::size_t i = 0; i < group.size(); ++i) {
        Tensor& theta = group.tensors()[i];
        Tensor& vel = group.velocity()[i];
        const Tensor& grad = grads[i];
        require_same_shape(theta, grad, "sgd_step");
        for (std::size_t j = 0; j < theta.numel(); ++j) {
            const double g = kappa * (grad.data[j] + weight_decay * theta.data[j]);
            vel.data[j] = momentum * vel.data[j] + g;
            theta.data[j] -= lr * vel.data[j];
        }
    }
}

} // namespace g2d
