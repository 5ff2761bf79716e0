#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2d/errors.hpp"
#include "g2d/tensor.hpp"

namespace g2d {

// Handle to a value recorded on a Graph.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

// Reverse-mode autodiff tape.
//
// A Graph records one forward pass as an ordered list of op nodes; backward()
// replays the recorded gradient rules in exact reverse order. Parameters are
// bound by reference with param(), so after backward() their gradients can be
// fetched by tensor identity via grad_for(). A graph is built fresh for every
// training iteration; bound tensors must outlive it.
//
// Everything is plain double arithmetic in recording order, so identical
// inputs yield bit-identical gradients.
class Graph {
public:
    // Leaf that requires no gradient.
    Var constant(Tensor value) {
        require_finite(value, "constant");
        return push(std::move(value), false);
    }

    // Trainable leaf bound to caller-owned storage. Binding the same tensor
    // twice returns the same node.
    Var param(Tensor& t) {
        auto it = param_ids_.find(&t);
        if (it != param_ids_.end()) return Var{it->second};
        require_finite(t, "param");
        Var v = push(t, true);
        param_ids_.emplace(&t, v.id);
        return v;
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }

    // y = x W + b with b broadcast over rows.
    Var affine(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

    Var matmul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
            throw DimensionError("matmul: incompatible shapes " +
                                 Tensor::shape_string(A.shape) + " vs " +
                                 Tensor::shape_string(B.shape));
        }
        const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
        Tensor out({n, m});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += A.at(i, p) * B.at(p, j);
                out.at(i, j) = acc;
            }
        }
        return push(std::move(out), requires_grad(a) || requires_grad(b),
                    [a, b, n, k, m](Graph& g, const Tensor& gout) {
                        const Tensor& A = g.value(a);
                        const Tensor& B = g.value(b);
                        if (g.requires_grad(a)) {
                            Tensor& da = g.grad_ref(a);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                    double acc = 0.0;
                                    for (std::size_t j = 0; j < m; ++j)
                                        acc += gout.at(i, j) * B.at(p, j);
                                    da.at(i, p) += acc;
                                }
                        }
                        if (g.requires_grad(b)) {
                            Tensor& db = g.grad_ref(b);
                            for (std::size_t p = 0; p < k; ++p)
                                for (std::size_t j = 0; j < m; ++j) {
                                    double acc = 0.0;
                                    for (std::size_t i = 0; i < n; ++i)
                                        acc += A.at(i, p) * gout.at(i, j);
                                    db.at(p, j) += acc;
                                }
                        }
                    });
    }

    Var add_bias(Var x, Var b) {
        const Tensor& X = value(x);
        const Tensor& B = value(b);
        if (B.rank() != 1 || B.numel() != X.cols()) {
            throw DimensionError("add_bias: bias " + Tensor::shape_string(B.shape) +
                                 " does not match " + Tensor::shape_string(X.shape));
        }
        Tensor out = X;
        for (std::size_t i = 0; i < X.rows(); ++i)
            for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) += B.data[j];
        return push(std::move(out), requires_grad(x) || requires_grad(b),
                    [x, b](Graph& g, const Tensor& gout) {
                        if (g.requires_grad(x)) g.accumulate(x, gout);
                        if (g.requires_grad(b)) {
                            Tensor& db = g.grad_ref(b);
                            for (std::size_t i = 0; i < gout.rows(); ++i)
                                for (std::size_t j = 0; j < gout.cols(); ++j)
                                    db.data[j] += gout.at(i, j);
                        }
                    });
    }

    Var add(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_same_shape(A, B, "add");
        Tensor out = A;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
        return push(std::move(out), requires_grad(a) || requires_grad(b),
                    [a, b](Graph& g, const Tensor& gout) {
                        if (g.requires_grad(a)) g.accumulate(a, gout);
                        if (g.requires_grad(b)) g.accumulate(b, gout);
                    });
    }

    Var sub(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_same_shape(A, B, "sub");
        Tensor out = A;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= B.data[i];
        return push(std::move(out), requires_grad(a) || requires_grad(b),
                    [a, b](Graph& g, const Tensor& gout) {
                        if (g.requires_grad(a)) g.accumulate(a, gout);
                        if (g.requires_grad(b)) {
                            Tensor& db = g.grad_ref(b);
                            for (std::size_t i = 0; i < gout.numel(); ++i)
                                db.data[i] -= gout.data[i];
                        }
                    });
    }

    // Elementwise (Hadamard) product.
    Var mul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_same_shape(A, B, "mul");
        Tensor out = A;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= B.data[i];
        return push(std::move(out), requires_grad(a) || requires_grad(b),
                    [a, b](Graph& g, const Tensor& gout) {
                        const Tensor& A = g.value(a);
                        const Tensor& B = g.value(b);
                        if (g.requires_grad(a)) {
                            Tensor& da = g.grad_ref(a);
                            for (std::size_t i = 0; i < gout.numel(); ++i)
                                da.data[i] += gout.data[i] * B.data[i];
                        }
                        if (g.requires_grad(b)) {
                            Tensor& db = g.grad_ref(b);
                            for (std::size_t i = 0; i < gout.numel(); ++i)
                                db.data[i] += gout.data[i] * A.data[i];
                        }
                    });
    }

    Var scale(Var x, double c) {
        Tensor out = value(x);
        for (double& v : out.data) v *= c;
        return push(std::move(out), requires_grad(x),
                    [x, c](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        Tensor& dx = g.grad_ref(x);
                        for (std::size_t i = 0; i < gout.numel(); ++i)
                            dx.data[i] += c * gout.data[i];
                    });
    }

    Var add_const(Var x, double c) {
        Tensor out = value(x);
        for (double& v : out.data) v += c;
        return push(std::move(out), requires_grad(x),
                    [x](Graph& g, const Tensor& gout) {
                        if (g.requires_grad(x)) g.accumulate(x, gout);
                    });
    }

    Var relu(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(std::move(out), requires_grad(x),
                    [x](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        const Tensor& X = g.value(x);
                        Tensor& dx = g.grad_ref(x);
                        for (std::size_t i = 0; i < gout.numel(); ++i)
                            dx.data[i] += X.data[i] > 0.0 ? gout.data[i] : 0.0;
                    });
    }

    Var sigmoid(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = stable_sigmoid(v);
        Tensor s = out;
        return push(std::move(out), requires_grad(x),
                    [x, s = std::move(s)](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        Tensor& dx = g.grad_ref(x);
                        for (std::size_t i = 0; i < gout.numel(); ++i)
                            dx.data[i] += gout.data[i] * s.data[i] * (1.0 - s.data[i]);
                    });
    }

    // Row-wise softmax over the class axis, computed with max subtraction.
    Var softmax(Var x) {
        Tensor out = softmax_value(value(x));
        Tensor s = out;
        return push(std::move(out), requires_grad(x),
                    [x, s = std::move(s)](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        Tensor& dx = g.grad_ref(x);
                        for (std::size_t i = 0; i < s.rows(); ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < s.cols(); ++j)
                                dot += gout.at(i, j) * s.at(i, j);
                            for (std::size_t j = 0; j < s.cols(); ++j)
                                dx.at(i, j) += s.at(i, j) * (gout.at(i, j) - dot);
                        }
                    });
    }

    Var log_softmax(Var x) {
        const Tensor& X = value(x);
        check_class_axis(X, "log_softmax");
        Tensor out = X;
        for (std::size_t i = 0; i < X.rows(); ++i) {
            double mx = X.at(i, 0);
            for (std::size_t j = 1; j < X.cols(); ++j) mx = std::max(mx, X.at(i, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < X.cols(); ++j) sum += std::exp(X.at(i, j) - mx);
            const double lse = mx + std::log(sum);
            for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) = X.at(i, j) - lse;
        }
        return push(std::move(out), requires_grad(x),
                    [x](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        const Tensor s = softmax_value(g.value(x));
                        Tensor& dx = g.grad_ref(x);
                        for (std::size_t i = 0; i < s.rows(); ++i) {
                            double rowsum = 0.0;
                            for (std::size_t j = 0; j < s.cols(); ++j)
                                rowsum += gout.at(i, j);
                            for (std::size_t j = 0; j < s.cols(); ++j)
                                dx.at(i, j) += gout.at(i, j) - s.at(i, j) * rowsum;
                        }
                    });
    }

    Var concat_cols(std::span<const Var> parts) {
        if (parts.empty()) throw ContractError("concat_cols: no inputs");
        const std::size_t n = value(parts[0]).rows();
        std::size_t total = 0;
        bool any_grad = false;
        for (Var p : parts) {
            const Tensor& t = value(p);
            if (t.rank() != 2 || t.rows() != n) {
                throw DimensionError("concat_cols: row mismatch at " +
                                     Tensor::shape_string(t.shape));
            }
            total += t.cols();
            any_grad = any_grad || requires_grad(p);
        }
        Tensor out({n, total});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& t = value(p);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < t.cols(); ++j)
                    out.at(i, off + j) = t.at(i, j);
            off += t.cols();
        }
        std::vector<Var> inputs(parts.begin(), parts.end());
        return push(std::move(out), any_grad,
                    [inputs = std::move(inputs)](Graph& g, const Tensor& gout) {
                        std::size_t off = 0;
                        for (Var p : inputs) {
                            const Tensor& t = g.value(p);
                            if (g.requires_grad(p)) {
                                Tensor& dp = g.grad_ref(p);
                                for (std::size_t i = 0; i < t.rows(); ++i)
                                    for (std::size_t j = 0; j < t.cols(); ++j)
                                        dp.at(i, j) += gout.at(i, off + j);
                            }
                            off += t.cols();
                        }
                    });
    }

    Var slice_cols(Var x, std::size_t begin, std::size_t count) {
        const Tensor& X = value(x);
        if (X.rank() != 2 || begin + count > X.cols()) {
            throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                                 std::to_string(begin + count) + ") out of " +
                                 Tensor::shape_string(X.shape));
        }
        Tensor out({X.rows(), count});
        for (std::size_t i = 0; i < X.rows(); ++i)
            for (std::size_t j = 0; j < count; ++j) out.at(i, j) = X.at(i, begin + j);
        return push(std::move(out), requires_grad(x),
                    [x, begin, count](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        Tensor& dx = g.grad_ref(x);
                        for (std::size_t i = 0; i < gout.rows(); ++i)
                            for (std::size_t j = 0; j < count; ++j)
                                dx.at(i, begin + j) += gout.at(i, j);
                    });
    }

    Var sum_all(Var x) {
        const Tensor& X = value(x);
        double total = 0.0;
        for (double v : X.data) total += v;
        return push(Tensor::scalar(total), requires_grad(x),
                    [x](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        Tensor& dx = g.grad_ref(x);
                        const double gs = gout.data[0];
                        for (double& v : dx.data) v += gs;
                    });
    }

    Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(value(x).numel())); }

    // -(1/N) * sum_i x[i, labels[i]]; with x = log_softmax(logits) this is
    // batch-mean cross-entropy.
    Var neg_mean_gather(Var x, const std::vector<int>& labels) {
        const Tensor& X = value(x);
        check_class_axis(X, "neg_mean_gather");
        if (labels.size() != X.rows()) {
            throw ContractError("neg_mean_gather: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(X.rows()) + " rows");
        }
        double total = 0.0;
        for (std::size_t i = 0; i < X.rows(); ++i) {
            const int y = labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= X.cols()) {
                throw DataError("label " + std::to_string(y) + " out of range [0, " +
                                std::to_string(X.cols()) + ") at row " + std::to_string(i));
            }
            total += X.at(i, static_cast<std::size_t>(y));
        }
        const double inv_n = 1.0 / static_cast<double>(X.rows());
        return push(Tensor::scalar(-total * inv_n), requires_grad(x),
                    [x, labels, inv_n](Graph& g, const Tensor& gout) {
                        if (!g.requires_grad(x)) return;
                        Tensor& dx = g.grad_ref(x);
                        const double gs = gout.data[0] * inv_n;
                        for (std::size_t i = 0; i < labels.size(); ++i)
                            dx.at(i, static_cast<std::size_t>(labels[i])) -= gs;
                    });
    }

    // Clears old gradients, seeds d(loss)/d(loss) = 1 and replays the tape in
    // reverse. Gradients of tensors the loss never touched stay zero.
    void backward(Var loss) {
        if (!value(loss).is_scalar()) {
            throw ContractError("backward: loss must be scalar, got shape " +
                                Tensor::shape_string(value(loss).shape));
        }
        require_finite(value(loss), "loss");
        for (auto& gt : grads_) gt.data.clear(), gt.shape.clear();
        grad_ref(loss).data[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            const Node& node = nodes_[i];
            if (!node.backprop || !node.requires_grad) continue;
            const Tensor& gt = grads_[i];
            if (gt.data.empty()) continue; // nothing flowed into this node
            node.backprop(*this, gt);
        }
    }

    // Gradient of the last backward() pass w.r.t. a recorded node.
    Tensor grad(Var v) const {
        if (!grads_[v.id].data.empty()) return grads_[v.id];
        return Tensor::zeros(value(v).shape);
    }

    // Gradient w.r.t. a bound parameter tensor; zero if unbound or unreached.
    Tensor grad_for(const Tensor& t) const {
        auto it = param_ids_.find(&t);
        if (it == param_ids_.end() || grads_[it->second].data.empty()) {
            return Tensor::zeros(t.shape);
        }
        return grads_[it->second];
    }

    std::size_t size() const { return nodes_.size(); }

    static Tensor softmax_value(const Tensor& x) {
        check_class_axis(x, "softmax");
        Tensor out = x;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double mx = x.at(i, 0);
            for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < x.cols(); ++j) {
                out.at(i, j) = std::exp(x.at(i, j) - mx);
                sum += out.at(i, j);
            }
            for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= sum;
        }
        return out;
    }

    static double stable_sigmoid(double v) {
        if (v >= 0.0) {
            const double e = std::exp(-v);
            return 1.0 / (1.0 + e);
        }
        const double e = std::exp(v);
        return e / (1.0 + e);
    }

private:
    using BackpropFn = std::function<void(Graph&, const Tensor&)>;

    struct Node {
        Tensor value;
        bool requires_grad = false;
        BackpropFn backprop; // empty for leaves
    };

    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    Tensor& grad_ref(Var v) { return grad_ref(v.id); }

    Tensor& grad_ref(std::size_t id) {
        Tensor& gt = grads_[id];
        if (gt.data.empty()) {
            gt.shape = nodes_[id].value.shape;
            gt.data.assign(nodes_[id].value.numel(), 0.0);
        }
        return gt;
    }

    void accumulate(Var v, const Tensor& g) {
        Tensor& dst = grad_ref(v);
        for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
    }

    Var push(Tensor value, bool requires_grad, BackpropFn fn = nullptr) {
        require_finite(value, "op output");
        nodes_.push_back(Node{std::move(value), requires_grad, std::move(fn)});
        grads_.emplace_back();
        return Var{nodes_.size() - 1};
    }

    static void check_class_axis(const Tensor& x, const char* op) {
        if (x.cols() == 0) {
            throw DimensionError(std::string(op) + ": empty class axis in " +
                                 Tensor::shape_string(x.shape));
        }
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::unordered_map<const Tensor*, std::size_t> param_ids_;
};

} // namespace g2d
