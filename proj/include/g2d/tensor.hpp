#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "g2d/errors.hpp"

namespace g2d {

// Dense row-major tensor of doubles. The sole value carrier through forward
// and backward passes. Rank 1 (vectors, biases) and rank 2 (batches,
// matrices) cover everything at this scale; scalars are shape {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel_of(shape)) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_string(shape));
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    std::size_t numel() const { return data.size(); }

    std::size_t rank() const { return shape.size(); }

    // Rows/cols of a rank-2 tensor; rank-1 tensors are treated as a single row.
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape[1] : (shape.empty() ? 0 : shape[0]); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool is_scalar() const { return numel() == 1; }

    double scalar_value() const {
        if (!is_scalar()) {
            throw ContractError("expected scalar tensor, got shape " + shape_string(shape));
        }
        return data[0];
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) {
            if (d == 0) throw DimensionError("zero extent in shape " + shape_string(s));
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << 'x';
            os << s[i];
        }
        os << ']';
        return os.str();
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             Tensor::shape_string(a.shape) + " vs " +
                             Tensor::shape_string(b.shape));
    }
}

inline void require_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) {
        throw TrainingError(std::string("non-finite values in ") + where);
    }
}

} // namespace g2d
