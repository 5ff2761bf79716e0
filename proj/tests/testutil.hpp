#pragma once

#include <vector>

#include "g2d/graph.hpp"
#include "g2d/param.hpp"
#include "g2d/rng.hpp"
#include "g2d/tensor.hpp"

namespace g2d::testutil {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

inline std::vector<int> random_labels(std::size_t n, int num_classes, Rng& rng) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.uniform_index(num_classes));
    return y;
}

// Naive triple-loop matrix multiply, kept free of Graph code on purpose.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

// Multinomial logistic probe trained with full-batch gradient descent.
// Deterministic separability oracle for a single modality.
inline double linear_probe_accuracy(const Tensor& x_train, const std::vector<int>& y_train,
                                    const Tensor& x_eval, const std::vector<int>& y_eval,
                                    int num_classes, int steps = 400, double lr = 0.5) {
    ParamGroup probe("probe", Role::Classifier);
    Tensor& w = probe.add(Tensor({x_train.cols(), static_cast<std::size_t>(num_classes)}));
    Tensor& b = probe.add(Tensor({static_cast<std::size_t>(num_classes)}));
    for (int step = 0; step < steps; ++step) {
        Graph g;
        Var logits = g.affine(g.constant(x_train), g.param(w), g.param(b));
        g.backward(g.neg_mean_gather(g.log_softmax(logits), y_train));
        sgd_step(probe, collect_grads(g, probe), lr, 0.0, 0.0, 1.0);
    }
    Graph g;
    const Tensor& logits = g.value(g.affine(g.constant(x_eval), g.param(w), g.param(b)));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        if (static_cast<int>(best) == y_eval[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

// Ridge least-squares probe; returns R^2 on the eval set. Solved by
// Gaussian elimination on the normal equations.
inline double least_squares_probe_r2(const Tensor& x_train, const std::vector<double>& y_train,
                                     const Tensor& x_eval, const std::vector<double>& y_eval,
                                     double ridge = 1e-8) {
    const std::size_t d = x_train.cols() + 1; // trailing intercept column
    std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
    std::vector<double> rhs(d, 0.0);
    auto feature = [&](const Tensor& x, std::size_t i, std::size_t j) {
        return j < x.cols() ? x.at(i, j) : 1.0;
    };
    for (std::size_t i = 0; i < x_train.rows(); ++i) {
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = 0; q < d; ++q)
                a[p][q] += feature(x_train, i, p) * feature(x_train, i, q);
            rhs[p] += feature(x_train, i, p) * y_train[i];
        }
    }
    for (std::size_t p = 0; p < d; ++p) a[p][p] += ridge;
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        std::swap(rhs[col], rhs[pivot]);
        for (std::size_t r = col + 1; r < d; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t q = col; q < d; ++q) a[r][q] -= f * a[col][q];
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<double> w(d, 0.0);
    for (std::size_t r = d; r-- > 0;) {
        double acc = rhs[r];
        for (std::size_t q = r + 1; q < d; ++q) acc -= a[r][q] * w[q];
        w[r] = acc / a[r][r];
    }
    double mean = 0.0;
    for (double v : y_eval) mean += v;
    mean /= static_cast<double>(y_eval.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < x_eval.rows(); ++i) {
        double pred = 0.0;
        for (std::size_t p = 0; p < d; ++p) pred += feature(x_eval, i, p) * w[p];
        ss_res += (y_eval[i] - pred) * (y_eval[i] - pred);
        ss_tot += (y_eval[i] - mean) * (y_eval[i] - mean);
    }
    return 1.0 - ss_res / ss_tot;
}

} // namespace g2d::testutil
