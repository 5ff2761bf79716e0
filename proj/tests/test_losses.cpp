#include <gtest/gtest.h>

#include <cmath>

#include "g2d/gradcheck.hpp"
#include "g2d/losses.hpp"
#include "testutil.hpp"

using namespace g2d;
using testutil::random_labels;
using testutil::random_tensor;

namespace {

MultimodalBatch classify_batch(std::size_t n, int classes, Rng& rng,
                               std::vector<std::size_t> dims = {4, 4}) {
    MultimodalBatch b;
    for (std::size_t d : dims) {
        b.inputs.push_back(random_tensor({n, d}, rng));
        b.present.emplace_back(n, std::uint8_t{1});
    }
    b.labels = random_labels(n, classes, rng);
    for (std::size_t i = 0; i < n; ++i) b.indices.push_back(i);
    return b;
}

// Everything needed to evaluate the full objective on one random batch.
struct LossFixture {
    StudentConfig cfg;
    Student student;
    std::vector<Teacher> teachers;
    MultimodalBatch batch;
    TeacherBatchOutputs teacher_out;
    Task task = Task::Classify;

    LossFixture(FusionStrategy strategy, Rng& rng, std::size_t n = 3)
        : cfg(make_cfg(strategy)), student(cfg, rng) {
        for (std::size_t m = 0; m < cfg.num_modalities(); ++m) {
            teachers.emplace_back(static_cast<int>(m), cfg.input_dims[m], 6, cfg.feat_dims[m],
                                  cfg.num_outputs, rng);
        }
        batch = classify_batch(n, static_cast<int>(cfg.num_outputs), rng, cfg.input_dims);
        refresh_teacher_outputs();
    }

    static StudentConfig make_cfg(FusionStrategy strategy) {
        StudentConfig cfg;
        cfg.input_dims = {4, 3};
        cfg.feat_dims = {5, 4};
        cfg.encoder_width = 6;
        cfg.fusion_dim = 4;
        cfg.num_outputs = 3;
        cfg.strategy = strategy;
        if (strategy == FusionStrategy::FiLM || strategy == FusionStrategy::BiGated) {
            cfg.cond_modality = 0;
        }
        return cfg;
    }

    void refresh_teacher_outputs() {
        teacher_out.feats.clear();
        teacher_out.logits.clear();
        for (std::size_t m = 0; m < teachers.size(); ++m) {
            auto [f, l] = teachers[m].evaluate(batch.inputs[m]);
            teacher_out.feats.push_back(std::move(f));
            teacher_out.logits.push_back(std::move(l));
        }
    }

    double total(Graph& g, const LossWeights& w, LossBreakdown* breakdown = nullptr) {
        auto out = student.forward(g, batch);
        auto res = g2d_loss(g, batch, out, teacher_out, w, task);
        if (breakdown) *breakdown = res.breakdown;
        g.backward(res.total);
        return res.breakdown.total;
    }
};

} // namespace

TEST(StudentLoss, UniformTwoClassCrossEntropyIsLn2) {
    Graph g;
    MultimodalBatch b;
    b.labels = {0};
    Var logits = g.constant(Tensor({1, 2}, {0, 0}));
    EXPECT_NEAR(g.value(student_loss(g, logits, b, Task::Classify)).scalar_value(),
                std::log(2.0), 1e-15);
}

TEST(StudentLoss, RegressionExactFitGivesZero) {
    Graph g;
    MultimodalBatch b;
    Tensor logits({2, 1}, {0.3, -1.8});
    b.targets = {Graph::stable_sigmoid(0.3), Graph::stable_sigmoid(-1.8)};
    EXPECT_EQ(g.value(student_loss(g, g.constant(logits), b, Task::Regress)).scalar_value(), 0.0);
}

TEST(StudentLoss, MatchesPerSampleHandComputation) {
    Rng rng(31);
    Tensor logits = random_tensor({5, 4}, rng, 2.0);
    MultimodalBatch b;
    b.labels = random_labels(5, 4, rng);
    Graph g;
    const double got = g.value(student_loss(g, g.constant(logits), b, Task::Classify))
                           .scalar_value();
    double expected = 0.0;
    Tensor p = Graph::softmax_value(logits);
    for (std::size_t i = 0; i < 5; ++i)
        expected -= std::log(p.at(i, static_cast<std::size_t>(b.labels[i])));
    expected /= 5.0;
    EXPECT_NEAR(got, expected, 1e-12);
}

TEST(StudentLoss, OutOfRangeLabelRejected) {
    Graph g;
    MultimodalBatch b;
    b.labels = {3};
    Var logits = g.constant(Tensor({1, 2}, {0, 0}));
    EXPECT_THROW(student_loss(g, logits, b, Task::Classify), DataError);
}

TEST(FeatLoss, IdenticalFeaturesGiveZero) {
    Rng rng(32);
    Tensor f = random_tensor({3, 4}, rng);
    Graph g;
    EXPECT_EQ(g.value(feat_loss(g, g.constant(f), f)).scalar_value(), 0.0);
}

TEST(FeatLoss, AllOnesDifferenceGivesDimension) {
    const std::size_t d = 7;
    Tensor f_t({1, d});
    Tensor f_s = Tensor::full({1, d}, 1.0);
    Graph g;
    EXPECT_DOUBLE_EQ(g.value(feat_loss(g, g.constant(f_s), f_t)).scalar_value(),
                     static_cast<double>(d));
}

TEST(FeatLoss, MatchesNaiveDoubleLoop) {
    Rng rng(33);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({4, 6}, rng);
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            const double diff = a.at(i, j) - b.at(i, j);
            expected += diff * diff;
        }
    expected /= 4.0;
    Graph g;
    EXPECT_NEAR(g.value(feat_loss(g, g.constant(a), b)).scalar_value(), expected, 1e-12);
}

TEST(FeatLoss, ShapeMismatchRejected) {
    Graph g;
    Var f_s = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    EXPECT_THROW(feat_loss(g, f_s, Tensor({2, 4})), DimensionError);
}

TEST(LogitLoss, IdenticalLogitsGiveNearZero) {
    Rng rng(34);
    Tensor l = random_tensor({3, 4}, rng, 3.0);
    Graph g;
    EXPECT_LT(std::abs(g.value(logit_loss(g, l, g.constant(l), Task::Classify)).scalar_value()),
              1e-12);
}

TEST(LogitLoss, ClosedFormTwoClassCase) {
    // teacher (ln 3, 0) -> p = (0.75, 0.25); student (0, 0) -> q = (0.5, 0.5)
    // KL = 0.75 ln 1.5 + 0.25 ln 0.5
    Tensor lt({1, 2}, {std::log(3.0), 0.0});
    Tensor ls({1, 2}, {0.0, 0.0});
    Graph g;
    const double got = g.value(logit_loss(g, lt, g.constant(ls), Task::Classify)).scalar_value();
    const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    EXPECT_NEAR(got, expected, 1e-12);
    EXPECT_NEAR(got, 0.130812, 1e-6);
}

TEST(LogitLoss, NonNegativeOnRandomPairs) {
    Rng rng(35);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor lt = random_tensor({2, 5}, rng, 4.0);
        Tensor ls = random_tensor({2, 5}, rng, 4.0);
        Graph g;
        EXPECT_GE(g.value(logit_loss(g, lt, g.constant(ls), Task::Classify)).scalar_value(),
                  -1e-15);
    }
}

TEST(LogitLoss, ClassCountMismatchRejected) {
    Graph g;
    Var ls = g.constant(Tensor({1, 3}, {0, 0, 0}));
    EXPECT_THROW(logit_loss(g, Tensor({1, 2}, {0, 0}), ls, Task::Classify), DimensionError);
}

TEST(G2dLoss, ZeroWeightsReduceToStudentLoss) {
    Rng rng(36);
    LossFixture fx(FusionStrategy::LateFusion, rng);
    Graph g;
    LossBreakdown bd;
    fx.total(g, {0.0, 0.0}, &bd);
    EXPECT_EQ(bd.total, bd.student);
}

TEST(G2dLoss, PerfectFeatureAlignmentLeavesStudentLoss) {
    Rng rng(37);
    LossFixture fx(FusionStrategy::LateFusion, rng);
    // Overwrite teacher features with the student's own.
    Graph probe;
    auto out = fx.student.forward(probe, fx.batch);
    for (std::size_t m = 0; m < fx.teachers.size(); ++m)
        fx.teacher_out.feats[m] = probe.value(out.features[m]);
    Graph g;
    LossBreakdown bd;
    fx.total(g, {1.0, 0.0}, &bd);
    for (double f : bd.feat) EXPECT_EQ(f, 0.0);
    EXPECT_EQ(bd.total, bd.student);
}

TEST(G2dLoss, TotalMatchesIndependentComponentSum) {
    Rng rng(38);
    for (double alpha : {0.0, 0.25, 1.0}) {
        for (double beta : {0.0, 0.5, 1.0}) {
            LossFixture fx(FusionStrategy::Concat, rng);
            Graph g;
            LossBreakdown bd;
            fx.total(g, {alpha, beta}, &bd);
            double manual = bd.student;
            for (double f : bd.feat) manual += alpha * f;
            for (double l : bd.logit) manual += beta * l;
            EXPECT_NEAR(bd.total, manual, 1e-12);
        }
    }
}

TEST(G2dLoss, MissingTeacherEntriesRejected) {
    Rng rng(39);
    LossFixture fx(FusionStrategy::LateFusion, rng);
    fx.teacher_out.feats.pop_back();
    Graph g;
    auto out = fx.student.forward(g, fx.batch);
    EXPECT_THROW(g2d_loss(g, fx.batch, out, fx.teacher_out, {1.0, 1.0}, Task::Classify),
                 PipelineError);
}

TEST(G2dLoss, NoGradientReachesTeachers) {
    Rng rng(40);
    LossFixture fx(FusionStrategy::Sum, rng);
    Graph g;
    // Bind teacher parameters into the same graph via a live forward; the
    // loss still consumes cached values, so the teachers must stay grad-free.
    for (auto& t : fx.teachers) t.forward(g, g.constant(fx.batch.inputs[t.modality()]));
    auto out = fx.student.forward(g, fx.batch);
    auto res = g2d_loss(g, fx.batch, out, fx.teacher_out, {1.0, 1.0}, Task::Classify);
    g.backward(res.total);
    for (const auto& t : fx.teachers) {
        for (const Tensor& p : t.group().tensors()) {
            const Tensor grad = g.grad_for(p);
            for (double v : grad.data) EXPECT_EQ(v, 0.0);
        }
    }
}

TEST(G2dLoss, GradientsMatchFiniteDifferences) {
    Rng rng(41);
    double worst = 0.0;
    for (FusionStrategy f : {FusionStrategy::LateFusion, FusionStrategy::Concat}) {
        LossFixture fx(f, rng);
        Graph g;
        fx.total(g, {1.0, 1.0});
        for (ParamGroup* group : fx.student.groups()) {
            std::vector<Tensor> analytic = collect_grads(g, *group);
            auto fn = [&fx]() {
                Graph fresh;
                return fx.total(fresh, {1.0, 1.0});
            };
            std::vector<Tensor> numeric = finite_diff_grad(fn, *group);
            worst = std::max(worst, max_relative_error(analytic, numeric));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(G2dLoss, AbsentCellsExcludedFromDistillation) {
    Rng rng(42);
    LossFixture fx(FusionStrategy::LateFusion, rng, 4);
    // Mark sample 2 of modality 1 absent (inputs zeroed like the dataset op).
    fx.batch.present[1][2] = 0;
    for (std::size_t d = 0; d < fx.batch.inputs[1].cols(); ++d)
        fx.batch.inputs[1].at(2, d) = 0.0;
    fx.refresh_teacher_outputs();

    Graph g;
    auto out = fx.student.forward(g, fx.batch);
    auto res = g2d_loss(g, fx.batch, out, fx.teacher_out, {1.0, 1.0}, Task::Classify);

    // Manual feature term for modality 1: mean over the 3 present rows.
    const Tensor f_s = g.value(out.features[1]);
    const Tensor& f_t = fx.teacher_out.feats[1];
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (!fx.batch.present[1][i]) continue;
        for (std::size_t j = 0; j < f_s.cols(); ++j) {
            const double diff = f_s.at(i, j) - f_t.at(i, j);
            expected += diff * diff;
        }
    }
    expected /= 3.0;
    EXPECT_NEAR(res.breakdown.feat[1], expected, 1e-12);

    // Manual KL for modality 1 over present rows.
    Tensor p = Graph::softmax_value(fx.teacher_out.logits[1]);
    Tensor q = Graph::softmax_value(g.value(out.fused_logits));
    double kl = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (!fx.batch.present[1][i]) continue;
        for (std::size_t j = 0; j < p.cols(); ++j)
            kl += p.at(i, j) * (std::log(p.at(i, j)) - std::log(q.at(i, j)));
    }
    kl /= 3.0;
    EXPECT_NEAR(res.breakdown.logit[1], kl, 1e-9);
}
