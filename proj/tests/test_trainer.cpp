#include <gtest/gtest.h>

#include <sstream>

#include "g2d/dataset_io.hpp"
#include "g2d/trainer.hpp"
#include "testutil.hpp"

using namespace g2d;

namespace {

// Small benchmark dataset: strong modality 0, weak modality 1.
MultimodalDataset bench_dataset(std::uint64_t seed = 7, double strong = 0.9, double weak = 0.4) {
    DatasetSpec spec;
    spec.task = Task::Classify;
    spec.num_classes = 4;
    spec.modalities = {{12, strong, 1.0}, {12, weak, 1.0}};
    spec.train_samples = 256;
    spec.val_samples = 96;
    spec.test_samples = 256;
    spec.seed = seed;
    return gen_classification(spec);
}

RunConfig quick_config(std::size_t epochs = 8) {
    RunConfig cfg;
    cfg.epochs = epochs;
    cfg.tau = {epochs / 2, epochs - epochs / 2};
    cfg.encoder_width = 16;
    cfg.feat_dim = 8;
    cfg.fusion_dim = 8;
    cfg.teacher_max_epochs = 30;
    cfg.teacher_patience = 8;
    cfg.seed = 999;
    return cfg;
}

} // namespace

TEST(TrainTeacher, SeparableModalityReachesHighTrainAccuracy) {
    DatasetSpec spec;
    spec.task = Task::Classify;
    spec.num_classes = 3;
    spec.modalities = {{8, 1.0, 1e-6}, {8, 0.5, 1.0}};
    spec.train_samples = 128;
    spec.val_samples = 64;
    spec.test_samples = 64;
    spec.seed = 3;
    MultimodalDataset ds = gen_classification(spec);
    RunConfig cfg = quick_config();
    cfg.lr = 0.005;
    cfg.teacher_max_epochs = 150;
    cfg.teacher_patience = 20;
    Teacher t = train_teacher(ds, 0, cfg);
    EXPECT_GE(teacher_accuracy(t, ds.train, 0), 0.99);
}

TEST(TrainTeacher, StrongTeacherBeatsWeakTeacher) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    Teacher strong = train_teacher(ds, 0, cfg);
    Teacher weak = train_teacher(ds, 1, cfg);
    EXPECT_GT(teacher_accuracy(strong, ds.test, 0), teacher_accuracy(weak, ds.test, 1));
}

TEST(TrainTeacher, DeterministicCheckpoints) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    Teacher a = train_teacher(ds, 1, cfg);
    Teacher b = train_teacher(ds, 1, cfg);
    EXPECT_EQ(serialize_checkpoint({&a.group()}), serialize_checkpoint({&b.group()}));
}

TEST(TeacherCacheOps, RoundTripAndRecomputeAgree) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    std::vector<Teacher> teachers = train_all_teachers(ds, cfg);
    TeacherCache cache = build_teacher_cache(teachers, ds);

    const std::string bytes = serialize_cache(cache);
    std::istringstream in(bytes);
    TeacherCache loaded = parse_cache(in);
    EXPECT_EQ(serialize_cache(loaded), bytes);
    EXPECT_NO_THROW(verify_cache(loaded, teachers, ds));

    // Recompute vs cached on a handful of rows.
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const auto i = static_cast<std::size_t>(rng.uniform_index(ds.train.size()));
        for (std::size_t m = 0; m < teachers.size(); ++m) {
            Tensor row({1, ds.train.inputs[m].cols()});
            for (std::size_t d = 0; d < row.cols(); ++d) row.at(0, d) = ds.train.inputs[m].at(i, d);
            auto [f, l] = teachers[m].evaluate(row);
            for (std::size_t d = 0; d < f.cols(); ++d)
                EXPECT_EQ(f.at(0, d), cache.feats[m].at(i, d));
            for (std::size_t d = 0; d < l.cols(); ++d)
                EXPECT_EQ(l.at(0, d), cache.logits[m].at(i, d));
        }
    }
}

TEST(TeacherCacheOps, StaleHashRejected) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    std::vector<Teacher> teachers = train_all_teachers(ds, cfg);
    TeacherCache cache = build_teacher_cache(teachers, ds);
    // Perturb one teacher weight: the cache must now be stale.
    teachers[0].group().tensors()[0].data[0] += 1.0;
    EXPECT_THROW(verify_cache(cache, teachers, ds), PipelineError);
}

TEST(TeacherCacheOps, TruncatedFileNamesMissingCells) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    std::vector<Teacher> teachers = train_all_teachers(ds, cfg);
    const std::string bytes = serialize_cache(build_teacher_cache(teachers, ds));
    std::istringstream in(bytes.substr(0, bytes.size() / 2));
    try {
        parse_cache(in);
        FAIL() << "expected PipelineError";
    } catch (const PipelineError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
}

TEST(TrainStudent, JointAndDegenerateG2dAreByteIdentical) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    std::vector<Teacher> teachers = train_all_teachers(ds, cfg);
    TeacherCache cache = build_teacher_cache(teachers, ds);

    RunConfig degenerate = cfg;
    degenerate.weights = {0.0, 0.0};
    degenerate.suppression = Suppression::None;
    TrainResult g2d = train_student_g2d(ds, cache, degenerate);
    TrainResult joint = train_student_joint(ds, cfg);
    EXPECT_EQ(g2d.metrics_csv, joint.metrics_csv);
    EXPECT_EQ(g2d.losses_csv, joint.losses_csv);
}

TEST(TrainStudent, DeterministicMetricsAcrossRuns) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    std::vector<Teacher> teachers = train_all_teachers(ds, cfg);
    TeacherCache cache = build_teacher_cache(teachers, ds);
    TrainResult a = train_student_g2d(ds, cache, cfg);
    TrainResult b = train_student_g2d(ds, cache, cfg);
    EXPECT_EQ(a.metrics_csv, b.metrics_csv);
    EXPECT_EQ(a.losses_csv, b.losses_csv);

    RunConfig other = cfg;
    other.seed = 1000;
    TrainResult c = train_student_g2d(ds, cache, other);
    EXPECT_NE(a.metrics_csv, c.metrics_csv);
}

TEST(TrainStudent, MissingCacheRejectedWhenDistillationActive) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    EXPECT_THROW(train_student_core(ds, nullptr, cfg), PipelineError);
}

TEST(TrainStudent, TeachersFrozenDuringStudentTraining) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config();
    std::vector<Teacher> teachers = train_all_teachers(ds, cfg);
    TeacherCache cache = build_teacher_cache(teachers, ds);
    const std::string before0 = serialize_checkpoint({&teachers[0].group()});
    const std::string before1 = serialize_checkpoint({&teachers[1].group()});
    train_student_g2d(ds, cache, cfg);
    EXPECT_EQ(serialize_checkpoint({&teachers[0].group()}), before0);
    EXPECT_EQ(serialize_checkpoint({&teachers[1].group()}), before1);
}

TEST(TrainStudent, CompleteSuppressionFreezesDominantEncoderInPhaseOne) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config(6);
    cfg.tau = {3, 3};
    cfg.fusion = FusionStrategy::Concat;
    std::vector<Teacher> teachers = train_all_teachers(ds, cfg);
    TeacherCache cache = build_teacher_cache(teachers, ds);

    // Snapshot every group after every epoch (epoch 0 = initialization).
    std::vector<std::vector<std::string>> snaps; // [epoch][group]
    auto observer = [&snaps](std::size_t, const Student& s) {
        std::vector<std::string> row;
        for (const ParamGroup* g : s.groups()) row.push_back(serialize_checkpoint({g}));
        snaps.push_back(std::move(row));
    };
    TrainResult res = train_student_g2d(ds, cache, cfg, observer);
    ASSERT_EQ(snaps.size(), 7u);

    // Modality 0 is dominant (signal 0.9 vs 0.4): its encoder must stay
    // bit-identical through phase-1 epochs 1..3 and move afterwards.
    for (int e : {1, 2, 3}) EXPECT_EQ(snaps[static_cast<std::size_t>(e)][0], snaps[0][0]);
    EXPECT_NE(snaps[4][0], snaps[3][0]);
    // The weak modality, fusion, and classifier groups train from epoch 1.
    EXPECT_NE(snaps[1][1], snaps[0][1]);
    EXPECT_NE(snaps[1][2], snaps[0][2]);
    EXPECT_NE(snaps[1][3], snaps[0][3]);

    // The logged kappa values tell the same story.
    for (const EpochMetrics& em : res.history) {
        if (em.epoch <= 3) {
            EXPECT_EQ(em.phase, 1u);
            EXPECT_EQ(em.kappa[0], 0.0);
            EXPECT_EQ(em.kappa[1], 1.0);
        } else {
            EXPECT_EQ(em.phase, 2u);
            EXPECT_EQ(em.kappa[0], 1.0);
            EXPECT_EQ(em.kappa[1], 1.0);
        }
    }
}

TEST(TrainStudent, LrDecaySchedule) {
    RunConfig cfg;
    cfg.lr = 0.1;
    cfg.lr_decay_factor = 0.5;
    cfg.lr_decay_interval = 2;
    EXPECT_DOUBLE_EQ(cfg.lr_at_epoch(1), 0.1);
    EXPECT_DOUBLE_EQ(cfg.lr_at_epoch(2), 0.1);
    EXPECT_DOUBLE_EQ(cfg.lr_at_epoch(3), 0.05);
    EXPECT_DOUBLE_EQ(cfg.lr_at_epoch(5), 0.025);
}

TEST(TrainStudent, ScheduleEpochMismatchRejected) {
    MultimodalDataset ds = bench_dataset();
    RunConfig cfg = quick_config(8);
    cfg.tau = {4, 3}; // sums to 7, epochs = 8
    EXPECT_THROW(cfg.validate(2), ConfigError);
}
