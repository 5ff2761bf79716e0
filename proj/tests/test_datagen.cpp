#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "g2d/datagen.hpp"
#include "g2d/dataset_io.hpp"
#include "testutil.hpp"

using namespace g2d;
using testutil::least_squares_probe_r2;
using testutil::linear_probe_accuracy;

namespace {

DatasetSpec two_modality_spec(double strong = 0.9, double weak = 0.4) {
    DatasetSpec spec;
    spec.task = Task::Classify;
    spec.num_classes = 4;
    spec.modalities = {{16, strong, 1.0}, {16, weak, 1.0}};
    spec.train_samples = 512;
    spec.val_samples = 128;
    spec.test_samples = 512;
    spec.seed = 7;
    return spec;
}

DatasetSpec regression_spec() {
    DatasetSpec spec;
    spec.task = Task::Regress;
    spec.modalities = {{16, 0.95, 0.6}, {16, 0.45, 0.6}};
    spec.train_samples = 512;
    spec.val_samples = 128;
    spec.test_samples = 512;
    spec.seed = 11;
    return spec;
}

double probe_accuracy(const MultimodalDataset& ds, std::size_t m) {
    return linear_probe_accuracy(ds.train.inputs[m], ds.train.labels, ds.test.inputs[m],
                                 ds.test.labels, ds.spec.num_classes);
}

} // namespace

TEST(GenClassification, NoiselessSeparableModalityIsLinearlySolvable) {
    DatasetSpec spec = two_modality_spec();
    spec.modalities[0] = {8, 1.0, 1e-9};
    MultimodalDataset ds = gen_classification(spec);
    EXPECT_DOUBLE_EQ(probe_accuracy(ds, 0), 1.0);
}

TEST(GenClassification, EqualStrengthsGiveComparableAccuracies) {
    // Prototype geometry still differs per modality, so compare each probe
    // to its own modality's Bayes ceiling: neither may lag systematically.
    DatasetSpec spec = two_modality_spec(0.6, 0.6);
    MultimodalDataset ds = gen_classification(spec);
    const double a0 = probe_accuracy(ds, 0);
    const double a1 = probe_accuracy(ds, 1);
    EXPECT_LT(std::abs(ds.bayes_estimate[0] - ds.bayes_estimate[1]), 0.05);
    EXPECT_GT(a0, ds.bayes_estimate[0] - 0.08);
    EXPECT_GT(a1, ds.bayes_estimate[1] - 0.08);
}

TEST(GenClassification, StrongModalityBeatsWeakOne) {
    MultimodalDataset ds = gen_classification(two_modality_spec());
    EXPECT_GT(probe_accuracy(ds, 0), probe_accuracy(ds, 1) + 0.10);
    EXPECT_GT(ds.bayes_estimate[0], ds.bayes_estimate[1] + 0.10);
}

TEST(GenClassification, ByteIdenticalAcrossRuns) {
    DatasetSpec spec = two_modality_spec();
    const std::string a = serialize_dataset(gen_classification(spec));
    const std::string b = serialize_dataset(gen_classification(spec));
    EXPECT_EQ(a, b);
    spec.seed = 8;
    EXPECT_NE(a, serialize_dataset(gen_classification(spec)));
}

TEST(GenClassification, LabelsBalancedWithinOne) {
    MultimodalDataset ds = gen_classification(two_modality_spec());
    for (const Split* split : {&ds.train, &ds.val, &ds.test}) {
        std::vector<int> counts(ds.spec.num_classes, 0);
        for (int y : split->labels) counts[static_cast<std::size_t>(y)]++;
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        EXPECT_LE(*hi - *lo, 1);
    }
}

TEST(GenClassification, ProbeAccuracyMonotoneInSignalStrength) {
    double prev = 0.0;
    for (double s : {0.3, 0.6, 0.9}) {
        DatasetSpec spec = two_modality_spec(s, 0.4);
        MultimodalDataset ds = gen_classification(spec);
        const double acc = probe_accuracy(ds, 0);
        EXPECT_GE(acc, prev);
        prev = acc;
    }
}

TEST(GenClassification, RejectsDegenerateSpecs) {
    DatasetSpec spec = two_modality_spec();
    spec.modalities.resize(1);
    EXPECT_THROW(gen_classification(spec), ConfigError);

    spec = two_modality_spec();
    spec.num_classes = 1;
    EXPECT_THROW(gen_classification(spec), ConfigError);

    spec = two_modality_spec();
    spec.train_samples = 0;
    EXPECT_THROW(gen_classification(spec), ConfigError);

    spec = two_modality_spec();
    spec.modalities[1].noise_scale = 0.0;
    EXPECT_THROW(gen_classification(spec), ConfigError);

    EXPECT_THROW(gen_regression(two_modality_spec()), ConfigError);
}

TEST(GenRegression, IdentityLinkZeroNoiseIsLinearlyRecoverable) {
    DatasetSpec spec = regression_spec();
    spec.modalities[0] = {8, 1.0, 1e-9};
    spec.latent_dim = 4;
    spec.link = RegressionLink::Identity;
    spec.target_noise = 0.0;
    MultimodalDataset ds = gen_regression(spec);
    const double r2 = least_squares_probe_r2(ds.train.inputs[0], ds.train.targets,
                                             ds.test.inputs[0], ds.test.targets);
    EXPECT_GT(r2, 1.0 - 1e-9);
}

TEST(GenRegression, StrongModalityProbeBeatsWeakProbe) {
    MultimodalDataset ds = gen_regression(regression_spec());
    const double strong = least_squares_probe_r2(ds.train.inputs[0], ds.train.targets,
                                                 ds.test.inputs[0], ds.test.targets);
    const double weak = least_squares_probe_r2(ds.train.inputs[1], ds.train.targets,
                                               ds.test.inputs[1], ds.test.targets);
    EXPECT_GT(strong, weak);
}

TEST(GenRegression, ConstantLatentRejected) {
    DatasetSpec spec = regression_spec();
    spec.latent_scale = 0.0;
    EXPECT_THROW(gen_regression(spec), ConfigError);
}

TEST(MissingMask, ZeroRateLeavesDatasetUntouched) {
    MultimodalDataset ds = gen_classification(two_modality_spec());
    MultimodalDataset masked = apply_missing_mask(ds, 0.0, 123);
    EXPECT_EQ(serialize_dataset(ds), serialize_dataset(masked));
    for (auto p : masked.train.present[0]) EXPECT_EQ(p, 1);
}

TEST(MissingMask, CellAbsenceMatchesRejectionAdjustedExpectation) {
    // Two modalities at p = 0.6: the all-absent outcome (p^2) is redrawn, so
    // P(cell absent) = p(1-p) / (1 - p^2) = 0.24 / 0.64 = 0.375.
    DatasetSpec spec = two_modality_spec();
    spec.train_samples = 10000;
    spec.val_samples = 16;
    spec.test_samples = 16;
    MultimodalDataset masked = apply_missing_mask(gen_classification(spec), 0.6, 31);
    for (std::size_t m = 0; m < 2; ++m) {
        std::size_t absent = 0;
        for (auto p : masked.train.present[m]) absent += p == 0;
        const double rate = static_cast<double>(absent) / 10000.0;
        EXPECT_NEAR(rate, 0.375, 0.02);
    }
    for (std::size_t i = 0; i < masked.train.size(); ++i) {
        EXPECT_TRUE(masked.train.present[0][i] || masked.train.present[1][i]);
    }
}

TEST(MissingMask, AbsentCellsAreZeroed) {
    MultimodalDataset masked =
        apply_missing_mask(gen_classification(two_modality_spec()), 0.4, 55);
    for (std::size_t m = 0; m < 2; ++m) {
        for (std::size_t i = 0; i < masked.train.size(); ++i) {
            if (masked.train.present[m][i]) continue;
            for (std::size_t d = 0; d < masked.train.inputs[m].cols(); ++d)
                EXPECT_EQ(masked.train.inputs[m].at(i, d), 0.0);
        }
    }
}

TEST(MissingMask, SameSeedSameMasks) {
    MultimodalDataset ds = gen_classification(two_modality_spec());
    MultimodalDataset a = apply_missing_mask(ds, 0.3, 99);
    MultimodalDataset b = apply_missing_mask(ds, 0.3, 99);
    EXPECT_EQ(serialize_dataset(a), serialize_dataset(b));
    MultimodalDataset c = apply_missing_mask(ds, 0.3, 100);
    EXPECT_NE(serialize_dataset(a), serialize_dataset(c));
}

TEST(MissingMask, RateOfOneRejected) {
    MultimodalDataset ds = gen_classification(two_modality_spec());
    EXPECT_THROW(apply_missing_mask(ds, 1.0, 1), ConfigError);
    EXPECT_THROW(apply_missing_mask(ds, -0.1, 1), ConfigError);
}

TEST(DatasetIo, RoundTripIsBitExact) {
    MultimodalDataset ds = gen_classification(two_modality_spec());
    const std::string serialized = serialize_dataset(ds);
    std::istringstream in(serialized);
    MultimodalDataset loaded = parse_dataset(in);
    EXPECT_EQ(serialize_dataset(loaded), serialized);
    EXPECT_EQ(dataset_hash(loaded), dataset_hash(ds));
    EXPECT_EQ(loaded.bayes_estimate, ds.bayes_estimate);
}

TEST(DatasetIo, RegressionRoundTrip) {
    MultimodalDataset ds = gen_regression(regression_spec());
    std::istringstream in(serialize_dataset(ds));
    MultimodalDataset loaded = parse_dataset(in);
    EXPECT_EQ(loaded.train.targets, ds.train.targets);
    EXPECT_EQ(serialize_dataset(loaded), serialize_dataset(ds));
}

TEST(DatasetIo, SpecJsonRoundTrip) {
    DatasetSpec spec = regression_spec();
    DatasetSpec back = spec_from_json(spec_to_json(spec));
    EXPECT_EQ(spec_to_json(back), spec_to_json(spec));
    EXPECT_THROW(spec_from_json(nlohmann::json{{"task", "classify"}}), ConfigError);
}

TEST(SplitGather, PullsAlignedRows) {
    MultimodalDataset ds = gen_classification(two_modality_spec());
    MultimodalBatch b = ds.train.gather({3, 10, 17});
    EXPECT_EQ(b.size(), 3u);
    EXPECT_EQ(b.labels[1], ds.train.labels[10]);
    for (std::size_t d = 0; d < b.inputs[1].cols(); ++d) {
        EXPECT_EQ(b.inputs[1].at(2, d), ds.train.inputs[1].at(17, d));
    }
}
