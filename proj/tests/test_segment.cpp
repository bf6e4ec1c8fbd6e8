#include "support.hpp"

#include <gtest/gtest.h>

using namespace mt;

namespace {

MaskImage disk_mask(const GridDesc &g, const Point &c, double r) {
    MaskImage m(g);
    const Index ix(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const auto p = ix.coords(v);
        const double dx = p[0] - c[0], dy = p[1] - c[1];
        m.set(v, dx * dx + dy * dy < r * r ? 1.0 : 0.0);
    }
    return m;
}

PairSample tumor_sample(std::uint64_t seed, int n = 64, double radius = 8.0) {
    SynthSpec spec;
    spec.grid = GridDesc({n, n});
    spec.seed = seed;
    TumorSpec t;
    t.radius = radius;
    t.delta = 0.9;
    t.center = random_tumor_center(spec.grid, radius, seed);
    spec.tumor = t;
    const SynthPair p = make_pair(spec);
    return {"pair" + std::to_string(seed), p.source, p.target, p.mask_source, p.mask_target, p.landmarks_source, p.landmarks_target};
}

} // namespace

TEST(UnionMask, PointwiseMaxAndAlgebra) {
    const GridDesc g({8, 8});
    const MaskImage a = random_binary_mask(g, 1), b = random_binary_mask(g, 2), c = random_binary_mask(g, 3);
    EXPECT_EQ(union_mask(MaskImage(g), b).values()[5], b.values()[5]);
    EXPECT_EQ(max_abs_diff(union_mask(MaskImage(g), b).values(), b.values()), 0.0);
    EXPECT_EQ(max_abs_diff(union_mask(a, a).values(), a.values()), 0.0);
    EXPECT_EQ(max_abs_diff(union_mask(a, b).values(), union_mask(b, a).values()), 0.0);
    EXPECT_EQ(max_abs_diff(union_mask(union_mask(a, b), c).values(), union_mask(a, union_mask(b, c)).values()), 0.0);

    MaskImage s(g), t(g);
    s.set(7, 0.3);
    t.set(7, 0.6);
    EXPECT_EQ(union_mask(s, t)[7], 0.6);
    EXPECT_THROW(union_mask(a, MaskImage(GridDesc({8, 4}))), Error);
}

TEST(EstimateMasks, IdenticalImagesGiveEmptyMasks) {
    const GridDesc g({32, 32});
    const ScalarImage s = random_image(g, 4);
    const PairSample p{"same", s, s, {}, {}, {}, {}};
    const auto [ms, mt_] = estimate_masks(MaskEstimator{}, p);
    EXPECT_EQ(max_abs(ms.values()), 0.0);
    EXPECT_EQ(max_abs(mt_.values()), 0.0);
}

TEST(EstimateMasks, OracleIsPassthroughAndNeedsLabels) {
    const PairSample p = tumor_sample(3, 32, 5.0);
    MaskEstimator oracle;
    oracle.kind = EstimatorKind::Oracle;
    const auto [ms, mt_] = estimate_masks(oracle, p);
    EXPECT_EQ(max_abs_diff(mt_.values(), p.mask_target->values()), 0.0);
    EXPECT_EQ(dice(*p.mask_target, mt_), 1.0);
    PairSample bare = p;
    bare.mask_source.reset();
    bare.mask_target.reset();
    try {
        estimate_masks(oracle, bare);
        FAIL() << "expected missing labels";
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingLabels);
    }
}

TEST(EstimateMasks, ResidualFindsBrightDisk) {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const PairSample p = tumor_sample(seed);
        const auto [ms, mt_] = estimate_masks(MaskEstimator{}, p);
        for (double x : mt_.values()) ASSERT_TRUE(x == 0.0 || x == 1.0);
        const double d = dice(*p.mask_target, union_mask(ms, mt_));
        EXPECT_GT(d, 0.5) << "seed " << seed;
        sum += d;
        // the disk is brighter in the target, so it lands in the target-side mask
        double in_disk = 0.0;
        for (std::size_t v = 0; v < mt_.size(); ++v) in_disk += (*p.mask_target)[v] * mt_[v];
        EXPECT_GT(in_disk, 0.0);
    }
    EXPECT_GE(sum / 4.0, 0.7);
}

TEST(EstimateMasks, FixedThresholdAndMinArea) {
    const GridDesc g({32, 32});
    ScalarImage s(g, 0.2), t(g, 0.2);
    const Index ix(g);
    t[ix.lin({5, 5, 0})] = 0.9; // single-voxel change
    MaskEstimator est;
    est.smooth_sigma = 0.0;
    est.threshold = 0.1;
    auto [ms, mt_] = estimate_masks(est, {"dot", s, t, {}, {}, {}, {}});
    EXPECT_EQ(max_abs(mt_.values()), 0.0); // below min_area
    est.min_area = 1;
    std::tie(ms, mt_) = estimate_masks(est, {"dot", s, t, {}, {}, {}, {}});
    EXPECT_EQ(mt_[ix.lin({5, 5, 0})], 1.0);
    EXPECT_EQ(max_abs(ms.values()), 0.0);
    // darker in the target: the component goes to the source-side mask
    std::tie(ms, mt_) = estimate_masks(est, {"dot", t, s, {}, {}, {}, {}});
    EXPECT_EQ(ms[ix.lin({5, 5, 0})], 1.0);
    EXPECT_EQ(max_abs(mt_.values()), 0.0);
}

TEST(Augment, IdentityAndTranslation) {
    const GridDesc g({16, 16});
    const ScalarImage s = random_image(g, 1);
    const MaskImage y = random_binary_mask(g, 2);
    const FluidKernel k = build_kernel(g);
    const LabeledSample same = augment(s, y, shoot(k, VectorField(g), ShootingConfig{}));
    EXPECT_EQ(max_abs_diff(same.image.values(), s.values()), 0.0);
    EXPECT_EQ(max_abs_diff(same.label.values(), y.values()), 0.0);

    const std::array<double, 2> c{2.0, -1.0};
    const LabeledSample moved = augment(s, y, shoot(k, VectorField::constant(g, c), ShootingConfig{}));
    const Index ix(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const std::size_t from = ix.shifted(ix.shifted(v, 0, -2), 1, 1); // psi(x) = x - c
        EXPECT_EQ(moved.image[v], s[from]);
        EXPECT_EQ(moved.label[v], y[from]);
    }
}

TEST(Augment, SmoothPathLabelMatchesAnalyticDisk) {
    const GridDesc g({64, 64});
    const FluidKernel k = build_kernel(g);
    const Point c{30.0, 34.0, 0.0};
    const double r = 10.0;
    const MaskImage y = disk_mask(g, c, r);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const GeodesicPath path = shoot(k, sample_v0(k, 1.0, seed), ShootingConfig{});
        const LabeledSample a = augment(make_image(SynthSpec{}), y, path);
        MaskImage truth(g);
        const Index ix(g);
        for (std::size_t v = 0; v < g.voxel_count(); ++v) {
            const auto p = ix.coords(v);
            const double dx = p[0] + path.psi.u(v, 0) - c[0], dy = p[1] + path.psi.u(v, 1) - c[1];
            truth.set(v, dx * dx + dy * dy < r * r ? 1.0 : 0.0);
        }
        for (double x : a.label.values()) ASSERT_TRUE(x == 0.0 || x == 1.0);
        EXPECT_GE(dice(truth, a.label), 0.9) << "seed " << seed;
    }
}

TEST(JointFit, SingleOracleIterationEqualsRegister) {
    const std::vector<PairSample> data{tumor_sample(1, 32, 5.0)};
    MaskEstimator oracle;
    oracle.kind = EstimatorKind::Oracle;
    JointConfig cfg;
    cfg.q = 1;
    cfg.registration.max_iters = 10;
    const JointResult jr = joint_fit(data, oracle, cfg);
    ASSERT_TRUE(jr.pairs[0].result);
    RegistrationConfig reg = cfg.registration;
    reg.mode = RegistrationMode::Metamorph;
    const RegistrationResult direct = register_images(data[0].source, data[0].target, union_mask(*data[0].mask_source, *data[0].mask_target), reg);
    EXPECT_EQ(jr.pairs[0].result->trace, direct.trace);
    EXPECT_EQ(max_abs_diff(jr.pairs[0].result->v0.values(), direct.v0.values()), 0.0);
    EXPECT_EQ(jr.pairs[0].dice_history, std::vector<double>{1.0});
    EXPECT_EQ(jr.pairs[0].history[0].seg, 0.0);
}

TEST(JointFit, TumorFreeOracleMatchesPlainRegistration) {
    SynthSpec spec;
    spec.grid = GridDesc({16, 16});
    spec.seed = 7;
    const SynthPair p = make_pair(spec);
    const std::vector<PairSample> data{{"clean", p.source, p.target, p.mask_source, p.mask_target, {}, {}}};
    MaskEstimator oracle;
    oracle.kind = EstimatorKind::Oracle;
    JointConfig cfg;
    cfg.q = 2;
    cfg.registration.max_iters = 10;
    const JointResult jr = joint_fit(data, oracle, cfg);
    EXPECT_EQ(max_abs(jr.pairs[0].mask_union.values()), 0.0);
    RegistrationConfig plain = cfg.registration;
    plain.mode = RegistrationMode::Plain;
    // the second pass resumes where the first stopped
    const RegistrationResult first = register_images(p.source, p.target, MaskImage(spec.grid), plain);
    const RegistrationResult second = register_images(p.source, p.target, MaskImage(spec.grid), plain, &first.v0);
    EXPECT_EQ(jr.pairs[0].result->trace, second.trace);
    EXPECT_EQ(second.trace.front(), first.trace.back());
}

TEST(JointFit, WorkingSetGrowsByAugmentation) {
    const std::vector<PairSample> data{tumor_sample(1, 32, 5.0), tumor_sample(2, 32, 5.0)};
    JointConfig cfg;
    cfg.q = 3;
    cfg.registration.max_iters = 5;
    const JointResult jr = joint_fit(data, MaskEstimator{}, cfg);
    ASSERT_EQ(jr.working_set.size(), 4u + 3u * 2u);
    EXPECT_EQ(jr.working_set[0].name, "pair1/source");
    EXPECT_EQ(max_abs_diff(jr.working_set[1].image.values(), data[0].target.values()), 0.0);
    EXPECT_EQ(jr.loss_history.size(), 3u);
    for (const auto &o : jr.pairs) {
        EXPECT_EQ(o.history.size(), 3u);
        EXPECT_EQ(o.dice_history.size(), 3u);
    }
    cfg.augment = false;
    EXPECT_EQ(joint_fit(data, MaskEstimator{}, cfg).working_set.size(), 4u);
}

TEST(JointFit, ParallelMatchesSerial) {
    const std::vector<PairSample> data{tumor_sample(1, 32, 5.0), tumor_sample(2, 32, 5.0), tumor_sample(3, 32, 5.0)};
    JointConfig cfg;
    cfg.q = 2;
    cfg.registration.max_iters = 5;
    const JointResult serial = joint_fit(data, MaskEstimator{}, cfg);
    cfg.jobs = 3;
    const JointResult parallel = joint_fit(data, MaskEstimator{}, cfg);
    EXPECT_EQ(serial.loss_history, parallel.loss_history);
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(serial.pairs[i].result->trace, parallel.pairs[i].result->trace);
}

TEST(JointFit, FailingPairDoesNotStopOthers) {
    std::vector<PairSample> data{tumor_sample(1, 32, 5.0), tumor_sample(2, 32, 5.0)};
    data[1].mask_source.reset();
    data[1].mask_target.reset();
    MaskEstimator oracle;
    oracle.kind = EstimatorKind::Oracle;
    JointConfig cfg;
    cfg.q = 2;
    cfg.registration.max_iters = 3;
    const JointResult jr = joint_fit(data, oracle, cfg);
    EXPECT_TRUE(jr.partial_failure);
    EXPECT_TRUE(jr.pairs[0].error.empty());
    EXPECT_NE(jr.pairs[1].error.find("pair2"), std::string::npos);
    EXPECT_EQ(jr.pairs[0].history.size(), 2u);
    EXPECT_TRUE(std::isfinite(jr.loss_history.back()));
}

TEST(JointConfig, Validation) {
    JointConfig cfg;
    cfg.q = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.gamma = -1.0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.jobs = 0;
    EXPECT_THROW(cfg.validate(), Error);
}
