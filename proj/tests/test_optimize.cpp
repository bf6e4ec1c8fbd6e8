#include "support.hpp"

#include <gtest/gtest.h>

using namespace mt;

namespace {

DistOptions ssd_dist(double sigma = 0.05) { return {DistKind::Ssd, sigma, {}}; }
DistOptions rmi_dist() { return {DistKind::Rmi, 1.0, {}}; }

std::vector<std::size_t> first_components(std::size_t count, std::size_t stride) {
    std::vector<std::size_t> c(count);
    for (std::size_t i = 0; i < count; ++i) c[i] = i * stride;
    return c;
}

} // namespace

TEST(GradV0, VanishesAtGlobalMinimumAndUnderFullMask) {
    const GridDesc g({16, 16});
    const FluidKernel k = build_kernel(g);
    const ScalarImage s = random_image(g, 1);
    const VectorField at_min = grad_v0(s, s, MaskImage(g), VectorField(g), k, ShootingConfig{}, ssd_dist());
    EXPECT_EQ(max_abs(at_min.values()), 0.0);

    const ScalarImage t = random_image(g, 2);
    for (const DistOptions &dist : {ssd_dist(), rmi_dist()}) {
        const VectorField full = grad_v0(s, t, MaskImage(g, 1.0), random_field(g, 3, 0.1), k, ShootingConfig{}, dist);
        EXPECT_EQ(max_abs(full.values()), 0.0);
    }
}

TEST(GradV0, ZeroOnBinaryMaskSupport) {
    const GridDesc g({16, 16});
    const FluidKernel k = build_kernel(g);
    const GradCheckProblem p = make_gradcheck_problem(g, 4, true);
    const VectorField grad = grad_v0(p.source, p.target, p.mask, p.v0, k, ShootingConfig{}, rmi_dist());
    double on_mask = 0.0, off_mask = 0.0;
    for (std::size_t x = 0; x < g.voxel_count(); ++x) {
        double &slot = p.mask[x] == 1.0 ? on_mask : off_mask;
        slot = std::max({slot, std::abs(grad(x, 0)), std::abs(grad(x, 1))});
    }
    EXPECT_EQ(on_mask, 0.0);
    EXPECT_GT(off_mask, 0.0);
}

class GradCheck : public ::testing::TestWithParam<std::tuple<std::uint64_t, bool, bool>> {};

TEST_P(GradCheck, MatchesCentralDifferences) {
    const auto [seed, use_rmi, masked] = GetParam();
    const GridDesc g({16, 16});
    const GradCheckProblem p = make_gradcheck_problem(g, seed, masked);
    const DistOptions dist = use_rmi ? rmi_dist() : DistOptions{DistKind::Ssd, default_sigma(DistKind::Ssd), {}};
    const GradCheckResult r = gradient_check(p.source, p.target, p.mask, p.v0, build_kernel(g), ShootingConfig{}, dist, 50, 1e-5, seed);
    EXPECT_EQ(r.components.size(), 50u);
    EXPECT_LE(r.max_rel_error, 1e-3) << "worst component " << r.worst_component;
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheck,
                         ::testing::Combine(::testing::Values(1u, 2u, 3u), ::testing::Bool(), ::testing::Bool()));

TEST(FdGrad, QuadraticEnergyMatchesTwoLv) {
    const GridDesc g({16, 16});
    const FluidKernel k = build_kernel(g);
    const ScalarImage flat(g, 0.5); // warping a constant image leaves it unchanged, so only the regularizer varies
    const VectorField v0 = sample_v0(k, 0.3, 9);
    const auto comps = first_components(20, 23);
    const auto fd = fd_grad(flat, flat, MaskImage(g), v0, k, ShootingConfig{}, ssd_dist(), 1e-4, comps);
    const VectorField exact = [&] {
        VectorField lv = k.apply_L(v0);
        lv *= 2.0;
        return lv;
    }();
    for (std::size_t i = 0; i < comps.size(); ++i) EXPECT_NEAR(fd[i], exact.values()[comps[i]], 1e-8 * exact.max_abs());
}

TEST(FdGrad, ErrorShrinksQuadraticallyWithStep) {
    const GridDesc g({16, 16});
    const FluidKernel k = build_kernel(g);
    const GradCheckProblem p = make_gradcheck_problem(g, 2, false);
    const DistOptions dist = ssd_dist(0.05);
    const VectorField grad = grad_v0(p.source, p.target, p.mask, p.v0, k, ShootingConfig{}, dist);
    const auto comps = first_components(8, 61);
    auto err = [&](double h) {
        const auto fd = fd_grad(p.source, p.target, p.mask, p.v0, k, ShootingConfig{}, dist, h, comps);
        double e = 0.0;
        for (std::size_t i = 0; i < comps.size(); ++i) e = std::max(e, std::abs(fd[i] - grad.values()[comps[i]]));
        return e;
    };
    // larger steps cross interpolation kinks and lose the h^2 behaviour
    const double e1 = err(2e-3), e2 = err(1e-3);
    EXPECT_GT(e1 / e2, 3.0);
    EXPECT_LT(e1 / e2, 5.0);
}

TEST(FdGrad, ZeroOnIdenticalImagesAndValidation) {
    const GridDesc g({16, 16});
    const FluidKernel k = build_kernel(g);
    const ScalarImage s = random_image(g, 5);
    const auto comps = first_components(10, 50);
    // at v0 = 0 every sample sits on a node, where the one-sided slopes differ; the central difference is O(h)
    auto worst = [&](double h) {
        double m = 0.0;
        for (double x : fd_grad(s, s, MaskImage(g), VectorField(g), k, ShootingConfig{}, ssd_dist(), h, comps)) m = std::max(m, std::abs(x));
        return m;
    };
    const double w4 = worst(1e-4), w6 = worst(1e-6);
    EXPECT_LT(w4, 0.05);
    EXPECT_NEAR(w6 / w4, 1e-2, 1e-4);
    const ScalarImage flat(g, 0.3);
    for (double x : fd_grad(flat, flat, MaskImage(g), VectorField(g), k, ShootingConfig{}, ssd_dist(), 1e-5, comps)) EXPECT_EQ(x, 0.0);
    EXPECT_THROW(fd_grad(s, s, MaskImage(g), VectorField(g), k, ShootingConfig{}, ssd_dist(), 0.0, comps), Error);
    const std::vector<std::size_t> out_of_range{g.voxel_count() * 2};
    EXPECT_THROW(fd_grad(s, s, MaskImage(g), VectorField(g), k, ShootingConfig{}, ssd_dist(), 1e-5, out_of_range), Error);
}

TEST(Register, IdenticalImagesConvergeImmediately) {
    const GridDesc g({16, 16});
    const ScalarImage s = random_image(g, 1);
    RegistrationConfig cfg;
    cfg.dist = ssd_dist();
    const RegistrationResult r = register_images(s, s, MaskImage(g), cfg);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 0);
    EXPECT_EQ(max_abs(r.v0.values()), 0.0);
}

TEST(Register, RecoversTranslation) {
    const GridDesc g({32, 32});
    SynthSpec spec;
    spec.grid = g;
    spec.seed = 2;
    const ScalarImage s = make_image(spec);
    const std::array<double, 2> c{1.5, -0.75};
    const std::array<double, 2> minus_c{-1.5, 0.75};
    const ScalarImage t = warp(s, {VectorField::constant(g, minus_c)});
    RegistrationConfig cfg;
    cfg.mode = RegistrationMode::Plain;
    cfg.dist = {DistKind::Ssd, default_sigma(DistKind::Ssd), {}};
    const RegistrationResult r = register_images(s, t, MaskImage(g), cfg);
    EXPECT_LE(ssd(r.deformed, t), 0.05 * ssd(s, t));
    for (int j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (std::size_t x = 0; x < g.voxel_count(); ++x) mean += r.v0(x, j);
        mean /= static_cast<double>(g.voxel_count());
        EXPECT_NEAR(mean, c[static_cast<std::size_t>(j)], 0.1 * std::abs(c[static_cast<std::size_t>(j)])) << "axis " << j;
    }
}

TEST(Register, TraceNonIncreasingAndReportConsistent) {
    SynthSpec spec;
    spec.grid = GridDesc({32, 32});
    spec.seed = 5;
    const SynthPair pair = make_pair(spec);
    for (DistKind kind : {DistKind::Ssd, DistKind::Rmi}) {
        RegistrationConfig cfg;
        cfg.dist = {kind, default_sigma(kind), {}};
        cfg.max_iters = 30;
        const RegistrationResult r = register_images(pair.source, pair.target, MaskImage(spec.grid), cfg);
        ASSERT_GE(r.trace.size(), 2u);
        for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1]);
        const FluidKernel k(spec.grid, cfg.alpha, cfg.power);
        const EnergyReport again = energy_metamorphic(pair.source, pair.target, MaskImage(spec.grid), r.v0, k, cfg.shooting(), cfg.dist);
        EXPECT_NEAR(again.total, r.trace.back(), 1e-10 * std::abs(r.trace.back()));
        EXPECT_EQ(static_cast<int>(r.trace.size()), r.iterations + 1);
    }
}

TEST(Register, UnmaskedMetamorphEqualsPlain) {
    SynthSpec spec;
    spec.grid = GridDesc({16, 16});
    spec.seed = 1;
    const SynthPair pair = make_pair(spec);
    RegistrationConfig cfg;
    cfg.max_iters = 20;
    cfg.mode = RegistrationMode::Plain;
    const RegistrationResult plain = register_images(pair.source, pair.target, random_binary_mask(spec.grid, 3), cfg);
    cfg.mode = RegistrationMode::Metamorph;
    const RegistrationResult meta = register_images(pair.source, pair.target, MaskImage(spec.grid), cfg);
    ASSERT_EQ(plain.trace.size(), meta.trace.size());
    for (std::size_t i = 0; i < plain.trace.size(); ++i) EXPECT_NEAR(plain.trace[i], meta.trace[i], 1e-10);
}

TEST(Register, MaskedVelocityStaysOnComplement) {
    SynthSpec spec;
    spec.grid = GridDesc({32, 32});
    spec.seed = 4;
    TumorSpec tumor;
    tumor.radius = 5;
    tumor.center = random_tumor_center(spec.grid, 5, 4);
    spec.tumor = tumor;
    const SynthPair pair = make_pair(spec);
    const MaskImage u = union_mask(pair.mask_source, pair.mask_target);
    RegistrationConfig cfg;
    cfg.max_iters = 15;
    const RegistrationResult r = register_images(pair.source, pair.target, u, cfg);
    for (std::size_t x = 0; x < spec.grid.voxel_count(); ++x)
        if (u[x] == 1.0) {
            EXPECT_EQ(std::max(std::abs(r.v0(x, 0)), std::abs(r.v0(x, 1))), 0.0);
        }
    EXPECT_GT(r.iterations, 0);
}

TEST(Register, WarmStartIsProjectedAndResumes) {
    SynthSpec spec;
    spec.grid = GridDesc({32, 32});
    spec.seed = 4;
    TumorSpec tumor;
    tumor.radius = 5;
    tumor.center = random_tumor_center(spec.grid, 5, 4);
    spec.tumor = tumor;
    const SynthPair pair = make_pair(spec);
    const MaskImage u = union_mask(pair.mask_source, pair.mask_target);
    RegistrationConfig cfg;
    cfg.max_iters = 10;
    const RegistrationResult first = register_images(pair.source, pair.target, u, cfg);
    const RegistrationResult again = register_images(pair.source, pair.target, u, cfg, &first.v0);
    EXPECT_EQ(again.trace.front(), first.trace.back());
    EXPECT_LE(again.trace.back(), first.trace.back());

    // a start that moves the masked voxels is projected before the first evaluation
    VectorField noisy = random_field(spec.grid, 9);
    noisy *= 0.05;
    const RegistrationResult r = register_images(pair.source, pair.target, u, cfg, &noisy);
    const FluidKernel k(spec.grid, cfg.alpha, cfg.power);
    const double projected = energy_metamorphic(pair.source, pair.target, u, mask_velocity(noisy, u), k, cfg.shooting(), cfg.dist).total;
    EXPECT_NEAR(r.trace.front(), projected, 1e-10 * std::abs(projected));
    for (std::size_t x = 0; x < spec.grid.voxel_count(); ++x)
        if (u[x] == 1.0) {
            ASSERT_EQ(std::max(std::abs(r.v0(x, 0)), std::abs(r.v0(x, 1))), 0.0);
        }
    const VectorField small(GridDesc({16, 16}));
    EXPECT_THROW(register_images(pair.source, pair.target, u, cfg, &small), Error);
}

TEST(RegistrationConfig, Validation) {
    const GridDesc g({8, 8});
    const ScalarImage s(g, 0.5);
    RegistrationConfig cfg;
    cfg.max_iters = 0;
    EXPECT_THROW(register_images(s, s, MaskImage(g), cfg), Error);
    cfg = {};
    cfg.tol_rel = 0.0;
    EXPECT_THROW(register_images(s, s, MaskImage(g), cfg), Error);
    cfg = {};
    cfg.dist.sigma = -1.0;
    EXPECT_THROW(register_images(s, s, MaskImage(g), cfg), Error);
    cfg = {};
    EXPECT_THROW(register_images(s, ScalarImage(GridDesc({8, 4})), MaskImage(g), cfg), Error);
}
