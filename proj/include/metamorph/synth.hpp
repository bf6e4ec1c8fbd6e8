// Synthetic ground truth: shape images, smooth random initial velocities,
// deformed pairs with landmarks, and inserted appearance changes.
#pragma once

#include <random>

#include "metamorph/geodesic.hpp"

namespace metamorph {

enum class Shape { Bullseye, Blobs };
enum class TumorPlacement { Source, Target, Both };

struct TumorSpec {
    Point center{0, 0, 0};
    double radius = 8.0;
    double delta = 0.5;
    TumorPlacement placed_in = TumorPlacement::Target;
};

struct SynthSpec {
    GridDesc grid{{64, 64}};
    Shape shape = Shape::Blobs;
    double v0_amplitude = 1.0;
    std::optional<TumorSpec> tumor;
    int landmark_grid = 8;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    // Metric used to generate the ground-truth velocity and geodesic.
    double alpha = 3.0;
    int power = 3;
    int steps = 10;

    void validate() const {
        if (!(v0_amplitude >= 0.0)) throw Error(ErrorCode::InvalidParameter, "v0 amplitude must be non-negative");
        if (landmark_grid < 1) throw Error(ErrorCode::InvalidParameter, "landmark grid spacing must be positive");
        if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidParameter, "noise sigma must be non-negative");
        if (tumor) {
            const int min_size = *std::min_element(grid.sizes().begin(), grid.sizes().end());
            if (!(tumor->radius > 0.0) || !(tumor->radius < min_size / 4.0))
                throw Error(ErrorCode::InvalidParameter, "tumor radius must be in (0, min(sizes)/4)");
        }
    }
};

namespace detail {
/// Distinct deterministic streams derived from one user seed.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    return std::mt19937_64(seq);
}

inline double wrapped_delta(double a, double b, double n) {
    double d = std::fmod(a - b, n);
    if (d > n / 2) d -= n;
    if (d < -n / 2) d += n;
    return d;
}
} // namespace detail

/// Smooth deterministic image with values in [0,1].
inline ScalarImage make_image(const SynthSpec &spec) {
    const GridDesc &g = spec.grid;
    const int d = g.dim();
    ScalarImage img(g);
    auto rng = detail::stream(spec.seed, 0x1111);
    if (spec.shape == Shape::Bullseye) {
        std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
        const double phase = phase_dist(rng);
        const int min_size = *std::min_element(g.sizes().begin(), g.sizes().end());
        const double period = std::max(4.0, min_size / 8.0);
        const double outer = min_size / 2.0;
        for (std::size_t v = 0; v < g.voxel_count(); ++v) {
            const auto idx = g.unravel(v);
            double r2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = idx[static_cast<std::size_t>(j)] - g.size(j) / 2.0;
                r2 += c * c;
            }
            const double r = std::sqrt(r2);
            const double env = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(r / outer, 1.0)));
            img[v] = 0.5 + 0.4 * env * std::cos(2.0 * std::numbers::pi * r / period + phase);
        }
        return img;
    }

    const std::size_t count = std::max<std::size_t>(8, g.voxel_count() / 32);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    struct Blob {
        Point c;
        double sigma, amp;
    };
    std::vector<Blob> blobs(count);
    for (auto &b : blobs) {
        for (int j = 0; j < d; ++j) b.c[static_cast<std::size_t>(j)] = unit(rng) * g.size(j);
        b.sigma = 1.5 + 2.0 * unit(rng);
        b.amp = 2.0 * unit(rng) - 1.0;
    }
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const auto idx = g.unravel(v);
        double s = 0.0;
        for (const auto &b : blobs) {
            double r2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = detail::wrapped_delta(idx[static_cast<std::size_t>(j)], b.c[static_cast<std::size_t>(j)], g.size(j));
                r2 += c * c;
            }
            s += b.amp * std::exp(-0.5 * r2 / (b.sigma * b.sigma));
        }
        img[v] = s;
    }
    const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
    const double mn = *lo, range = *hi - *lo;
    for (double &x : img.values()) x = range > 0.0 ? 0.1 + 0.8 * (x - mn) / range : 0.5;
    return img;
}

/// K^2 applied to white noise, rescaled so the largest voxel displacement equals `amplitude`.
inline VectorField sample_v0(const FluidKernel &kernel, double amplitude, std::uint64_t seed) {
    if (!(amplitude >= 0.0)) throw Error(ErrorCode::InvalidParameter, "amplitude must be non-negative");
    const GridDesc &g = kernel.grid();
    VectorField noise(g);
    if (amplitude == 0.0) return noise;
    auto rng = detail::stream(seed, 0x2222);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double &x : noise.values()) x = normal(rng);
    VectorField v = kernel.apply_K(kernel.apply_K(noise));
    const double mag = v.max_magnitude();
    if (mag > 0.0) v *= amplitude / mag;
    return v;
}

/// Adds a cosine-tapered bump of height `delta` (clamped to [0,1]); the mask is the closed bump support.
inline std::pair<ScalarImage, MaskImage> insert_tumor(const ScalarImage &img, const Point &center, double radius, double delta) {
    const GridDesc &g = img.grid();
    const int d = g.dim();
    if (!(radius > 0.0)) throw Error(ErrorCode::InvalidParameter, "tumor radius must be positive");
    for (int j = 0; j < d; ++j) {
        const double c = center[static_cast<std::size_t>(j)];
        if (!std::isfinite(c) || c - radius < 0.0 || c + radius > g.size(j) - 1)
            throw Error(ErrorCode::InvalidParameter, "tumor disk does not fit inside the grid");
    }
    ScalarImage out = img;
    MaskImage mask(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const auto idx = g.unravel(v);
        double r2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = idx[static_cast<std::size_t>(j)] - center[static_cast<std::size_t>(j)];
            r2 += c * c;
        }
        const double r = std::sqrt(r2);
        if (r > radius) continue; // closed disk: the bump is zero on the rim, the mask still counts it
        out[v] = std::clamp(img[v] + delta * 0.5 * (1.0 + std::cos(std::numbers::pi * r / radius)), 0.0, 1.0);
        mask.set(v, 1.0);
    }
    return {std::move(out), std::move(mask)};
}

/// Uniformly placed centre whose disk fits inside the grid (integer voxel coordinates).
inline Point random_tumor_center(const GridDesc &g, double radius, std::uint64_t seed) {
    auto rng = detail::stream(seed, 0x3333);
    Point c{0, 0, 0};
    for (int j = 0; j < g.dim(); ++j) {
        const int lo = static_cast<int>(std::ceil(radius));
        const int hi = static_cast<int>(std::floor(g.size(j) - 1 - radius));
        std::uniform_int_distribution<int> pick(lo, std::max(lo, hi));
        c[static_cast<std::size_t>(j)] = pick(rng);
    }
    return c;
}

/// Lattice of points every `spacing` voxels, offset by half a cell.
inline LandmarkSet landmark_lattice(const GridDesc &g, int spacing) {
    LandmarkSet set;
    set.dim = g.dim();
    std::array<int, kMaxDim> counts{1, 1, 1};
    for (int j = 0; j < g.dim(); ++j) counts[static_cast<std::size_t>(j)] = std::max(1, g.size(j) / spacing);
    const int total = counts[0] * counts[1] * counts[2];
    for (int c = 0; c < total; ++c) {
        Point p{0, 0, 0};
        int rem = c;
        for (int j = g.dim() - 1; j >= 0; --j) {
            const auto ju = static_cast<std::size_t>(j);
            p[ju] = spacing / 2 + (rem % counts[ju]) * spacing;
            rem /= counts[ju];
        }
        set.points.push_back(p);
        set.labels.push_back("L" + std::to_string(c));
    }
    return set;
}

struct SynthPair {
    ScalarImage source, target;
    VectorField v0_true;
    DeformationField psi_true;
    LandmarkSet landmarks_source, landmarks_target;
    MaskImage mask_source, mask_target;
};

inline SynthPair make_pair(const SynthSpec &spec) {
    spec.validate();
    const GridDesc &g = spec.grid;
    SynthPair pair;
    pair.source = make_image(spec);
    const FluidKernel kernel(g, spec.alpha, spec.power);
    const ShootingConfig shooting{spec.steps};
    pair.v0_true = sample_v0(kernel, spec.v0_amplitude, spec.seed);
    const GeodesicPath path = shoot(kernel, pair.v0_true, shooting);
    pair.psi_true = path.psi;
    pair.target = warp(pair.source, path.psi);
    if (spec.noise_sigma > 0.0) {
        auto rng = detail::stream(spec.seed, 0x4444);
        std::normal_distribution<double> normal(0.0, spec.noise_sigma);
        for (double &x : pair.target.values()) x = std::clamp(x + normal(rng), 0.0, 1.0);
    }
    pair.landmarks_source = landmark_lattice(g, spec.landmark_grid);
    pair.landmarks_target = propagate_landmarks(pair.landmarks_source, path.velocities, shooting);
    pair.mask_source = MaskImage(g);
    pair.mask_target = MaskImage(g);

    if (spec.tumor) {
        const TumorSpec &t = *spec.tumor;
        const bool in_src = t.placed_in != TumorPlacement::Target;
        const bool in_tgt = t.placed_in != TumorPlacement::Source;
        if (in_tgt) std::tie(pair.target, pair.mask_target) = insert_tumor(pair.target, t.center, t.radius, t.delta);
        if (in_src) std::tie(pair.source, pair.mask_source) = insert_tumor(pair.source, t.center, t.radius, t.delta);
        // Keep only landmarks that stay clear of the inserted disk.
        LandmarkSet src, tgt;
        src.dim = tgt.dim = g.dim();
        for (std::size_t i = 0; i < pair.landmarks_source.size(); ++i) {
            const bool hit_src = in_src && torus_distance(g, pair.landmarks_source.points[i], t.center) <= t.radius + 1.0;
            const bool hit_tgt = in_tgt && torus_distance(g, pair.landmarks_target.points[i], t.center) <= t.radius + 1.0;
            if (hit_src || hit_tgt) continue;
            src.points.push_back(pair.landmarks_source.points[i]);
            src.labels.push_back(pair.landmarks_source.labels[i]);
            tgt.points.push_back(pair.landmarks_target.points[i]);
            tgt.labels.push_back(pair.landmarks_target.labels[i]);
        }
        pair.landmarks_source = std::move(src);
        pair.landmarks_target = std::move(tgt);
    }
    return pair;
}

/// Small deterministic problem for gradient verification: a smooth image pair,
/// a nonzero smooth v0 (largest displacement 0.2 voxel, small enough that a
/// binary-masked copy still integrates stably) and either an empty or
/// a random binary mask.
struct GradCheckProblem {
    ScalarImage source, target;
    VectorField v0;
    MaskImage mask;
};

inline GradCheckProblem make_gradcheck_problem(const GridDesc &grid, std::uint64_t seed, bool random_mask,
                                               double alpha = 3.0, int power = 3, int steps = 10) {
    SynthSpec spec;
    spec.grid = grid;
    spec.seed = seed;
    spec.alpha = alpha;
    spec.power = power;
    spec.steps = steps;
    const SynthPair pair = make_pair(spec);
    const FluidKernel kernel(grid, alpha, power);
    GradCheckProblem p{pair.source, pair.target, sample_v0(kernel, 0.2, seed ^ 0x5555), MaskImage(grid)};
    if (random_mask) {
        auto rng = detail::stream(seed, 0x6666);
        std::bernoulli_distribution on(0.3);
        for (std::size_t v = 0; v < grid.voxel_count(); ++v) p.mask.set(v, on(rng) ? 1.0 : 0.0);
    }
    return p;
}

} // namespace metamorph
