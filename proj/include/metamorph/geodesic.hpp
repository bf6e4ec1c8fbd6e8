// Geodesic shooting: forward-Euler EPDiff integration, the transformation
// ODE d(psi)/dt = -D(psi) v, warping, and label/landmark propagation.
#pragma once

#include "metamorph/diff_ops.hpp"
#include "metamorph/interp.hpp"
#include "metamorph/operators.hpp"

namespace metamorph {

struct ShootingConfig {
    int steps = 10;

    [[nodiscard]] double dt() const { return 1.0 / steps; }
    void validate() const {
        if (steps < 1) throw Error(ErrorCode::InvalidParameter, "shooting steps must be at least 1");
    }
};

struct GeodesicPath {
    std::vector<VectorField> velocities; // v_0 .. v_steps
    DeformationField psi;                // psi_1
};

/// dv/dt = -K[(Dv)^T m + (Dm) v + m div v], m = L v.
inline VectorField epdiff_rhs(const FluidKernel &kernel, const VectorField &v) {
    require_same_grid(kernel.grid(), v.grid(), "epdiff_rhs");
    detail::require_finite(v.values(), "epdiff_rhs");
    const GridDesc &g = v.grid();
    const int d = g.dim();
    const VectorField m = kernel.apply_L(v);
    const MatrixField dv = jacobian(v);
    const MatrixField dm = jacobian(m);
    VectorField force(g);
    for (std::size_t x = 0; x < g.voxel_count(); ++x) {
        double div = 0.0;
        for (int j = 0; j < d; ++j) div += dv(x, j, j);
        for (int i = 0; i < d; ++i) {
            double s = m(x, i) * div;
            for (int j = 0; j < d; ++j) s += dv(x, j, i) * m(x, j) + dm(x, i, j) * v(x, j);
            force(x, i) = s;
        }
    }
    VectorField rhs = kernel.apply_K(force);
    rhs *= -1.0;
    return rhs;
}

/// Euler steps of v over [0,1]; returns v_0 .. v_steps.
inline std::vector<VectorField> shoot_velocities(const FluidKernel &kernel, const VectorField &v0, const ShootingConfig &cfg) {
    cfg.validate();
    detail::require_finite(v0.values(), "shoot");
    const double dt = cfg.dt();
    const double limit = 1e3 * v0.max_magnitude() + 1.0;
    std::vector<VectorField> vs;
    vs.reserve(static_cast<std::size_t>(cfg.steps) + 1);
    vs.push_back(v0);
    for (int k = 0; k < cfg.steps; ++k) {
        VectorField next = vs.back();
        next.axpy(dt, epdiff_rhs(kernel, vs.back()));
        const double mag = next.max_magnitude();
        if (!std::isfinite(mag) || mag > limit)
            throw Error(ErrorCode::Instability, "geodesic shooting diverged at step " + std::to_string(k + 1));
        vs.push_back(std::move(next));
    }
    return vs;
}

/// Displacements u_0 .. u_steps of psi_t = x + u_t; u_{k+1} = u_k - dt (I + Du_k) v_k.
/// The update sum is accumulated unscaled and divided by the step count, so a
/// constant velocity c yields u_1 == -c without rounding drift.
inline std::vector<VectorField> integrate_psi_history(std::span<const VectorField> velocities, const ShootingConfig &cfg) {
    cfg.validate();
    if (velocities.size() < static_cast<std::size_t>(cfg.steps))
        throw Error(ErrorCode::InvalidParameter, "integrate_psi: fewer velocities than steps");
    const GridDesc &g = velocities.front().grid();
    const int d = g.dim();
    const auto steps = static_cast<double>(cfg.steps);
    std::vector<VectorField> us;
    us.reserve(static_cast<std::size_t>(cfg.steps) + 1);
    us.emplace_back(g);
    VectorField acc(g);
    for (int k = 0; k < cfg.steps; ++k) {
        const VectorField &u = us.back();
        const VectorField &v = velocities[static_cast<std::size_t>(k)];
        require_same_grid(g, v.grid(), "integrate_psi");
        const MatrixField du = jacobian(u);
        VectorField next(g);
        for (std::size_t x = 0; x < g.voxel_count(); ++x) {
            for (int i = 0; i < d; ++i) {
                double s = v(x, i);
                for (int j = 0; j < d; ++j) s += du(x, i, j) * v(x, j);
                acc(x, i) += s;
                next(x, i) = -acc(x, i) / steps;
            }
        }
        detail::require_finite(next.values(), "integrate_psi");
        us.push_back(std::move(next));
    }
    return us;
}

inline DeformationField integrate_psi(std::span<const VectorField> velocities, const ShootingConfig &cfg) {
    auto us = integrate_psi_history(velocities, cfg);
    return {std::move(us.back())};
}

inline GeodesicPath shoot(const FluidKernel &kernel, const VectorField &v0, const ShootingConfig &cfg) {
    GeodesicPath path;
    path.velocities = shoot_velocities(kernel, v0, cfg);
    path.psi = integrate_psi(path.velocities, cfg);
    return path;
}

inline ScalarImage warp(const ScalarImage &img, const DeformationField &psi) { return interp_scalar(img, psi); }

enum class LabelInterp { Linear, Nearest };

inline MaskImage propagate_label(const MaskImage &y, const DeformationField &psi, LabelInterp mode) {
    require_same_grid(y.grid(), psi.grid(), "propagate_label");
    const ScalarImage as_img(y.grid(), std::vector<double>(y.values().begin(), y.values().end()));
    const ScalarImage out = mode == LabelInterp::Linear ? interp_scalar(as_img, psi) : interp_nearest(as_img, psi);
    MaskImage result(y.grid());
    for (std::size_t i = 0; i < out.size(); ++i) result.set(i, out[i]);
    return result;
}

/// Forward point flow x' = v_t(x), so points placed on the source land in target coordinates.
inline LandmarkSet propagate_landmarks(const LandmarkSet &points, std::span<const VectorField> velocities,
                                       const ShootingConfig &cfg) {
    cfg.validate();
    if (velocities.size() < static_cast<std::size_t>(cfg.steps))
        throw Error(ErrorCode::InvalidParameter, "propagate_landmarks: fewer velocities than steps");
    const GridDesc &g = velocities.front().grid();
    const auto steps = static_cast<double>(cfg.steps);
    const int d = g.dim();
    LandmarkSet out = points;
    for (auto &p : out.points) {
        const Point start = p;
        Point travelled{0, 0, 0}; // unscaled sum of sampled velocities
        for (int k = 0; k < cfg.steps; ++k) {
            const Point vel = interp_vector_at(velocities[static_cast<std::size_t>(k)], p);
            for (int j = 0; j < d; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                travelled[ju] += vel[ju];
                p[ju] = start[ju] + travelled[ju] / steps;
            }
        }
        for (int j = 0; j < d; ++j) {
            const double n = g.size(j);
            auto &c = p[static_cast<std::size_t>(j)];
            c = std::fmod(c, n);
            if (c < 0) c += n;
        }
    }
    return out;
}

/// det(I + Du) per voxel.
inline ScalarImage jacobian_determinant(const DeformationField &psi) {
    const GridDesc &g = psi.grid();
    const MatrixField du = jacobian(psi.u);
    ScalarImage out(g);
    for (std::size_t x = 0; x < g.voxel_count(); ++x) {
        auto a = [&](int i, int j) { return du(x, i, j) + (i == j ? 1.0 : 0.0); };
        if (g.dim() == 2) {
            out[x] = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
        } else {
            out[x] = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
                     a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
        }
    }
    return out;
}

inline double min_jacobian_determinant(const DeformationField &psi) {
    const ScalarImage det = jacobian_determinant(psi);
    return *std::min_element(det.values().begin(), det.values().end());
}

} // namespace metamorph
