// Gradient of the discretized metamorphic energy with respect to the initial
// velocity (reverse sweep through masking, Euler EPDiff, the psi recurrence
// and interpolation) and the gradient-descent registration driver.
#pragma once

#include <numeric>
#include <random>

#include "metamorph/metrics.hpp"

namespace metamorph {

enum class RegistrationMode { Plain, Metamorph };
enum class LineSearch { Backtracking, Fixed };

struct RegistrationConfig {
    RegistrationMode mode = RegistrationMode::Metamorph;
    DistOptions dist{};
    double alpha = 3.0;
    int power = 3;
    int steps = 10;
    int max_iters = 200;
    /// First trial update, as a fraction of the voxel count, capped at one voxel.
    double step_init = 5e-4;
    double tol_rel = 1e-6;
    LineSearch line_search = LineSearch::Backtracking;

    [[nodiscard]] ShootingConfig shooting() const { return {steps}; }
    void validate() const {
        if (max_iters < 1) throw Error(ErrorCode::InvalidParameter, "max_iters must be at least 1");
        if (!(tol_rel > 0.0)) throw Error(ErrorCode::InvalidParameter, "tol_rel must be positive");
        if (!(step_init > 0.0)) throw Error(ErrorCode::InvalidParameter, "step_init must be positive");
        shooting().validate();
        dist.validate();
    }
};

namespace detail {

/// Transposed Jacobian of the EPDiff right-hand side at v, applied to mu.
inline VectorField epdiff_rhs_adjoint(const FluidKernel &kernel, const VectorField &v, const VectorField &mu) {
    const GridDesc &g = v.grid();
    const int d = g.dim();
    const std::size_t n = g.voxel_count();
    VectorField w = kernel.apply_K(mu);
    w *= -1.0;
    const VectorField m = kernel.apply_L(v);
    const MatrixField dv = jacobian(v);
    const MatrixField dm = jacobian(m);

    VectorField gv(g), gm(g);
    std::vector<double> wm(n);
    for (std::size_t x = 0; x < n; ++x) {
        double div = 0.0;
        for (int j = 0; j < d; ++j) div += dv(x, j, j);
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += w(x, i) * m(x, i);
        wm[x] = s;
        for (int i = 0; i < d; ++i) {
            // (Dv)^T m term, derivative in m; m div v term, derivative in m.
            double a = w(x, i) * div;
            for (int k = 0; k < d; ++k) a += w(x, k) * dv(x, i, k);
            gm(x, i) = a;
            // (Dm) v term, derivative in v.
            double b = 0.0;
            for (int k = 0; k < d; ++k) b += w(x, k) * dm(x, k, i);
            gv(x, i) = b;
        }
    }
    for (std::size_t x = 0; x < n; ++x) {
        for (int j = 0; j < d; ++j) {
            const double inv = 1.0 / (2.0 * g.spacing(j));
            const std::size_t p = g.neighbor(x, j, +1);
            const std::size_t q = g.neighbor(x, j, -1);
            // m div v term, derivative in v: -D_j (w . m)
            gv(x, j) -= (wm[p] - wm[q]) * inv;
            for (int i = 0; i < d; ++i) {
                // (Dv)^T m term, derivative in v_i: -D_j (w_j m_i)
                gv(x, i) -= (w(p, j) * m(p, i) - w(q, j) * m(q, i)) * inv;
                // (Dm) v term, derivative in m_i: -D_j (w_i v_j)
                gm(x, i) -= (w(p, i) * v(p, j) - w(q, i) * v(q, j)) * inv;
            }
        }
    }
    gv += kernel.apply_L(gm);
    return gv;
}

} // namespace detail

/// Exact gradient of the discretized energy with respect to the full v0. The
/// chain rule through the (1-U) masking makes it vanish wherever U == 1.
inline VectorField grad_v0(const ScalarImage &source, const ScalarImage &target, const MaskImage &mask, const VectorField &v0,
                           const FluidKernel &kernel, const ShootingConfig &shooting, const DistOptions &dist,
                           EnergyReport *report = nullptr) {
    const EnergyState st = evaluate_energy(source, target, mask, v0, kernel, shooting, dist);
    if (report) *report = st.report;
    const GridDesc &g = source.grid();
    const int d = g.dim();
    const std::size_t n = g.voxel_count();
    const double dt = shooting.dt();

    ScalarImage g_deformed;
    dist_term(st.deformed, st.target_masked, dist, &g_deformed);

    // Adjoint of the displacement at t = 1.
    VectorField lam = interp_scalar_position_gradient(st.source_masked, st.path.psi);
    for (std::size_t x = 0; x < n; ++x)
        for (int j = 0; j < d; ++j) lam(x, j) *= g_deformed[x];

    VectorField mu(g); // adjoint of v_{k+1}
    for (int k = shooting.steps - 1; k >= 0; --k) {
        const VectorField &v = st.path.velocities[static_cast<std::size_t>(k)];
        const VectorField &u = st.displacements[static_cast<std::size_t>(k)];
        const MatrixField du = jacobian(u);

        // Velocity adjoint: through v_{k+1} = v_k + dt F(v_k) ...
        VectorField mu_prev = mu;
        if (k + 1 < static_cast<int>(st.path.velocities.size()) && mu.max_abs() > 0.0)
            mu_prev.axpy(dt, detail::epdiff_rhs_adjoint(kernel, v, mu));
        // ... and through u_{k+1} = u_k - dt (I + Du_k) v_k.
        for (std::size_t x = 0; x < n; ++x) {
            for (int j = 0; j < d; ++j) {
                double s = lam(x, j);
                for (int i = 0; i < d; ++i) s += du(x, i, j) * lam(x, i);
                mu_prev(x, j) -= dt * s;
            }
        }

        // Displacement adjoint: lam_k = lam_{k+1} + dt * sum_j D_j(lam_i v_j).
        VectorField lam_prev = lam;
        for (std::size_t x = 0; x < n; ++x) {
            for (int j = 0; j < d; ++j) {
                const double inv = dt / (2.0 * g.spacing(j));
                const std::size_t p = g.neighbor(x, j, +1);
                const std::size_t q = g.neighbor(x, j, -1);
                for (int i = 0; i < d; ++i) lam_prev(x, i) += (lam(p, i) * v(p, j) - lam(q, i) * v(q, j)) * inv;
            }
        }
        mu = std::move(mu_prev);
        lam = std::move(lam_prev);
    }

    VectorField grad = kernel.apply_L(st.v0_masked);
    grad *= 2.0 * g.voxel_volume();
    grad += mu;
    return mask_velocity(grad, mask);
}

/// Central-difference samples (E(v0 + h e) - E(v0 - h e)) / 2h for flat component indices.
inline std::vector<double> fd_grad(const ScalarImage &source, const ScalarImage &target, const MaskImage &mask,
                                   const VectorField &v0, const FluidKernel &kernel, const ShootingConfig &shooting,
                                   const DistOptions &dist, double h, std::span<const std::size_t> sample) {
    if (!(h > 0.0)) throw Error(ErrorCode::InvalidParameter, "fd_grad: h must be positive");
    std::vector<double> out;
    out.reserve(sample.size());
    for (std::size_t c : sample) {
        if (c >= v0.values().size()) throw Error(ErrorCode::InvalidParameter, "fd_grad: component out of range");
        VectorField plus = v0, minus = v0;
        plus.values()[c] += h;
        minus.values()[c] -= h;
        const double ep = energy_metamorphic(source, target, mask, plus, kernel, shooting, dist).total;
        const double em = energy_metamorphic(source, target, mask, minus, kernel, shooting, dist).total;
        out.push_back((ep - em) / (2.0 * h));
    }
    return out;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_component = 0;
    std::vector<std::size_t> components;
    std::vector<double> analytic, numeric;
};

/// Compares grad_v0 with central differences on `samples` distinct components
/// drawn from `seed`. Relative error uses max(|a|, |n|) with a floor of 1e-6 of
/// the largest analytic entry, so exactly-zero masked entries compare cleanly.
inline GradCheckResult gradient_check(const ScalarImage &source, const ScalarImage &target, const MaskImage &mask,
                                      const VectorField &v0, const FluidKernel &kernel, const ShootingConfig &shooting,
                                      const DistOptions &dist, std::size_t samples = 50, double h = 1e-5,
                                      std::uint64_t seed = 0) {
    const VectorField g = grad_v0(source, target, mask, v0, kernel, shooting, dist);
    std::vector<std::size_t> all(v0.values().size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    GradCheckResult r;
    std::mt19937_64 rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(r.components), std::min(samples, all.size()), rng);
    r.numeric = fd_grad(source, target, mask, v0, kernel, shooting, dist, h, r.components);
    const double floor = 1e-6 * std::max(g.max_abs(), 1e-300);
    for (std::size_t i = 0; i < r.components.size(); ++i) {
        const double a = g.values()[r.components[i]];
        const double n = r.numeric[i];
        r.analytic.push_back(a);
        const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
        if (i == 0 || rel > r.max_rel_error) {
            r.max_rel_error = rel;
            r.worst_component = r.components[i];
        }
    }
    return r;
}

struct RegistrationResult {
    VectorField v0;
    GeodesicPath path;
    ScalarImage deformed;        // warp(S, psi_1)
    ScalarImage deformed_masked; // warp(S * (1-U), psi_1)
    EnergyReport report;
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
};

/// Gradient descent on the energy from v0 = 0, preconditioned by K (the
/// gradient in the metric of V) and re-projected by (1-U) every step.
/// A non-null `init` replaces the zero start; it is projected by (1-U) first.
inline RegistrationResult register_images(const ScalarImage &source, const ScalarImage &target, const MaskImage &mask,
                                          const RegistrationConfig &cfg, const VectorField *init = nullptr) {
    cfg.validate();
    const GridDesc &g = source.grid();
    require_same_grid(g, target.grid(), "register");
    require_same_grid(g, mask.grid(), "register");
    const MaskImage none(g);
    const MaskImage &u_eff = cfg.mode == RegistrationMode::Plain ? none : mask;
    const FluidKernel kernel(g, cfg.alpha, cfg.power);
    const ShootingConfig shooting = cfg.shooting();

    auto energy_at = [&](const VectorField &v) -> std::optional<double> {
        try {
            return energy_metamorphic(source, target, u_eff, v, kernel, shooting, cfg.dist).total;
        } catch (const Error &e) {
            if (e.code() == ErrorCode::Instability || e.code() == ErrorCode::NonFinite) return std::nullopt;
            throw;
        }
    };

    RegistrationResult res;
    VectorField v(g);
    if (init) {
        require_same_grid(g, init->grid(), "register");
        v = mask_velocity(*init, u_eff);
    }
    EnergyReport rep;
    VectorField grad = grad_v0(source, target, u_eff, v, kernel, shooting, cfg.dist, &rep);
    double energy = rep.total;
    res.trace.push_back(energy);

    double step = 0.0;
    for (int it = 0; it < cfg.max_iters; ++it) {
        if (grad.max_abs() == 0.0) {
            res.converged = true;
            break;
        }
        const VectorField dir = mask_velocity(kernel.apply_K(grad), u_eff);
        const double dir_max = dir.max_magnitude();
        if (!(dir_max > 0.0)) {
            res.converged = true;
            break;
        }
        if (step == 0.0) step = std::min(1.0, cfg.step_init * static_cast<double>(g.voxel_count())) / dir_max;

        std::optional<VectorField> accepted;
        double accepted_energy = energy;
        if (cfg.line_search == LineSearch::Fixed) {
            VectorField trial = v;
            trial.axpy(-step, dir);
            if (auto e = energy_at(trial)) {
                accepted = std::move(trial);
                accepted_energy = *e;
            }
        } else {
            for (int halving = 0; halving <= 30; ++halving) {
                VectorField trial = v;
                trial.axpy(-step, dir);
                const auto e = energy_at(trial);
                if (e && *e < energy) {
                    accepted = std::move(trial);
                    accepted_energy = *e;
                    break;
                }
                step *= 0.5;
            }
        }
        if (!accepted) break; // no decrease possible: keep best, not converged

        const double decrease = energy - accepted_energy;
        v = std::move(*accepted);
        energy = accepted_energy;
        res.trace.push_back(energy);
        res.iterations = it + 1;
        if (cfg.line_search == LineSearch::Backtracking) step *= 2.0;
        if (decrease >= 0.0 && decrease <= cfg.tol_rel * std::max(std::abs(energy), 1e-300)) {
            res.converged = true;
            break;
        }
        grad = grad_v0(source, target, u_eff, v, kernel, shooting, cfg.dist, &rep);
    }

    const EnergyState st = evaluate_energy(source, target, u_eff, v, kernel, shooting, cfg.dist);
    res.v0 = std::move(v);
    res.path = st.path;
    res.deformed_masked = st.deformed;
    res.deformed = warp(source, st.path.psi);
    res.report = st.report;
    return res;
}

} // namespace metamorph
