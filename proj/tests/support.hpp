// Test helpers: random fields and brute-force oracles that share no code with
// the library beyond the container types.
#pragma once

#include <complex>
#include <numbers>
#include <random>

#include "metamorph/metamorph.hpp"

namespace mt {

using namespace metamorph;
using cplx = std::complex<double>;

inline ScalarImage random_image(const GridDesc &g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    ScalarImage img(g);
    for (double &x : img.values()) x = u(rng);
    return img;
}

inline VectorField random_field(const GridDesc &g, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    VectorField f(g);
    for (double &x : f.values()) x = n(rng);
    return f;
}

inline MaskImage random_binary_mask(const GridDesc &g, std::uint64_t seed, double p = 0.3) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution on(p);
    MaskImage m(g);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, on(rng) ? 1.0 : 0.0);
    return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs(std::span<const double> a) {
    double m = 0.0;
    for (double x : a) m = std::max(m, std::abs(x));
    return m;
}

// Explicit multi-index helpers (independent of GridDesc::neighbor / ravel).
struct Index {
    int dim;
    std::array<int, 3> n{1, 1, 1};
    explicit Index(const GridDesc &g) : dim(g.dim()) {
        for (int j = 0; j < dim; ++j) n[static_cast<std::size_t>(j)] = g.size(j);
    }
    [[nodiscard]] std::size_t count() const { return static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1]) * static_cast<std::size_t>(n[2]); }
    [[nodiscard]] std::array<int, 3> coords(std::size_t lin) const {
        std::array<int, 3> c{0, 0, 0};
        for (int j = dim - 1; j >= 0; --j) {
            const auto ju = static_cast<std::size_t>(j);
            c[ju] = static_cast<int>(lin % static_cast<std::size_t>(n[ju]));
            lin /= static_cast<std::size_t>(n[ju]);
        }
        return c;
    }
    [[nodiscard]] std::size_t lin(std::array<int, 3> c) const {
        std::size_t l = 0;
        for (int j = 0; j < dim; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            const int w = ((c[ju] % n[ju]) + n[ju]) % n[ju];
            l = l * static_cast<std::size_t>(n[ju]) + static_cast<std::size_t>(w);
        }
        return l;
    }
    [[nodiscard]] std::size_t shifted(std::size_t at, int axis, int by) const {
        auto c = coords(at);
        c[static_cast<std::size_t>(axis)] += by;
        return lin(c);
    }
};

/// (f(x+e_j) - f(x-e_j)) / 2h_j on a flat array with `comps` interleaved components.
inline double stencil_diff(const GridDesc &g, std::span<const double> f, int comps, int comp, std::size_t at, int axis) {
    const Index ix(g);
    const std::size_t p = ix.shifted(at, axis, 1), m = ix.shifted(at, axis, -1);
    return (f[p * static_cast<std::size_t>(comps) + static_cast<std::size_t>(comp)] -
            f[m * static_cast<std::size_t>(comps) + static_cast<std::size_t>(comp)]) /
           (2.0 * g.spacing(axis));
}

/// (I - alpha * Laplacian)^power applied in space with the 3-point periodic Laplacian per axis.
inline VectorField stencil_L(const GridDesc &g, double alpha, int power, const VectorField &v) {
    const Index ix(g);
    const int d = g.dim();
    std::vector<double> cur(v.values().begin(), v.values().end());
    for (int rep = 0; rep < power; ++rep) {
        std::vector<double> next(cur.size());
        for (std::size_t x = 0; x < ix.count(); ++x) {
            for (int c = 0; c < d; ++c) {
                const auto at = [&](std::size_t vox) { return cur[vox * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)]; };
                double lap = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double h = g.spacing(j);
                    lap += (at(ix.shifted(x, j, 1)) - 2.0 * at(x) + at(ix.shifted(x, j, -1))) / (h * h);
                }
                next[x * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = at(x) - alpha * lap;
            }
        }
        cur = std::move(next);
    }
    return VectorField(g, std::move(cur));
}

/// Closed-form symbol of (I - alpha * Laplacian)^power at integer frequency k.
inline double symbol(const GridDesc &g, double alpha, int power, std::array<int, 3> k) {
    double s = 0.0;
    for (int j = 0; j < g.dim(); ++j) {
        const double h = g.spacing(j);
        s += 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi * k[static_cast<std::size_t>(j)] / g.size(j))) / (h * h);
    }
    return std::pow(1.0 + alpha * s, power);
}

/// Brute-force DFT of one component: F(k) = sum_x f(x) exp(-2 pi i k.x / N).
inline std::vector<cplx> naive_dft(const GridDesc &g, std::span<const double> f, int comps, int comp) {
    const Index ix(g);
    std::vector<cplx> out(ix.count());
    for (std::size_t k = 0; k < ix.count(); ++k) {
        const auto kc = ix.coords(k);
        cplx s = 0.0;
        for (std::size_t x = 0; x < ix.count(); ++x) {
            const auto xc = ix.coords(x);
            double phase = 0.0;
            for (int j = 0; j < g.dim(); ++j)
                phase += static_cast<double>(kc[static_cast<std::size_t>(j)]) * xc[static_cast<std::size_t>(j)] / g.size(j);
            s += f[x * static_cast<std::size_t>(comps) + static_cast<std::size_t>(comp)] *
                 std::polar(1.0, -2.0 * std::numbers::pi * phase);
        }
        out[k] = s;
    }
    return out;
}

/// Brute-force inverse DFT, real part.
inline std::vector<double> naive_idft(const GridDesc &g, const std::vector<cplx> &F) {
    const Index ix(g);
    std::vector<double> out(ix.count());
    for (std::size_t x = 0; x < ix.count(); ++x) {
        const auto xc = ix.coords(x);
        cplx s = 0.0;
        for (std::size_t k = 0; k < ix.count(); ++k) {
            const auto kc = ix.coords(k);
            double phase = 0.0;
            for (int j = 0; j < g.dim(); ++j)
                phase += static_cast<double>(kc[static_cast<std::size_t>(j)]) * xc[static_cast<std::size_t>(j)] / g.size(j);
            s += F[k] * std::polar(1.0, 2.0 * std::numbers::pi * phase);
        }
        out[x] = s.real() / static_cast<double>(ix.count());
    }
    return out;
}

/// Applies symbol^exponent per component through the brute-force DFT.
inline VectorField spectral_apply(const GridDesc &g, double alpha, int power, double exponent, const VectorField &v) {
    const Index ix(g);
    const int d = g.dim();
    VectorField out(g);
    for (int c = 0; c < d; ++c) {
        auto F = naive_dft(g, v.values(), d, c);
        for (std::size_t k = 0; k < F.size(); ++k) F[k] *= std::pow(symbol(g, alpha, power, ix.coords(k)), exponent);
        const auto back = naive_idft(g, F);
        for (std::size_t x = 0; x < back.size(); ++x) out(x, c) = back[x];
    }
    return out;
}

} // namespace mt
