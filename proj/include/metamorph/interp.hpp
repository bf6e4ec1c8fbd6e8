// Multilinear interpolation with periodic wrap.
#pragma once

#include "metamorph/grid.hpp"

namespace metamorph {

namespace detail {

/// Corner indices and weights for one sample position (2^d corners).
struct Stencil {
    int corners = 0;
    std::array<std::size_t, 8> index{};
    std::array<double, 8> weight{};
    // Derivative of each corner weight with respect to each coordinate.
    std::array<std::array<double, kMaxDim>, 8> dweight{};
};

inline Stencil make_stencil(const GridDesc &g, const Point &p) {
    const int d = g.dim();
    std::array<int, kMaxDim> base{0, 0, 0};
    std::array<double, kMaxDim> frac{0, 0, 0};
    for (int j = 0; j < d; ++j) {
        const double fl = std::floor(p[static_cast<std::size_t>(j)]);
        base[static_cast<std::size_t>(j)] = static_cast<int>(fl);
        frac[static_cast<std::size_t>(j)] = p[static_cast<std::size_t>(j)] - fl;
    }
    Stencil s;
    s.corners = 1 << d;
    for (int c = 0; c < s.corners; ++c) {
        std::array<int, kMaxDim> idx = base;
        double w = 1.0;
        std::array<double, kMaxDim> wj{};
        std::array<double, kMaxDim> dj{};
        for (int j = 0; j < d; ++j) {
            const bool hi = (c >> (d - 1 - j)) & 1;
            const auto ju = static_cast<std::size_t>(j);
            if (hi) idx[ju] += 1;
            wj[ju] = hi ? frac[ju] : 1.0 - frac[ju];
            dj[ju] = hi ? 1.0 : -1.0;
            w *= wj[ju];
        }
        s.index[static_cast<std::size_t>(c)] = g.ravel_wrapped(idx);
        s.weight[static_cast<std::size_t>(c)] = w;
        for (int k = 0; k < d; ++k) {
            double dw = 1.0;
            for (int j = 0; j < d; ++j) dw *= (j == k) ? dj[static_cast<std::size_t>(j)] : wj[static_cast<std::size_t>(j)];
            s.dweight[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = dw;
        }
    }
    return s;
}

inline Point sample_position(const GridDesc &g, const VectorField &u, std::size_t v) {
    const auto idx = g.unravel(v);
    Point p{0, 0, 0};
    for (int j = 0; j < g.dim(); ++j) p[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j)] + u(v, j);
    return p;
}

} // namespace detail

inline double interp_at(const ScalarImage &img, const Point &p) {
    const auto s = detail::make_stencil(img.grid(), p);
    double acc = 0.0;
    for (int c = 0; c < s.corners; ++c) acc += s.weight[static_cast<std::size_t>(c)] * img[s.index[static_cast<std::size_t>(c)]];
    return acc;
}

/// Samples img at psi(x) = x + u(x) for every voxel x.
inline ScalarImage interp_scalar(const ScalarImage &img, const DeformationField &psi) {
    require_same_grid(img.grid(), psi.grid(), "interp_scalar");
    const GridDesc &g = img.grid();
    ScalarImage out(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) out[v] = interp_at(img, detail::sample_position(g, psi.u, v));
    return out;
}

namespace detail {
inline double stencil_slope(const ScalarImage &img, const Stencil &s, int k) {
    double acc = 0.0;
    for (int c = 0; c < s.corners; ++c)
        acc += s.dweight[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] * img[s.index[static_cast<std::size_t>(c)]];
    return acc;
}
} // namespace detail

/// Spatial derivative of the interpolant at psi(x), in voxel units. Used by the adjoint.
/// On a grid line the interpolant has a kink along that axis; there the mean of the
/// two one-sided slopes is returned (the symmetric derivative). Without this, v0 = 0
/// puts every sample on a node and the gradient degenerates to forward differences.
inline VectorField interp_scalar_position_gradient(const ScalarImage &img, const DeformationField &psi) {
    require_same_grid(img.grid(), psi.grid(), "interp_scalar_position_gradient");
    const GridDesc &g = img.grid();
    VectorField out(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const Point p = detail::sample_position(g, psi.u, v);
        const auto s = detail::make_stencil(g, p);
        for (int k = 0; k < g.dim(); ++k) {
            const auto ku = static_cast<std::size_t>(k);
            double slope = detail::stencil_slope(img, s, k);
            if (p[ku] == std::floor(p[ku])) {
                Point q = p;
                q[ku] -= 1.0;
                slope = 0.5 * (slope + detail::stencil_slope(img, detail::make_stencil(g, q), k));
            }
            out(v, k) = slope;
        }
    }
    return out;
}

inline Point interp_vector_at(const VectorField &vf, const Point &p) {
    const auto s = detail::make_stencil(vf.grid(), p);
    Point out{0, 0, 0};
    for (int c = 0; c < s.corners; ++c)
        for (int j = 0; j < vf.dim(); ++j)
            out[static_cast<std::size_t>(j)] += s.weight[static_cast<std::size_t>(c)] * vf(s.index[static_cast<std::size_t>(c)], j);
    return out;
}

inline std::vector<Point> interp_vector(const VectorField &vf, const LandmarkSet &points) {
    std::vector<Point> out;
    out.reserve(points.size());
    for (const auto &p : points.points) {
        for (int j = 0; j < vf.dim(); ++j)
            if (!std::isfinite(p[static_cast<std::size_t>(j)]))
                throw Error(ErrorCode::NonFinite, "interp_vector: non-finite landmark");
        out.push_back(interp_vector_at(vf, p));
    }
    return out;
}

/// Nearest-neighbour sampling at psi(x); ties round half up.
inline ScalarImage interp_nearest(const ScalarImage &img, const DeformationField &psi) {
    require_same_grid(img.grid(), psi.grid(), "interp_nearest");
    const GridDesc &g = img.grid();
    ScalarImage out(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const Point p = detail::sample_position(g, psi.u, v);
        std::array<int, kMaxDim> idx{0, 0, 0};
        for (int j = 0; j < g.dim(); ++j)
            idx[static_cast<std::size_t>(j)] = static_cast<int>(std::floor(p[static_cast<std::size_t>(j)] + 0.5));
        out[v] = img[g.ravel_wrapped(idx)];
    }
    return out;
}

} // namespace metamorph
