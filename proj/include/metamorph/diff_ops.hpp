// Central finite differences with periodic wrap.
#pragma once

#include "metamorph/grid.hpp"

namespace metamorph {

/// Per-voxel d x d matrices, entry (i,j) = d(component i)/d(axis j).
class MatrixField {
public:
    MatrixField() = default;
    explicit MatrixField(GridDesc grid)
        : grid_(std::move(grid)),
          data_(grid_.voxel_count() * static_cast<std::size_t>(grid_.dim() * grid_.dim()), 0.0) {}

    [[nodiscard]] const GridDesc &grid() const noexcept { return grid_; }
    [[nodiscard]] int dim() const noexcept { return grid_.dim(); }

    double &operator()(std::size_t voxel, int i, int j) noexcept {
        const auto d = static_cast<std::size_t>(grid_.dim());
        return data_[voxel * d * d + static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
    }
    double operator()(std::size_t voxel, int i, int j) const noexcept {
        const auto d = static_cast<std::size_t>(grid_.dim());
        return data_[voxel * d * d + static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
    }

private:
    GridDesc grid_;
    std::vector<double> data_;
};

/// Central difference of a flat scalar array along one axis.
inline double central_diff(const GridDesc &g, std::span<const double> f, std::size_t v, int axis) {
    return (f[g.neighbor(v, axis, +1)] - f[g.neighbor(v, axis, -1)]) / (2.0 * g.spacing(axis));
}

inline VectorField gradient_central(const ScalarImage &img) {
    const GridDesc &g = img.grid();
    VectorField out(g);
    const auto f = img.values();
    for (std::size_t v = 0; v < g.voxel_count(); ++v)
        for (int j = 0; j < g.dim(); ++j) out(v, j) = central_diff(g, f, v, j);
    return out;
}

inline MatrixField jacobian(const VectorField &vf) {
    const GridDesc &g = vf.grid();
    const int d = g.dim();
    MatrixField out(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        for (int j = 0; j < d; ++j) {
            const std::size_t p = g.neighbor(v, j, +1);
            const std::size_t m = g.neighbor(v, j, -1);
            const double inv = 1.0 / (2.0 * g.spacing(j));
            for (int i = 0; i < d; ++i) out(v, i, j) = (vf(p, i) - vf(m, i)) * inv;
        }
    }
    return out;
}

inline ScalarImage divergence(const VectorField &vf) {
    const GridDesc &g = vf.grid();
    ScalarImage out(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        double s = 0.0;
        for (int j = 0; j < g.dim(); ++j)
            s += (vf(g.neighbor(v, j, +1), j) - vf(g.neighbor(v, j, -1), j)) / (2.0 * g.spacing(j));
        out[v] = s;
    }
    return out;
}

} // namespace metamorph
