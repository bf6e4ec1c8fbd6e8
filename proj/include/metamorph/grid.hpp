// Grid geometry and field containers on a periodic (torus) domain.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace metamorph {

/// Error categories. The CLI maps these onto process exit codes.
enum class ErrorCode {
    InvalidParameter,
    GridMismatch,
    NonFinite,
    Instability,
    DegenerateStatistics,
    MissingLabels,
    MalformedHeader,
    LengthMismatch,
    RangeError,
    IoError,
    BadCsv,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string &what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline constexpr int kMaxDim = 3;

/// Per-axis voxel counts and spacing. Axis 0 is the slowest-varying index.
class GridDesc {
public:
    GridDesc() = default;

    explicit GridDesc(std::vector<int> sizes, std::vector<double> spacing = {})
        : sizes_(std::move(sizes)), spacing_(std::move(spacing)) {
        if (spacing_.empty()) spacing_.assign(sizes_.size(), 1.0);
        validate();
    }

    [[nodiscard]] int dim() const noexcept { return static_cast<int>(sizes_.size()); }
    [[nodiscard]] int size(int axis) const { return sizes_.at(static_cast<std::size_t>(axis)); }
    [[nodiscard]] double spacing(int axis) const { return spacing_.at(static_cast<std::size_t>(axis)); }
    [[nodiscard]] const std::vector<int> &sizes() const noexcept { return sizes_; }
    [[nodiscard]] const std::vector<double> &spacings() const noexcept { return spacing_; }

    [[nodiscard]] std::size_t voxel_count() const noexcept {
        std::size_t n = 1;
        for (int s : sizes_) n *= static_cast<std::size_t>(s);
        return n;
    }

    [[nodiscard]] double voxel_volume() const noexcept {
        double v = 1.0;
        for (double h : spacing_) v *= h;
        return v;
    }

    /// Row-major stride of an axis (axis dim-1 has stride 1).
    [[nodiscard]] std::size_t stride(int axis) const noexcept {
        std::size_t s = 1;
        for (int a = dim() - 1; a > axis; --a) s *= static_cast<std::size_t>(sizes_[static_cast<std::size_t>(a)]);
        return s;
    }

    [[nodiscard]] std::array<int, kMaxDim> unravel(std::size_t index) const noexcept {
        std::array<int, kMaxDim> idx{0, 0, 0};
        for (int a = dim() - 1; a >= 0; --a) {
            const auto n = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(a)]);
            idx[static_cast<std::size_t>(a)] = static_cast<int>(index % n);
            index /= n;
        }
        return idx;
    }

    /// Linear index of a (possibly out-of-range) multi-index, wrapped periodically.
    [[nodiscard]] std::size_t ravel_wrapped(const std::array<int, kMaxDim> &idx) const noexcept {
        std::size_t lin = 0;
        for (int a = 0; a < dim(); ++a) {
            const int n = sizes_[static_cast<std::size_t>(a)];
            int i = idx[static_cast<std::size_t>(a)] % n;
            if (i < 0) i += n;
            lin = lin * static_cast<std::size_t>(n) + static_cast<std::size_t>(i);
        }
        return lin;
    }

    /// Index of the neighbour `offset` voxels away along `axis`.
    [[nodiscard]] std::size_t neighbor(std::size_t index, int axis, int offset) const noexcept {
        const std::size_t st = stride(axis);
        const auto n = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(axis)]);
        const std::size_t coord = (index / st) % n;
        const auto shifted = static_cast<std::size_t>(
            ((static_cast<long long>(coord) + offset) % static_cast<long long>(n) + static_cast<long long>(n)) %
            static_cast<long long>(n));
        return index - coord * st + shifted * st;
    }

    friend bool operator==(const GridDesc &a, const GridDesc &b) {
        return a.sizes_ == b.sizes_ && a.spacing_ == b.spacing_;
    }

private:
    void validate() const {
        if (sizes_.size() != 2 && sizes_.size() != 3)
            throw Error(ErrorCode::InvalidParameter, "grid dimension must be 2 or 3");
        if (spacing_.size() != sizes_.size())
            throw Error(ErrorCode::InvalidParameter, "spacing entries must match grid dimension");
        for (int s : sizes_)
            if (s < 4) throw Error(ErrorCode::InvalidParameter, "every grid size must be at least 4");
        for (double h : spacing_)
            if (!(h > 0.0) || !std::isfinite(h)) throw Error(ErrorCode::InvalidParameter, "spacing must be positive");
    }

    std::vector<int> sizes_;
    std::vector<double> spacing_;
};

inline void require_same_grid(const GridDesc &a, const GridDesc &b, const char *what) {
    if (!(a == b)) throw Error(ErrorCode::GridMismatch, std::string(what) + ": grid mismatch");
}

namespace detail {
inline void require_finite(std::span<const double> data, const char *what) {
    for (double x : data)
        if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, std::string(what) + ": non-finite value");
}
} // namespace detail

/// One real value per voxel.
class ScalarImage {
public:
    ScalarImage() = default;
    explicit ScalarImage(GridDesc grid, double fill = 0.0) : grid_(std::move(grid)), data_(grid_.voxel_count(), fill) {}
    ScalarImage(GridDesc grid, std::vector<double> data) : grid_(std::move(grid)), data_(std::move(data)) {
        if (data_.size() != grid_.voxel_count())
            throw Error(ErrorCode::LengthMismatch, "scalar image data length does not match grid");
        detail::require_finite(data_, "ScalarImage");
    }

    [[nodiscard]] const GridDesc &grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    double &operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    friend bool operator==(const ScalarImage &a, const ScalarImage &b) {
        return a.grid_ == b.grid_ && a.data_ == b.data_;
    }

private:
    GridDesc grid_;
    std::vector<double> data_;
};

/// d components per voxel, interleaved (voxel-major).
class VectorField {
public:
    VectorField() = default;
    explicit VectorField(GridDesc grid, double fill = 0.0)
        : grid_(std::move(grid)), data_(grid_.voxel_count() * static_cast<std::size_t>(grid_.dim()), fill) {}
    VectorField(GridDesc grid, std::vector<double> data) : grid_(std::move(grid)), data_(std::move(data)) {
        if (data_.size() != grid_.voxel_count() * static_cast<std::size_t>(grid_.dim()))
            throw Error(ErrorCode::LengthMismatch, "vector field data length does not match grid");
        detail::require_finite(data_, "VectorField");
    }

    /// Constant field c everywhere.
    static VectorField constant(const GridDesc &grid, std::span<const double> c) {
        VectorField f(grid);
        const int d = grid.dim();
        for (std::size_t v = 0; v < grid.voxel_count(); ++v)
            for (int j = 0; j < d; ++j) f(v, j) = c[static_cast<std::size_t>(j)];
        return f;
    }

    [[nodiscard]] const GridDesc &grid() const noexcept { return grid_; }
    [[nodiscard]] int dim() const noexcept { return grid_.dim(); }
    [[nodiscard]] std::size_t voxel_count() const noexcept { return grid_.voxel_count(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] std::span<double> values() noexcept { return data_; }

    double &operator()(std::size_t voxel, int comp) noexcept {
        return data_[voxel * static_cast<std::size_t>(grid_.dim()) + static_cast<std::size_t>(comp)];
    }
    double operator()(std::size_t voxel, int comp) const noexcept {
        return data_[voxel * static_cast<std::size_t>(grid_.dim()) + static_cast<std::size_t>(comp)];
    }

    [[nodiscard]] ScalarImage component(int comp) const {
        ScalarImage out(grid_);
        for (std::size_t v = 0; v < voxel_count(); ++v) out[v] = (*this)(v, comp);
        return out;
    }
    void set_component(int comp, const ScalarImage &img) {
        for (std::size_t v = 0; v < voxel_count(); ++v) (*this)(v, comp) = img[v];
    }

    [[nodiscard]] double max_magnitude() const noexcept {
        double best = 0.0;
        const int d = dim();
        for (std::size_t v = 0; v < voxel_count(); ++v) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += (*this)(v, j) * (*this)(v, j);
            best = std::max(best, s);
        }
        return std::sqrt(best);
    }

    [[nodiscard]] double max_abs() const noexcept {
        double best = 0.0;
        for (double x : data_) best = std::max(best, std::abs(x));
        return best;
    }

    VectorField &operator+=(const VectorField &o) {
        require_same_grid(grid_, o.grid_, "VectorField +=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    /// this += a * o
    VectorField &axpy(double a, const VectorField &o) {
        require_same_grid(grid_, o.grid_, "VectorField axpy");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
        return *this;
    }
    VectorField &operator*=(double a) noexcept {
        for (double &x : data_) x *= a;
        return *this;
    }

    friend bool operator==(const VectorField &a, const VectorField &b) {
        return a.grid_ == b.grid_ && a.data_ == b.data_;
    }

private:
    GridDesc grid_;
    std::vector<double> data_;
};

inline double dot(const VectorField &a, const VectorField &b) {
    require_same_grid(a.grid(), b.grid(), "dot");
    double s = 0.0;
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    return s;
}

/// Soft mask with values in [0,1].
class MaskImage {
public:
    MaskImage() = default;
    explicit MaskImage(GridDesc grid, double fill = 0.0) : grid_(std::move(grid)), data_(grid_.voxel_count(), fill) {
        check_range();
    }
    MaskImage(GridDesc grid, std::vector<double> data) : grid_(std::move(grid)), data_(std::move(data)) {
        if (data_.size() != grid_.voxel_count())
            throw Error(ErrorCode::LengthMismatch, "mask data length does not match grid");
        check_range();
    }

    [[nodiscard]] const GridDesc &grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Writes are clamped into [0,1].
    void set(std::size_t i, double value) noexcept { data_[i] = std::clamp(value, 0.0, 1.0); }

    [[nodiscard]] std::size_t count_above(double threshold) const noexcept {
        return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [&](double x) { return x > threshold; }));
    }

    friend bool operator==(const MaskImage &a, const MaskImage &b) {
        return a.grid_ == b.grid_ && a.data_ == b.data_;
    }

private:
    void check_range() const {
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (!(data_[i] >= 0.0 && data_[i] <= 1.0))
                throw Error(ErrorCode::RangeError, "mask value out of [0,1] at index " + std::to_string(i));
    }

    GridDesc grid_;
    std::vector<double> data_;
};

/// psi(x) = x + u(x), displacement in voxel units.
struct DeformationField {
    VectorField u;

    static DeformationField identity(const GridDesc &grid) { return {VectorField(grid)}; }
    [[nodiscard]] const GridDesc &grid() const noexcept { return u.grid(); }
};

using Point = std::array<double, kMaxDim>;

/// Points in voxel coordinates, interpreted modulo the grid sizes.
struct LandmarkSet {
    int dim = 2;
    std::vector<Point> points;
    std::vector<std::string> labels;

    [[nodiscard]] std::size_t size() const noexcept { return points.size(); }
};

/// Shortest periodic displacement from a to b along each axis.
inline double torus_distance(const GridDesc &grid, const Point &a, const Point &b) {
    double s = 0.0;
    for (int j = 0; j < grid.dim(); ++j) {
        const double n = grid.size(j);
        double d = std::fmod(b[static_cast<std::size_t>(j)] - a[static_cast<std::size_t>(j)], n);
        if (d > n / 2) d -= n;
        if (d < -n / 2) d += n;
        d *= grid.spacing(j);
        s += d * d;
    }
    return std::sqrt(s);
}

/// Mean physical L2 distance between corresponding landmarks.
inline double mean_landmark_error(const GridDesc &grid, const LandmarkSet &a, const LandmarkSet &b) {
    if (a.size() != b.size()) throw Error(ErrorCode::InvalidParameter, "landmark sets differ in size");
    if (a.size() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += torus_distance(grid, a.points[i], b.points[i]);
    return s / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Masking primitives

/// img * (1 - U)
inline ScalarImage mask_image(const ScalarImage &img, const MaskImage &mask) {
    require_same_grid(img.grid(), mask.grid(), "mask_image");
    ScalarImage out(img.grid());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] * (1.0 - mask[i]);
    return out;
}

/// Each component scaled by (1 - U).
inline VectorField mask_velocity(const VectorField &v, const MaskImage &mask) {
    require_same_grid(v.grid(), mask.grid(), "mask_velocity");
    VectorField out(v.grid());
    const int d = v.dim();
    for (std::size_t i = 0; i < v.voxel_count(); ++i) {
        const double keep = 1.0 - mask[i];
        for (int j = 0; j < d; ++j) out(i, j) = v(i, j) * keep;
    }
    return out;
}

} // namespace metamorph
