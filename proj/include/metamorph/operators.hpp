// Metric operator L = (I - alpha * Laplacian)^c and its inverse K, applied as
// Fourier multipliers on the periodic grid.
#pragma once

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "metamorph/grid.hpp"

namespace metamorph {

namespace detail {

/// FFTW plans are created once per grid shape. Planning is serialized; the
/// new-array execute functions are reentrant, so callers pass their own buffers.
class FftPlans {
public:
    FftPlans(const std::vector<int> &sizes) {
        const auto n = static_cast<std::size_t>(std::accumulate(sizes.begin(), sizes.end(), 1, std::multiplies<>()));
        std::vector<std::complex<double>> scratch(n);
        auto *buf = reinterpret_cast<fftw_complex *>(scratch.data());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        forward_ = fftw_plan_dft(static_cast<int>(sizes.size()), sizes.data(), buf, buf, FFTW_FORWARD, flags);
        backward_ = fftw_plan_dft(static_cast<int>(sizes.size()), sizes.data(), buf, buf, FFTW_BACKWARD, flags);
    }
    FftPlans(const FftPlans &) = delete;
    FftPlans &operator=(const FftPlans &) = delete;
    ~FftPlans() {
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
    }

    void forward(std::vector<std::complex<double>> &buf) const {
        auto *p = reinterpret_cast<fftw_complex *>(buf.data());
        fftw_execute_dft(forward_, p, p);
    }
    void backward(std::vector<std::complex<double>> &buf) const {
        auto *p = reinterpret_cast<fftw_complex *>(buf.data());
        fftw_execute_dft(backward_, p, p);
    }

    static const FftPlans &get(const std::vector<int> &sizes) {
        static std::mutex mutex;
        static std::map<std::vector<int>, std::unique_ptr<FftPlans>> cache;
        std::lock_guard lock(mutex);
        auto &slot = cache[sizes];
        if (!slot) slot = std::make_unique<FftPlans>(sizes);
        return *slot;
    }

private:
    fftw_plan forward_ = nullptr;
    fftw_plan backward_ = nullptr;
};

} // namespace detail

/// Eigenvalue of the negative discrete Laplacian for the frequency multi-index k.
inline double laplacian_eigenvalue(const GridDesc &g, const std::array<int, kMaxDim> &k) {
    double s = 0.0;
    for (int j = 0; j < g.dim(); ++j) {
        const double h = g.spacing(j);
        const int n = g.size(j);
        int kj = k[static_cast<std::size_t>(j)] % n;
        if (kj < 0) kj += n;
        kj = std::min(kj, n - kj); // exact symmetry under k -> -k
        s += 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi * kj / n)) / (h * h);
    }
    return s;
}

class FluidKernel {
public:
    FluidKernel(GridDesc grid, double alpha = 3.0, int power = 3) : grid_(std::move(grid)), alpha_(alpha), power_(power) {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::InvalidParameter, "alpha must be positive");
        if (power < 1) throw Error(ErrorCode::InvalidParameter, "power must be at least 1");
        lambda_.resize(grid_.voxel_count());
        for (std::size_t f = 0; f < lambda_.size(); ++f) {
            const double base = 1.0 + alpha_ * laplacian_eigenvalue(grid_, grid_.unravel(f));
            lambda_[f] = std::pow(base, power_);
        }
    }

    [[nodiscard]] const GridDesc &grid() const noexcept { return grid_; }
    [[nodiscard]] double alpha() const noexcept { return alpha_; }
    [[nodiscard]] int power() const noexcept { return power_; }
    /// Multiplier table, indexed like voxels (frequency k_j in [0, N_j)).
    [[nodiscard]] std::span<const double> lambda() const noexcept { return lambda_; }
    [[nodiscard]] double lambda_at(const std::array<int, kMaxDim> &k) const { return lambda_[grid_.ravel_wrapped(k)]; }

    [[nodiscard]] VectorField apply_L(const VectorField &v) const { return apply(v, false); }
    [[nodiscard]] VectorField apply_K(const VectorField &m) const { return apply(m, true); }

private:
    [[nodiscard]] VectorField apply(const VectorField &in, bool inverse) const {
        require_same_grid(grid_, in.grid(), inverse ? "apply_K" : "apply_L");
        const auto &plans = detail::FftPlans::get(grid_.sizes());
        const std::size_t n = grid_.voxel_count();
        const int d = grid_.dim();
        const double scale = 1.0 / static_cast<double>(n);
        VectorField out(grid_);
        std::vector<std::complex<double>> buf(n);
        // The multiplier is real and even in k, so it maps real fields to real
        // fields; two components share one complex transform (real/imag parts).
        for (int j = 0; j < d; j += 2) {
            const bool pair = j + 1 < d;
            for (std::size_t v = 0; v < n; ++v) buf[v] = {in(v, j), pair ? in(v, j + 1) : 0.0};
            plans.forward(buf);
            for (std::size_t f = 0; f < n; ++f) buf[f] *= (inverse ? 1.0 / lambda_[f] : lambda_[f]) * scale;
            plans.backward(buf);
            for (std::size_t v = 0; v < n; ++v) {
                out(v, j) = buf[v].real();
                if (pair) out(v, j + 1) = buf[v].imag();
            }
        }
        return out;
    }

    GridDesc grid_;
    double alpha_;
    int power_;
    std::vector<double> lambda_;
};

inline FluidKernel build_kernel(const GridDesc &grid, double alpha = 3.0, int power = 3) {
    return FluidKernel(grid, alpha, power);
}

} // namespace metamorph
