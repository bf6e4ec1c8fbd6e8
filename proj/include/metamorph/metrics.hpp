// Scalar objectives: image dissimilarities, overlap scores, regularizers and
// the assembled metamorphic energy.
#pragma once

#include <Eigen/Dense>

#include "metamorph/geodesic.hpp"

namespace metamorph {

inline double ssd(const ScalarImage &a, const ScalarImage &b) {
    require_same_grid(a.grid(), b.grid(), "ssd");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s * a.grid().voxel_volume();
}

/// Soerensen-Dice overlap after binarizing both masks at `threshold`; 1 when both are empty.
inline double dice(const MaskImage &y, const MaskImage &yhat, double threshold = 0.5) {
    require_same_grid(y.grid(), yhat.grid(), "dice");
    std::size_t ny = 0, nh = 0, both = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const bool a = y[i] > threshold;
        const bool b = yhat[i] > threshold;
        ny += a;
        nh += b;
        both += a && b;
    }
    if (ny + nh == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(ny + nh);
}

inline double dice_loss(const MaskImage &y, const MaskImage &yhat, double threshold = 0.5) {
    return 1.0 - dice(y, yhat, threshold);
}

inline constexpr double kCrossEntropyEps = 1e-6;

/// Mean binary cross entropy of prediction `a` against target `b`, both clamped to [eps, 1-eps].
inline double cross_entropy(const ScalarImage &a, const ScalarImage &b) {
    require_same_grid(a.grid(), b.grid(), "cross_entropy");
    constexpr double lo = kCrossEntropyEps, hi = 1.0 - kCrossEntropyEps;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double p = std::clamp(a[i], lo, hi);
        const double t = std::clamp(b[i], lo, hi);
        s += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    return -s / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Region mutual information (Gaussian posterior-covariance surrogate)

struct RmiConfig {
    int radius = 1;
    int stride = 2;
    double epsilon = 1e-6;
    int batch = 4;
    /// Use I_b = +1/2 log det(Sigma) as printed instead of the default -1/2 log det(Sigma).
    bool sign_literal = false;

    void validate() const {
        if (radius < 1) throw Error(ErrorCode::InvalidParameter, "rmi radius must be at least 1");
        if (stride < 1) throw Error(ErrorCode::InvalidParameter, "rmi stride must be at least 1");
        if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidParameter, "rmi epsilon must be positive");
        if (batch < 1) throw Error(ErrorCode::InvalidParameter, "rmi batch must be at least 1");
    }
};

struct RmiTerms {
    double cross_entropy = 0.0;
    double info = 0.0; // I_b
    double value = 0.0; // cross_entropy - info
};

namespace detail {

/// Sample voxels (every `stride` along each axis) and the neighbourhood offsets, row-major.
struct NeighborhoodLayout {
    std::vector<std::size_t> centers;
    std::vector<std::array<int, kMaxDim>> offsets;
};

inline NeighborhoodLayout neighborhood_layout(const GridDesc &g, const RmiConfig &cfg) {
    NeighborhoodLayout lay;
    const int d = g.dim();
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const auto idx = g.unravel(v);
        bool on = true;
        for (int j = 0; j < d; ++j) on = on && idx[static_cast<std::size_t>(j)] % cfg.stride == 0;
        if (on) lay.centers.push_back(v);
    }
    const int w = 2 * cfg.radius + 1;
    int count = 1;
    for (int j = 0; j < d; ++j) count *= w;
    for (int c = 0; c < count; ++c) {
        std::array<int, kMaxDim> off{0, 0, 0};
        int rem = c;
        for (int j = d - 1; j >= 0; --j) {
            off[static_cast<std::size_t>(j)] = rem % w - cfg.radius;
            rem /= w;
        }
        lay.offsets.push_back(off);
    }
    return lay;
}

inline std::size_t offset_voxel(const GridDesc &g, std::size_t center, const std::array<int, kMaxDim> &off) {
    auto idx = g.unravel(center);
    for (int j = 0; j < g.dim(); ++j) idx[static_cast<std::size_t>(j)] += off[static_cast<std::size_t>(j)];
    return g.ravel_wrapped(idx);
}

} // namespace detail

/// RMI dissimilarity of predictor `a` (deformed image) and target `b`.
/// When `grad_a` is non-null it receives d(value)/d(a).
inline RmiTerms rmi_terms(const ScalarImage &a, const ScalarImage &b, const RmiConfig &cfg, ScalarImage *grad_a = nullptr) {
    require_same_grid(a.grid(), b.grid(), "rmi");
    cfg.validate();
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const GridDesc &g = a.grid();
    const auto lay = detail::neighborhood_layout(g, cfg);
    const auto n = static_cast<Eigen::Index>(lay.centers.size());
    const auto k = static_cast<Eigen::Index>(lay.offsets.size());
    if (n < k)
        throw Error(ErrorCode::DegenerateStatistics, "rmi: " + std::to_string(n) + " neighbourhood samples for dimension " +
                                                         std::to_string(k));

    MatrixXd sa(k, n), sb(k, n);
    std::vector<std::size_t> vox(static_cast<std::size_t>(n * k));
    for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index o = 0; o < k; ++o) {
            const std::size_t v = detail::offset_voxel(g, lay.centers[static_cast<std::size_t>(p)], lay.offsets[static_cast<std::size_t>(o)]);
            vox[static_cast<std::size_t>(p * k + o)] = v;
            sa(o, p) = a[v];
            sb(o, p) = b[v];
        }
    }
    const VectorXd mean_a = sa.rowwise().mean();
    const VectorXd mean_b = sb.rowwise().mean();
    sa.colwise() -= mean_a;
    sb.colwise() -= mean_b;
    const double inv_n = 1.0 / static_cast<double>(n);
    // Cholesky of the regularized joint covariance [[M, C^T], [C, Sigma_b + eps I]]:
    // its lower-right block factors the Schur complement P.
    MatrixXd joint(2 * k, 2 * k);
    MatrixXd stacked(2 * k, n);
    stacked << sa, sb;
    joint.noalias() = inv_n * stacked * stacked.transpose();
    joint.diagonal().array() += cfg.epsilon;
    const Eigen::LLT<MatrixXd> llt(joint);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::DegenerateStatistics, "rmi: covariance not positive definite");
    const MatrixXd factor = llt.matrixL();
    const auto l11 = factor.topLeftCorner(k, k).triangularView<Eigen::Lower>();
    const MatrixXd l21 = factor.bottomLeftCorner(k, k);
    const MatrixXd l22 = factor.bottomRightCorner(k, k);
    double half_logdet = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) half_logdet += std::log(l22(i, i));

    RmiTerms out;
    out.cross_entropy = cross_entropy(a, b);
    out.info = cfg.sign_literal ? half_logdet : -half_logdet;
    out.value = out.cross_entropy - out.info;
    if (!std::isfinite(out.value)) throw Error(ErrorCode::NonFinite, "rmi: non-finite value");

    if (grad_a) {
        *grad_a = ScalarImage(g);
        // d(1/2 log det P)/d(a-sample p) = (1/n) [ -M^-1 C^T Q b_p + R a_p ],  R = M^-1 C^T Q C M^-1
        const MatrixXd ident = MatrixXd::Identity(k, k);
        const MatrixXd minv_ct = l11.transpose().solve(l21.transpose()); // M^-1 C^T
        MatrixXd l22_inv = l22.triangularView<Eigen::Lower>().solve(ident);
        const MatrixXd q = l22_inv.transpose() * l22_inv; // P^-1
        const MatrixXd mcq = minv_ct * q;
        const MatrixXd r = mcq * minv_ct.transpose();
        const double sign = cfg.sign_literal ? -1.0 : 1.0; // d(value)/d(half_logdet)
        const MatrixXd gs = (sign * inv_n) * (r * sa - mcq * sb);
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index o = 0; o < k; ++o) (*grad_a)[vox[static_cast<std::size_t>(p * k + o)]] += gs(o, p);

        constexpr double lo = kCrossEntropyEps, hi = 1.0 - kCrossEntropyEps;
        const double inv_count = 1.0 / static_cast<double>(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] <= lo || a[i] >= hi) continue;
            const double t = std::clamp(b[i], lo, hi);
            (*grad_a)[i] += -inv_count * (t / a[i] - (1.0 - t) / (1.0 - a[i]));
        }
    }
    return out;
}

inline double rmi(const ScalarImage &a, const ScalarImage &b, const RmiConfig &cfg = {}) { return rmi_terms(a, b, cfg).value; }

/// Batch form: cross entropy and lower bound both averaged over the pairs.
inline double rmi_batch(std::span<const std::pair<ScalarImage, ScalarImage>> pairs, const RmiConfig &cfg = {}) {
    if (pairs.empty()) throw Error(ErrorCode::InvalidParameter, "rmi_batch: empty batch");
    double s = 0.0;
    for (const auto &[a, b] : pairs) s += rmi(a, b, cfg);
    return s / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Regularizers

/// <L v, v> over voxels, times voxel volume.
inline double reg_energy(const FluidKernel &kernel, const VectorField &v) {
    require_same_grid(kernel.grid(), v.grid(), "reg_energy");
    return dot(kernel.apply_L(v), v) * v.grid().voxel_volume();
}

inline double reg_masked(const FluidKernel &kernel, const VectorField &v0, const MaskImage &mask) {
    return reg_energy(kernel, mask_velocity(v0, mask));
}

// ---------------------------------------------------------------------------
// Energies

enum class DistKind { Rmi, Ssd };

/// How the image term enters the energy. The raw dissimilarity is scaled by
/// 1/sigma^2; RMI is an average over voxels, so it is additionally multiplied
/// by the domain volume to sit on the same footing as the summed SSD.
struct DistOptions {
    DistKind kind = DistKind::Rmi;
    double sigma = 1.0;
    RmiConfig rmi{};

    [[nodiscard]] double weight(const GridDesc &g) const {
        const double w = 1.0 / (sigma * sigma);
        return kind == DistKind::Ssd ? w : w * static_cast<double>(g.voxel_count()) * g.voxel_volume();
    }
    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::InvalidParameter, "sigma must be positive");
        if (kind == DistKind::Rmi) rmi.validate();
    }
};

/// Noise level that balances each dissimilarity against the default metric
/// (alpha 3, power 3) for intensities in [0,1].
inline double default_sigma(DistKind kind) { return kind == DistKind::Ssd ? 0.002 : 1.0; }

struct EnergyReport {
    double dist = 0.0;
    double reg = 0.0;
    double seg = 0.0;
    double gamma = 0.0;
    double total = 0.0;
};

/// Weighted image term and, optionally, its derivative with respect to the deformed image.
inline double dist_term(const ScalarImage &deformed, const ScalarImage &target, const DistOptions &opt,
                        ScalarImage *grad = nullptr) {
    const double w = opt.weight(deformed.grid());
    if (opt.kind == DistKind::Ssd) {
        if (grad) {
            *grad = ScalarImage(deformed.grid());
            const double c = 2.0 * w * deformed.grid().voxel_volume();
            for (std::size_t i = 0; i < deformed.size(); ++i) (*grad)[i] = c * (deformed[i] - target[i]);
        }
        return w * ssd(deformed, target);
    }
    const RmiTerms t = rmi_terms(deformed, target, opt.rmi, grad);
    if (grad)
        for (double &x : grad->values()) x *= w;
    return w * t.value;
}

/// Intermediate state of one energy evaluation, reused by the gradient.
struct EnergyState {
    VectorField v0_masked;
    ScalarImage source_masked;
    ScalarImage target_masked;
    GeodesicPath path;
    std::vector<VectorField> displacements; // u_0 .. u_steps
    ScalarImage deformed;
    EnergyReport report;
};

inline EnergyState evaluate_energy(const ScalarImage &source, const ScalarImage &target, const MaskImage &mask,
                                   const VectorField &v0, const FluidKernel &kernel, const ShootingConfig &shooting,
                                   const DistOptions &dist) {
    require_same_grid(source.grid(), target.grid(), "energy");
    require_same_grid(source.grid(), mask.grid(), "energy");
    require_same_grid(source.grid(), v0.grid(), "energy");
    require_same_grid(source.grid(), kernel.grid(), "energy");
    dist.validate();
    EnergyState st;
    st.v0_masked = mask_velocity(v0, mask);
    st.source_masked = mask_image(source, mask);
    st.target_masked = mask_image(target, mask);
    st.path.velocities = shoot_velocities(kernel, st.v0_masked, shooting);
    st.displacements = integrate_psi_history(st.path.velocities, shooting);
    st.path.psi = {st.displacements.back()};
    st.deformed = warp(st.source_masked, st.path.psi);
    st.report.dist = dist_term(st.deformed, st.target_masked, dist);
    st.report.reg = reg_energy(kernel, st.v0_masked);
    st.report.total = st.report.dist + st.report.reg;
    return st;
}

/// Masked-image dissimilarity after shooting the masked velocity, plus the masked regularizer.
inline EnergyReport energy_metamorphic(const ScalarImage &source, const ScalarImage &target, const MaskImage &mask,
                                       const VectorField &v0, const FluidKernel &kernel, const ShootingConfig &shooting,
                                       const DistOptions &dist) {
    return evaluate_energy(source, target, mask, v0, kernel, shooting, dist).report;
}

/// total = dist + reg + gamma * seg
inline EnergyReport loss_joint(const EnergyReport &parts, double seg, double gamma = 0.5) {
    if (!std::isfinite(parts.dist) || !std::isfinite(parts.reg) || !std::isfinite(seg))
        throw Error(ErrorCode::NonFinite, "loss_joint: non-finite term");
    if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidParameter, "gamma must be non-negative");
    EnergyReport r = parts;
    r.seg = seg;
    r.gamma = gamma;
    r.total = r.dist + r.reg + gamma * seg;
    return r;
}

} // namespace metamorph
