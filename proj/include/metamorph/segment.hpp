// Appearance-change mask estimation, mask union, label augmentation and the
// alternating segmentation / registration loop.
#pragma once

#include <atomic>
#include <deque>
#include <thread>

#include "metamorph/optimize.hpp"

namespace metamorph {

enum class EstimatorKind { Oracle, Residual };

struct MaskEstimator {
    EstimatorKind kind = EstimatorKind::Residual;
    double smooth_sigma = 3.0;
    /// Fixed residual threshold; Otsu's threshold on the smoothed residual when unset.
    std::optional<double> threshold;
    int min_area = 9;
};

/// One registration pair. Ground-truth masks feed the oracle estimator and the
/// segmentation-loss report; landmarks feed evaluation.
struct PairSample {
    std::string name;
    ScalarImage source, target;
    std::optional<MaskImage> mask_source, mask_target;
    std::optional<LandmarkSet> landmarks_source, landmarks_target;
};

/// Image with a segmentation label, the unit of the segmentation working set.
struct LabeledSample {
    std::string name;
    ScalarImage image;
    MaskImage label;
};

inline MaskImage union_mask(const MaskImage &a, const MaskImage &b) {
    require_same_grid(a.grid(), b.grid(), "union_mask");
    MaskImage out(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) out.set(i, std::max(a[i], b[i]));
    return out;
}

/// Separable periodic Gaussian smoothing (width in voxels).
inline ScalarImage gaussian_smooth(const ScalarImage &img, double sigma) {
    if (!(sigma > 0.0)) return img;
    const GridDesc &g = img.grid();
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        const double w = std::exp(-0.5 * t * t / (sigma * sigma));
        taps[static_cast<std::size_t>(t + radius)] = w;
        norm += w;
    }
    for (double &w : taps) w /= norm;
    ScalarImage cur = img;
    for (int axis = 0; axis < g.dim(); ++axis) {
        ScalarImage next(g);
        for (std::size_t v = 0; v < g.voxel_count(); ++v) {
            double s = 0.0;
            for (int t = -radius; t <= radius; ++t) s += taps[static_cast<std::size_t>(t + radius)] * cur[g.neighbor(v, axis, t)];
            next[v] = s;
        }
        cur = std::move(next);
    }
    return cur;
}

/// Otsu's threshold over a 256-bin histogram of the values.
inline double otsu_threshold(std::span<const double> values) {
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) return hi;
    constexpr int bins = 256;
    std::array<double, bins> hist{};
    const double width = (hi - lo) / bins;
    for (double x : values) hist[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>((x - lo) / width)))] += 1.0;
    const auto total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int b = 0; b < bins; ++b) sum_all += b * hist[static_cast<std::size_t>(b)];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int b = 0; b < bins - 1; ++b) {
        w0 += hist[static_cast<std::size_t>(b)];
        sum0 += b * hist[static_cast<std::size_t>(b)];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = b;
        }
    }
    return lo + (best_bin + 1) * width;
}

/// Face-connected components (periodic) of voxels where `on` is true.
inline std::vector<std::vector<std::size_t>> connected_components(const GridDesc &g, const std::vector<bool> &on) {
    std::vector<std::vector<std::size_t>> comps;
    std::vector<bool> seen(on.size(), false);
    std::deque<std::size_t> queue;
    for (std::size_t s = 0; s < on.size(); ++s) {
        if (!on[s] || seen[s]) continue;
        comps.emplace_back();
        seen[s] = true;
        queue.push_back(s);
        while (!queue.empty()) {
            const std::size_t v = queue.front();
            queue.pop_front();
            comps.back().push_back(v);
            for (int axis = 0; axis < g.dim(); ++axis) {
                for (int off : {-1, 1}) {
                    const std::size_t nb = g.neighbor(v, axis, off);
                    if (on[nb] && !seen[nb]) {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
    }
    return comps;
}

/// Source-side and target-side appearance-change masks. For the residual
/// estimator `context` (a deformed source) replaces the source in the residual.
inline std::pair<MaskImage, MaskImage> estimate_masks(const MaskEstimator &est, const PairSample &pair,
                                                      const ScalarImage *context = nullptr) {
    const GridDesc &g = pair.source.grid();
    require_same_grid(g, pair.target.grid(), "estimate_masks");
    if (est.kind == EstimatorKind::Oracle) {
        if (!pair.mask_source && !pair.mask_target)
            throw Error(ErrorCode::MissingLabels, "oracle estimator: pair '" + pair.name + "' has no ground-truth masks");
        return {pair.mask_source.value_or(MaskImage(g)), pair.mask_target.value_or(MaskImage(g))};
    }

    const ScalarImage &ref = context ? *context : pair.source;
    require_same_grid(g, ref.grid(), "estimate_masks");
    ScalarImage residual(g);
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = std::abs(ref[i] - pair.target[i]);
    MaskImage src(g), tgt(g);
    const auto [lo, hi] = std::minmax_element(residual.values().begin(), residual.values().end());
    if (*hi == 0.0) return {src, tgt};

    const ScalarImage smooth = gaussian_smooth(residual, est.smooth_sigma);
    const double thr = est.threshold.value_or(otsu_threshold(smooth.values()));
    std::vector<bool> on(smooth.size());
    for (std::size_t i = 0; i < smooth.size(); ++i) on[i] = smooth[i] > thr;
    for (const auto &comp : connected_components(g, on)) {
        if (comp.size() < static_cast<std::size_t>(est.min_area)) continue;
        double brighter = 0.0;
        for (std::size_t v : comp) brighter += pair.target[v] - ref[v];
        MaskImage &dst = brighter > 0.0 ? tgt : src;
        for (std::size_t v : comp) dst.set(v, 1.0);
    }
    return {src, tgt};
}

/// Deformed source and its nearest-neighbour propagated label.
inline LabeledSample augment(const ScalarImage &source, const MaskImage &label, const GeodesicPath &path, std::string name = {}) {
    return {std::move(name), warp(source, path.psi), propagate_label(label, path.psi, LabelInterp::Nearest)};
}

struct JointConfig {
    int q = 5;
    double gamma = 0.5;
    RegistrationConfig registration{};
    bool augment = true;
    int jobs = 1;

    void validate() const {
        if (q < 1) throw Error(ErrorCode::InvalidParameter, "joint q must be at least 1");
        if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidParameter, "gamma must be non-negative");
        if (jobs < 1) throw Error(ErrorCode::InvalidParameter, "jobs must be at least 1");
        registration.validate();
    }
};

struct PairOutcome {
    std::optional<RegistrationResult> result;
    MaskImage mask_source, mask_target, mask_union;
    std::vector<EnergyReport> history; // one loss per outer iteration
    std::vector<double> dice_history;  // empty without ground truth
    std::string error;
};

struct JointResult {
    std::vector<PairOutcome> pairs;
    std::vector<double> loss_history; // mean total over successful pairs per outer iteration
    std::vector<LabeledSample> working_set;
    bool partial_failure = false;
};

/// Runs fn(i) for i in [0, count) on up to `jobs` threads.
inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)> &fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < std::min<int>(jobs, static_cast<int>(count)); ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) fn(i);
        });
}

inline std::optional<MaskImage> ground_truth_union(const PairSample &p) {
    if (!p.mask_source && !p.mask_target) return std::nullopt;
    const MaskImage empty(p.source.grid());
    return union_mask(p.mask_source.value_or(empty), p.mask_target.value_or(empty));
}

/// Alternates mask estimation and metamorphic registration for q outer iterations.
/// Each registration after the first resumes from that pair's previous v0.
inline JointResult joint_fit(std::span<const PairSample> dataset, const MaskEstimator &estimator, const JointConfig &cfg) {
    cfg.validate();
    RegistrationConfig reg = cfg.registration;
    reg.mode = RegistrationMode::Metamorph;

    JointResult out;
    out.pairs.resize(dataset.size());
    for (const auto &p : dataset) {
        const MaskImage empty(p.source.grid());
        if (p.mask_source) out.working_set.push_back({p.name + "/source", p.source, *p.mask_source});
        if (p.mask_target) out.working_set.push_back({p.name + "/target", p.target, *p.mask_target});
    }

    for (int iter = 0; iter < cfg.q; ++iter) {
        std::vector<std::optional<LabeledSample>> augmented(dataset.size());
        parallel_for(dataset.size(), cfg.jobs, [&](std::size_t i) {
            const PairSample &p = dataset[i];
            PairOutcome &o = out.pairs[i];
            if (!o.error.empty()) return;
            try {
                const ScalarImage *ctx = (iter > 0 && o.result) ? &o.result->deformed : nullptr;
                std::tie(o.mask_source, o.mask_target) = estimate_masks(estimator, p, ctx);
                o.mask_union = union_mask(o.mask_source, o.mask_target);
                double seg = 0.0;
                if (const auto truth = ground_truth_union(p)) {
                    const double dsc = dice(*truth, o.mask_union);
                    o.dice_history.push_back(dsc);
                    seg = 1.0 - dsc;
                }
                // warm start: the registration carries over between outer iterations
                const VectorField *warm = o.result ? &o.result->v0 : nullptr;
                o.result = register_images(p.source, p.target, o.mask_union, reg, warm);
                o.history.push_back(loss_joint(o.result->report, seg, cfg.gamma));
                if (cfg.augment) {
                    const MaskImage &label = p.mask_source ? *p.mask_source : o.mask_source;
                    augmented[i] = augment(p.source, label, o.result->path, p.name + "/aug" + std::to_string(iter + 1));
                }
            } catch (const Error &e) {
                o.error = e.what();
            }
        });
        for (auto &a : augmented)
            if (a) out.working_set.push_back(std::move(*a));

        double sum = 0.0;
        int count = 0;
        for (const auto &o : out.pairs) {
            if (!o.error.empty() || static_cast<int>(o.history.size()) != iter + 1) continue;
            sum += o.history.back().total;
            ++count;
        }
        out.loss_history.push_back(count ? sum / count : std::numeric_limits<double>::quiet_NaN());
    }
    for (const auto &o : out.pairs) out.partial_failure = out.partial_failure || !o.error.empty();
    return out;
}

} // namespace metamorph
