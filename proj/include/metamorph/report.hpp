// Per-pair evaluation metrics and the JSON run report.
#pragma once

#include <chrono>
#include <ctime>
#include <iomanip>

#include <json.hpp>

#include "metamorph/metrics.hpp"

namespace metamorph {

struct PairMetrics {
    std::string name;
    double ssd_before = 0.0, ssd_after = 0.0;
    double rmi_before = 0.0, rmi_after = 0.0;
    std::optional<double> dice;
    std::optional<double> landmark_l2_before, landmark_l2_after;
    double jac_det_min = 1.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {
inline ScalarImage clamp01(const ScalarImage &img) {
    ScalarImage out = img;
    for (double &x : out.values()) x = std::clamp(x, 0.0, 1.0);
    return out;
}
} // namespace detail

struct EvaluationInputs {
    std::string name;
    const ScalarImage *source = nullptr;
    const ScalarImage *target = nullptr;
    const std::vector<VectorField> *velocities = nullptr; // v_0 .. v_steps of the estimated geodesic
    const DeformationField *psi = nullptr;
    ShootingConfig shooting{};
    const LandmarkSet *landmarks_source = nullptr;
    const LandmarkSet *landmarks_target = nullptr;
    const MaskImage *mask_estimate = nullptr; // mask used for registration
    const MaskImage *mask_truth = nullptr;    // ground-truth union
    int iterations = 0;
    bool converged = false;
};

inline PairMetrics evaluate_pair(const EvaluationInputs &in, const RmiConfig &rmi_cfg = {}) {
    PairMetrics m;
    m.name = in.name;
    const ScalarImage deformed = warp(*in.source, *in.psi);
    m.ssd_before = ssd(*in.source, *in.target);
    m.ssd_after = ssd(deformed, *in.target);
    const ScalarImage tgt = detail::clamp01(*in.target);
    m.rmi_before = rmi(detail::clamp01(*in.source), tgt, rmi_cfg);
    m.rmi_after = rmi(detail::clamp01(deformed), tgt, rmi_cfg);
    if (in.mask_estimate && in.mask_truth) m.dice = dice(*in.mask_truth, *in.mask_estimate);
    if (in.landmarks_source && in.landmarks_target) {
        const GridDesc &g = in.source->grid();
        m.landmark_l2_before = mean_landmark_error(g, *in.landmarks_source, *in.landmarks_target);
        const LandmarkSet moved = propagate_landmarks(*in.landmarks_source, *in.velocities, in.shooting);
        m.landmark_l2_after = mean_landmark_error(g, moved, *in.landmarks_target);
    }
    m.jac_det_min = min_jacobian_determinant(*in.psi);
    m.iterations = in.iterations;
    m.converged = in.converged;
    return m;
}

inline nlohmann::json to_json(const PairMetrics &m) {
    nlohmann::json j;
    j["name"] = m.name;
    j["ssd_before"] = m.ssd_before;
    j["ssd_after"] = m.ssd_after;
    j["rmi_before"] = m.rmi_before;
    j["rmi_after"] = m.rmi_after;
    if (m.dice) j["dice"] = *m.dice;
    if (m.landmark_l2_before) j["landmark_l2_before"] = *m.landmark_l2_before;
    if (m.landmark_l2_after) j["landmark_l2_after"] = *m.landmark_l2_after;
    j["jac_det_min"] = m.jac_det_min;
    j["iterations"] = m.iterations;
    j["converged"] = m.converged;
    return j;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

/// Pairs sorted by name; mean and median over every numeric per-pair key.
inline nlohmann::json build_run_report(const nlohmann::json &config, std::vector<PairMetrics> pairs,
                                       const std::string &timestamp = utc_timestamp()) {
    std::sort(pairs.begin(), pairs.end(), [](const PairMetrics &a, const PairMetrics &b) { return a.name < b.name; });
    nlohmann::json report;
    report["config"] = config;
    report["timestamp"] = timestamp;
    report["pairs"] = nlohmann::json::array();
    std::map<std::string, std::vector<double>> columns;
    for (const auto &p : pairs) {
        const nlohmann::json j = to_json(p);
        for (const auto &[key, value] : j.items())
            if (value.is_number()) columns[key].push_back(value.get<double>());
        report["pairs"].push_back(j);
    }
    nlohmann::json mean = nlohmann::json::object(), median = nlohmann::json::object();
    for (auto &[key, col] : columns) {
        double s = 0.0;
        for (double x : col) s += x;
        mean[key] = s / static_cast<double>(col.size());
        std::sort(col.begin(), col.end());
        const std::size_t n = col.size();
        median[key] = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
    report["aggregate"] = {{"count", pairs.size()}, {"mean", mean}, {"median", median}};
    return report;
}

} // namespace metamorph
