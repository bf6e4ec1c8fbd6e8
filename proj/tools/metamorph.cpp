// metamorph command-line tool: synthetic data, registration, mask estimation,
// the joint loop, shooting, evaluation and gradient checks.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "metamorph/metamorph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace metamorph;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadInput = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitNotConverged = 4;

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::NonFinite:
    case ErrorCode::Instability:
    case ErrorCode::DegenerateStatistics: return kExitNumerical;
    default: return kExitBadInput;
    }
}

struct Settings {
    double alpha = 3.0;
    int power = 3;
    int steps = 10;
    double gamma = 0.5;
    std::string dist = "rmi";
    std::string mode = "metamorph";
    std::uint64_t seed = 0;
    std::string out = ".";
    std::string config;
    int jobs = 1;
    bool export_pgm = false;
    std::optional<double> sigma;
    int max_iters = 200;
    double tol = 1e-6;
    double step_init = 5e-4;
    bool rmi_sign_literal = false;
};

DistKind parse_dist(const std::string &s) { return s == "ssd" ? DistKind::Ssd : DistKind::Rmi; }

RegistrationConfig registration_config(const Settings &s) {
    RegistrationConfig rc;
    rc.mode = s.mode == "plain" ? RegistrationMode::Plain : RegistrationMode::Metamorph;
    rc.dist.kind = parse_dist(s.dist);
    rc.dist.sigma = s.sigma.value_or(default_sigma(rc.dist.kind));
    rc.dist.rmi.sign_literal = s.rmi_sign_literal;
    rc.alpha = s.alpha;
    rc.power = s.power;
    rc.steps = s.steps;
    rc.max_iters = s.max_iters;
    rc.tol_rel = s.tol;
    rc.step_init = s.step_init;
    return rc;
}

json registration_json(const RegistrationConfig &rc) {
    return {{"mode", rc.mode == RegistrationMode::Plain ? "plain" : "metamorph"},
            {"dist", rc.dist.kind == DistKind::Ssd ? "ssd" : "rmi"},
            {"sigma", rc.dist.sigma},
            {"rmi_sign_literal", rc.dist.rmi.sign_literal},
            {"alpha", rc.alpha},
            {"power", rc.power},
            {"steps", rc.steps},
            {"max_iters", rc.max_iters},
            {"tol", rc.tol_rel},
            {"step_init", rc.step_init}};
}

RegistrationConfig registration_from_json(const json &j) {
    RegistrationConfig rc;
    rc.mode = j.at("mode").get<std::string>() == "plain" ? RegistrationMode::Plain : RegistrationMode::Metamorph;
    rc.dist.kind = parse_dist(j.at("dist").get<std::string>());
    rc.dist.sigma = j.at("sigma").get<double>();
    rc.dist.rmi.sign_literal = j.at("rmi_sign_literal").get<bool>();
    rc.alpha = j.at("alpha").get<double>();
    rc.power = j.at("power").get<int>();
    rc.steps = j.at("steps").get<int>();
    rc.max_iters = j.at("max_iters").get<int>();
    rc.tol_rel = j.at("tol").get<double>();
    rc.step_init = j.at("step_init").get<double>();
    return rc;
}

/// Applies --config values to every option the command line left unset.
void apply_config(CLI::App &app, CLI::App &sub, const std::string &path) {
    const json cfg = load_json(path);
    if (!cfg.is_object()) throw Error(ErrorCode::InvalidParameter, path + ": config must be a JSON object");
    for (const auto &[key, value] : cfg.items()) {
        CLI::Option *opt = sub.get_option_no_throw("--" + key);
        if (!opt) opt = app.get_option_no_throw("--" + key);
        if (!opt) throw Error(ErrorCode::InvalidParameter, path + ": unknown key '" + key + "'");
        if (opt->count() > 0) continue;
        std::vector<std::string> items;
        auto text = [](const json &v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        if (value.is_array())
            for (const auto &v : value) items.push_back(text(v));
        else
            items.push_back(text(value));
        for (const auto &item : items) opt->add_result(item);
        opt->run_callback();
    }
}

void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create directory '" + dir.string() + "': " + ec.message());
}

std::optional<MaskImage> load_optional_mask(const std::string &path) {
    if (path.empty()) return std::nullopt;
    return load_grid_as<MaskImage>(path);
}

std::optional<LandmarkSet> load_optional_landmarks(const fs::path &path) {
    if (path.empty() || !fs::exists(path)) return std::nullopt;
    return load_landmarks(path);
}

/// One dataset pair directory: source.grid, target.grid, optional mask_*.grid and landmarks_*.csv.
PairSample load_pair_dir(const fs::path &dir) {
    PairSample p;
    p.name = dir.filename().string();
    p.source = load_grid_as<ScalarImage>(dir / "source.grid");
    p.target = load_grid_as<ScalarImage>(dir / "target.grid");
    if (fs::exists(dir / "mask_source.grid")) p.mask_source = load_grid_as<MaskImage>(dir / "mask_source.grid");
    if (fs::exists(dir / "mask_target.grid")) p.mask_target = load_grid_as<MaskImage>(dir / "mask_target.grid");
    p.landmarks_source = load_optional_landmarks(dir / "landmarks_source.csv");
    p.landmarks_target = load_optional_landmarks(dir / "landmarks_target.csv");
    return p;
}

std::vector<fs::path> pair_dirs(const fs::path &root) {
    if (!fs::is_directory(root)) throw Error(ErrorCode::IoError, "'" + root.string() + "' is not a directory");
    std::vector<fs::path> dirs;
    for (const auto &e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "source.grid")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw Error(ErrorCode::IoError, "no pair directories under '" + root.string() + "'");
    return dirs;
}

void write_registration(const fs::path &dir, const RegistrationResult &r, const MaskImage &mask, const ScalarImage &source,
                        const ScalarImage &target, bool pgm) {
    ensure_dir(dir);
    save_grid(r.v0, dir / "v0.grid");
    save_grid(r.path.psi.u, dir / "psi.grid");
    save_grid(r.deformed, dir / "deformed.grid");
    save_grid(mask, dir / "mask_union.grid");
    if (pgm) {
        save_pgm(source, dir / "source.pgm");
        save_pgm(target, dir / "target.pgm");
        save_pgm(r.deformed, dir / "deformed.pgm");
        save_pgm(ScalarImage(mask.grid(), std::vector<double>(mask.values().begin(), mask.values().end())), dir / "mask_union.pgm");
    }
}

json result_json(const RegistrationResult &r, const RegistrationConfig &rc, const json &inputs) {
    return {{"config", registration_json(rc)},
            {"inputs", inputs},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"energy", {{"dist", r.report.dist}, {"reg", r.report.reg}, {"total", r.report.total}}},
            {"trace", r.trace},
            {"jac_det_min", min_jacobian_determinant(r.path.psi)}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    int count = 10;
    int size = 64;
    int dim = 2;
    std::string shape = "blobs";
    double amplitude = 1.0;
    double tumor_radius = 0.0;
    double tumor_delta = 0.9;
    std::string tumor_in = "target";
    double noise = 0.0;
    int landmark_grid = 8;
};

int run_synth(const Settings &s, const SynthArgs &a) {
    if (a.count < 1) throw Error(ErrorCode::InvalidParameter, "--count must be at least 1");
    const GridDesc grid(std::vector<int>(static_cast<std::size_t>(a.dim), a.size));
    for (int i = 0; i < a.count; ++i) {
        SynthSpec spec;
        spec.grid = grid;
        spec.shape = a.shape == "bullseye" ? Shape::Bullseye : Shape::Blobs;
        spec.v0_amplitude = a.amplitude;
        spec.landmark_grid = a.landmark_grid;
        spec.seed = s.seed + static_cast<std::uint64_t>(i);
        spec.noise_sigma = a.noise;
        spec.alpha = s.alpha;
        spec.power = s.power;
        spec.steps = s.steps;
        if (a.tumor_radius > 0.0) {
            TumorSpec t;
            t.radius = a.tumor_radius;
            t.delta = a.tumor_delta;
            t.placed_in = a.tumor_in == "source" ? TumorPlacement::Source
                          : a.tumor_in == "both" ? TumorPlacement::Both
                                                 : TumorPlacement::Target;
            t.center = random_tumor_center(grid, t.radius, spec.seed);
            spec.tumor = t;
        }
        const SynthPair pair = make_pair(spec);
        char name[32];
        std::snprintf(name, sizeof(name), "pair_%03d", i);
        const fs::path dir = fs::path(s.out) / name;
        ensure_dir(dir);
        save_grid(pair.source, dir / "source.grid");
        save_grid(pair.target, dir / "target.grid");
        save_grid(pair.v0_true, dir / "truth_v0.grid");
        save_landmarks(pair.landmarks_source, dir / "landmarks_source.csv");
        save_landmarks(pair.landmarks_target, dir / "landmarks_target.csv");
        if (spec.tumor) {
            save_grid(pair.mask_source, dir / "mask_source.grid");
            save_grid(pair.mask_target, dir / "mask_target.grid");
        }
        if (s.export_pgm) {
            save_pgm(pair.source, dir / "source.pgm");
            save_pgm(pair.target, dir / "target.pgm");
        }
    }
    std::cout << "wrote " << a.count << " pair(s) to " << s.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct MaskArgs {
    std::string source, target, mask_source, mask_target, estimator, context;
    double smooth_sigma = 3.0;
    std::optional<double> threshold;
    int min_area = 9;

    [[nodiscard]] MaskEstimator estimator_config() const {
        MaskEstimator est;
        est.kind = estimator == "oracle" ? EstimatorKind::Oracle : EstimatorKind::Residual;
        est.smooth_sigma = smooth_sigma;
        est.threshold = threshold;
        est.min_area = min_area;
        return est;
    }
};

PairSample load_pair_files(const MaskArgs &a) {
    PairSample p;
    p.name = fs::path(a.source).parent_path().filename().string();
    p.source = load_grid_as<ScalarImage>(a.source);
    p.target = load_grid_as<ScalarImage>(a.target);
    p.mask_source = load_optional_mask(a.mask_source);
    p.mask_target = load_optional_mask(a.mask_target);
    return p;
}

int run_register(const Settings &s, const MaskArgs &a) {
    const RegistrationConfig rc = registration_config(s);
    rc.validate();
    const PairSample p = load_pair_files(a);
    MaskImage mask(p.source.grid());
    if (!a.estimator.empty()) {
        const auto [ms, mt] = estimate_masks(a.estimator_config(), p);
        mask = union_mask(ms, mt);
    } else if (p.mask_source || p.mask_target) {
        mask = *ground_truth_union(p);
    }
    const RegistrationResult r = register_images(p.source, p.target, mask, rc);
    const fs::path out(s.out);
    write_registration(out, r, mask, p.source, p.target, s.export_pgm);
    const json inputs = {{"source", a.source}, {"target", a.target}, {"mask_source", a.mask_source},
                         {"mask_target", a.mask_target}, {"estimator", a.estimator}};
    save_report(result_json(r, rc, inputs), out / "result.json");
    std::cout << "iterations " << r.iterations << (r.converged ? " converged" : " not converged") << ", energy "
              << r.report.total << '\n';
    return r.converged ? kExitOk : kExitNotConverged;
}

int run_segment(const Settings &s, const MaskArgs &a) {
    const PairSample p = load_pair_files(a);
    std::optional<ScalarImage> context;
    if (!a.context.empty()) context = load_grid_as<ScalarImage>(a.context);
    const auto [ms, mt] = estimate_masks(a.estimator_config(), p, context ? &*context : nullptr);
    const MaskImage uni = union_mask(ms, mt);
    const fs::path out(s.out);
    ensure_dir(out);
    save_grid(ms, out / "mask_source.grid");
    save_grid(mt, out / "mask_target.grid");
    save_grid(uni, out / "mask_union.grid");
    json summary = {{"area_source", ms.count_above(0.5)}, {"area_target", mt.count_above(0.5)}};
    if (const auto truth = ground_truth_union(p)) summary["dice"] = dice(*truth, uni);
    if (s.export_pgm)
        save_pgm(ScalarImage(uni.grid(), std::vector<double>(uni.values().begin(), uni.values().end())), out / "mask_union.pgm");
    save_report(summary, out / "segment.json");
    std::cout << summary.dump() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct JointArgs {
    std::string data;
    int q = 5;
    std::string estimator = "residual";
    bool no_augment = false;
    double smooth_sigma = 3.0;
};

PairMetrics pair_metrics(const PairSample &p, const RegistrationResult &r, const RegistrationConfig &rc, const MaskImage *estimate) {
    const auto truth = ground_truth_union(p);
    EvaluationInputs in;
    in.name = p.name;
    in.source = &p.source;
    in.target = &p.target;
    in.velocities = &r.path.velocities;
    in.psi = &r.path.psi;
    in.shooting = rc.shooting();
    if (p.landmarks_source && p.landmarks_target) {
        in.landmarks_source = &*p.landmarks_source;
        in.landmarks_target = &*p.landmarks_target;
    }
    if (truth && estimate) {
        in.mask_truth = &*truth;
        in.mask_estimate = estimate;
    }
    in.iterations = r.iterations;
    in.converged = r.converged;
    return evaluate_pair(in, rc.dist.rmi);
}

int run_joint(const Settings &s, const JointArgs &a) {
    JointConfig cfg;
    cfg.q = a.q;
    cfg.gamma = s.gamma;
    cfg.registration = registration_config(s);
    cfg.augment = !a.no_augment;
    cfg.jobs = s.jobs;
    cfg.validate();
    MaskEstimator est;
    est.kind = a.estimator == "oracle" ? EstimatorKind::Oracle : EstimatorKind::Residual;
    est.smooth_sigma = a.smooth_sigma;

    std::vector<PairSample> dataset;
    for (const auto &dir : pair_dirs(a.data)) dataset.push_back(load_pair_dir(dir));
    const JointResult jr = joint_fit(dataset, est, cfg);

    const fs::path out(s.out);
    ensure_dir(out);
    std::vector<PairMetrics> metrics;
    json extra = json::object();
    bool all_converged = true;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const PairOutcome &o = jr.pairs[i];
        const PairSample &p = dataset[i];
        json info = {{"dice_history", o.dice_history}};
        json losses = json::array();
        for (const auto &h : o.history) losses.push_back(h.total);
        info["loss_history"] = losses;
        if (!o.error.empty()) info["error"] = o.error;
        extra[p.name] = info;
        if (!o.result) continue;
        all_converged = all_converged && o.result->converged;
        write_registration(out / p.name, *o.result, o.mask_union, p.source, p.target, s.export_pgm);
        metrics.push_back(pair_metrics(p, *o.result, cfg.registration, &o.mask_union));
    }
    const json config = {{"command", "joint"},
                         {"registration", registration_json(cfg.registration)},
                         {"q", cfg.q},
                         {"gamma", cfg.gamma},
                         {"augment", cfg.augment},
                         {"estimator", a.estimator},
                         {"smooth_sigma", a.smooth_sigma},
                         {"seed", s.seed}};
    json report = build_run_report(config, metrics);
    report["joint"] = {{"loss_history", jr.loss_history}, {"pairs", extra}, {"working_set_size", jr.working_set.size()},
                       {"partial_failure", jr.partial_failure}};
    save_report(report, out / "report.json");
    std::cout << "joint: " << dataset.size() << " pair(s), final loss "
              << (jr.loss_history.empty() ? 0.0 : jr.loss_history.back()) << '\n';
    if (jr.partial_failure) return kExitNumerical;
    return all_converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------

struct ShootArgs {
    std::string v0, image, landmarks;
};

int run_shoot(const Settings &s, const ShootArgs &a) {
    const VectorField v0 = load_grid_as<VectorField>(a.v0);
    const FluidKernel kernel(v0.grid(), s.alpha, s.power);
    const ShootingConfig sc{s.steps};
    sc.validate();
    const GeodesicPath path = shoot(kernel, v0, sc);
    const fs::path out(s.out);
    ensure_dir(out);
    save_grid(path.psi.u, out / "psi.grid");
    save_grid(path.velocities.back(), out / "v1.grid");
    if (!a.image.empty()) {
        const ScalarImage warped = warp(load_grid_as<ScalarImage>(a.image), path.psi);
        save_grid(warped, out / "deformed.grid");
        if (s.export_pgm) save_pgm(warped, out / "deformed.pgm");
    }
    if (!a.landmarks.empty()) save_landmarks(propagate_landmarks(load_landmarks(a.landmarks), path.velocities, sc), out / "landmarks.csv");
    const json summary = {{"reg_energy", reg_energy(kernel, v0)},
                          {"reg_energy_final", reg_energy(kernel, path.velocities.back())},
                          {"jac_det_min", min_jacobian_determinant(path.psi)}};
    save_report(summary, out / "shoot.json");
    std::cout << summary.dump() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string result, landmarks_source, landmarks_target, report;
    std::vector<std::string> labels;
};

PairMetrics evaluate_result_dir(const fs::path &dir, const EvaluateArgs &a, bool single, json &config_out) {
    const json res = load_json(dir / "result.json");
    const RegistrationConfig rc = registration_from_json(res.at("config"));
    const json &inputs = res.at("inputs");
    const fs::path source_path = inputs.at("source").get<std::string>();
    const ScalarImage source = load_grid_as<ScalarImage>(source_path);
    const ScalarImage target = load_grid_as<ScalarImage>(inputs.at("target").get<std::string>());
    const VectorField v0 = load_grid_as<VectorField>(dir / "v0.grid");
    const FluidKernel kernel(v0.grid(), rc.alpha, rc.power);
    const GeodesicPath path = shoot(kernel, v0, rc.shooting());
    config_out = registration_json(rc);

    // Landmarks and labels: explicit flags for a single result, otherwise the
    // dataset files next to the source image.
    const fs::path pair_dir = source_path.parent_path();
    std::optional<LandmarkSet> ls, lt;
    if (single && !a.landmarks_source.empty()) ls = load_landmarks(a.landmarks_source);
    else ls = load_optional_landmarks(pair_dir / "landmarks_source.csv");
    if (single && !a.landmarks_target.empty()) lt = load_landmarks(a.landmarks_target);
    else lt = load_optional_landmarks(pair_dir / "landmarks_target.csv");

    std::optional<MaskImage> truth;
    std::vector<fs::path> label_files;
    if (single && !a.labels.empty()) {
        for (const auto &l : a.labels) label_files.emplace_back(l);
    } else {
        for (const char *n : {"mask_source.grid", "mask_target.grid"})
            if (fs::exists(pair_dir / n)) label_files.push_back(pair_dir / n);
    }
    for (const auto &f : label_files) {
        MaskImage m = load_grid_as<MaskImage>(f);
        truth = truth ? union_mask(*truth, m) : std::move(m);
    }
    std::optional<MaskImage> estimate;
    if (truth && fs::exists(dir / "mask_union.grid")) estimate = load_grid_as<MaskImage>(dir / "mask_union.grid");

    EvaluationInputs in;
    in.name = pair_dir.filename().string();
    in.source = &source;
    in.target = &target;
    in.velocities = &path.velocities;
    in.psi = &path.psi;
    in.shooting = rc.shooting();
    if (ls && lt) {
        in.landmarks_source = &*ls;
        in.landmarks_target = &*lt;
    }
    if (truth && estimate) {
        in.mask_truth = &*truth;
        in.mask_estimate = &*estimate;
    }
    in.iterations = res.at("iterations").get<int>();
    in.converged = res.at("converged").get<bool>();
    return evaluate_pair(in, rc.dist.rmi);
}

int run_evaluate(const Settings &s, const EvaluateArgs &a) {
    const fs::path root(a.result);
    std::vector<fs::path> dirs;
    const bool single = fs::exists(root / "result.json");
    if (single) {
        dirs.push_back(root);
    } else {
        if (!fs::is_directory(root)) throw Error(ErrorCode::IoError, "'" + root.string() + "' is not a directory");
        for (const auto &e : fs::directory_iterator(root))
            if (e.is_directory() && fs::exists(e.path() / "result.json")) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        if (dirs.empty()) throw Error(ErrorCode::IoError, "no result.json under '" + root.string() + "'");
    }
    std::vector<PairMetrics> metrics(dirs.size());
    std::vector<json> configs(dirs.size());
    std::vector<std::string> errors(dirs.size());
    std::vector<int> codes(dirs.size(), kExitOk);
    parallel_for(dirs.size(), s.jobs, [&](std::size_t i) {
        try {
            metrics[i] = evaluate_result_dir(dirs[i], a, single, configs[i]);
        } catch (const Error &e) {
            errors[i] = e.what();
            codes[i] = exit_code_for(e.code());
        } catch (const json::exception &e) {
            errors[i] = dirs[i].string() + ": " + e.what();
            codes[i] = kExitBadInput;
        }
    });
    for (std::size_t i = 0; i < dirs.size(); ++i)
        if (!errors[i].empty()) {
            std::cerr << "error: " << errors[i] << '\n';
            return codes[i];
        }
    const json config = {{"command", "evaluate"}, {"registration", configs.front()}};
    const json report = build_run_report(config, metrics);
    const fs::path report_path = a.report.empty() ? fs::path(s.out) / "report.json" : fs::path(a.report);
    if (report_path.has_parent_path()) ensure_dir(report_path.parent_path());
    save_report(report, report_path);
    std::cout << report["aggregate"].dump() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradCheckArgs {
    int size = 16;
    int samples = 50;
    double h = 1e-5;
    double tolerance = 1e-3;
    bool masked = false;
};

int run_gradcheck(const Settings &s, const GradCheckArgs &a) {
    const GridDesc grid({a.size, a.size});
    const GradCheckProblem p = make_gradcheck_problem(grid, s.seed, a.masked, s.alpha, s.power, s.steps);
    const RegistrationConfig rc = registration_config(s);
    const FluidKernel kernel(grid, rc.alpha, rc.power);
    const GradCheckResult r = gradient_check(p.source, p.target, p.mask, p.v0, kernel, rc.shooting(), rc.dist,
                                             static_cast<std::size_t>(a.samples), a.h, s.seed);
    const bool ok = r.max_rel_error <= a.tolerance;
    const json summary = {{"dist", s.dist},         {"masked", a.masked},
                          {"seed", s.seed},         {"samples", r.components.size()},
                          {"max_rel_error", r.max_rel_error}, {"worst_component", r.worst_component},
                          {"tolerance", a.tolerance}, {"pass", ok}};
    std::cout << summary.dump() << '\n';
    return ok ? kExitOk : kExitNumerical;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Metamorphic image registration with appearance-change masks"};
    app.require_subcommand(1);
    app.fallthrough();

    Settings s;
    app.add_option("--alpha", s.alpha, "Metric smoothness weight")->capture_default_str();
    app.add_option("--power", s.power, "Metric operator power")->capture_default_str();
    app.add_option("--steps", s.steps, "Euler steps along the geodesic")->capture_default_str();
    app.add_option("--gamma", s.gamma, "Segmentation loss weight")->capture_default_str();
    app.add_option("--dist", s.dist, "Image dissimilarity")->check(CLI::IsMember({"rmi", "ssd"}))->capture_default_str();
    app.add_option("--mode", s.mode, "Registration energy")->check(CLI::IsMember({"plain", "metamorph"}))->capture_default_str();
    app.add_option("--seed", s.seed, "Random seed")->capture_default_str();
    app.add_option("--out", s.out, "Output directory")->capture_default_str();
    app.add_option("--config", s.config, "JSON file with the same keys as the flags; flags win");
    app.add_option("--jobs", s.jobs, "Worker threads")->capture_default_str();
    app.add_flag("--export-pgm", s.export_pgm, "Also write 8-bit PGM previews (lossy)");
    app.add_option("--sigma", s.sigma, "Image noise level (default 1 for rmi, 0.002 for ssd)");
    app.add_option("--max-iters", s.max_iters, "Optimizer iteration cap")->capture_default_str();
    app.add_option("--tol", s.tol, "Relative energy decrease that counts as converged")->capture_default_str();
    app.add_option("--step-init", s.step_init, "Initial step as a fraction of the voxel count")->capture_default_str();
    app.add_flag("--rmi-sign-literal", s.rmi_sign_literal, "Subtract half the log-determinant in RMI");

    SynthArgs synth;
    auto *c_synth = app.add_subcommand("synth", "Generate synthetic registration pairs");
    c_synth->add_option("--count", synth.count)->capture_default_str();
    c_synth->add_option("--size", synth.size)->capture_default_str();
    c_synth->add_option("--dim", synth.dim)->check(CLI::IsMember({2, 3}))->capture_default_str();
    c_synth->add_option("--shape", synth.shape)->check(CLI::IsMember({"blobs", "bullseye"}))->capture_default_str();
    c_synth->add_option("--amplitude", synth.amplitude, "Largest initial displacement in voxels")->capture_default_str();
    c_synth->add_option("--tumor-radius", synth.tumor_radius, "0 disables the inserted change")->capture_default_str();
    c_synth->add_option("--tumor-delta", synth.tumor_delta)->capture_default_str();
    c_synth->add_option("--tumor-in", synth.tumor_in)->check(CLI::IsMember({"source", "target", "both"}))->capture_default_str();
    c_synth->add_option("--noise", synth.noise)->capture_default_str();
    c_synth->add_option("--landmark-grid", synth.landmark_grid)->capture_default_str();

    MaskArgs reg;
    auto *c_register = app.add_subcommand("register", "Register one source image to one target");
    c_register->add_option("--source", reg.source)->required();
    c_register->add_option("--target", reg.target)->required();
    c_register->add_option("--mask-source", reg.mask_source);
    c_register->add_option("--mask-target", reg.mask_target);
    c_register->add_option("--estimator", reg.estimator)->check(CLI::IsMember({"oracle", "residual"}));
    c_register->add_option("--smooth-sigma", reg.smooth_sigma)->capture_default_str();
    c_register->add_option("--threshold", reg.threshold);
    c_register->add_option("--min-area", reg.min_area)->capture_default_str();

    MaskArgs seg;
    seg.estimator = "residual";
    auto *c_segment = app.add_subcommand("segment", "Estimate appearance-change masks for a pair");
    c_segment->add_option("--source", seg.source)->required();
    c_segment->add_option("--target", seg.target)->required();
    c_segment->add_option("--mask-source", seg.mask_source);
    c_segment->add_option("--mask-target", seg.mask_target);
    c_segment->add_option("--context", seg.context, "Deformed source to use in place of the source");
    c_segment->add_option("--estimator", seg.estimator)->check(CLI::IsMember({"oracle", "residual"}))->capture_default_str();
    c_segment->add_option("--smooth-sigma", seg.smooth_sigma)->capture_default_str();
    c_segment->add_option("--threshold", seg.threshold);
    c_segment->add_option("--min-area", seg.min_area)->capture_default_str();

    JointArgs joint;
    auto *c_joint = app.add_subcommand("joint", "Alternate mask estimation and registration over a dataset");
    c_joint->add_option("--data", joint.data, "Dataset root with one directory per pair")->required();
    c_joint->add_option("--q", joint.q, "Outer iterations")->capture_default_str();
    c_joint->add_option("--estimator", joint.estimator)->check(CLI::IsMember({"oracle", "residual"}))->capture_default_str();
    c_joint->add_flag("--no-augment", joint.no_augment);
    c_joint->add_option("--smooth-sigma", joint.smooth_sigma)->capture_default_str();

    ShootArgs sh;
    auto *c_shoot = app.add_subcommand("shoot", "Integrate the geodesic from an initial velocity");
    c_shoot->add_option("--v0", sh.v0)->required();
    c_shoot->add_option("--image", sh.image, "Image to warp");
    c_shoot->add_option("--landmarks", sh.landmarks, "Landmarks to carry along");

    EvaluateArgs ev;
    auto *c_evaluate = app.add_subcommand("evaluate", "Build a run report from registration results");
    c_evaluate->add_option("--result", ev.result, "Result directory, or a directory of result directories")->required();
    c_evaluate->add_option("--landmarks-source", ev.landmarks_source);
    c_evaluate->add_option("--landmarks-target", ev.landmarks_target);
    c_evaluate->add_option("--labels", ev.labels, "Ground-truth masks; their union is compared with the estimate");
    c_evaluate->add_option("--report", ev.report, "Report path (default OUT/report.json)");

    GradCheckArgs gc;
    auto *c_gradcheck = app.add_subcommand("gradcheck", "Compare the analytic gradient with finite differences");
    c_gradcheck->add_option("--size", gc.size)->capture_default_str();
    c_gradcheck->add_option("--samples", gc.samples)->capture_default_str();
    c_gradcheck->add_option("--fd-step", gc.h, "Finite-difference step")->capture_default_str();
    c_gradcheck->add_option("--tolerance", gc.tolerance)->capture_default_str();
    c_gradcheck->add_flag("--masked", gc.masked, "Use a random binary mask");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitBadInput;
    }

    try {
        CLI::App *sub = app.get_subcommands().front();
        if (!s.config.empty()) apply_config(app, *sub, s.config);
        if (s.jobs < 1) throw Error(ErrorCode::InvalidParameter, "--jobs must be at least 1");
        if (sub == c_synth) return run_synth(s, synth);
        if (sub == c_register) return run_register(s, reg);
        if (sub == c_segment) return run_segment(s, seg);
        if (sub == c_joint) return run_joint(s, joint);
        if (sub == c_shoot) return run_shoot(s, sh);
        if (sub == c_evaluate) return run_evaluate(s, ev);
        if (sub == c_gradcheck) return run_gradcheck(s, gc);
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const CLI::ParseError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadInput;
    } catch (const nlohmann::json::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadInput;
    }
    return kExitBadInput;
}
