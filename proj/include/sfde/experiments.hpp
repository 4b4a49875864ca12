#pragma once

// Experiment dispatch for the command-line tool. Each kind writes series.csv,
// report.json and manifest.json into the output directory.

#include <sfde/config.hpp>
#include <sfde/delay_dynamics.hpp>
#include <sfde/fixedpoint_solvers.hpp>
#include <sfde/measure_lab.hpp>
#include <sfde/report.hpp>
#include <sfde/rng.hpp>
#include <sfde/semigroup_kernel.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace sfde {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentOutcome {
    bool pass = true;
    std::string failing_check;
    std::string series;
    Json report;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

inline void fail(ExperimentOutcome& o, const std::string& check)
{
    if (o.pass) o.failing_check = check;
    o.pass = false;
}

inline RunOptions run_options(const ExperimentConfig& c, std::size_t threads)
{
    RunOptions opt;
    opt.record_every = c.params.record_every;
    opt.moment_power = c.params.moment_power;
    opt.threads = threads;
    return opt;
}

inline ExperimentOutcome run_simulate(const ExperimentConfig& c, std::size_t threads)
{
    const ModelSpec model = c.model->spec();
    const FullState init = c.model->initial_state();
    const StreamFamily family(c.seed, kForwardNoiseTag);
    const auto opt = run_options(c, threads);
    ExperimentOutcome o;
    TrajectoryStats stats;
    if (c.params.moment_check) {
        const auto rep = moment_bound_experiment(model, init, c.params.ensemble, c.params.horizon, family, opt,
                                                 c.params.ratio_threshold, &stats);
        o.report["moment_bound"] = rep.to_check().to_json();
        if (!rep.pass) fail(o, "moment_bound");
    } else {
        stats = run_ensemble(model, init, c.params.horizon, family, c.params.ensemble, opt);
    }
    o.report["summary"] = stats.summary();
    o.series = stats.to_csv();
    return o;
}

inline ExperimentOutcome run_picard(const ExperimentConfig& c, std::size_t)
{
    const ModelSpec model = c.model->spec();
    const FullState init = c.model->initial_state();
    const Stepper stepper(model);
    const std::size_t steps = step_count(c.params.horizon, model.dt);
    const NoisePath noise = NoisePath::forward(StreamFamily(c.seed, kForwardNoiseTag).stream(0), steps, stepper.noise_dim());
    PicardOptions popt;
    popt.max_iterations = c.params.max_iterations;
    popt.stall_limit = c.params.stall_limit;
    const auto res = picard_solve(model, init, noise, c.params.horizon, c.params.tol, c.params.max_window, popt);

    ExperimentOutcome o;
    o.series = res.history_csv();
    o.report["converged"] = res.converged;
    o.report["message"] = res.message;
    o.report["windows"] = res.windows.size();
    o.report["max_ratio"] = res.max_ratio();
    Json wins = Json::array();
    for (const auto& w : res.windows)
        wins.push_back({{"t_start", w.t_start}, {"steps", w.steps}, {"iterations", w.iterations}, {"halvings", w.halvings},
                        {"converged", w.converged}});
    o.report["window_log"] = std::move(wins);
    if (!res.converged) {
        fail(o, "picard_contraction");
        return o;
    }
    const auto ref = stepper_path(model, init, noise, c.params.horizon);
    const double gap = sup_distance(res.path, ref);
    const double envelope = 5.0 * (model.dt + c.params.tol);
    o.report["stepper_agreement"] = {{"sup_distance", gap}, {"envelope", envelope}, {"pass", gap <= envelope}};
    if (!(res.max_ratio() < 1.0)) fail(o, "picard_contraction");
    if (!(gap <= envelope)) fail(o, "stepper_agreement");
    return o;
}

inline ExperimentOutcome run_stationary(const ExperimentConfig& c, std::size_t threads)
{
    const ModelSpec model = c.model->spec();
    StationaryOptions sopt;
    sopt.ensemble = c.params.ensemble;
    sopt.max_iterations = c.params.max_iterations;
    sopt.threads = threads;
    sopt.stall_limit = c.params.stall_limit;
    sopt.doubling_tolerance = c.params.doubling_tolerance;
    const auto res = stationary_successive_approx(model, c.params.lookback, c.params.forward, c.params.tol, c.seed, sopt);

    ExperimentOutcome o;
    static const char* names[] = {"converged", "refused", "not_contracting"};
    o.report["status"] = names[static_cast<int>(res.status)];
    o.report["message"] = res.message;
    o.report["smallness"] = res.smallness.to_json();
    o.report["distances"] = res.distances;
    o.report["ratios"] = res.ratios;
    o.report["doubling"] = {{"checked", res.doubling_checked}, {"relative_difference", res.doubling_difference},
                            {"tolerance", c.params.doubling_tolerance}, {"pass", res.doubling_ok}};
    std::ostringstream os;
    os << std::setprecision(17) << "t,E_norm_B0_sq,u1_member0\n";
    for (std::size_t i = 0; i < res.times.size(); ++i) os << res.times[i] << ',' << res.mean_sq_norm[i] << ',' << res.path[i][0] << '\n';
    o.series = res.status == StationaryResult::Status::Converged ? os.str() : res.history_csv();
    if (res.status == StationaryResult::Status::Refused) fail(o, "iteration_smallness");
    else if (res.status == StationaryResult::Status::NotContracting) fail(o, "successive_contraction");
    else if (!res.doubling_ok) fail(o, "lookback_doubling");
    return o;
}

inline ExperimentOutcome run_attractivity(const ExperimentConfig& c, std::size_t threads)
{
    const ModelSpec model = c.model->spec();
    const FullState a = c.model->initial_state();
    const FullState b = c.params.initial2.build(model.basis, model.delay, model.dt);
    const auto rep = attractivity_experiment(model, a, b, c.params.horizon, c.params.ensemble, StreamFamily(c.seed, kForwardNoiseTag),
                                             run_options(c, threads));
    ExperimentOutcome o;
    o.report = rep.to_json();
    o.series = rep.series_csv();
    if (!rep.pass) fail(o, "attractivity_rate");
    return o;
}

inline ExperimentOutcome run_invariant(const ExperimentConfig& c, std::size_t threads)
{
    const ModelSpec model = c.model->spec();
    const FullState init = c.model->initial_state();
    const auto family = ObservableFamily::standard(c.params.observable_modes);
    const StreamFamily first(c.seed, kForwardNoiseTag);
    const StreamFamily second(c.seed ^ 0x5bd1e995u, kForwardNoiseTag);
    const double burn = c.burn_in();
    ObservableOptions o1, o2;
    o1.threads = o2.threads = threads;
    std::vector<FullState> terminal;
    o2.terminal = &terminal;
    const auto e1 = ensemble_observables(model, init, c.params.ensemble, {c.params.times[0]}, burn, family, first, o1);
    const auto e2 = ensemble_observables(model, init, c.params.ensemble, {c.params.times[1]}, burn, family, second, o2);
    const auto inv = invariance_test(e1, e2, c.params.z_threshold);
    const auto tight = tightness_diagnostic(terminal, c.params.levels);

    ExperimentOutcome o;
    o.report["estimate_T1"] = e1.to_json();
    o.report["estimate_T2"] = e2.to_json();
    o.report["invariance"] = inv.to_json();
    o.report["tightness"] = tight.to_json();
    std::ostringstream os;
    os << std::setprecision(17) << "observable,mean_T1,se_T1,mean_T2,se_T2,z\n";
    for (std::size_t i = 0; i < e1.size(); ++i)
        os << e1.names[i] << ',' << e1.mean[i] << ',' << e1.std_error(i) << ',' << e2.mean[i] << ',' << e2.std_error(i) << ','
           << inv.z[i] << '\n';
    o.series = os.str();
    if (!inv.pass) fail(o, "invariance");
    if (!tight.pass) fail(o, "tightness");
    return o;
}

inline ExperimentOutcome run_homogeneity(const ExperimentConfig& c, std::size_t threads)
{
    const ModelSpec model = c.model->spec();
    const auto family = ObservableFamily::standard(c.params.observable_modes);
    const auto rep = homogeneity_test(model, c.model->initial_state(), c.params.offsets, c.params.lag, c.params.ensemble, family,
                                      StreamFamily(c.seed, kForwardNoiseTag), threads, c.params.z_threshold);
    ExperimentOutcome o;
    o.report = rep.to_json();
    std::ostringstream os;
    os << std::setprecision(17) << "offset";
    for (const auto& n : family.names()) os << ',' << n << "_mean," << n << "_se";
    os << '\n';
    for (std::size_t s = 0; s < rep.offsets.size(); ++s) {
        os << rep.offsets[s];
        for (std::size_t i = 0; i < family.size(); ++i) os << ',' << rep.estimates[s].mean[i] << ',' << rep.estimates[s].std_error(i);
        os << '\n';
    }
    o.series = os.str();
    if (!rep.pass) fail(o, "homogeneity");
    return o;
}

inline ExperimentOutcome run_kernel_check(const ExperimentConfig& c, std::size_t)
{
    const BasisPtr& basis = c.model->basis;
    const auto& p = c.params;
    std::vector<CheckReport> checks;
    checks.push_back(verify_kernel_bound(*basis, p.horizon, p.time_samples, p.space_samples));
    std::vector<double> times;
    for (std::size_t i = 0; i < p.time_samples; ++i)
        times.push_back(p.horizon * std::pow(1e-2, 1.0 - static_cast<double>(i) / static_cast<double>(p.time_samples - 1)));
    checks.push_back(verify_weighted_smoothing(*basis, times, p.space_samples));
    checks.push_back(verify_semigroup_law(basis, p.trials, p.semigroup_tolerance, c.seed));
    if (basis->spectral()) checks.push_back(verify_exponential_decay(basis, p.trials, p.horizon, c.seed));
    checks.push_back(fit_semigroup_bound(basis, p.horizon, p.trials, c.seed));

    ExperimentOutcome o;
    Json arr = Json::array();
    std::ostringstream os;
    os << std::setprecision(17) << "check,samples,worst_ratio,pass\n";
    for (const auto& r : checks) {
        arr.push_back(r.to_json());
        os << r.check << ',' << r.samples << ',' << r.worst_ratio << ',' << (r.pass ? 1 : 0) << '\n';
        if (!r.pass) fail(o, r.check);
    }
    o.report["checks"] = std::move(arr);
    const double hs = hilbert_schmidt_norm_delay_op(*basis, p.hs_t0, c.model->delay);
    o.report["hilbert_schmidt"] = {{"T0", p.hs_t0}, {"h", c.model->delay}, {"value", hs}};
    o.series = os.str();
    return o;
}

inline ExperimentOutcome run_smallness(const ExperimentConfig& c, std::size_t)
{
    const auto& p = c.params;
    std::optional<ModelSpec> model;
    if (c.model) model = c.model->spec();
    const double h = p.s_delay ? *p.s_delay : model->delay;
    const double lam = p.s_lambda1 ? *p.s_lambda1 : model->basis->lambda1();
    const double a = p.s_trace ? *p.s_trace : model->noise_trace();
    const double l = p.s_lipschitz ? *p.s_lipschitz : model->lipschitz();
    const auto rep = smallness_check(h, lam, a, l);
    ExperimentOutcome o;
    o.report = rep.to_json();
    std::ostringstream os;
    os << std::setprecision(17) << "quantity,value\n"
       << "iteration_value," << rep.iteration_value << '\n'
       << "iteration_L_threshold," << rep.iteration_max_lipschitz << '\n'
       << "gamma0," << rep.gamma0 << '\n'
       << "attractivity_value," << rep.attractivity_value << '\n'
       << "attractivity_L_threshold," << rep.attractivity_max_lipschitz << '\n'
       << "gamma_pred," << rep.predicted_rate << '\n'
       << "K_proof," << rep.proof_prefactor << '\n';
    o.series = os.str();
    return o;
}

} // namespace detail

/// Runs one experiment. Artifacts depend only on (config, seed), never on `threads`.
inline ExperimentOutcome run_experiment(const ExperimentConfig& c, std::size_t threads)
{
    if (c.kind == "simulate") return detail::run_simulate(c, threads);
    if (c.kind == "picard") return detail::run_picard(c, threads);
    if (c.kind == "stationary") return detail::run_stationary(c, threads);
    if (c.kind == "attractivity") return detail::run_attractivity(c, threads);
    if (c.kind == "invariant") return detail::run_invariant(c, threads);
    if (c.kind == "homogeneity") return detail::run_homogeneity(c, threads);
    if (c.kind == "kernel-check") return detail::run_kernel_check(c, threads);
    if (c.kind == "smallness") return detail::run_smallness(c, threads);
    throw InvalidArgument("unknown experiment kind " + c.kind);
}

/// Runs and writes series.csv, report.json and manifest.json. Returns the exit code.
inline int run_and_write(const ExperimentConfig& c, const std::filesystem::path& out_dir, std::size_t threads)
{
    const auto start = std::chrono::steady_clock::now();
    std::filesystem::create_directories(out_dir);
    Json manifest;
    manifest["tool"] = "sfde";
    manifest["version"] = kVersion;
    manifest["config"] = config_echo(c);
    int code = kExitPass;
    ExperimentOutcome o;
    try {
        o = run_experiment(c, threads);
        code = o.pass ? kExitPass : kExitCheckFailed;
    } catch (const NumericalAbort& e) {
        o.pass = false;
        o.failing_check = "numerical_abort";
        o.report = {{"error", e.what()}, {"time", e.time()}};
        code = kExitNumerical;
    }
    Json report;
    report["kind"] = c.kind;
    report["seed"] = c.seed;
    report["pass"] = o.pass;
    report["failing_check"] = o.failing_check.empty() ? Json(nullptr) : Json(o.failing_check);
    report["result"] = o.report;
    detail::write_text(out_dir / "series.csv", o.series);
    detail::write_text(out_dir / "report.json", report.dump(2) + "\n");
    manifest["exit_code"] = code;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest["run"] = {{"threads", threads}, {"wall_time_s", wall}};
    detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return code;
}

} // namespace sfde
