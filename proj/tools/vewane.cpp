// vewane command-line interface: simulate, offset, fit, curve, bench.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or model
// error. With --json-errors the error is also printed to stderr as a JSON
// object.

#include "vewane/vewane.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#ifndef VEWANE_VERSION
#define VEWANE_VERSION "0.0.0"
#endif

using namespace vewane;
namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
    using Error::Error;
};

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return "UsageError";
    if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
    if (dynamic_cast<const NonIdentifiable*>(&e)) return "NonIdentifiable";
    if (dynamic_cast<const OnlyOneCause*>(&e)) return "OnlyOneCause";
    if (dynamic_cast<const NotConverged*>(&e)) return "NotConverged";
    if (dynamic_cast<const DataError*>(&e)) return "DataError";
    if (dynamic_cast<const DomainError*>(&e)) return "DomainError";
    return "Error";
}

int exit_code_for(const std::exception& e) {
    return (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) ? 1 : 2;
}

TimeUnit parse_unit(const std::string& s) {
    if (s == "years") return TimeUnit::Years;
    if (s == "days") return TimeUnit::Days;
    throw UsageError("--time-unit must be years or days");
}

const char* unit_name(TimeUnit u) { return u == TimeUnit::Days ? "days" : "years"; }

int default_jobs() {
    if (const char* e = std::getenv("VEWANE_JOBS")) {
        try {
            return std::max(1, std::stoi(e));
        } catch (const std::exception&) {
            throw UsageError("VEWANE_JOBS must be an integer");
        }
    }
    return 1;
}

void write_meta(const std::string& out, const Json& meta) { write_json_file(meta, out + ".meta.json"); }

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string scenario, out, truth, unit = "years";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n;
};

void run_simulate(const SimulateArgs& a) {
    ScenarioSpec sc = scenario_from_json(read_json_file(a.scenario));
    if (a.seed) sc.seed = *a.seed;
    if (a.n) sc.n = *a.n;
    sc.validate();
    SimulatedCohort coh = simulate_cohort(sc);
    coh.data.time_unit = parse_unit(a.unit);
    write_events_csv(coh.data, a.out);
    Json meta;
    meta["command"] = "simulate";
    meta["time_unit"] = a.unit;
    meta["scenario"] = scenario_to_json(sc);
    write_meta(a.out, meta);
    if (!a.truth.empty()) write_json_file(truth_to_json(coh.truth, sc), a.truth);
}

// ---------------------------------------------------------------------------

struct OffsetArgs {
    std::string surveillance, c0, kind = "tt1", unit = "years", out;
    bool smooth = false;
};

void run_offset(const OffsetArgs& a) {
    const TimeUnit unit = parse_unit(a.unit);
    OffsetArtifact art;
    art.kind = a.kind;
    if (a.kind == "sensitivity") {
        if (a.c0.empty()) throw UsageError("--kind sensitivity needs --c0");
        auto is = csv::open_in(a.c0);
        art.function = read_c0_csv(is, unit);
    } else {
        if (a.surveillance.empty()) throw UsageError("--kind " + a.kind + " needs --surveillance");
        const SurveillanceSeries s = read_surveillance_csv(a.surveillance, unit);
        if (a.kind == "tt1") {
            art.function = a.smooth ? smoothed_tt1_offset(s) : tt1_offset(s);
        } else if (a.kind == "sda-tt2") {
            if (a.smooth) throw UsageError("--offset-smooth applies to tt1 offsets only");
            const SdaOffset o = sda_tt2_offset(s);
            art.function = o.part;
            art.needs_intercept = o.needs_intercept;
        } else {
            throw UsageError("--kind must be tt1, sda-tt2 or sensitivity");
        }
    }
    Json j = offset_to_json(art);
    Json cfg;
    cfg["command"] = "offset";
    cfg["kind"] = a.kind;
    cfg["surveillance"] = a.surveillance;
    cfg["c0"] = a.c0;
    cfg["time_unit"] = a.unit;
    cfg["offset_smooth"] = a.smooth;
    j["config"] = cfg;
    write_json_file(j, a.out);
}

// ---------------------------------------------------------------------------

struct FitArgs {
    std::string method = "sieve", events, unit = "years", basis = "linear", out;
    std::optional<double> horizon;
    std::optional<int> knots;
    std::string knot_rule = "n^(1/3.5)", placement = "quantile";
    std::string offset, sensitivity, mixture;
    std::optional<double> fixed_intercept;
    bool offset_plus_spline = false;
    std::uint64_t impute_seed = 1;
    std::string smoother;
    std::optional<double> bandwidth;
    double tol = 1e-6;
    int max_iter = 50;
};

void run_fit(const FitArgs& a) {
    const Method method = parse_method(a.method);
    const bool multinomial = method == Method::SieveMultinomial || method == Method::TmleMultinomial;
    const bool tmle = method == Method::Tmle || method == Method::TmleMultinomial;
    if (method == Method::Cox && (!a.offset.empty() || !a.mixture.empty() || !a.sensitivity.empty()))
        throw UsageError("--offset, --sensitivity and --mixture do not apply to --method cox");
    if (tmle && (!a.offset.empty() || !a.sensitivity.empty()))
        throw UsageError("--offset and --sensitivity do not apply to TMLE");
    if (multinomial && a.mixture.empty()) throw UsageError("multinomial methods need --mixture");
    if (!multinomial && !a.mixture.empty()) throw UsageError("--mixture needs a multinomial method");
    if (a.fixed_intercept && a.offset.empty()) throw UsageError("--fixed-intercept needs --offset");
    if (a.knot_rule != "n^(1/3.5)") throw UsageError("--knot-rule supports n^(1/3.5) only");
    if (a.placement != "quantile" && a.placement != "equal") throw UsageError("--knot-placement must be quantile or equal");
    if (!a.smoother.empty() && a.smoother != "pspline" && a.smoother != "kernel")
        throw UsageError("--smoother must be pspline or kernel");
    if (!a.smoother.empty() && !tmle) throw UsageError("--smoother applies to TMLE only");

    const TimeUnit unit = parse_unit(a.unit);
    Dataset ds = read_events_csv(a.events, unit, a.horizon);
    const VEBasisSpec basis = parse_basis(a.basis, unit);

    SieveOptions so;
    if (a.knots) so.n_knots = *a.knots;
    so.placement = a.placement == "equal" ? KnotPlacement::EquallySpaced : KnotPlacement::Quantile;
    std::optional<SmoothFn> offset;
    bool needs_intercept = false;
    if (!a.offset.empty()) {
        const OffsetArtifact art = offset_from_json(read_json_file(a.offset));
        offset = art.function;
        needs_intercept = art.needs_intercept;
        so.offset_only = !a.offset_plus_spline;
        if (a.fixed_intercept) offset = add_functions(*offset, SmoothFn::constant(*a.fixed_intercept, offset->lo(), offset->hi()));
        else so.free_intercept = needs_intercept && so.offset_only;
    }
    if (!a.sensitivity.empty()) {
        auto is = csv::open_in(a.sensitivity);
        const SmoothFn c0 = read_c0_csv(is, unit);
        offset = offset ? add_functions(*offset, c0) : c0;
    }
    so.offset = offset;

    std::optional<VariantMix> mix;
    if (multinomial) {
        mix = read_mixture_csv(a.mixture, unit);
        ds = impute_strains(ds, *mix, a.impute_seed);
    }
    const std::vector<VEBasisSpec> bases(mix ? mix->m() : 1, basis);

    TmleOptions to;
    to.sieve = so;
    to.settings.smoother = !a.smoother.empty() ? a.smoother : (multinomial ? "kernel" : "pspline");
    to.settings.tol = a.tol;
    to.settings.max_iter = a.max_iter;
    to.bandwidth = a.bandwidth;

    FitResult fit;
    switch (method) {
    case Method::Cox: fit = fit_cox_tv(ds, basis); break;
    case Method::Sieve: fit = fit_sieve_binary(ds, basis, so); break;
    case Method::SieveMultinomial: fit = fit_sieve_multinomial(ds, bases, *mix, so); break;
    case Method::Tmle: fit = fit_tmle_binary(ds, basis, to); break;
    case Method::TmleMultinomial: fit = fit_tmle_multinomial(ds, bases, *mix, to); break;
    }

    Json cfg;
    cfg["command"] = "fit";
    cfg["method"] = a.method;
    cfg["events"] = a.events;
    cfg["time_unit"] = unit_name(unit);
    cfg["horizon_years"] = ds.horizon;
    cfg["basis"] = basis_to_json(basis);
    cfg["knot_rule"] = a.knot_rule;
    cfg["knots"] = a.knots ? Json(*a.knots) : Json(nullptr);
    cfg["knot_placement"] = a.placement;
    if (fit.nuisance.alpha && fit.nuisance.alpha->kind() == SmoothFn::Kind::Spline && method != Method::Tmle &&
        method != Method::TmleMultinomial)
        cfg["interior_knots"] = jsonx::vec(fit.nuisance.alpha->basis()->interior());
    cfg["offset"] = a.offset;
    cfg["offset_plus_spline"] = a.offset_plus_spline;
    cfg["fixed_intercept"] = a.fixed_intercept ? Json(*a.fixed_intercept) : Json(nullptr);
    cfg["sensitivity"] = a.sensitivity;
    cfg["mixture"] = a.mixture;
    cfg["impute_seed"] = a.impute_seed;
    if (tmle) {
        cfg["smoother"] = to.settings.smoother;
        cfg["tol"] = a.tol;
        cfg["max_iter"] = a.max_iter;
        cfg["bandwidth"] = a.bandwidth ? Json(*a.bandwidth) : Json(nullptr);
    }
    write_json_file(fit_to_json(fit, cfg), a.out);
}

// ---------------------------------------------------------------------------

struct CurveArgs {
    std::string fit, grid, unit = "years", mono_ci = "pava", out;
    double level = 0.95;
    bool monotone = false;
    int draws = 2000;
    std::uint64_t seed = 1;
    std::optional<int> strain;
};

void run_curve(const CurveArgs& a) {
    if (a.mono_ci != "pava" && a.mono_ci != "mc") throw UsageError("--mono-ci must be pava or mc");
    if (a.mono_ci == "mc" && !a.monotone) throw UsageError("--mono-ci mc needs --monotone");
    const TimeUnit unit = parse_unit(a.unit);
    const FitResult fit = fit_from_json(read_json_file(a.fit));
    std::vector<double> grid;
    if (a.grid.empty()) {
        double upper = 1.0;
        if (fit.nuisance.alpha) upper = fit.nuisance.alpha->hi() - std::max(0.0, fit.nuisance.alpha->lo());
        grid = default_tau_grid(upper, fit.bases.front());
    } else {
        grid = parse_grid(a.grid);
        for (double& t : grid) t *= years_per_unit(unit);
    }
    VECurve cv = ve_curve(fit, grid, a.level, a.strain);
    if (a.monotone) {
        cv = monotonize_curve(cv);
        if (a.mono_ci == "mc") cv = apply_mono_band(cv, monotone_ci_mc(fit, grid, a.draws, a.seed, a.level, a.strain));
    }
    write_curve(cv, a.out);
    Json meta;
    meta["command"] = "curve";
    meta["fit"] = a.fit;
    meta["method"] = cv.method;
    meta["basis"] = basis_to_json(cv.basis);
    meta["grid"] = a.grid.empty() ? Json("default") : Json(a.grid);
    meta["time_unit"] = a.unit;
    meta["tau_unit"] = "years";
    meta["level"] = a.level;
    meta["monotone"] = a.monotone;
    meta["mono_ci"] = a.mono_ci;
    meta["draws"] = a.draws;
    meta["seed"] = a.seed;
    meta["strain"] = a.strain ? Json(*a.strain) : Json(nullptr);
    write_meta(a.out, meta);
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string preset, out, estimators = "cox,sieve,tmle";
    std::size_t reps = 200;
    std::uint64_t seed = 20240601;
    std::optional<int> jobs;
    std::optional<std::size_t> n;
};

void run_bench_cmd(const BenchArgs& a) {
    BenchConfig cfg;
    cfg.scenarios = preset_scenarios(a.preset);
    if (a.n)
        for (auto& s : cfg.scenarios) s.spec.n = *a.n;
    cfg.estimators.clear();
    std::stringstream ss(a.estimators);
    for (std::string tok; std::getline(ss, tok, ',');) {
        const Method m = parse_method(csv::trim(tok));
        if (m != Method::Cox && m != Method::Sieve && m != Method::Tmle)
            throw UsageError("bench estimators are cox, sieve and tmle");
        cfg.estimators.push_back(m);
    }
    if (cfg.estimators.empty()) throw UsageError("no estimators selected");
    cfg.n_reps = a.reps;
    cfg.seed = a.seed;
    cfg.workers = a.jobs ? *a.jobs : default_jobs();
    const auto rows = run_bench(cfg, [](const BenchRow& r) {
        std::cerr << r.scenario << " " << r.shape << " " << r.estimator << ": coverage " << r.coverage << " mse "
                  << r.mse << "\n";
    });
    emit_tables(rows, a.out);
    Json meta;
    meta["command"] = "bench";
    meta["preset"] = a.preset;
    meta["reps"] = a.reps;
    meta["seed"] = a.seed;
    meta["jobs"] = cfg.workers;
    meta["estimators"] = a.estimators;
    meta["grid"] = jsonx::vec(cfg.grid);
    meta["level"] = cfg.level;
    Json sc = Json::array();
    for (const auto& s : cfg.scenarios) sc.push_back(scenario_to_json(s.spec));
    meta["scenarios"] = sc;
    write_json_file(meta, (fs::path(a.out) / "config.json").string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vewane: time-varying vaccine effectiveness from negative-control infections"};
    app.require_subcommand(1);
    bool json_errors = false;
    app.add_flag("--json-errors", json_errors, "print errors as JSON on stderr");
    app.set_version_flag("--version", std::string("vewane ") + VEWANE_VERSION + " (C++" +
                                          std::to_string(__cplusplus / 100 % 100) + ", " + __VERSION__ +
                                          ", built " + __DATE__ + ")");

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "simulate a cohort from a scenario file");
    sim->add_option("--scenario", sa.scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", sa.out, "events CSV")->required();
    sim->add_option("--truth", sa.truth, "ground-truth sidecar JSON");
    sim->add_option("--seed", sa.seed, "override the scenario seed");
    sim->add_option("--n", sa.n, "override the cohort size");
    sim->add_option("--time-unit", sa.unit, "unit of written times (years, days)");

    OffsetArgs oa;
    auto* off = app.add_subcommand("offset", "build a fixed alpha offset from surveillance counts");
    off->add_option("--surveillance", oa.surveillance, "surveillance CSV")->check(CLI::ExistingFile);
    off->add_option("--c0", oa.c0, "time,c0 CSV for the sensitivity offset")->check(CLI::ExistingFile);
    off->add_option("--kind", oa.kind, "tt1, sda-tt2 or sensitivity");
    off->add_flag("--offset-smooth", oa.smooth, "penalized-spline pre-pass on a tt1 offset");
    off->add_option("--time-unit", oa.unit, "unit of the time column (years, days)");
    off->add_option("--out", oa.out, "offset JSON")->required();

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "fit a VE curve");
    fit->add_option("--method", fa.method, "cox, sieve, tmle, sieve-multinomial, tmle-multinomial");
    fit->add_option("--events", fa.events, "events CSV")->required()->check(CLI::ExistingFile);
    fit->add_option("--time-unit", fa.unit, "unit of times in inputs (years, days)");
    fit->add_option("--horizon", fa.horizon, "study horizon in the time unit (default: last event time)");
    fit->add_option("--basis", fa.basis, "linear, constant or ramp:<length in the time unit>");
    fit->add_option("--knots", fa.knots, "number of interior knots")->check(CLI::NonNegativeNumber);
    fit->add_option("--knot-rule", fa.knot_rule, "knot count rule when --knots is absent");
    fit->add_option("--knot-placement", fa.placement, "quantile or equal");
    fit->add_option("--offset", fa.offset, "offset JSON (sieve methods)")->check(CLI::ExistingFile);
    fit->add_flag("--offset-plus-spline", fa.offset_plus_spline, "keep the spline for alpha next to the offset");
    fit->add_option("--fixed-intercept", fa.fixed_intercept, "fix the intercept of an SDA offset");
    fit->add_option("--sensitivity", fa.sensitivity, "time,c0 CSV added to the offset")->check(CLI::ExistingFile);
    fit->add_option("--mixture", fa.mixture, "variant mixture CSV")->check(CLI::ExistingFile);
    fit->add_option("--impute-seed", fa.impute_seed, "seed for strain imputation");
    fit->add_option("--smoother", fa.smoother, "TMLE nuisance smoother: pspline or kernel");
    fit->add_option("--bandwidth", fa.bandwidth, "kernel bandwidth (default Silverman)");
    fit->add_option("--tol", fa.tol, "TMLE tolerance");
    fit->add_option("--max-iter", fa.max_iter, "TMLE iteration limit");
    fit->add_option("--out", fa.out, "fit JSON")->required();

    CurveArgs ca;
    auto* cur = app.add_subcommand("curve", "evaluate a VE curve from a fit");
    cur->add_option("--fit", ca.fit, "fit JSON")->required()->check(CLI::ExistingFile);
    cur->add_option("--grid", ca.grid, "lo:hi:count in the time unit");
    cur->add_option("--time-unit", ca.unit, "unit of the grid (years, days)");
    cur->add_option("--level", ca.level, "confidence level");
    cur->add_flag("--monotone", ca.monotone, "add isotonic (waning-only) estimates and bands");
    cur->add_option("--mono-ci", ca.mono_ci, "pava or mc");
    cur->add_option("--draws", ca.draws, "Monte-Carlo draws for --mono-ci mc");
    cur->add_option("--seed", ca.seed, "seed for --mono-ci mc");
    cur->add_option("--strain", ca.strain, "strain label (multinomial fits)");
    cur->add_option("--out", ca.out, "curve CSV")->required();

    BenchArgs ba;
    auto* ben = app.add_subcommand("bench", "run a Monte-Carlo preset");
    ben->add_option("--preset", ba.preset, "table-cover, table-mse, table-foi or example-app")->required();
    ben->add_option("--reps", ba.reps, "replicates per scenario");
    ben->add_option("--seed", ba.seed, "base seed");
    ben->add_option("--jobs", ba.jobs, "worker threads (default VEWANE_JOBS or 1)");
    ben->add_option("--estimators", ba.estimators, "comma-separated subset of cox,sieve,tmle");
    ben->add_option("--n", ba.n, "override the cohort size");
    ben->add_option("--out", ba.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        if (rc == 0) return 0;
        if (json_errors) {
            Json j;
            j["error"] = "UsageError";
            j["message"] = e.what();
            j["exit_code"] = 1;
            std::cerr << j.dump() << '\n';
        }
        return 1;
    }

    try {
        if (*sim) run_simulate(sa);
        else if (*off) run_offset(oa);
        else if (*fit) run_fit(fa);
        else if (*cur) run_curve(ca);
        else if (*ben) run_bench_cmd(ba);
        return 0;
    } catch (const std::exception& e) {
        const int rc = exit_code_for(e);
        if (json_errors) {
            Json j;
            j["error"] = error_kind(e);
            j["message"] = e.what();
            j["exit_code"] = rc;
            std::cerr << j.dump() << '\n';
        } else {
            std::cerr << "vewane: " << e.what() << '\n';
        }
        return rc;
    }
}
