/**
 * Monte-Carlo replication harness: preset scenario grids, replicate runs
 * across worker threads, coverage / MSE summaries and table output.
 *
 * Replicate r of a scenario simulates with seed substream (seed, r) and fits
 * every estimator on that one dataset. Results are stored by replicate
 * index, so they do not depend on the number of workers.
 */
#pragma once

#include "core.hpp"
#include "cox.hpp"
#include "fit.hpp"
#include "report.hpp"
#include "sieve.hpp"
#include "simulate.hpp"
#include "tmle.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

namespace vewane {

struct BenchScenario {
    std::string name;   // e.g. "random-high"
    std::string shape;  // "constant" or "linear"
    std::string vax;    // "random" or "vulnerable"
    bool disinhibition = false;
    ScenarioSpec spec;
};

/// The simulation grid used by the presets: constant (-1, 0) or linear
/// (-1, 1) log hazard ratio, both fitted with the linear basis.
inline ScenarioSpec base_scenario(double lambda01, double sigma_u, bool linear) {
    ScenarioSpec sc;
    sc.n = 10000;
    sc.lambda00 = 0.03;
    sc.lambda01 = lambda01;
    sc.sigma_u = sigma_u;
    sc.ve_basis = VEBasisSpec::linear();
    sc.beta_true = Eigen::Vector2d(-1.0, linear ? 1.0 : 0.0);
    return sc;
}

inline std::vector<BenchScenario> preset_scenarios(const std::string& preset) {
    std::vector<BenchScenario> out;
    auto add = [&](std::string name, std::string vax, bool dis, ScenarioSpec sc, bool linear) {
        sc.name = name + "-" + (linear ? "linear" : "constant");
        out.push_back({std::move(name), linear ? "linear" : "constant", std::move(vax), dis, std::move(sc)});
    };
    if (preset == "table-cover" || preset == "table-mse") {
        for (bool lin : {false, true}) {
            add("random-low", "random", false, base_scenario(0.06, 1.0, lin), lin);
            add("random-high", "random", false, base_scenario(0.06, 2.0, lin), lin);
            ScenarioSpec d = base_scenario(0.06, 1.0, lin);
            d.frailty_law = FrailtyLaw::DisinhibitionPair;
            add("disinhibition", "random", true, d, lin);
            ScenarioSpec v = base_scenario(0.06, 1.0, lin);
            v.vax_law = VaxLaw::VulnerableFirst;
            add("vulnerable-first", "vulnerable", false, v, lin);
        }
    } else if (preset == "table-foi") {
        for (bool lin : {false, true})
            for (double sig : {1.0, 2.0})
                for (double lam : {0.03, 0.06, 0.12}) {
                    char name[64];
                    std::snprintf(name, sizeof name, "random-%s-foi%.2f", sig == 1.0 ? "low" : "high", lam);
                    add(name, "random", false, base_scenario(lam, sig, lin), lin);
                }
    } else if (preset == "example-app") {
        for (bool lin : {false, true}) {
            ScenarioSpec sc = base_scenario(0.16, 2.5, lin);
            sc.lambda00 = 0.08;
            sc.amplitude = -0.5;  // 0.16 (1 + 0.5 sin 2 pi t)
            add("example-app", "random", false, sc, lin);
        }
    } else {
        throw ConfigError("unknown preset '" + preset + "'");
    }
    return out;
}

/// tau in {0.05, 0.10, ..., 0.75}.
inline std::vector<double> bench_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 15; ++k) g.push_back(0.05 * k);
    return g;
}

struct RepResult {
    std::size_t rep = 0;
    Method estimator = Method::Sieve;
    bool ok = false;
    std::string error;
    std::vector<double> f_hat, f_se;
    std::uint64_t checksum = 0;  // of the simulated dataset
    double seconds = 0.0;        // not part of the determinism contract

    bool same_as(const RepResult& o) const {
        return rep == o.rep && estimator == o.estimator && ok == o.ok && error == o.error &&
               f_hat == o.f_hat && f_se == o.f_se && checksum == o.checksum;
    }
};

inline std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    auto mix = [&h](std::uint64_t v) { h = splitmix64(h ^ v); };
    auto bits = [](double d) {
        std::uint64_t u;
        std::memcpy(&u, &d, sizeof u);
        return u;
    };
    for (const auto& r : ds.records) {
        mix(r.vax_time ? bits(*r.vax_time) : 0xffffffffffffffffULL);
        mix(bits(r.event_time));
        mix(static_cast<std::uint64_t>(r.cause));
        mix(r.strain ? static_cast<std::uint64_t>(*r.strain) : 0);
    }
    return h;
}

inline FitResult fit_estimator(Method m, const Dataset& ds, const VEBasisSpec& basis) {
    switch (m) {
    case Method::Cox: return fit_cox_tv(ds, basis);
    case Method::Sieve: return fit_sieve_binary(ds, basis);
    case Method::Tmle: return fit_tmle_binary(ds, basis);
    default: throw ConfigError("bench runs cox, sieve and tmle only");
    }
}

/// Runs `fn(index)` for index in [0, count) on `workers` threads.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max(1, std::min<int>(workers, static_cast<int>(count)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

/// Raw results ordered by (rep, estimator). The fitted basis is the
/// scenario's VE basis.
inline std::vector<RepResult> run_scenario(const ScenarioSpec& scenario, const std::vector<Method>& estimators,
                                           std::size_t n_reps, std::uint64_t seed, int workers = 1,
                                           const std::vector<double>& grid = bench_grid()) {
    if (estimators.empty()) throw ConfigError("no estimators selected");
    if (n_reps < 1) throw ConfigError("need at least one replicate");
    scenario.validate();
    std::vector<RepResult> out(n_reps * estimators.size());
    parallel_for(n_reps, workers, [&](std::size_t r) {
        ScenarioSpec sc = scenario;
        sc.seed = substream_seed(seed, r);
        const SimulatedCohort coh = simulate_cohort(sc);
        const std::uint64_t sum = dataset_checksum(coh.data);
        for (std::size_t e = 0; e < estimators.size(); ++e) {
            RepResult& rr = out[r * estimators.size() + e];
            rr.rep = r;
            rr.estimator = estimators[e];
            rr.checksum = sum;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const FitResult f = fit_estimator(estimators[e], coh.data, sc.ve_basis);
                const VECurve cv = ve_curve(f, grid);
                rr.f_hat = cv.f_hat;
                rr.f_se = cv.f_se;
                rr.ok = true;
            } catch (const std::exception& ex) {
                rr.error = ex.what();
            }
            rr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    });
    return out;
}

struct BenchRow {
    std::string scenario, shape, estimator;
    std::string vax = "random";
    bool disinhibition = false;
    double lambda01 = 0.0, sigma_u = 0.0;
    double coverage = 0.0;  // percent
    double mse = 0.0;
    double bias = 0.0;
    std::size_t n_ok = 0, n_failed = 0;
    double seconds = 0.0;
    std::string error;
};

/// Coverage and MSE averaged over grid points and successful replicates.
inline std::vector<BenchRow> summarize(const std::vector<RepResult>& raw, const std::function<double(double)>& truth,
                                       const std::vector<double>& grid, double level = 0.95) {
    if (grid.empty()) throw ConfigError("empty evaluation grid");
    const double z = normal_quantile(0.5 + level / 2);
    std::vector<Method> order;
    for (const auto& r : raw)
        if (std::find(order.begin(), order.end(), r.estimator) == order.end()) order.push_back(r.estimator);
    std::vector<BenchRow> rows;
    for (Method m : order) {
        BenchRow row;
        row.estimator = method_name(m);
        double cov = 0.0, se2 = 0.0, bias = 0.0;
        std::size_t cells = 0;
        for (const auto& r : raw) {
            if (r.estimator != m) continue;
            row.seconds += r.seconds;
            if (!r.ok) {
                ++row.n_failed;
                continue;
            }
            ++row.n_ok;
            for (std::size_t g = 0; g < grid.size(); ++g) {
                const double ft = truth(grid[g]);
                const double e = r.f_hat[g] - ft;
                cov += (std::abs(e) <= z * r.f_se[g]) ? 1.0 : 0.0;
                se2 += e * e;
                bias += e;
                ++cells;
            }
        }
        if (row.n_ok == 0) {
            row.error = "all replicates failed";
            row.coverage = row.mse = row.bias = std::numeric_limits<double>::quiet_NaN();
        } else {
            row.coverage = 100.0 * cov / cells;
            row.mse = se2 / cells;
            row.bias = bias / cells;
        }
        rows.push_back(row);
    }
    return rows;
}

struct BenchConfig {
    std::vector<BenchScenario> scenarios;
    std::vector<Method> estimators{Method::Cox, Method::Sieve, Method::Tmle};
    std::size_t n_reps = 200;
    std::uint64_t seed = 20240601;
    std::vector<double> grid = bench_grid();
    int workers = 1;
    double level = 0.95;
};

inline std::vector<BenchRow> run_bench(const BenchConfig& cfg,
                                       const std::function<void(const BenchRow&)>& on_row = {}) {
    std::vector<BenchRow> all;
    for (const auto& s : cfg.scenarios) {
        const auto raw = run_scenario(s.spec, cfg.estimators, cfg.n_reps, cfg.seed, cfg.workers, cfg.grid);
        const Truth truth{s.spec.ve_basis, s.spec.beta_true, {}};
        for (auto row : summarize(raw, [&](double t) { return truth.f(t); }, cfg.grid, cfg.level)) {
            row.scenario = s.name;
            row.shape = s.shape;
            row.vax = s.vax;
            row.disinhibition = s.disinhibition;
            row.lambda01 = s.spec.lambda01;
            row.sigma_u = s.spec.sigma_u;
            if (on_row) on_row(row);
            all.push_back(row);
        }
    }
    return all;
}

// ---------------------------------------------------------------------------
// Tables

inline std::string shortest(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline const std::vector<std::string>& bench_columns() {
    static const std::vector<std::string> c{"scenario", "shape", "vax", "disinhibition", "lambda01", "sigma_u",
                                            "estimator", "coverage", "mse", "bias", "n_ok", "n_failed",
                                            "seconds", "error"};
    return c;
}

/// Table cells never contain separators.
inline std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '|' || c == '\n') c = ';';
    return s;
}

inline std::vector<std::string> bench_cells(const BenchRow& r) {
    return {r.scenario, r.shape, r.vax, r.disinhibition ? "Y" : "N", shortest(r.lambda01), shortest(r.sigma_u),
            r.estimator, shortest(r.coverage), shortest(r.mse), shortest(r.bias), std::to_string(r.n_ok),
            std::to_string(r.n_failed), shortest(r.seconds), sanitize(r.error)};
}

inline BenchRow bench_row_from_cells(const std::vector<std::string>& c) {
    if (c.size() != bench_columns().size()) throw DataError("bench table row has the wrong number of cells");
    auto num = [](const std::string& s) {
        return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    BenchRow r;
    r.scenario = c[0];
    r.shape = c[1];
    r.vax = c[2];
    r.disinhibition = c[3] == "Y";
    r.lambda01 = num(c[4]);
    r.sigma_u = num(c[5]);
    r.estimator = c[6];
    r.coverage = num(c[7]);
    r.mse = num(c[8]);
    r.bias = num(c[9]);
    r.n_ok = std::stoul(c[10]);
    r.n_failed = std::stoul(c[11]);
    r.seconds = num(c[12]);
    r.error = c[13];
    return r;
}

inline void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& os) {
    const auto& cols = bench_columns();
    for (std::size_t k = 0; k < cols.size(); ++k) os << (k ? "," : "") << cols[k];
    os << '\n';
    for (const auto& r : rows) {
        const auto c = bench_cells(r);
        for (std::size_t k = 0; k < c.size(); ++k) os << (k ? "," : "") << c[k];
        os << '\n';
    }
}

inline void write_bench_markdown(const std::vector<BenchRow>& rows, std::ostream& os) {
    const auto& cols = bench_columns();
    os << '|';
    for (const auto& c : cols) os << ' ' << c << " |";
    os << "\n|";
    for (std::size_t k = 0; k < cols.size(); ++k) os << "---|";
    os << '\n';
    for (const auto& r : rows) {
        os << '|';
        for (const auto& c : bench_cells(r)) os << ' ' << c << " |";
        os << '\n';
    }
}

inline std::vector<BenchRow> read_bench_markdown(std::istream& is) {
    std::vector<BenchRow> rows;
    std::string line;
    int seen = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] != '|') continue;
        if (++seen <= 2) continue;  // header and rule
        std::vector<std::string> cells;
        std::size_t a = 1;
        while (a < line.size()) {
            const std::size_t b = line.find('|', a);
            if (b == std::string::npos) break;
            std::string c = line.substr(a, b - a);
            const auto p = c.find_first_not_of(' '), q = c.find_last_not_of(' ');
            cells.push_back(p == std::string::npos ? std::string{} : c.substr(p, q - p + 1));
            a = b + 1;
        }
        rows.push_back(bench_row_from_cells(cells));
    }
    return rows;
}

/// Writes results.csv and results.md into dir.
inline void emit_tables(const std::vector<BenchRow>& rows, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream csv(std::filesystem::path(dir) / "results.csv");
    std::ofstream md(std::filesystem::path(dir) / "results.md");
    if (!csv || !md) throw Error("cannot write bench tables into " + dir);
    write_bench_csv(rows, csv);
    write_bench_markdown(rows, md);
}

}  // namespace vewane
