#include "helpers.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace vewane;

namespace {

RepResult synthetic(std::size_t rep, Method m, std::vector<double> f, std::vector<double> se) {
    RepResult r;
    r.rep = rep;
    r.estimator = m;
    r.ok = true;
    r.f_hat = std::move(f);
    r.f_se = std::move(se);
    return r;
}

}  // namespace

TEST(Presets, ScenarioGrid) {
    const auto cover = preset_scenarios("table-cover");
    ASSERT_EQ(cover.size(), 8u);
    std::set<std::string> names;
    for (const auto& s : cover) {
        names.insert(s.spec.name);
        EXPECT_NO_THROW(s.spec.validate());
        EXPECT_EQ(s.spec.n, 10000u);
        EXPECT_EQ(s.spec.beta_true[0], -1.0);
        EXPECT_EQ(s.spec.beta_true[1], s.shape == "linear" ? 1.0 : 0.0);
        EXPECT_EQ(s.spec.sigma_u, s.name == "random-high" ? 2.0 : 1.0);
        EXPECT_EQ(s.disinhibition, s.spec.frailty_law == FrailtyLaw::DisinhibitionPair);
        EXPECT_EQ(s.vax == "vulnerable", s.spec.vax_law == VaxLaw::VulnerableFirst);
    }
    EXPECT_EQ(names.size(), 8u);
    EXPECT_EQ(preset_scenarios("table-mse").size(), 8u);
    const auto foi = preset_scenarios("table-foi");
    ASSERT_EQ(foi.size(), 12u);
    for (const auto& s : foi) EXPECT_TRUE(s.spec.lambda01 == 0.03 || s.spec.lambda01 == 0.06 || s.spec.lambda01 == 0.12);
    EXPECT_EQ(preset_scenarios("example-app").size(), 2u);
    EXPECT_THROW(preset_scenarios("table-9"), ConfigError);
}

TEST(Presets, Grid) {
    const auto g = bench_grid();
    ASSERT_EQ(g.size(), 15u);
    EXPECT_NEAR(g.front(), 0.05, 1e-15);
    EXPECT_NEAR(g.back(), 0.75, 1e-15);
}

TEST(RunScenario, IndependentOfWorkerCount) {
    auto sc = base_scenario(0.06, 1.0, true);
    sc.n = 4000;
    const std::vector<Method> est{Method::Cox, Method::Sieve};
    const auto a = run_scenario(sc, est, 3, 77, 1);
    const auto b = run_scenario(sc, est, 3, 77, 4);
    ASSERT_EQ(a.size(), 6u);
    ASSERT_EQ(b.size(), a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_TRUE(a[k].same_as(b[k])) << k;
        EXPECT_EQ(a[k].rep, k / 2);
        EXPECT_EQ(a[k].estimator, est[k % 2]);
        EXPECT_TRUE(a[k].ok) << a[k].error;
    }
    // Both estimators see the same dataset.
    EXPECT_EQ(a[0].checksum, a[1].checksum);
    EXPECT_NE(a[0].checksum, a[2].checksum);
    const auto c = run_scenario(sc, est, 3, 78, 1);
    EXPECT_NE(c[0].checksum, a[0].checksum);
}

TEST(RunScenario, ConfigErrors) {
    const auto sc = base_scenario(0.06, 1.0, false);
    EXPECT_THROW(run_scenario(sc, {}, 2, 1), ConfigError);
    EXPECT_THROW(run_scenario(sc, {Method::Sieve}, 0, 1), ConfigError);
    auto bad = sc;
    bad.n = 0;
    EXPECT_THROW(run_scenario(bad, {Method::Sieve}, 1, 1), ConfigError);
}

TEST(RunScenario, FailuresRecordedNotFatal) {
    // Too few infections for TMLE; the sieve still fits.
    auto sc = base_scenario(0.06, 1.0, false);
    sc.n = 300;
    const auto raw = run_scenario(sc, {Method::Sieve, Method::Tmle}, 2, 5);
    for (const auto& r : raw) {
        if (r.estimator == Method::Tmle) {
            EXPECT_FALSE(r.ok);
            EXPECT_FALSE(r.error.empty());
        }
    }
    const Truth truth{sc.ve_basis, sc.beta_true, {}};
    const auto rows = summarize(raw, [&](double t) { return truth.f(t); }, bench_grid());
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].estimator, "tmle");
    EXPECT_EQ(rows[1].n_failed, 2u);
    EXPECT_EQ(rows[1].error, "all replicates failed");
    EXPECT_TRUE(std::isnan(rows[1].coverage));
}

TEST(Summarize, Examples) {
    const std::vector<double> grid{0.1, 0.2};
    auto truth = [](double t) { return -1 + t; };
    const std::vector<RepResult> covers{synthetic(0, Method::Sieve, {-0.9, -0.8}, {0.1, 0.1}),
                                        synthetic(1, Method::Sieve, {-0.85, -0.75}, {0.1, 0.1})};
    const auto all = summarize(covers, truth, grid);
    EXPECT_EQ(all[0].coverage, 100.0);
    EXPECT_EQ(all[0].n_ok, 2u);
    const std::vector<RepResult> shifted{synthetic(0, Method::Cox, {-0.8, -0.7}, {1e-12, 1e-12})};
    const auto s = summarize(shifted, truth, grid);
    EXPECT_NEAR(s[0].mse, 0.01, 1e-12);
    EXPECT_NEAR(s[0].bias, 0.1, 1e-12);
    EXPECT_EQ(s[0].coverage, 0.0);
    EXPECT_THROW(summarize(covers, truth, {}), ConfigError);
}

TEST(Summarize, FailedRepsExcludedAndCounted) {
    const std::vector<double> grid{0.5};
    std::vector<RepResult> raw{synthetic(0, Method::Sieve, {0.0}, {1.0}), synthetic(1, Method::Sieve, {5.0}, {1.0})};
    raw[1].ok = false;
    raw[1].error = "NotConverged";
    const auto rows = summarize(raw, [](double) { return 0.0; }, grid);
    EXPECT_EQ(rows[0].n_ok, 1u);
    EXPECT_EQ(rows[0].n_failed, 1u);
    EXPECT_EQ(rows[0].mse, 0.0);
    EXPECT_EQ(rows[0].coverage, 100.0);
}

TEST(Tables, RowsAndRoundTrip) {
    BenchConfig cfg;
    auto sc = preset_scenarios("table-cover");
    cfg.scenarios = {sc[0], sc[2]};
    for (auto& s : cfg.scenarios) s.spec.n = 2000;
    cfg.n_reps = 2;
    std::vector<BenchRow> streamed;
    const auto rows = run_bench(cfg, [&](const BenchRow& r) { streamed.push_back(r); });
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(streamed.size(), 6u);
    for (const auto& r : rows) {
        EXPECT_GE(r.coverage, 0.0);
        EXPECT_LE(r.coverage, 100.0);
        EXPECT_LE(r.n_ok + r.n_failed, 2u);
    }
    std::stringstream md;
    write_bench_markdown(rows, md);
    const auto back = read_bench_markdown(md);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        EXPECT_EQ(back[k].scenario, rows[k].scenario);
        EXPECT_EQ(back[k].estimator, rows[k].estimator);
        EXPECT_EQ(back[k].coverage, rows[k].coverage);
        EXPECT_EQ(back[k].mse, rows[k].mse);
        EXPECT_EQ(back[k].bias, rows[k].bias);
        EXPECT_EQ(back[k].sigma_u, rows[k].sigma_u);
        EXPECT_EQ(back[k].n_ok, rows[k].n_ok);
    }
    const auto dir = (std::filesystem::temp_directory_path() / "vewane_bench_test").string();
    emit_tables(rows, dir);
    std::ifstream csv(dir + "/results.csv");
    int lines = 0;
    for (std::string l; std::getline(csv, l);) ++lines;
    EXPECT_EQ(lines, 7);
    std::filesystem::remove_all(dir);
}

TEST(Tables, EmptyIsHeaderOnly) {
    std::stringstream csv, md;
    write_bench_csv({}, csv);
    write_bench_markdown({}, md);
    const std::string c = csv.str(), m = md.str();
    EXPECT_EQ(std::count(c.begin(), c.end(), '\n'), 1);
    EXPECT_EQ(std::count(m.begin(), m.end(), '\n'), 2);
    EXPECT_TRUE(read_bench_markdown(md).empty());
}

TEST(Tables, SeparatorsSanitizedAndNanPreserved) {
    BenchRow r;
    r.scenario = "x";
    r.estimator = "tmle";
    r.error = "bad|thing, here";
    r.coverage = std::numeric_limits<double>::quiet_NaN();
    std::stringstream md;
    write_bench_markdown({r}, md);
    const auto back = read_bench_markdown(md);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].error, "bad;thing; here");
    EXPECT_TRUE(std::isnan(back[0].coverage));
}
