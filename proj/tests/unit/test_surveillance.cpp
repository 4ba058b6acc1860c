#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace vewane;
using vt::rec;

namespace {

/// Bins the infections of an external cohort into `bins` equal-width
/// intervals on [0, horizon], reported at the midpoints.
SurveillanceSeries bin_events(const Dataset& ds, int bins, bool with_irrelevant) {
    SurveillanceSeries s;
    s.count_preventable.assign(bins, 0.0);
    std::vector<double> d0(bins, 0.0);
    for (int k = 0; k < bins; ++k) s.time.push_back(ds.horizon * (k + 0.5) / bins);
    for (const auto& r : ds.records) {
        if (r.cause == Cause::Censored) continue;
        const int k = std::min(bins - 1, static_cast<int>(r.event_time / ds.horizon * bins));
        (r.cause == Cause::Preventable ? s.count_preventable[k] : d0[k]) += 1;
    }
    if (with_irrelevant) s.count_irrelevant = d0;
    return s;
}

/// Fraction of beta coordinates whose Wald interval covers the truth.
double beta_coverage(const FitResult& fit, const Eigen::VectorXd& truth) {
    const double z = normal_quantile(0.975);
    double c = 0;
    for (Eigen::Index k = 0; k < truth.size(); ++k)
        c += std::abs(fit.beta[k] - truth[k]) <= z * std::sqrt(fit.beta_cov(k, k));
    return c / truth.size();
}

}  // namespace

TEST(Tt1Offset, Examples) {
    SurveillanceSeries s{{0.5}, {100}, std::vector<double>{50}};
    EXPECT_NEAR(tt1_offset(s)(0.5), std::log(100.5 / 50.5), 1e-12);
    EXPECT_NEAR(tt1_offset(s)(0.5), 0.6882, 1e-4);
    SurveillanceSeries z{{0.5}, {0}, std::vector<double>{10}};
    EXPECT_NEAR(tt1_offset(z)(0.5), -3.0445, 1e-4);
    SurveillanceSeries eq{{0.1, 0.4, 0.8}, {3, 7, 0}, std::vector<double>{3, 7, 0}};
    for (double t = 0; t <= 1; t += 0.05) EXPECT_EQ(tt1_offset(eq)(t), 0.0);
}

TEST(Tt1Offset, InterpolatesAndExtendsConstantly) {
    SurveillanceSeries s{{0.25, 0.75}, {1, 3}, std::vector<double>{3, 1}};
    const SmoothFn f = tt1_offset(s);
    const double a = std::log(1.5 / 3.5);
    EXPECT_NEAR(f(0.0), a, 1e-14);
    EXPECT_NEAR(f(0.25), a, 1e-14);
    EXPECT_NEAR(f(0.5), 0.0, 1e-14);
    EXPECT_NEAR(f(1.0), -a, 1e-14);
}

TEST(Tt1Offset, AntisymmetricUnderSwap) {
    std::mt19937_64 rng(1);
    std::poisson_distribution<int> pd(6);
    for (int rep = 0; rep < 50; ++rep) {
        SurveillanceSeries s;
        std::vector<double> d0;
        for (int k = 0; k < 12; ++k) {
            s.time.push_back(k + 0.5);
            s.count_preventable.push_back(pd(rng));
            d0.push_back(pd(rng));
        }
        s.count_irrelevant = d0;
        SurveillanceSeries w{s.time, d0, s.count_preventable};
        const SmoothFn a = tt1_offset(s), b = tt1_offset(w);
        for (double t = -1; t < 13; t += 0.37) EXPECT_NEAR(a(t), -b(t), 1e-13);
    }
}

TEST(Tt1Offset, Errors) {
    EXPECT_THROW(tt1_offset(SurveillanceSeries{}), DataError);
    EXPECT_THROW(tt1_offset(SurveillanceSeries{{0.5}, {1}, {}}), DataError);
    EXPECT_THROW(tt1_offset(SurveillanceSeries{{0.5, 0.5}, {1, 2}, std::vector<double>{1, 1}}), DataError);
    EXPECT_THROW(tt1_offset(SurveillanceSeries{{0.5}, {1.5}, std::vector<double>{1}}), DataError);
    EXPECT_THROW(tt1_offset(SurveillanceSeries{{0.5}, {1}, std::vector<double>{-1}}), DataError);
    EXPECT_THROW(tt1_offset(SurveillanceSeries{{0.5, 0.7}, {1}, std::vector<double>{1}}), DataError);
}

TEST(SdaOffset, Examples) {
    const auto flat = sda_tt2_offset({{0.1, 0.5, 0.9}, {40, 40, 40}, {}});
    EXPECT_TRUE(flat.needs_intercept);
    for (double t : {0.0, 0.3, 1.0}) EXPECT_NEAR(flat.part(t), 0.0, 1e-14);
    const auto two = sda_tt2_offset({{0.2, 0.8}, {3, 29}, {}});
    const double m = 0.5 * (std::log(3.5) + std::log(29.5));
    EXPECT_NEAR(two.part(0.2), std::log(3.5) - m, 1e-14);
    EXPECT_NEAR(two.part(0.8), std::log(29.5) - m, 1e-14);
    EXPECT_NEAR(two.part(0.2), -two.part(0.8), 1e-14);
    const auto one = sda_tt2_offset({{0.3}, {17}, {}});
    EXPECT_EQ(one.part(0.3), 0.0);
    EXPECT_THROW(sda_tt2_offset(SurveillanceSeries{}), DataError);
}

TEST(SdaOffset, CenteredOverBins) {
    std::mt19937_64 rng(2);
    std::poisson_distribution<int> pd(30);
    for (int rep = 0; rep < 30; ++rep) {
        SurveillanceSeries s;
        for (int k = 0; k < 9; ++k) s.time.push_back(k), s.count_preventable.push_back(pd(rng));
        const auto o = sda_tt2_offset(s);
        double mean = 0;
        for (double t : s.time) mean += o.part(t) / s.time.size();
        EXPECT_NEAR(mean, 0.0, 1e-13);
    }
}

TEST(SmoothedTt1, FewBinsFallBackToRaw) {
    SurveillanceSeries s{{0.2, 0.5, 0.8}, {5, 9, 2}, std::vector<double>{4, 4, 6}};
    const SmoothFn a = tt1_offset(s), b = smoothed_tt1_offset(s);
    for (double t : {0.2, 0.35, 0.8}) EXPECT_EQ(a(t), b(t));
}

TEST(SmoothedTt1, ReducesBinNoise) {
    // True log ratio is log(2) + 0.5 sin(2 pi t); counts are Poisson.
    std::mt19937_64 rng(3);
    SurveillanceSeries s;
    std::vector<double> d0;
    auto truth = [](double t) { return std::log(2.0) + 0.5 * std::sin(2 * std::numbers::pi * t); };
    for (int k = 0; k < 52; ++k) {
        const double t = (k + 0.5) / 52;
        s.time.push_back(t);
        s.count_preventable.push_back(std::poisson_distribution<int>(60 * std::exp(truth(t)))(rng));
        d0.push_back(std::poisson_distribution<int>(60)(rng));
    }
    s.count_irrelevant = d0;
    double raw = 0, sm = 0;
    const SmoothFn a = tt1_offset(s), b = smoothed_tt1_offset(s);
    for (double t : s.time) {
        raw += std::pow(a(t) - truth(t), 2);
        sm += std::pow(b(t) - truth(t), 2);
    }
    EXPECT_LT(sm, raw);
}

TEST(VariantMix, LookupAndNormalization) {
    const VariantMix one{{0.0}, {1}, Eigen::MatrixXd::Ones(1, 1)};
    for (double t : {-1.0, 0.0, 5.0}) EXPECT_EQ(variant_mix_lookup(one, t)[0], 1.0);
    Eigen::MatrixXd counts(2, 2);
    counts << 30, 70, 50, 50;
    const VariantMix mix = variant_mix_from_counts({0.1, 0.5}, {1, 2}, counts);
    EXPECT_NEAR(variant_mix_lookup(mix, 0.2)[0], 0.3, 1e-15);
    EXPECT_NEAR(variant_mix_lookup(mix, 0.2)[1], 0.7, 1e-15);
    EXPECT_NEAR(variant_mix_lookup(mix, 0.0)[0], 0.3, 1e-15);  // before the first bin
    EXPECT_EQ(variant_mix_lookup(mix, 0.5)[0], 0.5);          // right-continuous
    EXPECT_EQ(mix.column(2), 1);
    EXPECT_EQ(mix.column(7), -1);
    const VariantMix sub = mix.subset({2});
    EXPECT_EQ(sub.m(), 1u);
    EXPECT_NEAR(sub.prop(0, 0), 0.7, 1e-15);
    EXPECT_THROW(mix.subset({9}), DataError);
}

TEST(VariantMix, Validation) {
    EXPECT_THROW((VariantMix{{0.0}, {1, 2}, Eigen::RowVector2d(0.5, 0.6)}.validate()), DataError);
    EXPECT_THROW((VariantMix{{0.0}, {1, 2}, Eigen::RowVector2d(1.2, -0.2)}.validate()), DataError);
    EXPECT_THROW((VariantMix{{0.5, 0.1}, {1}, Eigen::MatrixXd::Ones(2, 1)}.validate()), DataError);
    EXPECT_THROW((VariantMix{{0.0}, {1}, Eigen::MatrixXd::Ones(2, 1)}.validate()), DataError);
    EXPECT_THROW(variant_mix_from_counts({0.0}, {1, 2}, Eigen::RowVector2d(0, 0)), DataError);
    EXPECT_NO_THROW((VariantMix{{0.0}, {1, 2}, Eigen::RowVector2d(0.25, 0.75)}.validate()));
}

TEST(ImputeStrains, DegenerateAndUntouched) {
    Dataset ds;
    ds.horizon = 1;
    for (int i = 0; i < 50; ++i) ds.records.push_back(rec(std::to_string(i), {}, 0.5, i % 3 ? Cause::Preventable : Cause::Irrelevant));
    ds.records[1].strain = 2;
    const VariantMix mix{{0.0}, {1, 2}, Eigen::RowVector2d(1.0, 0.0)};
    const Dataset out = impute_strains(ds, mix, 7);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (ds.records[i].cause != Cause::Preventable) EXPECT_FALSE(out.records[i].strain);
        else if (i == 1) EXPECT_EQ(*out.records[i].strain, 2);
        else EXPECT_EQ(*out.records[i].strain, 1);
    }
    const Dataset again = impute_strains(out, mix, 99);
    for (std::size_t i = 0; i < ds.records.size(); ++i) EXPECT_EQ(again.records[i].strain, out.records[i].strain);
}

TEST(ImputeStrains, FrequenciesAndDeterminism) {
    Dataset ds;
    ds.horizon = 1;
    for (int i = 0; i < 10000; ++i) ds.records.push_back(rec(std::to_string(i), {}, 0.3 + 0.4 * (i % 2), Cause::Preventable));
    Eigen::MatrixXd p(2, 2);
    p << 0.5, 0.5, 0.2, 0.8;
    const VariantMix mix{{0.0, 0.5}, {1, 2}, p};
    const Dataset a = impute_strains(ds, mix, 11), b = impute_strains(ds, mix, 11);
    double early = 0, late = 0;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].strain, b.records[i].strain);
        (i % 2 ? late : early) += *a.records[i].strain == 1;
    }
    EXPECT_NEAR(early / 5000, 0.5, 0.015 * std::sqrt(2.0));
    EXPECT_NEAR(late / 5000, 0.2, 4 * std::sqrt(0.16 / 5000));
    // Each record's draw depends only on its own substream.
    Dataset c = ds;
    c.records.resize(10);
    EXPECT_EQ(impute_strains(c, mix, 11).records[3].strain, a.records[3].strain);
}

TEST(ImputeStrains, HalfSplitOnTenThousand) {
    Dataset ds;
    ds.horizon = 1;
    for (int i = 0; i < 10000; ++i) ds.records.push_back(rec(std::to_string(i), {}, 0.5, Cause::Preventable));
    const VariantMix mix{{0.0}, {1, 2}, Eigen::RowVector2d(0.5, 0.5)};
    const Dataset out = impute_strains(ds, mix, 5);
    double ones = 0;
    for (const auto& r : out.records) ones += *r.strain == 1;
    EXPECT_NEAR(ones / 10000, 0.5, 0.015);
}

TEST(SensitivityOffset, Examples) {
    const SmoothFn z = sensitivity_offset({0.0, 1.0}, {1.0, 1.0});
    const SmoothFn e = sensitivity_offset({0.0, 1.0}, {std::exp(1.0), std::exp(1.0)});
    for (double t : {0.0, 0.4, 1.0}) {
        EXPECT_EQ(z(t), 0.0);
        EXPECT_NEAR(e(t), 1.0, 1e-15);
    }
    EXPECT_THROW(sensitivity_offset({0.0}, {0.0}), DomainError);
    EXPECT_THROW(sensitivity_offset({0.0, 1.0}, {1.0}), DataError);
}

TEST(SensitivityOffset, AbsorbedByInterceptDirection) {
    // Everyone vaccinated at 0: the constant VE column is identified only
    // through the fixed offset, so log c0 = 1 shifts it by exactly -1.
    std::mt19937_64 rng(6);
    Dataset ds = vt::random_dataset(rng, 400);
    for (auto& r : ds.records) r.vax_time = 0.0;
    const SmoothFn base = SmoothFn::table({0.0, 1.0}, {-0.3, 0.4});
    SieveOptions o;
    o.offset_only = true;
    o.offset = base;
    const auto f0 = fit_sieve_binary(ds, VEBasisSpec::linear(), o);
    o.offset = add_functions(base, sensitivity_offset({0.0, 1.0}, {std::exp(1.0), std::exp(1.0)}));
    const auto f1 = fit_sieve_binary(ds, VEBasisSpec::linear(), o);
    EXPECT_NEAR(f1.beta[0] - f0.beta[0], -1.0, 1e-8);
    EXPECT_NEAR(f1.beta[1], f0.beta[1], 1e-8);
    o.offset = add_functions(base, sensitivity_offset({0.0, 1.0}, {1.0, 1.0}));
    EXPECT_NEAR(fit_sieve_binary(ds, VEBasisSpec::linear(), o).beta[0], f0.beta[0], 1e-10);
}

TEST(AddFunctions, UnionOfBreakpoints) {
    const SmoothFn a = SmoothFn::table({0.0, 1.0}, {0.0, 1.0});
    const SmoothFn b = SmoothFn::table({0.5}, {2.0});
    const SmoothFn s = add_functions(a, b);
    for (double t : {0.0, 0.25, 0.5, 0.9, 1.0}) EXPECT_NEAR(s(t), a(t) + b(t), 1e-15);
    const SmoothFn c = add_functions(a, SmoothFn::constant(3.0, 0.0, 1.0));
    for (double t : {0.0, 0.3, 1.0}) EXPECT_NEAR(c(t), t + 3.0, 1e-12);
}

TEST(Anchoring, Tt1SelfConsistentOracle) {
    double cover = 0;
    const int R = 200;
    for (int r = 0; r < R; ++r) {
        auto study = vt::preset(0.06, 1.0, r % 2 == 1, substream_seed(21, r));
        const auto c = simulate_cohort(study);
        auto ext = study;
        ext.n = 10 * study.n;
        ext.beta_true.setZero();  // vaccination leaves every hazard unchanged
        ext.seed = substream_seed(22, r);
        const auto e = simulate_cohort(ext);
        SieveOptions o;
        o.offset_only = true;
        o.offset = tt1_offset(bin_events(e.data, 20, true));
        const auto fit = fit_sieve_binary(c.data, VEBasisSpec::linear(), o);
        cover += beta_coverage(fit, study.beta_true) / R;
    }
    EXPECT_GE(100 * cover, 90.0);
}

TEST(Anchoring, SdaTt2WithFreeIntercept) {
    double cover = 0;
    const int R = 200;
    for (int r = 0; r < R; ++r) {
        auto study = vt::preset(0.06, 1.0, r % 2 == 1, substream_seed(23, r));
        study.baseline_shape = BaselineShape::Constant;
        const auto c = simulate_cohort(study);
        auto ext = study;
        ext.n = 10 * study.n;
        ext.beta_true.setZero();
        ext.seed = substream_seed(24, r);
        const auto sda = sda_tt2_offset(bin_events(simulate_cohort(ext).data, 20, false));
        SieveOptions o;
        o.offset_only = true;
        o.free_intercept = sda.needs_intercept;
        o.offset = sda.part;
        const auto fit = fit_sieve_binary(c.data, VEBasisSpec::linear(), o);
        cover += beta_coverage(fit, study.beta_true) / R;
    }
    EXPECT_GE(100 * cover, 90.0);
}
