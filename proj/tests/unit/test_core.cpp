#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace vewane;
using vt::rec;

TEST(Basis, LinearValues) {
    const auto p = eval_ve_basis(VEBasisSpec::linear(), 0.5);
    ASSERT_EQ(p.size(), 2);
    EXPECT_DOUBLE_EQ(p[0], 1.0);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Basis, RampBeforeAndAfterBreakpoint) {
    const double r = 14.0 / 365.0;
    const auto b = VEBasisSpec::ramp(r);
    const auto pre = eval_ve_basis(b, 0.01);
    EXPECT_EQ(pre, Eigen::Vector3d(1, 0, 0));
    const auto post = eval_ve_basis(b, r + 0.1);
    EXPECT_DOUBLE_EQ(post[0], 0.0);
    EXPECT_DOUBLE_EQ(post[1], 1.0);
    EXPECT_NEAR(post[2], 0.1, 1e-15);
    // The flat segment is open at r.
    EXPECT_EQ(eval_ve_basis(b, r), Eigen::Vector3d(0, 1, 0));
}

TEST(Basis, RampIndicatorsArePartition) {
    const auto b = VEBasisSpec::ramp(0.2);
    for (double t = 0; t < 2; t += 0.013) {
        const auto p = eval_ve_basis(b, t);
        EXPECT_DOUBLE_EQ(p[0] + p[1], 1.0);
    }
}

TEST(Basis, ErrorsOnBadInput) {
    EXPECT_THROW(eval_ve_basis(VEBasisSpec::linear(), -0.1), DomainError);
    EXPECT_THROW(VEBasisSpec::ramp(0.0), DomainError);
    EXPECT_THROW(f_value(Eigen::Vector3d(1, 2, 3), VEBasisSpec::linear(), 0.3), DomainError);
}

TEST(FValue, Examples) {
    EXPECT_DOUBLE_EQ(f_value(Eigen::Vector2d(-1, 0), VEBasisSpec::linear(), 0.7), -1.0);
    EXPECT_DOUBLE_EQ(f_value(Eigen::Vector2d(-1, 1), VEBasisSpec::linear(), 1.0), 0.0);
    for (double t : {0.0, 0.3, 2.0}) EXPECT_EQ(f_value(Eigen::Vector2d(0, 0), VEBasisSpec::linear(), t), 0.0);
}

TEST(FValue, LinearInBeta) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (const auto& b : {VEBasisSpec::constant(), VEBasisSpec::linear(), VEBasisSpec::ramp(0.1)}) {
        for (int k = 0; k < 200; ++k) {
            Eigen::VectorXd b1(b.dim()), b2(b.dim());
            for (int j = 0; j < b.dim(); ++j) b1[j] = nd(rng), b2[j] = nd(rng);
            const double a = nd(rng), c = nd(rng), t = std::abs(nd(rng));
            EXPECT_NEAR(f_value(a * b1 + c * b2, b, t), a * f_value(b1, b, t) + c * f_value(b2, b, t), 1e-12);
        }
    }
}

TEST(VeFromF, Examples) {
    EXPECT_NEAR(ve_from_f(-1.0), 0.63212, 5e-6);
    EXPECT_EQ(ve_from_f(0.0), 0.0);
    EXPECT_NEAR(ve_from_f(std::log(0.5)), 0.5, 1e-15);
    EXPECT_LT(ve_from_f(0.5), 0.0);
    EXPECT_THROW(ve_from_f(std::nan("")), DomainError);
    EXPECT_THROW(ve_from_f(INFINITY), DomainError);
}

TEST(VeFromF, StrictlyDecreasing) {
    double prev = ve_from_f(-10.0);
    for (double f = -9.99; f < 5; f += 0.01) {
        const double v = ve_from_f(f);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(VeFromF, CurveComposition) {
    const Eigen::Vector2d beta(-1, 1);
    for (double t = 0; t <= 1; t += 0.05)
        EXPECT_NEAR(ve_from_f(f_value(beta, VEBasisSpec::linear(), t)), 1 - std::exp(beta[0] + beta[1] * t), 1e-15);
}

TEST(Validate, AcceptsValidRecords) {
    std::vector<EventRecord> rs{rec("a", 0.1, 0.5, Cause::Preventable), rec("b", {}, 1.0, Cause::Censored),
                                rec("c", 0.9, 0.2, Cause::Irrelevant)};
    const auto v = validate_dataset(rs, 1.0);
    ASSERT_TRUE(v.ok());
    EXPECT_EQ(v.dataset->records.size(), 3u);
    EXPECT_EQ(v.dataset->count(Cause::Preventable), 1u);
}

TEST(Validate, NegativeEventTime) {
    const auto v = validate_dataset({rec("a", {}, -0.1, Cause::Censored)}, 1.0);
    ASSERT_FALSE(v.ok());
    ASSERT_EQ(v.violations.size(), 1u);
    EXPECT_EQ(v.violations[0].reason, "negative event_time");
    EXPECT_EQ(v.violations[0].index, 0u);
}

TEST(Validate, StrainOnIrrelevant) {
    const auto v = validate_dataset({rec("a", {}, 0.5, Cause::Irrelevant, 1)}, 1.0);
    ASSERT_FALSE(v.ok());
    EXPECT_EQ(v.violations[0].reason, "strain on non-preventable");
}

TEST(Validate, DuplicateIdsAndHorizon) {
    const auto v = validate_dataset({rec("a", {}, 0.5, Cause::Irrelevant), rec("a", {}, 1.5, Cause::Censored)}, 1.0);
    ASSERT_FALSE(v.ok());
    ASSERT_EQ(v.violations.size(), 2u);
    EXPECT_EQ(v.violations[0].reason, "duplicate id");
    EXPECT_EQ(v.violations[1].reason, "event_time beyond horizon");
    EXPECT_THROW(require_valid({rec("a", -1.0, 0.5, Cause::Irrelevant)}, 1.0), DataError);
}

TEST(Validate, LateVaccinationMeansUnexposed) {
    const auto r = rec("a", 0.8, 0.5, Cause::Preventable);
    double x[2];
    ve_covariates_into(VEBasisSpec::linear(), r.vax_time, r.event_time, x);
    EXPECT_EQ(x[0], 0.0);
    EXPECT_EQ(x[1], 0.0);
    EXPECT_FALSE(r.vaccinated_by(0.5));
}

TEST(Substream, DistinctAndStable) {
    EXPECT_EQ(substream_seed(1, 2), substream_seed(1, 2));
    EXPECT_NE(substream_seed(1, 2), substream_seed(1, 3));
    EXPECT_NE(substream_seed(1, 2), substream_seed(2, 2));
    EXPECT_NE(substream_seed(1, 2, 0), substream_seed(1, 2, 1));
}
