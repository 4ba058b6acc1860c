/**
 * Cohort simulation from the multiplicative frailty competing-risks model
 *
 *   h_0(t) = lambda00 U(t)
 *   h_s(t) = lambda01 b(t) p_s(t) U(t) exp(Z(t) f_s(t - V))
 *
 * with b(t) = 1 - a sin(2 pi t) (sinusoidal shape) or 1, and p_s = 1 when no
 * strains are modelled. Latent cause times come from inverting each
 * cumulative hazard; the earliest one is observed.
 */
#pragma once

#include "core.hpp"
#include "surveillance.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace vewane {

enum class BaselineShape { Constant, Sinusoidal };
enum class VaxLaw { RandomUniform, VulnerableFirst };
enum class FrailtyLaw { IIDLognormal, DisinhibitionPair };

struct ScenarioSpec {
    std::string name = "custom";
    std::size_t n = 10000;
    double horizon = 1.0;
    double lambda00 = 0.03;
    double lambda01 = 0.06;
    BaselineShape baseline_shape = BaselineShape::Sinusoidal;
    double amplitude = 0.5;  // b(t) = 1 - amplitude sin(2 pi t)
    VEBasisSpec ve_basis = VEBasisSpec::linear();
    Eigen::VectorXd beta_true = Eigen::Vector2d(-1.0, 0.0);
    VaxLaw vax_law = VaxLaw::RandomUniform;
    double vax_upper = 1.15;   // V ~ Unif(0, vax_upper); V > horizon means never
    double copula_rho = -0.7;  // VulnerableFirst
    FrailtyLaw frailty_law = FrailtyLaw::IIDLognormal;
    double sigma_u = 1.0;
    double mu_pre = 0.0, mu_post = 1.0, pair_sd = 1.0, pair_rho = 0.2;  // DisinhibitionPair
    std::optional<VariantMix> mixture;         // strain-specific preventable causes
    std::vector<Eigen::VectorXd> strain_betas; // one per mixture strain
    std::uint64_t seed = 1;

    std::size_t n_preventable_causes() const { return mixture ? mixture->m() : 1; }

    const Eigen::VectorXd& beta_for(int cause) const {
        return mixture ? strain_betas.at(static_cast<std::size_t>(cause - 1)) : beta_true;
    }

    void validate() const {
        if (n == 0) throw ConfigError("scenario n must be positive");
        if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
        if (!(lambda00 > 0.0) || !(lambda01 > 0.0)) throw ConfigError("rates must be positive");
        if (baseline_shape == BaselineShape::Sinusoidal && !(std::abs(amplitude) < 1.0))
            throw ConfigError("sinusoid amplitude must satisfy |a| < 1");
        if (beta_true.size() != ve_basis.dim()) throw ConfigError("beta_true does not match the VE basis");
        if (!(vax_upper > 0.0)) throw ConfigError("vaccination window must be positive");
        if (!(std::abs(copula_rho) < 1.0) || !(std::abs(pair_rho) < 1.0))
            throw ConfigError("correlations must satisfy |rho| < 1");
        if (frailty_law == FrailtyLaw::IIDLognormal && !(sigma_u > 0.0))
            throw ConfigError("sigma_u must be positive");
        if (frailty_law == FrailtyLaw::DisinhibitionPair && !(pair_sd > 0.0))
            throw ConfigError("frailty sd must be positive");
        if (vax_law == VaxLaw::VulnerableFirst && frailty_law != FrailtyLaw::IIDLognormal)
            throw ConfigError("vulnerable-first vaccination couples an iid lognormal frailty");
        if (mixture) {
            mixture->validate();
            if (strain_betas.size() != mixture->m()) throw ConfigError("need one beta per strain");
            for (const auto& b : strain_betas)
                if (b.size() != ve_basis.dim()) throw ConfigError("strain beta does not match the VE basis");
        }
    }
};

struct LatentDraw {
    double u_pre = 1.0;   // frailty before vaccination (always, if never vaccinated)
    double u_post = 1.0;  // frailty from vaccination onwards
    std::optional<double> vax;
    double vax_draw = 0.0;  // sampled date before truncation at the horizon

    double frailty(double s) const { return (vax && s >= *vax) ? u_post : u_pre; }
};

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline LatentDraw sample_latents(const ScenarioSpec& sc, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    LatentDraw L;
    if (sc.vax_law == VaxLaw::VulnerableFirst) {
        const double n1 = nd(rng), n2 = nd(rng);
        const double z2 = sc.copula_rho * n1 + std::sqrt(1.0 - sc.copula_rho * sc.copula_rho) * n2;
        L.u_pre = L.u_post = std::exp(sc.sigma_u * n1);
        L.vax_draw = sc.vax_upper * std_normal_cdf(z2);
    } else {
        if (sc.frailty_law == FrailtyLaw::IIDLognormal) {
            L.u_pre = L.u_post = std::exp(sc.sigma_u * nd(rng));
        } else {
            const double n1 = nd(rng), n2 = nd(rng);
            const double zpre = sc.mu_pre + sc.pair_sd * n1;
            const double zpost = sc.mu_post + sc.pair_sd * (sc.pair_rho * n1 + std::sqrt(1.0 - sc.pair_rho * sc.pair_rho) * n2);
            L.u_pre = std::exp(zpre);
            L.u_post = std::exp(zpost);
        }
        L.vax_draw = sc.vax_upper * ud(rng);
    }
    if (L.vax_draw <= sc.horizon) L.vax = L.vax_draw;
    return L;
}

// ---------------------------------------------------------------------------
// Cumulative hazards

namespace detail {

struct GaussLegendre {
    std::array<double, 32> x{}, w{};
    GaussLegendre() {
        constexpr int n = 32;
        for (int i = 0; i < n / 2; ++i) {
            double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = 0.0;
                for (int k = 1; k <= n; ++k) {
                    const double p2 = p1;
                    p1 = p0;
                    p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
                }
                dp = n * (z * p0 - p1) / (z * z - 1.0);
                const double dz = p0 / dp;
                z -= dz;
                if (std::abs(dz) < 1e-16) break;
            }
            x[i] = -z;
            x[n - 1 - i] = z;
            w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
    }
};

inline const GaussLegendre& gauss_legendre32() {
    static const GaussLegendre gl;
    return gl;
}

/// Integral of the preventable baseline shape b(s) over [a, b].
inline double shape_integral(const ScenarioSpec& sc, double a, double b) {
    if (sc.baseline_shape == BaselineShape::Constant) return b - a;
    const double k = 2.0 * std::numbers::pi;
    return (b - a) + sc.amplitude * (std::cos(k * b) - std::cos(k * a)) / k;
}

inline double shape_value(const ScenarioSpec& sc, double s) {
    if (sc.baseline_shape == BaselineShape::Constant) return 1.0;
    return 1.0 - sc.amplitude * std::sin(2.0 * std::numbers::pi * s);
}

/// True when f(tau) is constant for tau in [ta, tb].
inline bool f_constant_on(const VEBasisSpec& basis, const Eigen::VectorXd& beta, double ta, double tb) {
    switch (basis.kind) {
    case BasisKind::Constant: return true;
    case BasisKind::Linear: return beta[1] == 0.0;
    case BasisKind::Ramp: return tb <= basis.ramp_length || (ta >= basis.ramp_length && beta[2] == 0.0);
    }
    return false;
}

inline double f_at(const VEBasisSpec& basis, const Eigen::VectorXd& beta, double tau) {
    std::array<double, 8> psi{};
    ve_basis_into(basis, tau, psi.data());
    double f = 0.0;
    for (int k = 0; k < basis.dim(); ++k) f += beta[k] * psi[k];
    return f;
}

}  // namespace detail

/// Lambda_j(t) for cause 0 (irrelevant) or a preventable cause 1..m.
inline double cumulative_hazard(const ScenarioSpec& sc, const LatentDraw& L, int cause, double t) {
    if (!(t >= 0.0) || t > sc.horizon) throw DomainError("t outside [0, horizon]");
    if (cause < 0 || cause > static_cast<int>(sc.n_preventable_causes())) throw DomainError("unknown cause");

    std::array<double, 64> br{};
    std::size_t nb = 0;
    br[nb++] = 0.0;
    if (L.vax && *L.vax > 0.0 && *L.vax < t) br[nb++] = *L.vax;
    if (cause > 0 && L.vax && sc.ve_basis.kind == BasisKind::Ramp) {
        const double rb = *L.vax + sc.ve_basis.ramp_length;
        if (rb > 0.0 && rb < t) br[nb++] = rb;
    }
    std::vector<double> extra;
    if (cause > 0 && sc.mixture) {
        for (double x : sc.mixture->time)
            if (x > 0.0 && x < t) extra.push_back(x);
    }
    std::vector<double> pts(br.begin(), br.begin() + static_cast<std::ptrdiff_t>(nb));
    pts.insert(pts.end(), extra.begin(), extra.end());
    pts.push_back(t);
    std::sort(pts.begin(), pts.end());

    const auto& gl = detail::gauss_legendre32();
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        const double a = pts[k], b = pts[k + 1];
        if (!(b > a)) continue;
        const double mid = 0.5 * (a + b);
        const double u = L.frailty(mid);
        if (cause == 0) {
            total += sc.lambda00 * u * (b - a);
            continue;
        }
        double scale = sc.lambda01 * u;
        if (sc.mixture) {
            const Eigen::VectorXd p = variant_mix_lookup(*sc.mixture, mid);
            scale *= p[cause - 1];
            if (scale == 0.0) continue;
        }
        const bool vaccinated = L.vax && mid >= *L.vax;
        if (!vaccinated) {
            total += scale * detail::shape_integral(sc, a, b);
            continue;
        }
        const Eigen::VectorXd& beta = sc.beta_for(cause);
        const double ta = a - *L.vax, tb = b - *L.vax;
        if (detail::f_constant_on(sc.ve_basis, beta, ta, tb)) {
            total += scale * std::exp(detail::f_at(sc.ve_basis, beta, 0.5 * (ta + tb))) *
                     detail::shape_integral(sc, a, b);
            continue;
        }
        double acc = 0.0;
        const double half = 0.5 * (b - a);
        for (int q = 0; q < 32; ++q) {
            const double s = mid + half * gl.x[q];
            acc += gl.w[q] * detail::shape_value(sc, s) * std::exp(detail::f_at(sc.ve_basis, beta, s - *L.vax));
        }
        total += scale * half * acc;
    }
    return total;
}

/// Smallest t with Lambda_j(t) >= e, by bisection to 1e-12; nullopt when the
/// cause does not occur before the horizon.
inline std::optional<double> invert_cumulative_hazard(const ScenarioSpec& sc, const LatentDraw& L, int cause,
                                                      double e) {
    if (!(e > 0.0)) throw DomainError("exponential deviate must be positive");
    if (cumulative_hazard(sc, L, cause, sc.horizon) < e) return std::nullopt;
    double lo = 0.0, hi = sc.horizon;
    while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (cumulative_hazard(sc, L, cause, mid) >= e) hi = mid;
        else lo = mid;
    }
    return hi;
}

struct Truth {
    VEBasisSpec basis;
    Eigen::VectorXd beta;
    std::vector<Eigen::VectorXd> strain_betas;

    double f(double tau) const { return detail::f_at(basis, beta, tau); }
};

struct SimulatedCohort {
    Dataset data;
    Truth truth;
};

/// Simulates one participant; draws come from substream (seed, index).
inline EventRecord simulate_participant(const ScenarioSpec& sc, std::size_t index) {
    std::mt19937_64 rng(substream_seed(sc.seed, index));
    const LatentDraw L = sample_latents(sc, rng);
    std::exponential_distribution<double> ed(1.0);
    const int causes = static_cast<int>(sc.n_preventable_causes()) + 1;
    std::array<double, 16> e{};
    for (int j = 0; j < causes; ++j) e[j] = ed(rng);

    EventRecord r;
    r.id = std::to_string(index + 1);
    r.vax_time = L.vax;
    r.event_time = sc.horizon;
    r.cause = Cause::Censored;
    for (int j = 0; j < causes; ++j) {
        const auto tj = invert_cumulative_hazard(sc, L, j, e[j]);
        if (tj && (r.cause == Cause::Censored || *tj < r.event_time)) {
            r.event_time = *tj;
            r.cause = j == 0 ? Cause::Irrelevant : Cause::Preventable;
            r.strain = (j > 0 && sc.mixture) ? std::optional<int>(sc.mixture->labels[j - 1]) : std::nullopt;
        }
    }
    return r;
}

inline SimulatedCohort simulate_cohort(const ScenarioSpec& sc) {
    sc.validate();
    SimulatedCohort out;
    out.data.horizon = sc.horizon;
    out.data.records.reserve(sc.n);
    for (std::size_t i = 0; i < sc.n; ++i) out.data.records.push_back(simulate_participant(sc, i));
    out.truth = {sc.ve_basis, sc.beta_true, sc.strain_betas};
    return out;
}

}  // namespace vewane
