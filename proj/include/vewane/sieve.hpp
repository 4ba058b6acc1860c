/**
 * Sieve maximum likelihood for the semiparametric logistic model
 *
 *   P(J = 1 | V, T) = expit(Z(T) psi(T - V)' beta + alpha(T) + o(T))
 *
 * over infected participants, with alpha a clamped cubic B-spline. The
 * multinomial variant gives every strain s its own beta_s and the offset
 * log p_s(T), sharing alpha; irrelevant infections are the pivot class.
 */
#pragma once

#include "core.hpp"
#include "fit.hpp"
#include "smoothing.hpp"
#include "surveillance.hpp"

#include <Eigen/Core>
#include <Eigen/LU>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace vewane {

struct AlphaSpec {
    std::optional<BSplineBasis> spline;
    bool free_intercept = false;
    std::optional<SmoothFn> offset;
};

struct SieveDesign {
    MultinomialProblem problem;
    std::vector<VEBasisSpec> bases;  // one per class
    std::vector<int> strains;        // class labels (empty for binary)
    AlphaSpec alpha;
    int n_beta = 0;
    int n_alpha = 0;
    Eigen::MatrixXd ve;  // n x n_beta, Z psi_s(T - V) in block s
    std::vector<double> T;
    std::vector<std::optional<double>> V;
    std::vector<int> y;  // 0 irrelevant, s >= 1 class index
    std::size_t n_dropped = 0;

    Eigen::Index rows() const { return static_cast<Eigen::Index>(T.size()); }
};

/// One row per non-censored record. With a mixture, classes follow the
/// mixture's strain labels and every preventable record must carry a strain.
inline SieveDesign build_design(const Dataset& ds, const std::vector<VEBasisSpec>& bases,
                                const AlphaSpec& alpha, const VariantMix* mix = nullptr) {
    SieveDesign d;
    d.bases = bases;
    d.alpha = alpha;
    const int m = mix ? static_cast<int>(mix->m()) : 1;
    if (static_cast<int>(bases.size()) != m) throw DomainError("need one VE basis per class");
    if (mix) {
        mix->validate(false);
        d.strains = mix->labels;
    }
    for (const auto& b : bases) d.n_beta += b.dim();
    const int n_spline = alpha.spline ? alpha.spline->dim() : 0;
    d.n_alpha = n_spline + (alpha.free_intercept ? 1 : 0);

    for (const auto& r : ds.records) {
        if (r.cause == Cause::Censored) {
            ++d.n_dropped;
            continue;
        }
        int cls = 0;
        if (r.cause == Cause::Preventable) {
            if (mix) {
                if (!r.strain) throw DataError("strain label missing on a preventable record; impute first");
                const int c = mix->column(*r.strain);
                if (c < 0) throw DataError("strain label not present in the mixture");
                cls = c + 1;
            } else {
                cls = 1;
            }
        }
        if (alpha.spline && (r.event_time < alpha.spline->lo() || r.event_time > alpha.spline->hi()))
            throw DomainError("event time outside the spline boundary");
        d.T.push_back(r.event_time);
        d.V.push_back(r.vax_time);
        d.y.push_back(cls);
    }
    const Eigen::Index n = d.rows();
    d.ve = Eigen::MatrixXd::Zero(n, d.n_beta);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, d.n_alpha);
    Eigen::VectorXd off = Eigen::VectorXd::Zero(n);
    std::array<double, 16> N{};
    for (Eigen::Index i = 0; i < n; ++i) {
        int o = 0;
        for (const auto& b : bases) {
            std::array<double, 8> x{};
            ve_covariates_into(b, d.V[i], d.T[i], x.data());
            for (int k = 0; k < b.dim(); ++k) d.ve(i, o + k) = x[k];
            o += b.dim();
        }
        if (alpha.spline) {
            const int first = alpha.spline->nonzero(d.T[i], N.data());
            for (int k = 0; k <= alpha.spline->degree(); ++k) A(i, first + k) = N[k];
        }
        if (alpha.free_intercept) A(i, n_spline) = 1.0;
        if (alpha.offset) off[i] = (*alpha.offset)(d.T[i]);
    }
    auto& pr = d.problem;
    pr.m = m;
    pr.y = d.y;
    pr.offset = off.replicate(1, m);
    const int p = d.n_beta + d.n_alpha;
    int o = 0;
    for (int s = 0; s < m; ++s) {
        Eigen::MatrixXd U = Eigen::MatrixXd::Zero(n, p);
        const int ds_ = bases[s].dim();
        U.middleCols(o, ds_) = d.ve.middleCols(o, ds_);
        U.rightCols(d.n_alpha) = A;
        pr.U.push_back(std::move(U));
        o += ds_;
    }
    if (mix) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd ps = variant_mix_lookup(*mix, d.T[i]);
            for (int s = 0; s < m; ++s) {
                if (ps[s] > 0.0) {
                    pr.offset(i, s) += std::log(ps[s]);
                } else {
                    if (d.y[i] == s + 1)
                        throw DataError("variant mixture is zero at an observed strain event time");
                    pr.offset(i, s) = -std::numeric_limits<double>::infinity();
                }
            }
        }
    }
    return d;
}

/// Log-likelihood with gradient and Hessian at theta = (beta, alpha_coefs).
inline Derivs loglik_derivs(const SieveDesign& d, const Eigen::VectorXd& beta,
                            const Eigen::VectorXd& alpha_coefs) {
    if (beta.size() != d.n_beta || alpha_coefs.size() != d.n_alpha)
        throw DomainError("parameter dimensions do not match the design");
    Eigen::VectorXd theta(d.n_beta + d.n_alpha);
    theta << beta, alpha_coefs;
    return multinomial_derivs(d.problem, theta);
}

struct SieveOptions {
    int degree = 3;
    std::optional<std::vector<double>> knots;  // explicit interior knots
    std::optional<int> n_knots;                // overrides the knot rule
    KnotPlacement placement = KnotPlacement::Quantile;
    std::optional<std::pair<double, double>> boundary;  // default [0, horizon]
    std::optional<SmoothFn> offset;  // fixed, added to alpha
    bool offset_only = false;        // no spline: alpha is the offset (plus intercept)
    bool free_intercept = false;     // scalar intercept column (with offset_only)
    NewtonOptions newton;
};

/// Resolves the alpha representation for a dataset: K from the knot rule on
/// the infected count unless given, knots at quantiles of infection times.
inline AlphaSpec resolve_alpha(const Dataset& ds, const SieveOptions& opt) {
    AlphaSpec a;
    a.offset = opt.offset;
    a.free_intercept = opt.free_intercept;
    if (opt.offset_only) {
        if (!opt.offset) throw ConfigError("offset-only fit needs an offset");
        return a;
    }
    const auto [lo, hi] = opt.boundary.value_or(std::make_pair(0.0, ds.horizon));
    std::vector<double> times;
    for (const auto& r : ds.records)
        if (r.cause != Cause::Censored) times.push_back(r.event_time);
    std::vector<double> knots;
    if (opt.knots) {
        knots = *opt.knots;
    } else {
        const int K = opt.n_knots ? *opt.n_knots : knot_rule(std::max<std::size_t>(times.size(), 1));
        knots = place_knots(times, K, lo, hi, opt.placement);
    }
    a.spline = BSplineBasis(opt.degree, knots, lo, hi);
    return a;
}

namespace detail {

inline FitResult finish_sieve_fit(const SieveDesign& d, const NewtonResult& nr, Method method) {
    FitResult fit;
    fit.method = method;
    fit.bases = d.bases;
    fit.strains = d.strains;
    const Eigen::MatrixXd inv = nr.info.ldlt().solve(Eigen::MatrixXd::Identity(nr.info.rows(), nr.info.cols()));
    fit.beta = nr.theta.head(d.n_beta);
    fit.beta_cov = inv.topLeftCorner(d.n_beta, d.n_beta);
    fit.beta_cov = 0.5 * (fit.beta_cov + fit.beta_cov.transpose()).eval();
    const int n_spline = d.alpha.spline ? d.alpha.spline->dim() : 0;
    if (d.alpha.spline)
        fit.nuisance.alpha = SmoothFn::spline(*d.alpha.spline, nr.theta.segment(d.n_beta, n_spline));
    if (d.alpha.free_intercept) {
        fit.nuisance.has_intercept = true;
        fit.nuisance.intercept = nr.theta[d.n_beta + n_spline];
    }
    fit.nuisance.offset = d.alpha.offset;
    fit.diag.iterations = nr.iterations;
    fit.diag.final_update_norm = nr.last_step;
    fit.diag.loglik = nr.loglik;
    fit.diag.converged = nr.converged;
    fit.diag.n_rows = static_cast<std::size_t>(d.rows());
    fit.diag.n_dropped = d.n_dropped;
    fit.diag.loglik_trace = nr.trace;
    return fit;
}

/// Starting point: beta = 0, alpha at the logit of the class share (spline
/// coefficients sum to a constant by partition of unity).
inline Eigen::VectorXd start_point(const SieveDesign& d) {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(d.n_beta + d.n_alpha);
    std::size_t n1 = 0;
    for (int y : d.y) n1 += (y > 0);
    const double share = (n1 + 0.5) / (d.y.size() + 1.0);
    const double a0 = std::log(share / (1.0 - share));
    if (d.alpha.spline) {
        theta.segment(d.n_beta, d.alpha.spline->dim()).setConstant(a0);
    } else if (d.alpha.free_intercept) {
        theta[d.n_beta] = a0;
    }
    return theta;
}

}  // namespace detail

inline SieveDesign sieve_binary_design(const Dataset& ds, const VEBasisSpec& basis, const SieveOptions& opt = {}) {
    return build_design(ds, {basis}, resolve_alpha(ds, opt));
}

inline FitResult fit_sieve_design(const SieveDesign& d, Method method, const NewtonOptions& newton) {
    return detail::finish_sieve_fit(d, newton_maximize(d.problem, detail::start_point(d), newton), method);
}

inline FitResult fit_sieve_binary(const Dataset& ds, const VEBasisSpec& basis, const SieveOptions& opt = {}) {
    const SieveDesign d = sieve_binary_design(ds, basis, opt);
    std::size_t n1 = 0;
    for (int y : d.y) n1 += (y == 1);
    if (n1 == 0 || n1 == d.y.size()) throw OnlyOneCause("all infections share one cause");
    if (d.rows() < d.n_beta + d.n_alpha + 1)
        throw DataError("too few infections for the number of parameters");
    return fit_sieve_design(d, Method::Sieve, opt.newton);
}

/// Strains with no events get NaN coefficients and status NonIdentifiable;
/// the remaining strains are fitted without them.
inline FitResult fit_sieve_multinomial(const Dataset& ds, const std::vector<VEBasisSpec>& bases,
                                       const VariantMix& mix, const SieveOptions& opt = {}) {
    mix.validate();
    if (bases.size() != mix.m()) throw DomainError("need one VE basis per strain");
    std::vector<std::size_t> events(mix.m(), 0);
    std::size_t n0 = 0;
    for (const auto& r : ds.records) {
        if (r.cause == Cause::Irrelevant) ++n0;
        if (r.cause != Cause::Preventable) continue;
        if (!r.strain) throw DataError("strain label missing on a preventable record; impute first");
        const int c = mix.column(*r.strain);
        if (c < 0) throw DataError("strain label not present in the mixture");
        ++events[static_cast<std::size_t>(c)];
    }
    std::vector<int> keep;
    std::vector<VEBasisSpec> keep_bases;
    for (std::size_t s = 0; s < mix.m(); ++s) {
        if (events[s] > 0) {
            keep.push_back(mix.labels[s]);
            keep_bases.push_back(bases[s]);
        }
    }
    if (keep.empty() || n0 == 0) throw OnlyOneCause("all infections share one cause");
    const VariantMix sub = mix.subset(keep);
    const SieveDesign d = build_design(ds, keep_bases, resolve_alpha(ds, opt), &sub);
    if (d.rows() < d.n_beta + d.n_alpha + 1)
        throw DataError("too few infections for the number of parameters");
    FitResult part = fit_sieve_design(d, Method::SieveMultinomial, opt.newton);

    // Re-expand to the full strain list.
    FitResult fit = part;
    fit.bases = bases;
    fit.strains = mix.labels;
    int full_dim = 0;
    for (const auto& b : bases) full_dim += b.dim();
    fit.beta = Eigen::VectorXd::Constant(full_dim, std::numeric_limits<double>::quiet_NaN());
    fit.beta_cov = Eigen::MatrixXd::Constant(full_dim, full_dim, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> src(mix.m(), -1);
    {
        int o = 0;
        for (std::size_t k = 0; k < keep.size(); ++k) {
            src[static_cast<std::size_t>(mix.column(keep[k]))] = o;
            o += keep_bases[k].dim();
        }
    }
    fit.diag.strain_status.assign(mix.m(), "ok");
    for (std::size_t s = 0; s < mix.m(); ++s) {
        if (src[s] < 0) fit.diag.strain_status[s] = "NonIdentifiable";
    }
    for (std::size_t a = 0; a < mix.m(); ++a) {
        if (src[a] < 0) continue;
        const int da = bases[a].dim();
        fit.beta.segment(fit.block_offset(a), da) = part.beta.segment(src[a], da);
        for (std::size_t b = 0; b < mix.m(); ++b) {
            if (src[b] < 0) continue;
            const int db = bases[b].dim();
            fit.beta_cov.block(fit.block_offset(a), fit.block_offset(b), da, db) =
                part.beta_cov.block(src[a], src[b], da, db);
        }
    }
    return fit;
}

}  // namespace vewane
