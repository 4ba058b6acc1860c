/**
 * Targeted maximum likelihood for beta in the semiparametric logistic model,
 * binary and multinomial.
 *
 * The multinomial engine covers the binary case (m = 1). For class s the
 * working direction is H_s = Z psi_s - a_s(T), where a_s is the smoothed
 * ratio E[Z psi_s Q_s (1 - Q) | T] / E[Q (1 - Q) | T] and Q = sum_s Q_s.
 * The fluctuation moves class s's logit by eps_s' Z psi_s - sum_r eps_r' a_r(T),
 * whose score is the efficient score Z psi_s (Y_s - Q_s) - a_s(T) (J - Q); for
 * m = 1 this is the usual clever covariate regression. After each
 * fluctuation beta += eps and alpha is re-smoothed from
 * alpha(T) - sum_r eps_r' a_r(T) with weights Q (1 - Q).
 */
#pragma once

#include "core.hpp"
#include "fit.hpp"
#include "sieve.hpp"
#include "smoothing.hpp"
#include "surveillance.hpp"

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace vewane {

struct SmootherConfig {
    std::string kind = "pspline";  // "pspline" or "kernel"
    std::pair<double, double> domain{0.0, 1.0};
    std::optional<BSplineBasis> basis;  // pspline basis override
    Kernel kernel = Kernel::Epanechnikov;
    std::optional<double> bandwidth;    // kernel; Silverman when absent
};

/// Weighted smooth of every column of `cols` against T with weights w; the
/// ratio form E[x w | T] / E[w | T] follows from using w in the smoother.
inline std::vector<SmoothFn> estimate_r(const std::vector<double>& T, const Eigen::MatrixXd& cols,
                                        const std::vector<double>& w, const SmootherConfig& cfg) {
    bool any = false;
    for (double v : w) any = any || v >= 1e-12;
    if (!any) throw DomainError("degenerate smoothing weights");
    std::vector<SmoothFn> out;
    std::vector<double> y(T.size());
    for (Eigen::Index c = 0; c < cols.cols(); ++c) {
        for (std::size_t i = 0; i < T.size(); ++i) y[i] = cols(static_cast<Eigen::Index>(i), c);
        if (cfg.kind == "kernel") {
            out.push_back(kernel_smooth(T, y, w, cfg.kernel, cfg.bandwidth));
        } else {
            SplineSmoothOptions o;
            o.basis = cfg.basis;
            o.domain = cfg.domain;
            out.push_back(weighted_spline_smooth(T, y, w, 2, o));
        }
    }
    return out;
}

/// Z(T) psi(T - V) - r(T).
inline Eigen::VectorXd clever_covariate(const std::optional<double>& V, double T, const std::vector<SmoothFn>& r,
                                        const VEBasisSpec& basis) {
    if (static_cast<int>(r.size()) != basis.dim()) throw DomainError("need one r component per basis column");
    std::array<double, 8> x{};
    ve_covariates_into(basis, V, T, x.data());
    Eigen::VectorXd H(basis.dim());
    for (int k = 0; k < basis.dim(); ++k) H[k] = x[k] - r[static_cast<std::size_t>(k)](T);
    return H;
}

struct TmleOptions {
    TmleSettings settings;
    SieveOptions sieve;  // initializer
    std::optional<BSplineBasis> smoother_basis;
    std::optional<double> bandwidth;
};

namespace detail {

struct TmleWork {
    const SieveDesign* d;
    Eigen::MatrixXd lp;  // log p_s(T) offsets, n x m
    SmootherConfig r_cfg;
    SplineSmoothOptions alpha_opt;
    double delta;
};

struct TmleEval {
    Eigen::MatrixXd Q;      // truncated class probabilities, n x m
    Eigen::MatrixXd Ahat;   // a_s(T_i) stacked, n x n_beta
    std::vector<Eigen::MatrixXd> U;  // per-class fluctuation directions
    std::size_t truncated = 0;
};

inline Eigen::MatrixXd linear_predictor(const TmleWork& w, const Eigen::VectorXd& beta, const Eigen::VectorXd& alpha) {
    const SieveDesign& d = *w.d;
    Eigen::MatrixXd eta = w.lp;
    int o = 0;
    for (std::size_t s = 0; s < d.bases.size(); ++s) {
        const int ds = d.bases[s].dim();
        eta.col(static_cast<Eigen::Index>(s)) += d.ve.middleCols(o, ds) * beta.segment(o, ds) + alpha;
        o += ds;
    }
    return eta;
}

inline Eigen::MatrixXd probs_from_eta(const Eigen::MatrixXd& eta) {
    Eigen::MatrixXd Q(eta.rows(), eta.cols());
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        double mx = 0.0;
        for (Eigen::Index s = 0; s < eta.cols(); ++s)
            if (std::isfinite(eta(i, s))) mx = std::max(mx, eta(i, s));
        double den = std::exp(-mx);
        for (Eigen::Index s = 0; s < eta.cols(); ++s) {
            Q(i, s) = std::isfinite(eta(i, s)) ? std::exp(eta(i, s) - mx) : 0.0;
            den += Q(i, s);
        }
        Q.row(i) /= den;
    }
    return Q;
}

inline TmleEval evaluate(const TmleWork& w, const Eigen::VectorXd& beta, const Eigen::VectorXd& alpha) {
    const SieveDesign& d = *w.d;
    const Eigen::Index n = d.rows();
    TmleEval ev;
    ev.Q = probs_from_eta(linear_predictor(w, beta, alpha));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double q = ev.Q.row(i).sum();
        const double qc = std::clamp(q, w.delta, 1.0 - w.delta);
        if (qc != q) {
            ++ev.truncated;
            if (q > 0.0) ev.Q.row(i) *= qc / q;
            else ev.Q.row(i).setConstant(qc / static_cast<double>(ev.Q.cols()));
        }
    }
    std::vector<double> wt(static_cast<std::size_t>(n));
    Eigen::MatrixXd cols(n, d.n_beta);
    int o = 0;
    for (std::size_t s = 0; s < d.bases.size(); ++s) {
        const int ds = d.bases[s].dim();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double q = ev.Q.row(i).sum();
            const double share = ev.Q(i, static_cast<Eigen::Index>(s)) / q;
            cols.block(i, o, 1, ds) = d.ve.block(i, o, 1, ds) * share;
        }
        o += ds;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const double q = ev.Q.row(i).sum();
        wt[static_cast<std::size_t>(i)] = q * (1.0 - q);
    }
    const auto r = estimate_r(d.T, cols, wt, w.r_cfg);
    ev.Ahat.resize(n, d.n_beta);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < d.n_beta; ++c) ev.Ahat(i, c) = r[static_cast<std::size_t>(c)](d.T[static_cast<std::size_t>(i)]);
    o = 0;
    for (std::size_t s = 0; s < d.bases.size(); ++s) {
        const int ds = d.bases[s].dim();
        Eigen::MatrixXd U = -ev.Ahat;
        U.middleCols(o, ds) += d.ve.middleCols(o, ds);
        ev.U.push_back(std::move(U));
        o += ds;
    }
    return ev;
}

struct EicParts {
    Eigen::MatrixXd D;      // n x n_beta
    Eigen::MatrixXd I_eff;  // per observation
    Eigen::MatrixXd cov;
    std::size_t truncated = 0;
};

inline EicParts eic(const TmleWork& w, const Eigen::VectorXd& beta, const Eigen::VectorXd& alpha) {
    const SieveDesign& d = *w.d;
    const TmleEval ev = evaluate(w, beta, alpha);
    const Eigen::Index n = d.rows(), p = d.n_beta;
    const int m = static_cast<int>(d.bases.size());
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, p);
    Eigen::MatrixXd I = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd Ubar = Eigen::MatrixXd::Zero(n, p);
    for (int s = 0; s < m; ++s) {
        Eigen::VectorXd res = -ev.Q.col(s);
        for (Eigen::Index i = 0; i < n; ++i)
            if (d.y[static_cast<std::size_t>(i)] == s + 1) res[i] += 1.0;
        S.noalias() += res.asDiagonal() * ev.U[s];
        I.noalias() += ev.U[s].transpose() * ev.Q.col(s).asDiagonal() * ev.U[s];
        Ubar.noalias() += ev.Q.col(s).asDiagonal() * ev.U[s];
    }
    I.noalias() -= Ubar.transpose() * Ubar;
    I /= static_cast<double>(n);
    check_information(I, 1e12);
    EicParts out;
    out.I_eff = I;
    out.D = S * I.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd Dc = out.D.rowwise() - out.D.colwise().mean();
    out.cov = Dc.transpose() * Dc / (static_cast<double>(n) * static_cast<double>(n));
    out.truncated = ev.truncated;
    return out;
}

inline TmleWork make_work(const SieveDesign& d, const TmleSettings& st, const std::optional<BSplineBasis>& basis,
                          std::optional<double> bandwidth) {
    TmleWork w;
    w.d = &d;
    w.lp = d.problem.offset;
    w.delta = st.delta;
    w.r_cfg.kind = st.smoother;
    w.r_cfg.domain = {st.domain_lo, st.domain_hi};
    w.r_cfg.basis = basis;
    w.r_cfg.bandwidth = bandwidth;
    w.alpha_opt.domain = w.r_cfg.domain;
    w.alpha_opt.basis = basis;
    return w;
}

inline Eigen::VectorXd eval_rows(const SmoothFn& f, const std::vector<double>& T) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(T.size()));
    for (std::size_t i = 0; i < T.size(); ++i) v[static_cast<Eigen::Index>(i)] = f(T[i]);
    return v;
}

/// Runs the targeting loop from an initial (beta, alpha) on design d.
inline FitResult run_tmle(const SieveDesign& d, const FitResult& init, const TmleOptions& opt, Method method) {
    TmleSettings st = opt.settings;
    TmleWork w = make_work(d, st, opt.smoother_basis, opt.bandwidth);
    Eigen::VectorXd beta = init.beta;
    SmoothFn alpha_fn = *init.nuisance.alpha;
    Eigen::VectorXd alpha = eval_rows(alpha_fn, d.T);
    if (init.nuisance.has_intercept) alpha.array() += init.nuisance.intercept;
    FitResult fit;
    fit.method = method;
    fit.bases = d.bases;
    fit.strains = d.strains;
    double eps_norm = std::numeric_limits<double>::infinity();
    int it = 0;
    const Eigen::Index n = d.rows();
    for (; it < st.max_iter; ++it) {
        const TmleEval ev = evaluate(w, beta, alpha);
        MultinomialProblem fl;
        fl.m = static_cast<int>(d.bases.size());
        fl.U = ev.U;
        fl.y = d.y;
        fl.offset.resize(n, fl.m);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double q0 = 1.0 - ev.Q.row(i).sum();
            for (int s = 0; s < fl.m; ++s)
                fl.offset(i, s) = ev.Q(i, s) > 0.0 ? std::log(ev.Q(i, s) / q0) : -std::numeric_limits<double>::infinity();
        }
        NewtonOptions no;
        no.score_tol = 1e-12;
        no.ll_tol = 1e-13;
        no.eta_limit = std::numeric_limits<double>::infinity();
        const NewtonResult nr = newton_maximize(fl, Eigen::VectorXd::Zero(d.n_beta), no);
        const Eigen::VectorXd eps = nr.theta;
        beta += eps;
        const Eigen::VectorXd target = alpha - ev.Ahat * eps;
        const Eigen::MatrixXd Qn = probs_from_eta(linear_predictor(w, beta, target));
        std::vector<double> wt(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            const double q = Qn.row(i).sum();
            wt[static_cast<std::size_t>(i)] = q * (1.0 - q);
        }
        alpha_fn = weighted_spline_smooth(d.T, std::vector<double>(target.data(), target.data() + n), wt, 2, w.alpha_opt);
        alpha = eval_rows(alpha_fn, d.T);
        eps_norm = eps.cwiseAbs().maxCoeff();
        if (eps_norm < st.tol) {
            ++it;
            break;
        }
    }
    const EicParts parts = eic(w, beta, alpha);
    fit.beta = beta;
    fit.beta_cov = 0.5 * (parts.cov + parts.cov.transpose());
    fit.nuisance.alpha = alpha_fn;
    fit.diag.iterations = it;
    fit.diag.final_update_norm = eps_norm;
    fit.diag.converged = eps_norm < st.tol;
    fit.diag.n_rows = static_cast<std::size_t>(n);
    fit.diag.n_dropped = d.n_dropped;
    fit.diag.n_truncated = parts.truncated;
    fit.diag.loglik = init.diag.loglik;
    fit.diag.notes.push_back("I_eff = mean of Q(1-Q)-weighted outer products of the clever covariate");
    fit.diag.notes.push_back(st.smoother == "kernel"
                                 ? "nuisance smoother: Nadaraya-Watson kernel (Silverman bandwidth)"
                                 : "nuisance smoother: penalized cubic B-spline with GCV");
    fit.diag.notes.push_back("alpha re-smoothing: penalized cubic B-spline with GCV, weights Q(1-Q)");
    fit.tmle = st;
    return fit;
}

inline TmleSettings with_domain(TmleSettings st, const Dataset& ds, const SieveOptions& sv) {
    const auto b = sv.boundary.value_or(std::make_pair(0.0, ds.horizon));
    st.domain_lo = b.first;
    st.domain_hi = b.second;
    return st;
}

}  // namespace detail

inline FitResult fit_tmle_binary(const Dataset& ds, const VEBasisSpec& basis, const TmleOptions& opt = {}) {
    if (opt.sieve.offset || opt.sieve.offset_only) throw ConfigError("TMLE does not take a fixed offset");
    std::size_t events = ds.records.size() - ds.count(Cause::Censored);
    if (events < 50) throw DataError("TMLE needs at least 50 infections");
    const FitResult init = fit_sieve_binary(ds, basis, opt.sieve);
    const SieveDesign d = build_design(ds, {basis}, AlphaSpec{});
    TmleOptions o = opt;
    o.settings = detail::with_domain(opt.settings, ds, opt.sieve);
    return detail::run_tmle(d, init, o, Method::Tmle);
}

inline FitResult fit_tmle_multinomial(const Dataset& ds, const std::vector<VEBasisSpec>& bases,
                                      const VariantMix& mix, const TmleOptions& opt = {}) {
    if (opt.sieve.offset || opt.sieve.offset_only) throw ConfigError("TMLE does not take a fixed offset");
    std::size_t events = ds.records.size() - ds.count(Cause::Censored);
    if (events < 50) throw DataError("TMLE needs at least 50 infections");
    const FitResult init_full = fit_sieve_multinomial(ds, bases, mix, opt.sieve);
    std::vector<int> keep;
    std::vector<VEBasisSpec> keep_bases;
    for (std::size_t s = 0; s < mix.m(); ++s) {
        if (init_full.diag.strain_status[s] == "ok") {
            keep.push_back(mix.labels[s]);
            keep_bases.push_back(bases[s]);
        }
    }
    const VariantMix sub = mix.subset(keep);
    const SieveDesign d = build_design(ds, keep_bases, AlphaSpec{}, &sub);
    FitResult init = init_full;
    init.bases = keep_bases;
    int dim = 0;
    for (const auto& b : keep_bases) dim += b.dim();
    init.beta.resize(dim);
    {
        int o = 0;
        for (std::size_t s = 0; s < mix.m(); ++s) {
            if (init_full.diag.strain_status[s] != "ok") continue;
            const int ds_ = bases[s].dim();
            init.beta.segment(o, ds_) = init_full.beta.segment(init_full.block_offset(s), ds_);
            o += ds_;
        }
    }
    TmleOptions o = opt;
    o.settings = detail::with_domain(opt.settings, ds, opt.sieve);
    FitResult part = detail::run_tmle(d, init, o, Method::TmleMultinomial);

    FitResult fit = part;
    fit.bases = bases;
    fit.strains = mix.labels;
    fit.diag.strain_status = init_full.diag.strain_status;
    int full = 0;
    for (const auto& b : bases) full += b.dim();
    fit.beta = Eigen::VectorXd::Constant(full, std::numeric_limits<double>::quiet_NaN());
    fit.beta_cov = Eigen::MatrixXd::Constant(full, full, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> src(mix.m(), -1);
    {
        int off = 0;
        for (std::size_t s = 0; s < mix.m(); ++s) {
            if (init_full.diag.strain_status[s] != "ok") continue;
            src[s] = off;
            off += bases[s].dim();
        }
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

/// Per-observation efficient influence curve of a TMLE fit, recomputed from
/// the fitted beta and alpha. Rows follow the infected records in dataset
/// order; column means are ~0 after targeting and D'D / n^2 is beta_cov.
inline Eigen::MatrixXd eic_values(const FitResult& fit, const Dataset& ds, const VariantMix* mix = nullptr,
                                  const std::optional<BSplineBasis>& smoother_basis = std::nullopt,
                                  std::optional<double> bandwidth = std::nullopt) {
    if ((fit.method != Method::Tmle && fit.method != Method::TmleMultinomial) || !fit.tmle)
        throw ConfigError("EIC values need a TMLE fit");
    std::vector<VEBasisSpec> bases;
    std::vector<int> keep;
    Eigen::VectorXd beta;
    if (fit.method == Method::Tmle) {
        bases = fit.bases;
        beta = fit.beta;
    } else {
        if (!mix) throw ConfigError("multinomial EIC needs the mixture");
        std::vector<double> b;
        for (std::size_t s = 0; s < fit.bases.size(); ++s) {
            if (!fit.diag.strain_status.empty() && fit.diag.strain_status[s] != "ok") continue;
            keep.push_back(fit.strains[s]);
            bases.push_back(fit.bases[s]);
            for (int k = 0; k < fit.bases[s].dim(); ++k) b.push_back(fit.beta[fit.block_offset(s) + k]);
        }
        beta = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    }
    std::optional<VariantMix> sub;
    if (mix) sub = mix->subset(keep);
    const SieveDesign d = build_design(ds, bases, AlphaSpec{}, sub ? &*sub : nullptr);
    const detail::TmleWork w = detail::make_work(d, *fit.tmle, smoother_basis, bandwidth);
    const Eigen::VectorXd alpha = detail::eval_rows(*fit.nuisance.alpha, d.T);
    return detail::eic(w, beta, alpha).D;
}

}  // namespace vewane
