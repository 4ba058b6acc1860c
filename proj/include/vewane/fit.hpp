/**
 * FitResult and the Newton engine shared by the logistic, multinomial and
 * fluctuation fits.
 *
 * A MultinomialProblem has classes 0..m with class 0 the pivot. Row i and
 * class s >= 1 carry a covariate vector U_s(i, .) and an offset; the class-s
 * linear predictor is offset(i, s) + U_s(i, .) theta. An offset of -inf marks
 * a class that is impossible for that row. The binary logistic model is the
 * case m = 1.
 */
#pragma once

#include "core.hpp"
#include "smoothing.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace vewane {

enum class Method { Cox, Sieve, Tmle, SieveMultinomial, TmleMultinomial };

inline const char* method_name(Method m) {
    switch (m) {
    case Method::Cox: return "cox";
    case Method::Sieve: return "sieve";
    case Method::Tmle: return "tmle";
    case Method::SieveMultinomial: return "sieve-multinomial";
    case Method::TmleMultinomial: return "tmle-multinomial";
    }
    return "?";
}

/// Representation of alpha(t): optional spline part, optional free scalar
/// intercept and optional fixed offset, summed.
struct Nuisance {
    std::optional<SmoothFn> alpha;   // fitted part (spline or smoothed function)
    double intercept = 0.0;          // free intercept when has_intercept
    bool has_intercept = false;
    std::optional<SmoothFn> offset;  // fixed, not estimated

    double operator()(double t) const {
        double a = has_intercept ? intercept : 0.0;
        if (alpha) a += (*alpha)(t);
        if (offset) a += (*offset)(t);
        return a;
    }
};

struct Diagnostics {
    int iterations = 0;
    double final_update_norm = 0.0;
    double loglik = 0.0;
    bool converged = false;
    std::size_t n_rows = 0;
    std::size_t n_dropped = 0;
    std::size_t n_truncated = 0;
    std::vector<double> loglik_trace;
    std::vector<std::string> strain_status;  // per strain: "ok" or "NonIdentifiable"
    std::vector<std::string> notes;
};

struct TmleSettings {
    std::string smoother = "pspline";  // "pspline" or "kernel" for r / a_s
    double delta = 1e-6;
    double tol = 1e-6;
    int max_iter = 50;
    double domain_lo = 0.0;  // smoother domain
    double domain_hi = 1.0;
};

struct FitResult {
    Method method = Method::Sieve;
    Eigen::VectorXd beta;
    Eigen::MatrixXd beta_cov;
    std::vector<VEBasisSpec> bases;  // one per strain (one for binary fits)
    std::vector<int> strains;        // strain labels for multinomial fits
    Nuisance nuisance;
    Diagnostics diag;
    std::optional<TmleSettings> tmle;

    int block_offset(std::size_t s) const {
        int o = 0;
        for (std::size_t k = 0; k < s; ++k) o += bases[k].dim();
        return o;
    }
};

// ---------------------------------------------------------------------------
// Multinomial engine

struct MultinomialProblem {
    int m = 1;                       // non-pivot classes
    std::vector<Eigen::MatrixXd> U;  // m matrices, n x p
    Eigen::MatrixXd offset;          // n x m
    std::vector<int> y;              // 0..m

    Eigen::Index n() const { return offset.rows(); }
    Eigen::Index p() const { return U.empty() ? 0 : U[0].cols(); }
};

struct Derivs {
    double loglik = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
};

/// Class probabilities Q(i, s) for s = 1..m at parameter theta.
inline Eigen::MatrixXd class_probs(const MultinomialProblem& pr, const Eigen::VectorXd& theta,
                                   Eigen::VectorXd* max_abs_eta = nullptr) {
    const Eigen::Index n = pr.n();
    Eigen::MatrixXd eta = pr.offset;
    for (int s = 0; s < pr.m; ++s) {
        if (pr.p() > 0) eta.col(s) += pr.U[s] * theta;
    }
    Eigen::MatrixXd Q(n, pr.m);
    double mx_abs = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = 0.0;
        for (int s = 0; s < pr.m; ++s) {
            if (std::isfinite(eta(i, s))) {
                mx = std::max(mx, eta(i, s));
                mx_abs = std::max(mx_abs, std::abs(eta(i, s)));
            }
        }
        double den = std::exp(-mx);
        for (int s = 0; s < pr.m; ++s) {
            Q(i, s) = std::isfinite(eta(i, s)) ? std::exp(eta(i, s) - mx) : 0.0;
            den += Q(i, s);
        }
        Q.row(i) /= den;
    }
    if (max_abs_eta) {
        max_abs_eta->resize(1);
        (*max_abs_eta)[0] = mx_abs;
    }
    return Q;
}

/// Log-likelihood, score and Hessian of the multinomial logit.
inline Derivs multinomial_derivs(const MultinomialProblem& pr, const Eigen::VectorXd& theta,
                                 bool want_hess = true) {
    const Eigen::Index n = pr.n(), p = pr.p();
    if (theta.size() != p) throw DomainError("parameter dimension does not match design");
    Eigen::MatrixXd eta = pr.offset;
    for (int s = 0; s < pr.m; ++s)
        if (p > 0) eta.col(s) += pr.U[s] * theta;
    Derivs d;
    d.grad = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd Q(n, pr.m);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = 0.0;
        for (int s = 0; s < pr.m; ++s)
            if (std::isfinite(eta(i, s))) mx = std::max(mx, eta(i, s));
        double den = std::exp(-mx);
        for (int s = 0; s < pr.m; ++s) {
            Q(i, s) = std::isfinite(eta(i, s)) ? std::exp(eta(i, s) - mx) : 0.0;
            den += Q(i, s);
        }
        Q.row(i) /= den;
        ll -= mx + std::log(den);
        if (pr.y[i] > 0) ll += eta(i, pr.y[i] - 1);
    }
    d.loglik = ll;
    Eigen::MatrixXd R = -Q;  // residual Y_s - Q_s
    for (Eigen::Index i = 0; i < n; ++i)
        if (pr.y[i] > 0) R(i, pr.y[i] - 1) += 1.0;
    for (int s = 0; s < pr.m; ++s)
        if (p > 0) d.grad += pr.U[s].transpose() * R.col(s);
    if (want_hess) {
        d.hess = Eigen::MatrixXd::Zero(p, p);
        if (p > 0) {
            Eigen::MatrixXd Ubar = Eigen::MatrixXd::Zero(n, p);
            for (int s = 0; s < pr.m; ++s) {
                d.hess.noalias() -= pr.U[s].transpose() * Q.col(s).asDiagonal() * pr.U[s];
                Ubar.noalias() += Q.col(s).asDiagonal() * pr.U[s];
            }
            d.hess.noalias() += Ubar.transpose() * Ubar;
        }
    }
    return d;
}

struct NewtonOptions {
    int max_iter = 100;
    double score_tol = 1e-8;
    double ll_tol = 1e-10;
    double eta_limit = 30.0;
    double cond_limit = 1e12;
};

struct NewtonResult {
    Eigen::VectorXd theta;
    Eigen::MatrixXd info;  // observed information at theta
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    double last_step = 0.0;
    std::vector<double> trace;
};

inline void check_information(const Eigen::MatrixXd& info, double cond_limit) {
    if (info.rows() == 0) return;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > cond_limit)
        throw NonIdentifiable("information matrix is singular or ill-conditioned");
}

/// Newton-Raphson with step halving. Accepted iterates never decrease the
/// log-likelihood by more than rounding (1e-12 relative). Throws NonIdentifiable on separation or singular
/// information and NotConverged when max_iter is exhausted.
inline NewtonResult newton_maximize(const MultinomialProblem& pr, Eigen::VectorXd theta,
                                    const NewtonOptions& opt = {}) {
    NewtonResult res;
    Derivs d = multinomial_derivs(pr, theta);
    res.trace.push_back(d.loglik);
    for (int it = 0; it < opt.max_iter; ++it) {
        const double score = d.grad.size() ? d.grad.cwiseAbs().maxCoeff() : 0.0;
        if (score < opt.score_tol) {
            res.converged = true;
            break;
        }
        const Eigen::MatrixXd info = -d.hess;
        check_information(info, opt.cond_limit);
        Eigen::VectorXd step = info.ldlt().solve(d.grad);
        double t = 1.0;
        Derivs nd;
        bool accepted = false;
        for (int h = 0; h < 60; ++h) {
            nd = multinomial_derivs(pr, theta + t * step);
            // A full Newton step is taken even if rounding lowers the log-likelihood.
            if (std::isfinite(nd.loglik) &&
                (nd.loglik >= d.loglik || (t == 1.0 && nd.loglik >= d.loglik - 1e-12 * std::abs(d.loglik)))) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        res.iterations = it + 1;
        if (!accepted) {
            // No ascent possible at working precision: we are at the optimum.
            res.converged = true;
            break;
        }
        theta += t * step;
        res.last_step = (t * step).cwiseAbs().maxCoeff();
        const double gain = nd.loglik - d.loglik;
        d = std::move(nd);
        res.trace.push_back(d.loglik);
        if (gain < opt.ll_tol) {
            res.converged = true;
            break;
        }
    }
    res.theta = theta;
    res.loglik = d.loglik;
    res.info = -d.hess;
    if (!res.converged) throw NotConverged("Newton iterations exhausted");
    Eigen::VectorXd mx;
    class_probs(pr, theta, &mx);
    if (mx.size() && mx[0] > opt.eta_limit) throw NonIdentifiable("separation: |linear predictor| > 30");
    check_information(res.info, opt.cond_limit);
    return res;
}

}  // namespace vewane
