/**
 * Cause-specific Cox comparator for preventable infections with the
 * time-varying covariate x_i(t) = Z_i(t) psi(t - V_i). Irrelevant infections
 * and administrative censoring both censor; ties use Breslow.
 *
 * Risk-set sums are computed from moments of exp(-g V) V^k (k = 0, 1, 2) over
 * {V <= threshold, T >= t}, accumulated in Fenwick trees keyed by the rank of
 * T, which makes one likelihood evaluation O(n log n).
 */
#pragma once

#include "core.hpp"
#include "fit.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

namespace vewane {

struct CoxPrepared {
    VEBasisSpec basis;
    std::vector<double> T_sorted;      // all subjects, ascending
    std::vector<double> vax_V;         // vaccinated subjects sorted by V
    std::vector<std::size_t> vax_rank; // their T rank in T_sorted (first index with equal T)
    std::vector<double> event_times;   // distinct preventable event times
    std::vector<std::vector<std::pair<std::optional<double>, double>>> failures;  // (V, T) per event time
    std::size_t n = 0;
};

inline CoxPrepared cox_prepare(const Dataset& ds, const VEBasisSpec& basis) {
    CoxPrepared cp;
    cp.basis = basis;
    cp.n = ds.records.size();
    for (const auto& r : ds.records) cp.T_sorted.push_back(r.event_time);
    std::sort(cp.T_sorted.begin(), cp.T_sorted.end());
    std::vector<std::pair<double, double>> vt;
    std::vector<std::pair<double, std::optional<double>>> ev;
    for (const auto& r : ds.records) {
        if (r.vax_time) vt.emplace_back(*r.vax_time, r.event_time);
        if (r.cause == Cause::Preventable) ev.emplace_back(r.event_time, r.vax_time);
    }
    if (ev.empty()) throw DataError("no preventable events");
    std::sort(vt.begin(), vt.end());
    for (const auto& [v, t] : vt) {
        cp.vax_V.push_back(v);
        cp.vax_rank.push_back(static_cast<std::size_t>(
            std::lower_bound(cp.T_sorted.begin(), cp.T_sorted.end(), t) - cp.T_sorted.begin()));
    }
    std::sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [t, v] : ev) {
        if (cp.event_times.empty() || t > cp.event_times.back()) {
            cp.event_times.push_back(t);
            cp.failures.emplace_back();
        }
        cp.failures.back().emplace_back(v, t);
    }
    return cp;
}

namespace detail {

/// Fenwick tree over T ranks holding (count, sum c, sum cV, sum cV^2).
class MomentTree {
public:
    explicit MomentTree(std::size_t n) : t_(n + 1, {0, 0, 0, 0}) {}
    void add(std::size_t rank, double c, double v) {
        const std::array<double, 4> x{1.0, c, c * v, c * v * v};
        for (std::size_t i = rank + 1; i < t_.size(); i += i & (~i + 1))
            for (int k = 0; k < 4; ++k) t_[i][k] += x[k];
    }
    /// Sums over ranks < r.
    std::array<double, 4> prefix(std::size_t r) const {
        std::array<double, 4> s{0, 0, 0, 0};
        for (std::size_t i = r; i > 0; i -= i & (~i + 1))
            for (int k = 0; k < 4; ++k) s[k] += t_[i][k];
        return s;
    }
    std::array<double, 4> total() const { return prefix(t_.size() - 1); }

private:
    std::vector<std::array<double, 4>> t_;
};

}  // namespace detail

/// Log partial likelihood, score and Hessian at beta.
inline Derivs cox_partial_loglik(const CoxPrepared& cp, const Eigen::VectorXd& beta) {
    const VEBasisSpec& b = cp.basis;
    const int d = b.dim();
    if (beta.size() != d) throw DomainError("beta dimension does not match basis");
    Derivs out;
    out.grad = Eigen::VectorXd::Zero(d);
    out.hess = Eigen::MatrixXd::Zero(d, d);

    // g: exponent slope in V for the moment weights exp(-g V).
    const double g = b.kind == BasisKind::Linear ? beta[1] : b.kind == BasisKind::Ramp ? beta[2] : 0.0;
    const double shift = b.kind == BasisKind::Ramp ? b.ramp_length : 0.0;
    const std::size_t nv = cp.vax_V.size();
    std::vector<double> c(nv);
    for (std::size_t j = 0; j < nv; ++j) c[j] = std::exp(-g * cp.vax_V[j]);

    detail::MomentTree all(cp.n), post(cp.n);
    std::size_t p_all = 0, p_post = 0;
    const bool ramp = b.kind == BasisKind::Ramp;
    std::array<double, 8> psi{};

    for (std::size_t k = 0; k < cp.event_times.size(); ++k) {
        const double t = cp.event_times[k];
        while (p_all < nv && cp.vax_V[p_all] <= t) {
            all.add(cp.vax_rank[p_all], c[p_all], cp.vax_V[p_all]);
            ++p_all;
        }
        if (ramp) {
            while (p_post < nv && cp.vax_V[p_post] <= t - shift) {
                post.add(cp.vax_rank[p_post], c[p_post], cp.vax_V[p_post]);
                ++p_post;
            }
        }
        const std::size_t r0 = static_cast<std::size_t>(
            std::lower_bound(cp.T_sorted.begin(), cp.T_sorted.end(), t) - cp.T_sorted.begin());
        const double n_risk = static_cast<double>(cp.n - r0);
        auto suffix = [r0](const detail::MomentTree& tr) {
            auto a = tr.total(), p = tr.prefix(r0);
            for (int q = 0; q < 4; ++q) a[q] -= p[q];
            return a;
        };
        const auto ma = suffix(all);
        double S0 = 0.0;
        Eigen::VectorXd S1 = Eigen::VectorXd::Zero(d);
        Eigen::MatrixXd S2 = Eigen::MatrixXd::Zero(d, d);
        const double n_unv = n_risk - ma[0];
        switch (b.kind) {
        case BasisKind::Constant: {
            const double e = std::exp(beta[0]) * ma[0];
            S0 = n_unv + e;
            S1[0] = e;
            S2(0, 0) = e;
            break;
        }
        case BasisKind::Linear: {
            const double E = std::exp(beta[0] + beta[1] * t);
            const double A = ma[1], B = ma[2], C = ma[3];
            S0 = n_unv + E * A;
            S1 << E * A, E * (t * A - B);
            S2 << E * A, E * (t * A - B), E * (t * A - B), E * (t * t * A - 2 * t * B + C);
            break;
        }
        case BasisKind::Ramp: {
            const auto mp = suffix(post);
            const double n_pre = ma[0] - mp[0];
            const double u = t - shift;
            const double e0 = std::exp(beta[0]) * n_pre;
            const double E = std::exp(beta[1] + beta[2] * u);
            const double A = mp[1], B = mp[2], C = mp[3];
            S0 = n_unv + e0 + E * A;
            S1 << e0, E * A, E * (u * A - B);
            S2(0, 0) = e0;
            S2(1, 1) = E * A;
            S2(1, 2) = S2(2, 1) = E * (u * A - B);
            S2(2, 2) = E * (u * u * A - 2 * u * B + C);
            break;
        }
        }
        const double dk = static_cast<double>(cp.failures[k].size());
        for (const auto& [v, tt] : cp.failures[k]) {
            ve_covariates_into(b, v, tt, psi.data());
            for (int q = 0; q < d; ++q) {
                out.loglik += beta[q] * psi[q];
                out.grad[q] += psi[q];
            }
        }
        out.loglik -= dk * std::log(S0);
        out.grad -= dk * S1 / S0;
        out.hess -= dk * (S2 / S0 - S1 * S1.transpose() / (S0 * S0));
    }
    return out;
}

inline Derivs cox_partial_loglik(const Dataset& ds, const VEBasisSpec& basis, const Eigen::VectorXd& beta) {
    return cox_partial_loglik(cox_prepare(ds, basis), beta);
}

inline FitResult fit_cox_tv(const Dataset& ds, const VEBasisSpec& basis, const NewtonOptions& opt = {}) {
    const CoxPrepared cp = cox_prepare(ds, basis);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(basis.dim());
    Derivs dv = cox_partial_loglik(cp, beta);
    FitResult fit;
    fit.method = Method::Cox;
    fit.bases = {basis};
    fit.diag.loglik_trace.push_back(dv.loglik);
    bool converged = false;
    int it = 0;
    double last = 0.0;
    for (; it < opt.max_iter; ++it) {
        if (dv.grad.cwiseAbs().maxCoeff() < opt.score_tol) {
            converged = true;
            break;
        }
        const Eigen::MatrixXd info = -dv.hess;
        check_information(info, opt.cond_limit);
        const Eigen::VectorXd step = info.ldlt().solve(dv.grad);
        double h = 1.0;
        Derivs nd;
        bool accepted = false;
        for (int k = 0; k < 60; ++k) {
            nd = cox_partial_loglik(cp, beta + h * step);
            // A full Newton step is taken even if rounding lowers the log-likelihood.
            if (std::isfinite(nd.loglik) &&
                (nd.loglik >= dv.loglik || (h == 1.0 && nd.loglik >= dv.loglik - 1e-12 * std::abs(dv.loglik)))) {
                accepted = true;
                break;
            }
            h *= 0.5;
        }
        if (!accepted) {
            converged = true;
            break;
        }
        beta += h * step;
        last = (h * step).cwiseAbs().maxCoeff();
        const double gain = nd.loglik - dv.loglik;
        dv = std::move(nd);
        fit.diag.loglik_trace.push_back(dv.loglik);
        if (gain < opt.ll_tol) {
            converged = true;
            ++it;
            break;
        }
    }
    if (!converged) throw NotConverged("Cox Newton iterations exhausted");
    const Eigen::MatrixXd info = -dv.hess;
    check_information(info, opt.cond_limit);
    fit.beta = beta;
    fit.beta_cov = info.ldlt().solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    fit.beta_cov = 0.5 * (fit.beta_cov + fit.beta_cov.transpose()).eval();
    fit.diag.iterations = it;
    fit.diag.final_update_norm = last;
    fit.diag.loglik = dv.loglik;
    fit.diag.converged = true;
    fit.diag.n_rows = cp.n;
    return fit;
}

}  // namespace vewane
