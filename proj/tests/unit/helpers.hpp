#pragma once

#include <vewane/vewane.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace vt {

using vewane::Cause;
using vewane::Dataset;
using vewane::EventRecord;

inline EventRecord rec(std::string id, std::optional<double> v, double t, Cause c, std::optional<int> s = {}) {
    EventRecord r;
    r.id = std::move(id);
    r.vax_time = v;
    r.event_time = t;
    r.cause = c;
    r.strain = s;
    return r;
}

/// Random cohort on [0, 1] with both causes present; with m > 1 strains the
/// preventable records carry labels 1..m.
inline Dataset random_dataset(std::mt19937_64& rng, std::size_t n, int m = 1, double p_censor = 0.2) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Dataset ds;
    ds.horizon = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        EventRecord r;
        r.id = std::to_string(i);
        if (u(rng) < 0.7) r.vax_time = u(rng) * 0.9;
        r.event_time = 0.01 + 0.98 * u(rng);
        const double c = u(rng);
        if (c < p_censor) {
            r.cause = Cause::Censored;
        } else if (c < p_censor + (1 - p_censor) / 2) {
            r.cause = Cause::Irrelevant;
        } else {
            r.cause = Cause::Preventable;
            if (m > 1) r.strain = 1 + static_cast<int>(u(rng) * m) % m;
        }
        ds.records.push_back(r);
    }
    ds.records[0].cause = Cause::Irrelevant;
    ds.records[0].strain.reset();
    ds.records[1].cause = Cause::Preventable;
    if (m > 1) ds.records[1].strain = 1;
    if (m > 1) {
        ds.records[2].cause = Cause::Preventable;
        ds.records[2].strain = 2;
    }
    return ds;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

/// Max relative error of an analytic gradient and Hessian against central
/// differences of the value (for the gradient) and of the gradient (for the
/// Hessian).
inline double fd_max_rel_error(const std::function<vewane::Derivs(const Eigen::VectorXd&)>& f,
                               const Eigen::VectorXd& x, double h = 1e-6) {
    const vewane::Derivs d = f(x);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Eigen::VectorXd xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        const vewane::Derivs a = f(xp), b = f(xm);
        worst = std::max(worst, rel_err(d.grad[k], (a.loglik - b.loglik) / (2 * h)));
        for (Eigen::Index j = 0; j < x.size(); ++j)
            worst = std::max(worst, rel_err(d.hess(j, k), (a.grad[j] - b.grad[j]) / (2 * h)));
    }
    return worst;
}

/// Scenario helpers shared by the simulation-based tests.
inline vewane::ScenarioSpec preset(double lambda01, double sigma, bool linear, std::uint64_t seed,
                                   std::size_t n = 10000) {
    auto sc = vewane::base_scenario(lambda01, sigma, linear);
    sc.seed = seed;
    sc.n = n;
    return sc;
}

/// Fraction of grid points whose Wald interval covers the truth.
inline double grid_coverage(const vewane::FitResult& fit, const std::function<double(double)>& truth,
                            const std::vector<double>& grid) {
    const auto cv = vewane::ve_curve(fit, grid);
    const double z = vewane::normal_quantile(0.975);
    double c = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) c += std::abs(cv.f_hat[g] - truth(grid[g])) <= z * cv.f_se[g];
    return c / grid.size();
}

/// Exact isotonic projection: the optimum is a partition into contiguous
/// blocks at their weighted means, so enumerate all partitions.
inline std::vector<double> brute_isotonic(const std::vector<double>& y, const std::vector<double>& w) {
    const std::size_t n = y.size();
    double best = INFINITY;
    std::vector<double> out;
    for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
        std::vector<double> z(n);
        std::size_t start = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == n - 1 || (mask >> i & 1u)) {
                double sw = 0, sy = 0;
                for (std::size_t j = start; j <= i; ++j) sw += w[j], sy += w[j] * y[j];
                for (std::size_t j = start; j <= i; ++j) z[j] = sy / sw;
                start = i + 1;
            }
        }
        bool mono = true;
        for (std::size_t i = 1; i < n; ++i) mono = mono && z[i] >= z[i - 1] - 1e-15;
        if (!mono) continue;
        double obj = 0;
        for (std::size_t i = 0; i < n; ++i) obj += w[i] * (y[i] - z[i]) * (y[i] - z[i]);
        if (obj < best) best = obj, out = z;
    }
    return out;
}

/// Linear predictor eta_i = Z psi' beta + alpha(T_i) of a binary sieve
/// design, with the spline evaluated independently of the design matrix.
inline Eigen::VectorXd oracle_eta(const vewane::SieveDesign& d, const Eigen::VectorXd& beta,
                                  const Eigen::VectorXd& acoef) {
    Eigen::VectorXd eta(d.rows());
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(beta.size());
        if (d.V[i] && *d.V[i] <= d.T[i]) x = vewane::eval_ve_basis(d.bases[0], d.T[i] - *d.V[i]);
        eta[i] = x.dot(beta) + vewane::bspline_eval(*d.alpha.spline, d.T[i]).dot(acoef);
    }
    return eta;
}

/// Individually-stratified partial likelihood: each infected participant is
/// a stratum holding its two cause-specific hazards; frailties are arbitrary
/// positive multipliers and must cancel.
inline double ispl_product(const vewane::SieveDesign& d, const Eigen::VectorXd& beta, const Eigen::VectorXd& acoef,
                           const std::vector<double>& frailty) {
    const Eigen::VectorXd eta = oracle_eta(d, beta, acoef);
    double prod = 1.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        const double h0 = frailty[i], h1 = frailty[i] * std::exp(eta[i]);
        prod *= (d.y[i] == 1 ? h1 : h0) / (h0 + h1);
    }
    return prod;
}

/// Full likelihood with one scalar baseline-hazard nuisance per participant,
/// each profiled by a one-dimensional Newton search on log h:
///   l_i(h) = log h + J eta - h - h exp(eta).
inline double full_profile_loglik(const vewane::SieveDesign& d, const Eigen::VectorXd& theta, int nb) {
    const Eigen::VectorXd eta = oracle_eta(d, theta.head(nb), theta.tail(theta.size() - nb));
    double ll = 0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        const double c = 1.0 + std::exp(eta[i]);
        double u = 0.0;
        for (int k = 0; k < 100; ++k) {
            const double g = 1.0 - std::exp(u) * c;
            const double step = g / (std::exp(u) * c);
            u += step;
            if (std::abs(step) < 1e-15) break;
        }
        const double h = std::exp(u);
        ll += std::log(h) + d.y[i] * eta[i] - h * c;
    }
    return ll;
}

/// Maximizes full_profile_loglik with finite-difference Newton steps.
inline Eigen::VectorXd full_profile_argmax(const vewane::SieveDesign& d, Eigen::VectorXd theta, int nb) {
    const Eigen::Index p = theta.size();
    auto f = [&](const Eigen::VectorXd& x) { return full_profile_loglik(d, x, nb); };
    const double h = 1e-4;
    for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd g(p);
        Eigen::MatrixXd H(p, p);
        const double f0 = f(theta);
        for (Eigen::Index a = 0; a < p; ++a) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
            e[a] = h;
            g[a] = (f(theta + e) - f(theta - e)) / (2 * h);
            H(a, a) = (f(theta + e) - 2 * f0 + f(theta - e)) / (h * h);
            for (Eigen::Index b = 0; b < a; ++b) {
                Eigen::VectorXd e2 = Eigen::VectorXd::Zero(p);
                e2[b] = h;
                H(a, b) = H(b, a) =
                    (f(theta + e + e2) - f(theta + e - e2) - f(theta - e + e2) + f(theta - e - e2)) / (4 * h * h);
            }
        }
        Eigen::VectorXd step = -H.ldlt().solve(g);
        double t = 1.0;
        while (t > 1e-8 && !(f(theta + t * step) >= f0)) t *= 0.5;
        theta += t * step;
        if ((t * step).cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return theta;
}

}  // namespace vt
