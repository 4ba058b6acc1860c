/**
 * VE curves from fits: delta-method bands, isotonic (nondecreasing f)
 * versions by PAVA on the estimate and on each band limit, Monte-Carlo
 * projection bands, and a lossless CSV form.
 */
#pragma once

#include "core.hpp"
#include "fit.hpp"
#include "smoothing.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace vewane {

/// Standard normal quantile (Acklam's rational approximation, one Halley step).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01, -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    double x;
    if (p < 0.02425) {
        const double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p > 1 - 0.02425) {
        const double q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

struct VECurve {
    std::vector<double> tau, f_hat, f_se, ve, ve_lo, ve_hi;
    bool has_monotone = false;
    std::vector<double> f_mono, ve_mono, ve_mono_lo, ve_mono_hi;
    std::string method;
    VEBasisSpec basis;
    double level = 0.95;
    std::optional<int> strain;

    std::size_t size() const { return tau.size(); }
};

/// Grid "lo:hi:count" with count evenly spaced points including both ends.
inline std::vector<double> parse_grid(const std::string& spec) {
    double lo, hi;
    long count;
    char c1, c2;
    std::istringstream is(spec);
    if (!(is >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':' || !(is >> std::ws).eof())
        throw ConfigError("grid must look like lo:hi:count");
    if (count < 1 || !(hi >= lo) || lo < 0.0) throw ConfigError("grid needs count >= 1 and 0 <= lo <= hi");
    std::vector<double> g;
    for (long k = 0; k < count; ++k) g.push_back(count == 1 ? lo : lo + (hi - lo) * k / (count - 1.0));
    return g;
}

/// 101 points on [0, upper]; Ramp grids also contain the breakpoint.
inline std::vector<double> default_tau_grid(double upper, const VEBasisSpec& basis) {
    std::vector<double> g;
    for (int k = 0; k <= 100; ++k) g.push_back(upper * k / 100.0);
    if (basis.kind == BasisKind::Ramp && basis.ramp_length < upper) {
        g.push_back(basis.ramp_length);
        std::sort(g.begin(), g.end());
        g.erase(std::unique(g.begin(), g.end()), g.end());
    }
    return g;
}

namespace detail {

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> strain_block(const FitResult& fit, std::optional<int> strain,
                                                                std::size_t& s_out) {
    std::size_t s = 0;
    if (fit.method == Method::SieveMultinomial || fit.method == Method::TmleMultinomial) {
        if (!strain) throw ConfigError("a strain is required for multinomial fits");
        auto it = std::find(fit.strains.begin(), fit.strains.end(), *strain);
        if (it == fit.strains.end()) throw ConfigError("strain not present in the fit");
        s = static_cast<std::size_t>(it - fit.strains.begin());
    }
    s_out = s;
    const int o = fit.block_offset(s), d = fit.bases[s].dim();
    Eigen::VectorXd b = fit.beta.segment(o, d);
    Eigen::MatrixXd C = fit.beta_cov.block(o, o, d, d);
    if (!b.allFinite() || !C.allFinite()) throw NonIdentifiable("strain block is not identifiable");
    return {b, C};
}

inline double psd_quadratic(const Eigen::MatrixXd& C, const Eigen::VectorXd& x) {
    const double q = x.dot(C * x);
    const double scale = x.squaredNorm() * C.cwiseAbs().maxCoeff();
    if (q < -1e-10 * std::max(scale, 1e-300)) throw DomainError("covariance not PSD");
    return std::max(q, 0.0);
}

}  // namespace detail

inline VECurve ve_curve(const FitResult& fit, const std::vector<double>& grid, double level = 0.95,
                        std::optional<int> strain = std::nullopt) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    std::size_t s = 0;
    const auto [b, C] = detail::strain_block(fit, strain, s);
    VECurve cv;
    cv.method = method_name(fit.method);
    cv.basis = fit.bases[s];
    cv.level = level;
    if (fit.method == Method::SieveMultinomial || fit.method == Method::TmleMultinomial) cv.strain = strain;
    const double z = normal_quantile(0.5 + level / 2);
    for (double t : grid) {
        const Eigen::VectorXd psi = eval_ve_basis(cv.basis, t);
        const double f = b.dot(psi), se = std::sqrt(detail::psd_quadratic(C, psi));
        cv.tau.push_back(t);
        cv.f_hat.push_back(f);
        cv.f_se.push_back(se);
        cv.ve.push_back(ve_from_f(f));
        cv.ve_lo.push_back(ve_from_f(f + z * se));
        cv.ve_hi.push_back(ve_from_f(f - z * se));
    }
    return cv;
}

/// Precision-weighted PAVA on f, f - z se and f + z se.
inline VECurve monotonize_curve(VECurve cv) {
    if (cv.tau.empty()) {
        cv.has_monotone = true;
        return cv;
    }
    const double z = normal_quantile(0.5 + cv.level / 2);
    std::vector<double> w(cv.size()), lo(cv.size()), hi(cv.size());
    for (std::size_t k = 0; k < cv.size(); ++k) {
        if (!(cv.f_se[k] > 0.0)) throw DomainError("monotonization needs positive standard errors");
        w[k] = 1.0 / (cv.f_se[k] * cv.f_se[k]);
        lo[k] = cv.f_hat[k] - z * cv.f_se[k];
        hi[k] = cv.f_hat[k] + z * cv.f_se[k];
    }
    cv.f_mono = pava_isotonic(cv.f_hat, w);
    const auto mlo = pava_isotonic(lo, w), mhi = pava_isotonic(hi, w);
    cv.ve_mono.clear();
    cv.ve_mono_lo.clear();
    cv.ve_mono_hi.clear();
    for (std::size_t k = 0; k < cv.size(); ++k) {
        cv.ve_mono.push_back(ve_from_f(cv.f_mono[k]));
        cv.ve_mono_lo.push_back(ve_from_f(mhi[k]));
        cv.ve_mono_hi.push_back(ve_from_f(mlo[k]));
    }
    cv.has_monotone = true;
    return cv;
}

struct MonoBand {
    std::vector<double> f_lo, f_hi;
};

/// Pointwise quantiles of PAVA-projected draws of f from N(beta, Cov(beta)).
/// Draw k uses substream (seed, k).
inline MonoBand monotone_ci_mc(const FitResult& fit, const std::vector<double>& grid, int n_draws = 2000,
                               std::uint64_t seed = 1, double level = 0.95,
                               std::optional<int> strain = std::nullopt) {
    if (n_draws < 1) throw ConfigError("need at least one Monte-Carlo draw");
    std::size_t s = 0;
    const auto [b, C] = detail::strain_block(fit, strain, s);
    const VEBasisSpec& basis = fit.bases[s];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    Eigen::VectorXd ev = es.eigenvalues();
    if (ev.size() && ev.minCoeff() < -1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
        throw DomainError("covariance not PSD");
    const Eigen::MatrixXd L = es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
    const std::size_t G = grid.size();
    Eigen::MatrixXd Psi(static_cast<Eigen::Index>(G), b.size());
    for (std::size_t g = 0; g < G; ++g) Psi.row(static_cast<Eigen::Index>(g)) = eval_ve_basis(basis, grid[g]).transpose();
    std::vector<std::vector<double>> draws(G, std::vector<double>(static_cast<std::size_t>(n_draws)));
    const std::vector<double> ones(G, 1.0);
    Eigen::VectorXd zv(b.size());
    for (int k = 0; k < n_draws; ++k) {
        std::mt19937_64 rng(substream_seed(seed, static_cast<std::uint64_t>(k), 0x4d43));
        std::normal_distribution<double> nd;
        for (Eigen::Index j = 0; j < zv.size(); ++j) zv[j] = nd(rng);
        const Eigen::VectorXd f = Psi * (b + L * zv);
        const auto proj = pava_isotonic(std::vector<double>(f.data(), f.data() + G), ones);
        for (std::size_t g = 0; g < G; ++g) draws[g][static_cast<std::size_t>(k)] = proj[g];
    }
    auto quant = [](std::vector<double> v, double q) {
        std::sort(v.begin(), v.end());
        const double h = (v.size() - 1) * q;
        const std::size_t lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (h - lo) * (v[hi] - v[lo]);
    };
    MonoBand band;
    const double a = (1.0 - level) / 2;
    for (std::size_t g = 0; g < G; ++g) {
        band.f_lo.push_back(quant(draws[g], a));
        band.f_hi.push_back(quant(draws[g], 1 - a));
    }
    return band;
}

/// Replaces the monotone VE band of a monotonized curve by a Monte-Carlo band.
inline VECurve apply_mono_band(VECurve cv, const MonoBand& band) {
    if (!cv.has_monotone) throw ConfigError("curve has no monotone fields");
    if (band.f_lo.size() != cv.size()) throw DomainError("band and curve grids differ");
    for (std::size_t k = 0; k < cv.size(); ++k) {
        cv.ve_mono_lo[k] = ve_from_f(band.f_hi[k]);
        cv.ve_mono_hi[k] = ve_from_f(band.f_lo[k]);
    }
    return cv;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_curve(const VECurve& cv, std::ostream& os) {
    os << "tau,f_hat,f_se,ve,ve_lo,ve_hi";
    if (cv.has_monotone) os << ",f_mono,ve_mono,ve_mono_lo,ve_mono_hi";
    os << '\n';
    for (std::size_t k = 0; k < cv.size(); ++k) {
        os << format_double(cv.tau[k]) << ',' << format_double(cv.f_hat[k]) << ',' << format_double(cv.f_se[k])
           << ',' << format_double(cv.ve[k]) << ',' << format_double(cv.ve_lo[k]) << ','
           << format_double(cv.ve_hi[k]);
        if (cv.has_monotone)
            os << ',' << format_double(cv.f_mono[k]) << ',' << format_double(cv.ve_mono[k]) << ','
               << format_double(cv.ve_mono_lo[k]) << ',' << format_double(cv.ve_mono_hi[k]);
        os << '\n';
    }
}

inline void write_curve(const VECurve& cv, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    write_curve(cv, os);
    if (!os) throw Error("write failed: " + path);
}

/// Reads the numeric columns back; metadata (method, basis) is not stored in
/// the CSV.
inline VECurve read_curve(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty curve file");
    VECurve cv;
    if (line == "tau,f_hat,f_se,ve,ve_lo,ve_hi,f_mono,ve_mono,ve_mono_lo,ve_mono_hi") cv.has_monotone = true;
    else if (line != "tau,f_hat,f_se,ve,ve_lo,ve_hi") throw DataError("unexpected curve header");
    const std::size_t ncol = cv.has_monotone ? 10 : 6;
    std::vector<std::vector<double>*> cols{&cv.tau, &cv.f_hat, &cv.f_se, &cv.ve, &cv.ve_lo, &cv.ve_hi,
                                           &cv.f_mono, &cv.ve_mono, &cv.ve_mono_lo, &cv.ve_mono_hi};
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ls, cell, ',')) {
            if (c >= ncol) throw DataError("too many curve columns");
            cols[c++]->push_back(std::stod(cell));
        }
        if (c != ncol) throw DataError("too few curve columns");
    }
    return cv;
}

inline VECurve read_curve(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path);
    return read_curve(is);
}

}  // namespace vewane
