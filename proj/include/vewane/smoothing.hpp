/**
 * Univariate smoothers: clamped B-spline bases, knot placement, a penalized
 * B-spline smoother with GCV, Nadaraya-Watson kernel smoothing and weighted
 * isotonic regression (pool adjacent violators).
 */
#pragma once

#include "core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

namespace vewane {

// ---------------------------------------------------------------------------
// B-splines

/// Clamped B-spline basis of degree v with K interior knots on [lo, hi];
/// dimension M = K + v + 1.
class BSplineBasis {
public:
    BSplineBasis() : BSplineBasis(0, {}, 0.0, 1.0) {}

    BSplineBasis(int degree, std::vector<double> interior, double lo, double hi)
        : degree_(degree), interior_(std::move(interior)), lo_(lo), hi_(hi) {
        if (degree_ < 0) throw DomainError("negative spline degree");
        if (!(lo_ < hi_) || !std::isfinite(lo_) || !std::isfinite(hi_))
            throw DomainError("spline boundary must satisfy lo < hi");
        for (std::size_t k = 0; k < interior_.size(); ++k) {
            if (!(interior_[k] > lo_ && interior_[k] < hi_))
                throw DomainError("interior knot outside the open boundary interval");
            if (k > 0 && !(interior_[k] > interior_[k - 1]))
                throw DomainError("interior knots must be strictly increasing");
        }
        knots_.assign(degree_ + 1, lo_);
        knots_.insert(knots_.end(), interior_.begin(), interior_.end());
        knots_.insert(knots_.end(), degree_ + 1, hi_);
    }

    int degree() const { return degree_; }
    int dim() const { return static_cast<int>(interior_.size()) + degree_ + 1; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    const std::vector<double>& interior() const { return interior_; }
    const std::vector<double>& knots() const { return knots_; }

    /// Evaluates the degree+1 nonzero functions at t into N; returns the
    /// index of the first one. t must lie in [lo, hi].
    int nonzero(double t, double* N) const {
        const int p = degree_, M = dim();
        int span;
        if (t >= knots_[M]) {
            span = M - 1;
        } else {
            int a = p, b = M;
            while (b - a > 1) {
                const int mid = (a + b) / 2;
                if (t < knots_[mid]) b = mid;
                else a = mid;
            }
            span = a;
        }
        std::array<double, 16> left{}, right{};
        N[0] = 1.0;
        for (int j = 1; j <= p; ++j) {
            left[j] = t - knots_[span + 1 - j];
            right[j] = knots_[span + j] - t;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double tmp = N[r] / (right[r + 1] + left[j - r]);
                N[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            N[j] = saved;
        }
        return span - p;
    }

    /// Greville abscissae, one per basis function.
    std::vector<double> greville() const {
        std::vector<double> g(dim());
        for (int j = 0; j < dim(); ++j) {
            if (degree_ == 0) {
                g[j] = 0.5 * (knots_[j] + knots_[j + 1]);
            } else {
                double s = 0.0;
                for (int k = 1; k <= degree_; ++k) s += knots_[j + k];
                g[j] = s / degree_;
            }
        }
        return g;
    }

    bool operator==(const BSplineBasis& o) const {
        return degree_ == o.degree_ && interior_ == o.interior_ && lo_ == o.lo_ && hi_ == o.hi_;
    }

private:
    int degree_;
    std::vector<double> interior_;
    double lo_, hi_;
    std::vector<double> knots_;
};

inline Eigen::VectorXd bspline_eval(const BSplineBasis& basis, double t) {
    if (!(t >= basis.lo() && t <= basis.hi())) throw DomainError("t outside spline boundary");
    if (basis.degree() > 14) throw DomainError("spline degree above 14 unsupported");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(basis.dim());
    std::array<double, 16> N{};
    const int first = basis.nonzero(t, N.data());
    for (int k = 0; k <= basis.degree(); ++k) out[first + k] = N[k];
    return out;
}

enum class KnotRule { CubeRootLike };
enum class KnotPlacement { Quantile, EquallySpaced };

/// K = floor(n^(1/3.5)).
inline int knot_rule(std::size_t n, KnotRule rule = KnotRule::CubeRootLike) {
    (void)rule;
    if (n == 0) throw DomainError("knot rule needs at least one event");
    const double k = std::exp(std::log(static_cast<double>(n)) / 3.5);
    return static_cast<int>(std::floor(k + 1e-9));
}

/// K interior knots at equally spaced quantiles (j/(K+1)) of the sample, or
/// equally spaced on (lo, hi). Knots that collide with the boundary or with
/// each other are dropped, so fewer than K may come back under heavy ties.
inline std::vector<double> place_knots(std::vector<double> times, int K, double lo, double hi,
                                       KnotPlacement placement = KnotPlacement::Quantile) {
    std::vector<double> knots;
    if (K <= 0) return knots;
    if (placement == KnotPlacement::EquallySpaced || times.empty()) {
        for (int j = 1; j <= K; ++j) knots.push_back(lo + (hi - lo) * j / (K + 1.0));
        return knots;
    }
    std::sort(times.begin(), times.end());
    const double n = static_cast<double>(times.size());
    const double eps = 1e-10 * (hi - lo);
    for (int j = 1; j <= K; ++j) {
        const double h = (n - 1.0) * j / (K + 1.0);
        const auto lo_i = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi_i = std::min(lo_i + 1, times.size() - 1);
        const double q = times[lo_i] + (h - lo_i) * (times[hi_i] - times[lo_i]);
        if (q <= lo + eps || q >= hi - eps) continue;
        if (!knots.empty() && q <= knots.back() + eps) continue;
        knots.push_back(q);
    }
    return knots;
}

// ---------------------------------------------------------------------------
// SmoothFn

enum class Kernel { Epanechnikov, Gaussian };

/// An evaluable univariate function with a domain. Evaluation outside the
/// domain returns the value at the nearest domain endpoint.
class SmoothFn {
public:
    enum class Kind { Constant, Spline, Table, Kernel };

    SmoothFn() = default;

    static SmoothFn constant(double c, double lo = 0.0, double hi = 1.0) {
        SmoothFn f;
        f.kind_ = Kind::Constant;
        f.c_ = c;
        f.lo_ = lo;
        f.hi_ = hi;
        return f;
    }

    static SmoothFn spline(BSplineBasis basis, Eigen::VectorXd coef) {
        if (coef.size() != basis.dim()) throw DomainError("spline coefficient size mismatch");
        SmoothFn f;
        f.kind_ = Kind::Spline;
        f.lo_ = basis.lo();
        f.hi_ = basis.hi();
        f.basis_ = std::make_shared<BSplineBasis>(std::move(basis));
        f.coef_ = std::move(coef);
        return f;
    }

    /// Piecewise-linear interpolation through (x, y); x strictly increasing.
    static SmoothFn table(std::vector<double> x, std::vector<double> y) {
        if (x.empty() || x.size() != y.size()) throw DomainError("table needs matching nonempty x, y");
        for (std::size_t k = 1; k < x.size(); ++k)
            if (!(x[k] > x[k - 1])) throw DomainError("table x must be strictly increasing");
        for (double v : y)
            if (!std::isfinite(v)) throw DomainError("table values must be finite");
        SmoothFn f;
        f.kind_ = Kind::Table;
        f.lo_ = x.front();
        f.hi_ = x.back();
        f.x_ = std::make_shared<std::vector<double>>(std::move(x));
        f.y_ = std::make_shared<std::vector<double>>(std::move(y));
        return f;
    }

    static SmoothFn kernel_fit(std::vector<double> x, std::vector<double> y, std::vector<double> w,
                               Kernel k, double h) {
        SmoothFn f;
        f.kind_ = Kind::Kernel;
        std::vector<std::size_t> ord(x.size());
        std::iota(ord.begin(), ord.end(), 0);
        std::stable_sort(ord.begin(), ord.end(), [&](auto a, auto b) { return x[a] < x[b]; });
        auto xs = std::make_shared<std::vector<double>>();
        auto ys = std::make_shared<std::vector<double>>();
        auto ws = std::make_shared<std::vector<double>>();
        for (auto i : ord) {
            if (!(w[i] > 0.0)) continue;
            xs->push_back(x[i]);
            ys->push_back(y[i]);
            ws->push_back(w[i]);
        }
        f.lo_ = xs->front();
        f.hi_ = xs->back();
        f.x_ = xs;
        f.y_ = ys;
        f.w_ = ws;
        f.kernel_ = k;
        f.h_ = h;
        return f;
    }

    Kind kind() const { return kind_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    const BSplineBasis* basis() const { return basis_.get(); }
    const Eigen::VectorXd& coef() const { return coef_; }
    double bandwidth() const { return h_; }
    Kernel kernel() const { return kernel_; }
    const std::vector<double>& table_x() const { return *x_; }
    const std::vector<double>& table_y() const { return *y_; }
    const std::vector<double>& kernel_w() const { return *w_; }
    double constant_value() const { return c_; }

    /// Set when a smoother fell back to the weighted mean.
    bool fallback = false;
    /// Penalty chosen by GCV (spline smoother only).
    double lambda = 0.0;

    double operator()(double t) const {
        t = std::clamp(t, lo_, hi_);
        switch (kind_) {
        case Kind::Constant: return c_;
        case Kind::Spline: {
            std::array<double, 16> N{};
            const int first = basis_->nonzero(t, N.data());
            double s = 0.0;
            for (int k = 0; k <= basis_->degree(); ++k) s += N[k] * coef_[first + k];
            return s;
        }
        case Kind::Table: {
            const auto& x = *x_;
            const auto& y = *y_;
            if (x.size() == 1) return y[0];
            auto it = std::upper_bound(x.begin(), x.end(), t);
            if (it == x.begin()) return y.front();
            if (it == x.end()) return y.back();
            const std::size_t k = static_cast<std::size_t>(it - x.begin());
            const double a = (t - x[k - 1]) / (x[k] - x[k - 1]);
            return y[k - 1] + a * (y[k] - y[k - 1]);
        }
        case Kind::Kernel: return kernel_eval(t);
        }
        return 0.0;
    }

private:
    double kernel_weight(double u) const {
        if (kernel_ == Kernel::Epanechnikov) return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
        return std::exp(-0.5 * u * u);
    }

    bool kernel_sums(double t, double& num, double& den) const {
        const auto& x = *x_;
        const double reach = kernel_ == Kernel::Epanechnikov ? h_ : 40.0 * h_;
        auto a = std::lower_bound(x.begin(), x.end(), t - reach) - x.begin();
        auto b = std::upper_bound(x.begin(), x.end(), t + reach) - x.begin();
        num = den = 0.0;
        for (auto i = a; i < b; ++i) {
            const double kw = kernel_weight((x[i] - t) / h_) * (*w_)[i];
            num += kw * (*y_)[i];
            den += kw;
        }
        return den > 0.0;
    }

    double kernel_eval(double t) const {
        double num, den;
        if (kernel_sums(t, num, den)) return num / den;
        const auto& x = *x_;
        auto it = std::lower_bound(x.begin(), x.end(), t);
        std::size_t k;
        if (it == x.end()) k = x.size() - 1;
        else if (it == x.begin()) k = 0;
        else {
            k = static_cast<std::size_t>(it - x.begin());
            if (t - x[k - 1] <= x[k] - t) k -= 1;
        }
        kernel_sums(x[k], num, den);
        return num / den;
    }

    Kind kind_ = Kind::Constant;
    double c_ = 0.0, lo_ = 0.0, hi_ = 1.0;
    std::shared_ptr<const BSplineBasis> basis_;
    Eigen::VectorXd coef_;
    std::shared_ptr<const std::vector<double>> x_, y_, w_;
    Kernel kernel_ = Kernel::Epanechnikov;
    double h_ = 0.0;
};

// ---------------------------------------------------------------------------
// Penalized B-spline smoother

struct SplineSmoothOptions {
    std::optional<BSplineBasis> basis;  // overrides the default basis
    std::optional<std::pair<double, double>> domain;
    int max_interior = 20;
};

/// Default basis of the penalized smoother: cubic, equally spaced interior
/// knots, about one knot per four distinct support points up to max_interior.
inline BSplineBasis default_smoother_basis(std::size_t n_distinct, double lo, double hi,
                                           int max_interior = 20) {
    const int K = std::clamp(static_cast<int>(n_distinct / 4), 1, max_interior);
    return BSplineBasis(3, place_knots({}, K, lo, hi, KnotPlacement::EquallySpaced), lo, hi);
}

/// Divided-difference penalty over Greville abscissae, scaled by the mean
/// spacing so it matches plain differences on uniform knots. Polynomials of
/// degree < order have zero penalty.
inline Eigen::MatrixXd difference_penalty(const BSplineBasis& basis, int order) {
    const int M = basis.dim();
    if (order <= 0 || order >= M) return Eigen::MatrixXd::Zero(M, M);
    const auto g = basis.greville();
    const double hbar = (g.back() - g.front()) / (M - 1);
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(M, M);
    for (int k = 1; k <= order; ++k) {
        Eigen::MatrixXd Dk(D.rows() - 1, M);
        for (int i = 0; i + 1 < D.rows(); ++i) {
            const double span = (g[i + k] - g[i]) / k;
            Dk.row(i) = (D.row(i + 1) - D.row(i)) * (hbar / span);
        }
        D = std::move(Dk);
    }
    return D.transpose() * D;
}

inline SmoothFn weighted_spline_smooth(const std::vector<double>& x, const std::vector<double>& y,
                                       const std::vector<double>& w, int penalty_order = 2,
                                       const SplineSmoothOptions& opt = {}) {
    const std::size_t n = x.size();
    if (y.size() != n || w.size() != n) throw DomainError("x, y, w lengths differ");
    double wsum = 0.0, wysum = 0.0;
    std::vector<double> support;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(w[i] >= 0.0) || !std::isfinite(w[i])) throw DomainError("weights must be nonnegative");
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw DomainError("non-finite input");
        if (w[i] > 0.0) {
            wsum += w[i];
            wysum += w[i] * y[i];
            support.push_back(x[i]);
        }
    }
    if (!(wsum > 0.0)) throw DomainError("all-zero weights");
    std::sort(support.begin(), support.end());
    const std::size_t distinct =
        static_cast<std::size_t>(std::unique(support.begin(), support.end()) - support.begin());

    double lo, hi;
    if (opt.basis) {
        lo = opt.basis->lo();
        hi = opt.basis->hi();
    } else if (opt.domain) {
        lo = opt.domain->first;
        hi = opt.domain->second;
    } else {
        lo = support.front();
        hi = support[distinct - 1];
    }
    const double mean = wysum / wsum;
    if (support.size() < 4 || distinct < static_cast<std::size_t>(penalty_order) + 1 || !(lo < hi)) {
        auto f = SmoothFn::constant(mean, lo, std::max(hi, lo));
        f.fallback = true;
        return f;
    }
    for (double v : x)
        if (v < lo || v > hi) throw DomainError("x outside the smoother domain");

    const BSplineBasis basis = opt.basis ? *opt.basis : default_smoother_basis(distinct, lo, hi, opt.max_interior);
    const int M = basis.dim();
    const int p = basis.degree();
    const double scale = static_cast<double>(support.size()) / wsum;  // weights to mean 1

    std::vector<int> first(n);
    std::vector<std::array<double, 16>> vals(n);
    Eigen::MatrixXd BtWB = Eigen::MatrixXd::Zero(M, M);
    Eigen::VectorXd BtWy = Eigen::VectorXd::Zero(M);
    for (std::size_t i = 0; i < n; ++i) {
        first[i] = basis.nonzero(x[i], vals[i].data());
        const double wi = w[i] * scale;
        if (wi == 0.0) continue;
        for (int a = 0; a <= p; ++a) {
            BtWy[first[i] + a] += wi * vals[i][a] * y[i];
            for (int b = 0; b <= p; ++b) BtWB(first[i] + a, first[i] + b) += wi * vals[i][a] * vals[i][b];
        }
    }
    const Eigen::MatrixXd P = difference_penalty(basis, penalty_order);
    const double n_eff = static_cast<double>(support.size());

    double best_gcv = std::numeric_limits<double>::infinity();
    double best_lambda = 0.0;
    Eigen::VectorXd best_coef;
    for (int g = 0; g < 25; ++g) {
        const double lambda = std::pow(10.0, -6.0 + 0.5 * g);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(BtWB + lambda * P);
        if (ldlt.info() != Eigen::Success) continue;
        Eigen::VectorXd c = ldlt.solve(BtWy);
        const double trace = ldlt.solve(BtWB).trace();
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (w[i] == 0.0) continue;
            double fit = 0.0;
            for (int a = 0; a <= p; ++a) fit += vals[i][a] * c[first[i] + a];
            rss += w[i] * scale * (y[i] - fit) * (y[i] - fit);
        }
        const double denom = n_eff - trace;
        if (!(denom > 1e-8) || !c.allFinite()) continue;
        const double gcv = n_eff * rss / (denom * denom);
        if (gcv < best_gcv) {
            best_gcv = gcv;
            best_lambda = lambda;
            best_coef = std::move(c);
        }
    }
    if (best_coef.size() == 0) {
        auto f = SmoothFn::constant(mean, lo, hi);
        f.fallback = true;
        return f;
    }
    auto f = SmoothFn::spline(basis, std::move(best_coef));
    f.lambda = best_lambda;
    return f;
}

// ---------------------------------------------------------------------------
// Kernel smoother

namespace detail {

inline double weighted_quantile(const std::vector<std::pair<double, double>>& xw_sorted, double total,
                                double q) {
    double cum = 0.0;
    for (const auto& [xv, wv] : xw_sorted) {
        cum += wv;
        if (cum >= q * total) return xv;
    }
    return xw_sorted.back().first;
}

}  // namespace detail

/// Silverman's rule h = 0.9 min(sd, IQR/1.34) n^(-1/5) with weighted sd and
/// weighted quartiles; when one spread measure is zero the other is used.
inline double silverman_bandwidth(const std::vector<double>& x, const std::vector<double>& w) {
    std::vector<std::pair<double, double>> xw;
    double W = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (w[i] > 0.0) {
            xw.emplace_back(x[i], w[i]);
            W += w[i];
            mx += w[i] * x[i];
        }
    }
    if (xw.empty()) return 0.0;
    mx /= W;
    double var = 0.0;
    for (const auto& [xv, wv] : xw) var += wv * (xv - mx) * (xv - mx);
    const double sd = std::sqrt(var / W);
    std::sort(xw.begin(), xw.end());
    const double iqr = (detail::weighted_quantile(xw, W, 0.75) - detail::weighted_quantile(xw, W, 0.25)) / 1.34;
    double spread = std::min(sd, iqr);
    if (!(spread > 0.0)) spread = std::max(sd, iqr);
    return 0.9 * spread * std::pow(static_cast<double>(xw.size()), -0.2);
}

inline SmoothFn kernel_smooth(const std::vector<double>& x, const std::vector<double>& y,
                              const std::vector<double>& w, Kernel kernel = Kernel::Epanechnikov,
                              std::optional<double> bandwidth = std::nullopt) {
    const std::size_t n = x.size();
    if (n == 0) throw DomainError("kernel smoother needs data");
    if (y.size() != n || w.size() != n) throw DomainError("x, y, w lengths differ");
    double W = 0.0;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(w[i] >= 0.0) || !std::isfinite(w[i])) throw DomainError("weights must be nonnegative");
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw DomainError("non-finite input");
        if (w[i] > 0.0) {
            W += w[i];
            xmin = std::min(xmin, x[i]);
            xmax = std::max(xmax, x[i]);
        }
    }
    if (!(W > 0.0)) throw DomainError("all-zero weights");
    double h;
    if (bandwidth) {
        h = *bandwidth;
    } else {
        h = silverman_bandwidth(x, w);
        if (!(h > 0.0) && xmin == xmax) h = 1.0;  // single support point: any h gives y0
    }
    if (!(h > 0.0) || !std::isfinite(h)) throw DomainError("zero bandwidth");
    return SmoothFn::kernel_fit(x, y, w, kernel, h);
}

// ---------------------------------------------------------------------------
// Isotonic regression

/// Weighted least-squares projection onto nondecreasing sequences.
inline std::vector<double> pava_isotonic(const std::vector<double>& y, const std::vector<double>& w) {
    if (y.size() != w.size()) throw DomainError("y and w lengths differ");
    for (double wi : w)
        if (!(wi > 0.0) || !std::isfinite(wi)) throw DomainError("nonpositive weight");
    struct Block {
        double mean, weight;
        std::size_t count;
    };
    std::vector<Block> st;
    st.reserve(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        st.push_back({y[i], w[i], 1});
        while (st.size() > 1 && st[st.size() - 2].mean > st.back().mean) {
            Block b = st.back();
            st.pop_back();
            Block& a = st.back();
            const double W = a.weight + b.weight;
            a.mean = (a.mean * a.weight + b.mean * b.weight) / W;
            a.weight = W;
            a.count += b.count;
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (const auto& b : st) out.insert(out.end(), b.count, b.mean);
    return out;
}

}  // namespace vewane
