/**
 * External-surveillance inputs: fixed alpha(t) offsets from population case
 * counts (trend transport, and stable-disease with a free intercept), variant
 * mixture proportions, strain imputation and the sensitivity offset log c0(t).
 */
#pragma once

#include "core.hpp"
#include "smoothing.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <vector>

namespace vewane {

struct SurveillanceSeries {
    std::vector<double> time;                 // bin midpoints, strictly increasing
    std::vector<double> count_preventable;    // D1
    std::optional<std::vector<double>> count_irrelevant;  // D0

    void validate() const {
        if (time.empty()) throw DataError("empty surveillance series");
        if (count_preventable.size() != time.size() ||
            (count_irrelevant && count_irrelevant->size() != time.size()))
            throw DataError("surveillance columns differ in length");
        for (std::size_t k = 0; k < time.size(); ++k) {
            if (k > 0 && !(time[k] > time[k - 1]))
                throw DataError("surveillance time points must be strictly increasing");
            auto bad = [](double c) { return !(c >= 0.0) || std::floor(c) != c; };
            if (bad(count_preventable[k]) || (count_irrelevant && bad((*count_irrelevant)[k])))
                throw DataError("surveillance counts must be nonnegative integers");
        }
    }
};

/// alpha(t) ~ log((D1 + 1/2) / (D0 + 1/2)), linear between bin midpoints and
/// constant beyond the first and last bins.
inline SmoothFn tt1_offset(const SurveillanceSeries& s) {
    s.validate();
    if (!s.count_irrelevant) throw DataError("trend-transport offset needs irrelevant counts");
    std::vector<double> y(s.time.size());
    for (std::size_t k = 0; k < y.size(); ++k)
        y[k] = std::log((s.count_preventable[k] + 0.5) / ((*s.count_irrelevant)[k] + 0.5));
    return SmoothFn::table(s.time, y);
}

struct SdaOffset {
    SmoothFn part;               // time-varying part, geometric-mean centred
    bool needs_intercept = true; // the consumer estimates a scalar intercept
};

/// log(D1 + 1/2) centred by its mean over the M bins.
inline SdaOffset sda_tt2_offset(const SurveillanceSeries& s) {
    s.validate();
    std::vector<double> y(s.time.size());
    double mean = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        y[k] = std::log(s.count_preventable[k] + 0.5);
        mean += y[k];
    }
    mean /= static_cast<double>(y.size());
    for (double& v : y) v -= mean;
    return {SmoothFn::table(s.time, y), true};
}

/// Optional pre-pass: penalized-spline smoothing of a trend-transport offset
/// with inverse-variance weights 1 / (1/(D1+1/2) + 1/(D0+1/2)).
inline SmoothFn smoothed_tt1_offset(const SurveillanceSeries& s) {
    const SmoothFn raw = tt1_offset(s);
    std::vector<double> y(s.time.size()), w(s.time.size());
    for (std::size_t k = 0; k < y.size(); ++k) {
        y[k] = raw(s.time[k]);
        w[k] = 1.0 / (1.0 / (s.count_preventable[k] + 0.5) + 1.0 / ((*s.count_irrelevant)[k] + 0.5));
    }
    if (s.time.size() < 4) return raw;
    return weighted_spline_smooth(s.time, y, w);
}

// ---------------------------------------------------------------------------
// Variant mixture

/// Right-continuous step function of per-strain proportions.
struct VariantMix {
    std::vector<double> time;   // strictly increasing
    std::vector<int> labels;    // strain labels, one column each
    Eigen::MatrixXd prop;       // time.size() x labels.size()

    std::size_t m() const { return labels.size(); }

    int column(int label) const {
        auto it = std::find(labels.begin(), labels.end(), label);
        return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
    }

    /// A subset of strains keeps its original proportions, so its rows may
    /// sum to less than 1; pass unit_rows=false for those.
    void validate(bool unit_rows = true) const {
        if (time.empty() || labels.empty()) throw DataError("empty variant mixture");
        if (prop.rows() != static_cast<Eigen::Index>(time.size()) ||
            prop.cols() != static_cast<Eigen::Index>(labels.size()))
            throw DataError("variant mixture shape mismatch");
        for (std::size_t k = 0; k < time.size(); ++k) {
            if (k > 0 && !(time[k] > time[k - 1]))
                throw DataError("variant mixture times must be strictly increasing");
            for (Eigen::Index s = 0; s < prop.cols(); ++s)
                if (!(prop(k, s) >= 0.0 && prop(k, s) <= 1.0))
                    throw DataError("variant proportions must lie in [0, 1]");
            if (unit_rows ? std::abs(prop.row(k).sum() - 1.0) > 1e-9 : prop.row(k).sum() > 1.0 + 1e-9)
                throw DataError("variant proportions must sum to 1 at every time point");
        }
    }

    /// Keeps only the given strains (their proportions are not renormalized).
    VariantMix subset(const std::vector<int>& keep) const {
        VariantMix out;
        out.time = time;
        out.labels = keep;
        out.prop.resize(prop.rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t s = 0; s < keep.size(); ++s) {
            const int c = column(keep[s]);
            if (c < 0) throw DataError("unknown strain label");
            out.prop.col(static_cast<Eigen::Index>(s)) = prop.col(c);
        }
        return out;
    }
};

/// Builds a mixture from nonnegative per-bin counts (rows: times, columns:
/// strains), normalizing each row.
inline VariantMix variant_mix_from_counts(std::vector<double> time, std::vector<int> labels,
                                          const Eigen::MatrixXd& counts) {
    VariantMix mix{std::move(time), std::move(labels), counts};
    for (Eigen::Index k = 0; k < mix.prop.rows(); ++k) {
        const double tot = mix.prop.row(k).sum();
        if (!(tot > 0.0)) throw DataError("variant counts sum to zero in a bin");
        mix.prop.row(k) /= tot;
    }
    mix.validate();
    return mix;
}

inline Eigen::VectorXd variant_mix_lookup(const VariantMix& mix, double t) {
    auto it = std::upper_bound(mix.time.begin(), mix.time.end(), t);
    const std::size_t k = it == mix.time.begin() ? 0 : static_cast<std::size_t>(it - mix.time.begin()) - 1;
    return mix.prop.row(static_cast<Eigen::Index>(k)).transpose();
}

/// Fills missing strains on preventable records by drawing s with probability
/// p_s(T); record i uses substream (seed, i).
inline Dataset impute_strains(const Dataset& ds, const VariantMix& mix, std::uint64_t seed) {
    Dataset out = ds;
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        auto& r = out.records[i];
        if (r.cause != Cause::Preventable || r.strain) continue;
        const Eigen::VectorXd p = variant_mix_lookup(mix, r.event_time);
        std::mt19937_64 rng(substream_seed(seed, i, 0x5354524e));
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * p.sum();
        double cum = 0.0;
        int pick = mix.labels.back();
        for (Eigen::Index s = 0; s < p.size(); ++s) {
            cum += p[s];
            if (u < cum) {
                pick = mix.labels[static_cast<std::size_t>(s)];
                break;
            }
        }
        r.strain = pick;
    }
    return out;
}

/// log c0(t), linear between the tabulated points.
inline SmoothFn sensitivity_offset(std::vector<double> time, const std::vector<double>& c0) {
    if (time.size() != c0.size() || time.empty()) throw DataError("c0 table needs matching nonempty columns");
    std::vector<double> y(c0.size());
    for (std::size_t k = 0; k < c0.size(); ++k) {
        if (!(c0[k] > 0.0) || !std::isfinite(c0[k])) throw DomainError("c0 must be positive");
        y[k] = std::log(c0[k]);
    }
    return SmoothFn::table(std::move(time), std::move(y));
}

/// Pointwise sum of two functions, tabulated on the union of their
/// breakpoints (or on a fine grid when either is not a table).
inline SmoothFn add_functions(const SmoothFn& a, const SmoothFn& b, int grid = 401) {
    const double lo = std::min(a.lo(), b.lo()), hi = std::max(a.hi(), b.hi());
    std::vector<double> x;
    if (a.kind() == SmoothFn::Kind::Table && b.kind() == SmoothFn::Kind::Table) {
        x = a.table_x();
        x.insert(x.end(), b.table_x().begin(), b.table_x().end());
        std::sort(x.begin(), x.end());
        x.erase(std::unique(x.begin(), x.end()), x.end());
    } else if (hi > lo) {
        for (int k = 0; k < grid; ++k) x.push_back(lo + (hi - lo) * k / (grid - 1.0));
    } else {
        x.push_back(lo);
    }
    std::vector<double> y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = a(x[k]) + b(x[k]);
    return SmoothFn::table(std::move(x), std::move(y));
}

}  // namespace vewane
