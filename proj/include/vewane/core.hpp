/**
 * Domain types shared by every vewane module: event records, the VE basis
 * psi(tau), the VE transform and dataset validation.
 *
 * Time is a continuous scale on which the study horizon is O(1) (years in
 * the simulations). Unvaccinated participants carry no vax_time, which
 * stands for V = +inf: Z(t) = 0 and tau = 0 at every t.
 */
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace vewane {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NonIdentifiable : Error {
    using Error::Error;
};
struct OnlyOneCause : Error {
    using Error::Error;
};
struct NotConverged : Error {
    using Error::Error;
};

enum class Cause { Censored, Irrelevant, Preventable };

inline const char* cause_name(Cause c) {
    switch (c) {
    case Cause::Censored: return "censored";
    case Cause::Irrelevant: return "irrelevant";
    case Cause::Preventable: return "preventable";
    }
    return "?";
}

inline Cause parse_cause(const std::string& s) {
    if (s == "censored") return Cause::Censored;
    if (s == "irrelevant") return Cause::Irrelevant;
    if (s == "preventable") return Cause::Preventable;
    throw DataError("unknown cause '" + s + "'");
}

struct EventRecord {
    std::string id;
    std::optional<double> vax_time;  // absent: never vaccinated
    double event_time = 0.0;
    Cause cause = Cause::Censored;
    std::optional<int> strain;  // 1..m, preventable only

    bool vaccinated_by(double t) const { return vax_time && *vax_time <= t; }
    int j() const { return cause == Cause::Preventable ? 1 : 0; }
};

enum class TimeUnit { Years, Days };

/// Multiplier taking a time in unit u to years, the internal scale.
inline double years_per_unit(TimeUnit u) { return u == TimeUnit::Days ? 1.0 / 365.0 : 1.0; }

struct Dataset {
    std::vector<EventRecord> records;
    double horizon = 1.0;
    TimeUnit time_unit = TimeUnit::Years;

    std::size_t count(Cause c) const {
        std::size_t k = 0;
        for (const auto& r : records) k += (r.cause == c);
        return k;
    }
};

// ---------------------------------------------------------------------------
// Seed substreams: every randomized unit (participant, replicate, draw batch)
// seeds its own generator from (seed, index, stream), so results do not
// depend on iteration order or worker count.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0) {
    return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ (stream * 0xd1b54a32d192ed03ULL));
}

// ---------------------------------------------------------------------------
// VE basis psi(tau)

enum class BasisKind { Constant, Linear, Ramp };

struct VEBasisSpec {
    BasisKind kind = BasisKind::Linear;
    double ramp_length = 0.0;

    static VEBasisSpec constant() { return {BasisKind::Constant, 0.0}; }
    static VEBasisSpec linear() { return {BasisKind::Linear, 0.0}; }
    static VEBasisSpec ramp(double r) {
        if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("ramp length must be positive");
        return {BasisKind::Ramp, r};
    }

    int dim() const {
        switch (kind) {
        case BasisKind::Constant: return 1;
        case BasisKind::Linear: return 2;
        case BasisKind::Ramp: return 3;
        }
        return 0;
    }

    bool operator==(const VEBasisSpec& o) const {
        return kind == o.kind && (kind != BasisKind::Ramp || ramp_length == o.ramp_length);
    }
};

/// Writes psi(tau) into out[0..d). No validation; callers guarantee tau >= 0.
inline void ve_basis_into(const VEBasisSpec& spec, double tau, double* out) {
    switch (spec.kind) {
    case BasisKind::Constant:
        out[0] = 1.0;
        break;
    case BasisKind::Linear:
        out[0] = 1.0;
        out[1] = tau;
        break;
    case BasisKind::Ramp: {
        const bool post = tau >= spec.ramp_length;
        out[0] = post ? 0.0 : 1.0;
        out[1] = post ? 1.0 : 0.0;
        out[2] = post ? tau - spec.ramp_length : 0.0;
        break;
    }
    }
}

inline Eigen::VectorXd eval_ve_basis(const VEBasisSpec& spec, double tau) {
    if (!(tau >= 0.0)) throw DomainError("negative tau");
    Eigen::VectorXd psi(spec.dim());
    ve_basis_into(spec, tau, psi.data());
    return psi;
}

/// Z(t) psi(t - V): the VE covariates of a participant observed at time t.
inline void ve_covariates_into(const VEBasisSpec& spec, const std::optional<double>& vax, double t,
                               double* out) {
    if (vax && *vax <= t) {
        ve_basis_into(spec, t - *vax, out);
    } else {
        for (int k = 0; k < spec.dim(); ++k) out[k] = 0.0;
    }
}

inline double f_value(const Eigen::VectorXd& beta, const VEBasisSpec& spec, double tau) {
    if (beta.size() != spec.dim()) throw DomainError("beta dimension does not match basis");
    return beta.dot(eval_ve_basis(spec, tau));
}

inline double ve_from_f(double f) {
    if (!std::isfinite(f)) throw DomainError("non-finite log hazard ratio");
    return -std::expm1(f);
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
    std::size_t index;
    std::string field;
    std::string reason;
};

struct Validated {
    std::optional<Dataset> dataset;
    std::vector<Violation> violations;
    bool ok() const { return dataset.has_value(); }
};

inline Validated validate_dataset(std::vector<EventRecord> records, double horizon,
                                  TimeUnit unit = TimeUnit::Years) {
    Validated out;
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        out.violations.push_back({0, "horizon", "horizon must be positive"});
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!seen.insert(r.id).second) out.violations.push_back({i, "id", "duplicate id"});
        if (!std::isfinite(r.event_time))
            out.violations.push_back({i, "event_time", "non-finite event_time"});
        else if (r.event_time < 0.0)
            out.violations.push_back({i, "event_time", "negative event_time"});
        else if (r.event_time > horizon)
            out.violations.push_back({i, "event_time", "event_time beyond horizon"});
        if (r.vax_time && !(*r.vax_time >= 0.0 && std::isfinite(*r.vax_time)))
            out.violations.push_back({i, "vax_time", "negative vax_time"});
        if (r.strain && r.cause != Cause::Preventable)
            out.violations.push_back({i, "strain", "strain on non-preventable"});
        if (r.strain && *r.strain < 1)
            out.violations.push_back({i, "strain", "strain label must be >= 1"});
    }
    if (out.violations.empty()) out.dataset = Dataset{std::move(records), horizon, unit};
    return out;
}

/// Throws DataError listing the first violations; convenience for callers
/// that cannot proceed on invalid input.
inline Dataset require_valid(std::vector<EventRecord> records, double horizon,
                             TimeUnit unit = TimeUnit::Years) {
    auto v = validate_dataset(std::move(records), horizon, unit);
    if (v.ok()) return std::move(*v.dataset);
    std::string msg = "invalid dataset:";
    for (std::size_t k = 0; k < v.violations.size() && k < 5; ++k) {
        const auto& x = v.violations[k];
        msg += " [record " + std::to_string(x.index) + " " + x.field + ": " + x.reason + "]";
    }
    if (v.violations.size() > 5) msg += " ...";
    throw DataError(msg);
}

}  // namespace vewane
