/**
 * File formats: events / surveillance / mixture CSVs and JSON for
 * scenarios, fits, offsets and truth sidecars. Times are converted to years
 * on input and back to the declared unit on output. Doubles are written with
 * 17 significant digits so every artifact round-trips exactly.
 */
#pragma once

#include "core.hpp"
#include "fit.hpp"
#include "report.hpp"
#include "simulate.hpp"
#include "smoothing.hpp"
#include "surveillance.hpp"

#include <json.hpp>

#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace vewane {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CSV helpers

namespace csv {

inline std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double number(const std::string& s, std::size_t line, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line) + ": cannot parse " + what + " '" + s + "'");
    }
}

/// Reads a header-first CSV; checks that the header starts with `required`.
inline std::vector<std::vector<std::string>> read(std::istream& is, const std::vector<std::string>& required,
                                                  std::vector<std::string>* header_out = nullptr) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty CSV file");
    const auto header = split(line);
    if (header.size() < required.size()) throw DataError("CSV header must start with " + required.front());
    for (std::size_t k = 0; k < required.size(); ++k)
        if (header[k] != required[k]) throw DataError("CSV header column " + std::to_string(k + 1) + " must be '" + required[k] + "'");
    if (header_out) *header_out = header;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        auto cells = split(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(rows.size() + 2) + ": expected " + std::to_string(header.size()) + " fields");
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path);
    return is;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    return os;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Events

/// Horizon defaults to the largest event time in the file.
inline Dataset read_events_csv(std::istream& is, TimeUnit unit = TimeUnit::Years,
                               std::optional<double> horizon_in_unit = std::nullopt) {
    const auto rows = csv::read(is, {"id", "vax_time", "event_time", "cause", "strain"});
    const double k = years_per_unit(unit);
    std::vector<EventRecord> recs;
    double tmax = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& c = rows[i];
        EventRecord r;
        r.id = c[0];
        if (!c[1].empty()) r.vax_time = csv::number(c[1], i + 2, "vax_time") * k;
        r.event_time = csv::number(c[2], i + 2, "event_time") * k;
        r.cause = parse_cause(c[3]);
        if (!c[4].empty()) {
            const double s = csv::number(c[4], i + 2, "strain");
            if (std::floor(s) != s) throw DataError("line " + std::to_string(i + 2) + ": strain must be an integer");
            r.strain = static_cast<int>(s);
        }
        tmax = std::max(tmax, r.event_time);
        recs.push_back(std::move(r));
    }
    const double horizon = horizon_in_unit ? *horizon_in_unit * k : tmax;
    return require_valid(std::move(recs), horizon > 0.0 ? horizon : 1.0, unit);
}

inline Dataset read_events_csv(const std::string& path, TimeUnit unit = TimeUnit::Years,
                               std::optional<double> horizon_in_unit = std::nullopt) {
    auto is = csv::open_in(path);
    return read_events_csv(is, unit, horizon_in_unit);
}

inline void write_events_csv(const Dataset& ds, std::ostream& os) {
    const double k = years_per_unit(ds.time_unit);
    os << "id,vax_time,event_time,cause,strain\n";
    for (const auto& r : ds.records) {
        os << r.id << ',' << (r.vax_time ? format_double(*r.vax_time / k) : "") << ','
           << format_double(r.event_time / k) << ',' << cause_name(r.cause) << ','
           << (r.strain ? std::to_string(*r.strain) : "") << '\n';
    }
}

inline void write_events_csv(const Dataset& ds, const std::string& path) {
    auto os = csv::open_out(path);
    write_events_csv(ds, os);
}

// ---------------------------------------------------------------------------
// Surveillance and mixtures

inline SurveillanceSeries read_surveillance_csv(std::istream& is, TimeUnit unit = TimeUnit::Years) {
    std::vector<std::string> header;
    const auto rows = csv::read(is, {"time", "count_preventable"}, &header);
    SurveillanceSeries s;
    const bool has0 = header.size() >= 3;
    if (has0 && header[2] != "count_irrelevant") throw DataError("third surveillance column must be count_irrelevant");
    if (has0) s.count_irrelevant.emplace();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s.time.push_back(csv::number(rows[i][0], i + 2, "time") * years_per_unit(unit));
        s.count_preventable.push_back(csv::number(rows[i][1], i + 2, "count_preventable"));
        if (has0) s.count_irrelevant->push_back(csv::number(rows[i][2], i + 2, "count_irrelevant"));
    }
    s.validate();
    return s;
}

inline SurveillanceSeries read_surveillance_csv(const std::string& path, TimeUnit unit = TimeUnit::Years) {
    auto is = csv::open_in(path);
    return read_surveillance_csv(is, unit);
}

inline void write_surveillance_csv(const SurveillanceSeries& s, std::ostream& os) {
    os << "time,count_preventable" << (s.count_irrelevant ? ",count_irrelevant" : "") << '\n';
    for (std::size_t k = 0; k < s.time.size(); ++k) {
        os << format_double(s.time[k]) << ',' << format_double(s.count_preventable[k]);
        if (s.count_irrelevant) os << ',' << format_double((*s.count_irrelevant)[k]);
        os << '\n';
    }
}

/// Long format `time,strain,proportion`; every time lists the same strains.
inline VariantMix read_mixture_csv(std::istream& is, TimeUnit unit = TimeUnit::Years) {
    const auto rows = csv::read(is, {"time", "strain", "proportion"});
    std::map<double, std::map<int, double>> by_time;
    std::vector<int> labels;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double t = csv::number(rows[i][0], i + 2, "time") * years_per_unit(unit);
        const double sv = csv::number(rows[i][1], i + 2, "strain");
        if (std::floor(sv) != sv || sv < 1) throw DataError("line " + std::to_string(i + 2) + ": strain must be an integer >= 1");
        const int s = static_cast<int>(sv);
        if (!by_time[t].emplace(s, csv::number(rows[i][2], i + 2, "proportion")).second)
            throw DataError("duplicate (time, strain) in mixture");
        if (std::find(labels.begin(), labels.end(), s) == labels.end()) labels.push_back(s);
    }
    std::sort(labels.begin(), labels.end());
    VariantMix mix;
    mix.labels = labels;
    mix.prop.resize(static_cast<Eigen::Index>(by_time.size()), static_cast<Eigen::Index>(labels.size()));
    Eigen::Index k = 0;
    for (const auto& [t, m] : by_time) {
        mix.time.push_back(t);
        for (std::size_t s = 0; s < labels.size(); ++s) {
            auto it = m.find(labels[s]);
            if (it == m.end()) throw DataError("mixture time point missing a strain");
            mix.prop(k, static_cast<Eigen::Index>(s)) = it->second;
        }
        ++k;
    }
    mix.validate();
    return mix;
}

inline VariantMix read_mixture_csv(const std::string& path, TimeUnit unit = TimeUnit::Years) {
    auto is = csv::open_in(path);
    return read_mixture_csv(is, unit);
}

inline void write_mixture_csv(const VariantMix& mix, std::ostream& os) {
    os << "time,strain,proportion\n";
    for (std::size_t k = 0; k < mix.time.size(); ++k)
        for (std::size_t s = 0; s < mix.m(); ++s)
            os << format_double(mix.time[k]) << ',' << mix.labels[s] << ','
               << format_double(mix.prop(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s))) << '\n';
}

/// `time,c0` table for the sensitivity offset.
inline SmoothFn read_c0_csv(std::istream& is, TimeUnit unit = TimeUnit::Years) {
    const auto rows = csv::read(is, {"time", "c0"});
    std::vector<double> t, c;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        t.push_back(csv::number(rows[i][0], i + 2, "time") * years_per_unit(unit));
        c.push_back(csv::number(rows[i][1], i + 2, "c0"));
    }
    return sensitivity_offset(std::move(t), c);
}

// ---------------------------------------------------------------------------
// JSON values

namespace jsonx {

inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double get_num(const Json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!j.is_number()) throw DataError("expected a number in JSON");
    return j.get<double>();
}

inline Json vec(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(num(v[k]));
    return a;
}

inline Json vec(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

inline Eigen::VectorXd get_vec(const Json& j) {
    if (!j.is_array()) throw DataError("expected an array in JSON");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = get_num(j[k]);
    return v;
}

inline std::vector<double> get_stdvec(const Json& j) {
    const Eigen::VectorXd v = get_vec(j);
    return {v.data(), v.data() + v.size()};
}

inline Json mat(const Eigen::MatrixXd& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec(Eigen::VectorXd(m.row(i).transpose())));
    return a;
}

inline Eigen::MatrixXd get_mat(const Json& j) {
    if (!j.is_array()) throw DataError("expected a matrix in JSON");
    const Eigen::Index r = static_cast<Eigen::Index>(j.size());
    const Eigen::Index c = r ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        const Eigen::VectorXd row = get_vec(j[static_cast<std::size_t>(i)]);
        if (row.size() != c) throw DataError("ragged matrix in JSON");
        m.row(i) = row.transpose();
    }
    return m;
}

}  // namespace jsonx

inline Json basis_to_json(const VEBasisSpec& b) {
    Json j;
    switch (b.kind) {
    case BasisKind::Constant: j["kind"] = "constant"; break;
    case BasisKind::Linear: j["kind"] = "linear"; break;
    case BasisKind::Ramp:
        j["kind"] = "ramp";
        j["ramp_length"] = b.ramp_length;
        break;
    }
    return j;
}

inline VEBasisSpec basis_from_json(const Json& j) {
    const std::string k = j.at("kind").get<std::string>();
    if (k == "constant") return VEBasisSpec::constant();
    if (k == "linear") return VEBasisSpec::linear();
    if (k == "ramp") return VEBasisSpec::ramp(j.at("ramp_length").get<double>());
    throw ConfigError("unknown VE basis kind '" + k + "'");
}

/// "linear", "constant" or "ramp:<length>" (length in `unit`).
inline VEBasisSpec parse_basis(const std::string& s, TimeUnit unit = TimeUnit::Days) {
    if (s == "linear") return VEBasisSpec::linear();
    if (s == "constant") return VEBasisSpec::constant();
    if (s.rfind("ramp:", 0) == 0) {
        double r;
        try {
            r = std::stod(s.substr(5));
        } catch (const std::exception&) {
            throw ConfigError("ramp basis needs a numeric length, e.g. ramp:14");
        }
        return VEBasisSpec::ramp(r * years_per_unit(unit));
    }
    throw ConfigError("basis must be linear, constant or ramp:<length>");
}

inline Json smooth_to_json(const SmoothFn& f) {
    Json j;
    switch (f.kind()) {
    case SmoothFn::Kind::Constant:
        j["kind"] = "constant";
        j["value"] = f.constant_value();
        j["lo"] = f.lo();
        j["hi"] = f.hi();
        break;
    case SmoothFn::Kind::Spline:
        j["kind"] = "spline";
        j["degree"] = f.basis()->degree();
        j["interior_knots"] = jsonx::vec(f.basis()->interior());
        j["lo"] = f.basis()->lo();
        j["hi"] = f.basis()->hi();
        j["coef"] = jsonx::vec(f.coef());
        break;
    case SmoothFn::Kind::Table:
        j["kind"] = "table";
        j["x"] = jsonx::vec(f.table_x());
        j["y"] = jsonx::vec(f.table_y());
        break;
    case SmoothFn::Kind::Kernel:
        j["kind"] = "kernel";
        j["kernel"] = f.kernel() == Kernel::Epanechnikov ? "epanechnikov" : "gaussian";
        j["bandwidth"] = f.bandwidth();
        j["x"] = jsonx::vec(f.table_x());
        j["y"] = jsonx::vec(f.table_y());
        j["w"] = jsonx::vec(f.kernel_w());
        break;
    }
    if (f.fallback) j["fallback"] = true;
    if (f.lambda != 0.0) j["lambda"] = f.lambda;
    return j;
}

inline SmoothFn smooth_from_json(const Json& j) {
    const std::string k = j.at("kind").get<std::string>();
    SmoothFn f;
    if (k == "constant") {
        f = SmoothFn::constant(j.at("value").get<double>(), j.at("lo").get<double>(), j.at("hi").get<double>());
    } else if (k == "spline") {
        f = SmoothFn::spline(BSplineBasis(j.at("degree").get<int>(), jsonx::get_stdvec(j.at("interior_knots")),
                                          j.at("lo").get<double>(), j.at("hi").get<double>()),
                             jsonx::get_vec(j.at("coef")));
    } else if (k == "table") {
        f = SmoothFn::table(jsonx::get_stdvec(j.at("x")), jsonx::get_stdvec(j.at("y")));
    } else if (k == "kernel") {
        const std::string kn = j.at("kernel").get<std::string>();
        f = SmoothFn::kernel_fit(jsonx::get_stdvec(j.at("x")), jsonx::get_stdvec(j.at("y")),
                                 jsonx::get_stdvec(j.at("w")),
                                 kn == "gaussian" ? Kernel::Gaussian : Kernel::Epanechnikov,
                                 j.at("bandwidth").get<double>());
    } else {
        throw DataError("unknown function kind '" + k + "'");
    }
    f.fallback = j.value("fallback", false);
    f.lambda = j.value("lambda", 0.0);
    return f;
}

// ---------------------------------------------------------------------------
// Offsets

struct OffsetArtifact {
    std::string kind = "table";  // tt1, sda-tt2, sensitivity or table
    SmoothFn function;
    bool needs_intercept = false;
};

inline Json offset_to_json(const OffsetArtifact& o) {
    Json j;
    j["kind"] = o.kind;
    j["needs_intercept"] = o.needs_intercept;
    j["function"] = smooth_to_json(o.function);
    return j;
}

inline OffsetArtifact offset_from_json(const Json& j) {
    OffsetArtifact o;
    o.kind = j.value("kind", std::string("table"));
    o.needs_intercept = j.value("needs_intercept", false);
    o.function = smooth_from_json(j.at("function"));
    return o;
}

// ---------------------------------------------------------------------------
// Scenarios

inline Json mixture_to_json(const VariantMix& m) {
    Json j;
    j["time"] = jsonx::vec(m.time);
    j["labels"] = m.labels;
    j["prop"] = jsonx::mat(m.prop);
    return j;
}

inline VariantMix mixture_from_json(const Json& j) {
    VariantMix m;
    m.time = jsonx::get_stdvec(j.at("time"));
    m.labels = j.at("labels").get<std::vector<int>>();
    m.prop = jsonx::get_mat(j.at("prop"));
    m.validate();
    return m;
}

inline Json scenario_to_json(const ScenarioSpec& sc) {
    Json j;
    j["name"] = sc.name;
    j["n"] = sc.n;
    j["horizon"] = sc.horizon;
    j["lambda00"] = sc.lambda00;
    j["lambda01"] = sc.lambda01;
    j["baseline_shape"] = sc.baseline_shape == BaselineShape::Sinusoidal ? "sinusoidal" : "constant";
    j["amplitude"] = sc.amplitude;
    j["ve_basis"] = basis_to_json(sc.ve_basis);
    j["beta_true"] = jsonx::vec(sc.beta_true);
    j["vax_law"] = sc.vax_law == VaxLaw::RandomUniform ? "random-uniform" : "vulnerable-first";
    j["vax_upper"] = sc.vax_upper;
    j["copula_rho"] = sc.copula_rho;
    j["frailty_law"] = sc.frailty_law == FrailtyLaw::IIDLognormal ? "iid-lognormal" : "disinhibition-pair";
    j["sigma_u"] = sc.sigma_u;
    j["mu_pre"] = sc.mu_pre;
    j["mu_post"] = sc.mu_post;
    j["pair_sd"] = sc.pair_sd;
    j["pair_rho"] = sc.pair_rho;
    if (sc.mixture) {
        j["mixture"] = mixture_to_json(*sc.mixture);
        Json sb = Json::array();
        for (const auto& b : sc.strain_betas) sb.push_back(jsonx::vec(b));
        j["strain_betas"] = sb;
    }
    j["seed"] = sc.seed;
    return j;
}

/// Missing keys take the defaults; unknown keys are rejected.
inline ScenarioSpec scenario_from_json(const Json& j) {
    static const std::vector<std::string> known{
        "name", "n", "horizon", "lambda00", "lambda01", "baseline_shape", "amplitude", "ve_basis",
        "beta_true", "vax_law", "vax_upper", "copula_rho", "frailty_law", "sigma_u", "mu_pre", "mu_post",
        "pair_sd", "pair_rho", "mixture", "strain_betas", "seed"};
    if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown scenario field '" + it.key() + "'");
    ScenarioSpec sc;
    try {
        sc.name = j.value("name", sc.name);
        sc.n = j.value("n", sc.n);
        sc.horizon = j.value("horizon", sc.horizon);
        sc.lambda00 = j.value("lambda00", sc.lambda00);
        sc.lambda01 = j.value("lambda01", sc.lambda01);
        if (j.contains("baseline_shape")) {
            const auto s = j["baseline_shape"].get<std::string>();
            if (s == "sinusoidal") sc.baseline_shape = BaselineShape::Sinusoidal;
            else if (s == "constant") sc.baseline_shape = BaselineShape::Constant;
            else throw ConfigError("baseline_shape must be sinusoidal or constant");
        }
        sc.amplitude = j.value("amplitude", sc.amplitude);
        if (j.contains("ve_basis")) sc.ve_basis = basis_from_json(j["ve_basis"]);
        if (j.contains("beta_true")) sc.beta_true = jsonx::get_vec(j["beta_true"]);
        else if (sc.beta_true.size() != sc.ve_basis.dim()) sc.beta_true = Eigen::VectorXd::Zero(sc.ve_basis.dim());
        if (j.contains("vax_law")) {
            const auto s = j["vax_law"].get<std::string>();
            if (s == "random-uniform") sc.vax_law = VaxLaw::RandomUniform;
            else if (s == "vulnerable-first") sc.vax_law = VaxLaw::VulnerableFirst;
            else throw ConfigError("vax_law must be random-uniform or vulnerable-first");
        }
        sc.vax_upper = j.value("vax_upper", sc.vax_upper);
        sc.copula_rho = j.value("copula_rho", sc.copula_rho);
        if (j.contains("frailty_law")) {
            const auto s = j["frailty_law"].get<std::string>();
            if (s == "iid-lognormal") sc.frailty_law = FrailtyLaw::IIDLognormal;
            else if (s == "disinhibition-pair") sc.frailty_law = FrailtyLaw::DisinhibitionPair;
            else throw ConfigError("frailty_law must be iid-lognormal or disinhibition-pair");
        }
        sc.sigma_u = j.value("sigma_u", sc.sigma_u);
        sc.mu_pre = j.value("mu_pre", sc.mu_pre);
        sc.mu_post = j.value("mu_post", sc.mu_post);
        sc.pair_sd = j.value("pair_sd", sc.pair_sd);
        sc.pair_rho = j.value("pair_rho", sc.pair_rho);
        if (j.contains("mixture")) sc.mixture = mixture_from_json(j["mixture"]);
        if (j.contains("strain_betas"))
            for (const auto& b : j["strain_betas"]) sc.strain_betas.push_back(jsonx::get_vec(b));
        sc.seed = j.value("seed", sc.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario JSON: ") + e.what());
    }
    sc.validate();
    return sc;
}

inline Json read_json_file(const std::string& path) {
    auto is = csv::open_in(path);
    try {
        return Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void write_json_file(const Json& j, const std::string& path) {
    auto os = csv::open_out(path);
    os << j.dump(2) << '\n';
    if (!os) throw Error("write failed: " + path);
}

inline Json truth_to_json(const Truth& t, const ScenarioSpec& sc) {
    Json j;
    j["basis"] = basis_to_json(t.basis);
    j["beta_true"] = jsonx::vec(t.beta);
    if (!t.strain_betas.empty()) {
        Json sb = Json::array();
        for (const auto& b : t.strain_betas) sb.push_back(jsonx::vec(b));
        j["strain_betas"] = sb;
    }
    j["scenario"] = scenario_to_json(sc);
    return j;
}

// ---------------------------------------------------------------------------
// Fits

inline Method parse_method(const std::string& s) {
    for (Method m : {Method::Cox, Method::Sieve, Method::Tmle, Method::SieveMultinomial, Method::TmleMultinomial})
        if (s == method_name(m)) return m;
    throw ConfigError("unknown method '" + s + "'");
}

inline Json fit_to_json(const FitResult& f, const Json& config = Json::object()) {
    Json j;
    j["method"] = method_name(f.method);
    j["beta"] = jsonx::vec(f.beta);
    j["beta_cov"] = jsonx::mat(f.beta_cov);
    Json bases = Json::array();
    for (const auto& b : f.bases) bases.push_back(basis_to_json(b));
    j["bases"] = bases;
    j["strains"] = f.strains;
    Json nu;
    if (f.nuisance.alpha) nu["alpha"] = smooth_to_json(*f.nuisance.alpha);
    nu["has_intercept"] = f.nuisance.has_intercept;
    nu["intercept"] = f.nuisance.intercept;
    if (f.nuisance.offset) nu["offset"] = smooth_to_json(*f.nuisance.offset);
    j["nuisance"] = nu;
    Json d;
    d["iterations"] = f.diag.iterations;
    d["final_update_norm"] = jsonx::num(f.diag.final_update_norm);
    d["loglik"] = jsonx::num(f.diag.loglik);
    d["converged"] = f.diag.converged;
    d["n_rows"] = f.diag.n_rows;
    d["n_dropped"] = f.diag.n_dropped;
    d["n_truncated"] = f.diag.n_truncated;
    d["loglik_trace"] = jsonx::vec(f.diag.loglik_trace);
    d["strain_status"] = f.diag.strain_status;
    d["notes"] = f.diag.notes;
    j["diagnostics"] = d;
    if (f.tmle) {
        Json t;
        t["smoother"] = f.tmle->smoother;
        t["delta"] = f.tmle->delta;
        t["tol"] = f.tmle->tol;
        t["max_iter"] = f.tmle->max_iter;
        t["domain"] = {f.tmle->domain_lo, f.tmle->domain_hi};
        j["tmle"] = t;
    }
    j["config"] = config;
    return j;
}

inline FitResult fit_from_json(const Json& j) {
    FitResult f;
    try {
        f.method = parse_method(j.at("method").get<std::string>());
        f.beta = jsonx::get_vec(j.at("beta"));
        f.beta_cov = jsonx::get_mat(j.at("beta_cov"));
        for (const auto& b : j.at("bases")) f.bases.push_back(basis_from_json(b));
        f.strains = j.value("strains", std::vector<int>{});
        const Json& nu = j.at("nuisance");
        if (nu.contains("alpha")) f.nuisance.alpha = smooth_from_json(nu["alpha"]);
        f.nuisance.has_intercept = nu.value("has_intercept", false);
        f.nuisance.intercept = nu.value("intercept", 0.0);
        if (nu.contains("offset")) f.nuisance.offset = smooth_from_json(nu["offset"]);
        const Json& d = j.at("diagnostics");
        f.diag.iterations = d.value("iterations", 0);
        f.diag.final_update_norm = jsonx::get_num(d.value("final_update_norm", Json(0.0)));
        f.diag.loglik = jsonx::get_num(d.value("loglik", Json(0.0)));
        f.diag.converged = d.value("converged", false);
        f.diag.n_rows = d.value("n_rows", std::size_t{0});
        f.diag.n_dropped = d.value("n_dropped", std::size_t{0});
        f.diag.n_truncated = d.value("n_truncated", std::size_t{0});
        if (d.contains("loglik_trace")) f.diag.loglik_trace = jsonx::get_stdvec(d["loglik_trace"]);
        f.diag.strain_status = d.value("strain_status", std::vector<std::string>{});
        f.diag.notes = d.value("notes", std::vector<std::string>{});
        if (j.contains("tmle")) {
            const Json& t = j["tmle"];
            TmleSettings s;
            s.smoother = t.value("smoother", s.smoother);
            s.delta = t.value("delta", s.delta);
            s.tol = t.value("tol", s.tol);
            s.max_iter = t.value("max_iter", s.max_iter);
            if (t.contains("domain")) {
                s.domain_lo = t["domain"][0].get<double>();
                s.domain_hi = t["domain"][1].get<double>();
            }
            f.tmle = s;
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("fit JSON: ") + e.what());
    }
    int dim = 0;
    for (const auto& b : f.bases) dim += b.dim();
    if (f.beta.size() != dim || f.beta_cov.rows() != dim || f.beta_cov.cols() != dim)
        throw DataError("fit JSON: beta dimensions do not match the bases");
    return f;
}

}  // namespace vewane
