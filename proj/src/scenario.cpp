#include "sdc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

#include "sdc/pencil.hpp"
#include "sdc/system.hpp"

namespace sdc {

namespace {

using nlohmann::json;

std::string g15(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.15g", x);
    return buf;
}

// JSON has no inf/nan literals
std::string jnum(double x) { return std::isfinite(x) ? g15(x) : "null"; }

const char* jbool(bool b) { return b ? "true" : "false"; }

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ValidationError(where + ": " + what);
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(where, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                ok = true;
                break;
            }
        if (!ok) fail(where, "unknown key '" + it.key() + "'");
    }
}

double num_at(const json& j, const std::string& where) {
    if (!j.is_number()) fail(where, "expected a number");
    return j.get<double>();
}

double num_field(const json& j, const char* key, const std::string& where,
                 double dflt) {
    if (!j.contains(key)) return dflt;
    return num_at(j.at(key), where + "." + key);
}

long long int_field(const json& j, const char* key, const std::string& where,
                    long long dflt) {
    if (!j.contains(key)) return dflt;
    const json& v = j.at(key);
    if (!v.is_number_integer()) fail(where + "." + key, "expected an integer");
    return v.get<long long>();
}

bool bool_field(const json& j, const char* key, const std::string& where,
                bool dflt) {
    if (!j.contains(key)) return dflt;
    const json& v = j.at(key);
    if (!v.is_boolean()) fail(where + "." + key, "expected a boolean");
    return v.get<bool>();
}

std::string string_at(const json& j, const std::string& where) {
    if (!j.is_string()) fail(where, "expected a string");
    return j.get<std::string>();
}

Eigen::VectorXd vec_at(const json& j, const std::string& where) {
    if (!j.is_array()) fail(where, "expected an array of numbers");
    Eigen::VectorXd v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i)
        v[i] = num_at(j[i], where + "[" + std::to_string(i) + "]");
    return v;
}

Eigen::MatrixXd mat_at(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) fail(where, "expected a non-empty 2D array");
    const int rows = static_cast<int>(j.size());
    if (!j[0].is_array()) fail(where, "expected rows of numbers");
    const int cols = static_cast<int>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const std::string wr = where + "[" + std::to_string(r) + "]";
        if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols)
            fail(wr, "row length mismatch");
        for (int c = 0; c < cols; ++c)
            m(r, c) = num_at(j[r][c], wr + "[" + std::to_string(c) + "]");
    }
    return m;
}

// ascending coefficient array; [] is the zero polynomial
Polynomial poly_at(const json& j, const std::string& where) {
    if (!j.is_array()) fail(where, "expected a coefficient array");
    std::vector<double> c(j.size());
    for (size_t i = 0; i < j.size(); ++i)
        c[i] = num_at(j[i], where + "[" + std::to_string(i) + "]");
    return Polynomial(c);
}

Polynomial poly_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) return Polynomial{};
    return poly_at(j.at(key), where + "." + key);
}

Polynomial poly_required(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) fail(where, std::string("missing '") + key + "'");
    return poly_at(j.at(key), where + "." + key);
}

SignalSpec parse_signal(const json& j, const std::string& where,
                        unsigned int base_seed, unsigned int& counter) {
    check_keys(j, where,
               {"kind", "value", "amplitude", "omega", "phase", "cutoff", "seed"});
    if (!j.contains("kind")) fail(where, "missing 'kind'");
    std::string k = string_at(j.at("kind"), where + ".kind");
    SignalSpec s;
    if (k == "zero")
        s.kind = SignalSpec::Kind::zero;
    else if (k == "constant")
        s.kind = SignalSpec::Kind::constant;
    else if (k == "sinusoid")
        s.kind = SignalSpec::Kind::sinusoid;
    else if (k == "noise")
        s.kind = SignalSpec::Kind::noise;
    else
        fail(where + ".kind", "unknown kind '" + k + "'");
    s.value = num_field(j, "value", where, 0.0);
    s.amplitude = num_field(j, "amplitude", where, 0.0);
    s.omega = num_field(j, "omega", where, 1.0);
    s.phase = num_field(j, "phase", where, 0.0);
    s.cutoff = num_field(j, "cutoff", where, 1.0);
    if (j.contains("seed"))
        s.seed = static_cast<unsigned int>(int_field(j, "seed", where, 1));
    else
        s.seed = base_seed + (counter++);
    return s;
}

ControllerParams params_from_jobj(const json& j, const std::string& where) {
    check_keys(j, where,
               {"F", "F0", "T", "L", "R0", "R1", "S0", "S1", "M0star", "M1star", "h",
                "v", "mode"});
    ControllerParams p;
    p.F = poly_field(j, "F", where);
    p.F0 = poly_field(j, "F0", where);
    p.T = poly_field(j, "T", where);
    p.L = poly_field(j, "L", where);
    p.R0 = poly_field(j, "R0", where);
    p.R1 = poly_field(j, "R1", where);
    p.S0 = poly_field(j, "S0", where);
    p.S1 = poly_field(j, "S1", where);
    p.M0star = poly_field(j, "M0star", where);
    p.M1star = poly_field(j, "M1star", where);
    p.h = num_field(j, "h", where, 0.0);
    p.v = num_field(j, "v", where, 0.0);
    if (!j.contains("mode")) fail(where, "missing 'mode'");
    p.mode = mode_from_name(string_at(j.at("mode"), where + ".mode"));
    return p;
}

AdaptiveConfig adaptive_from_jobj(const json& j, const std::string& where,
                                  const ParseOverrides& ov) {
    check_keys(j, where,
               {"order", "theta0", "omega_lo", "omega_hi", "F", "k_syn", "sylv_min",
                "resynthesize", "options"});
    long long n = int_field(j, "order", where, 0);
    if (n < 1) fail(where, "'order' must be a positive integer");
    if (!j.contains("theta0")) fail(where, "missing 'theta0'");
    Eigen::VectorXd th = vec_at(j.at("theta0"), where + ".theta0");
    AdaptiveConfig cfg{};
    cfg.theta0 = ParameterVector(static_cast<int>(n), th);
    cfg.F = poly_required(j, "F", where);
    const bool has_lo = j.contains("omega_lo"), has_hi = j.contains("omega_hi");
    if (has_lo != has_hi) fail(where, "omega_lo and omega_hi come together");
    if (has_lo) {
        Eigen::VectorXd lo = vec_at(j.at("omega_lo"), where + ".omega_lo");
        Eigen::VectorXd hi = vec_at(j.at("omega_hi"), where + ".omega_hi");
        if (lo.size() != th.size() || hi.size() != th.size())
            fail(where, "omega bounds must match theta0 in length");
        cfg.omega.resize(th.size(), 2);
        cfg.omega.col(0) = lo;
        cfg.omega.col(1) = hi;
    } else {
        cfg.omega = default_box(cfg.theta0);
    }
    cfg.k_syn = ov.k_syn ? *ov.k_syn
                         : static_cast<int>(int_field(j, "k_syn", where, 10));
    cfg.sylv_min = num_field(j, "sylv_min", where, 1e-8);
    cfg.resynthesize = bool_field(j, "resynthesize", where, true);
    if (j.contains("options")) {
        const json& o = j.at("options");
        const std::string wo = where + ".options";
        check_keys(o, wo,
                   {"alpha1", "g", "rho0", "eps1", "eps2", "p0", "p_min",
                    "floor_frac"});
        cfg.opts.alpha1 = num_field(o, "alpha1", wo, cfg.opts.alpha1);
        cfg.opts.g = num_field(o, "g", wo, cfg.opts.g);
        cfg.opts.rho0 = num_field(o, "rho0", wo, cfg.opts.rho0);
        cfg.opts.eps1 = num_field(o, "eps1", wo, cfg.opts.eps1);
        cfg.opts.eps2 = num_field(o, "eps2", wo, cfg.opts.eps2);
        cfg.opts.p0 = num_field(o, "p0", wo, cfg.opts.p0);
        cfg.opts.p_min = num_field(o, "p_min", wo, cfg.opts.p_min);
        cfg.opts.floor_frac = num_field(o, "floor_frac", wo, cfg.opts.floor_frac);
    }
    return cfg;
}

SynthesisSpec synth_from_jobj(const json& j, const std::string& where,
                              ControllerKind kind) {
    check_keys(j, where, {"F0", "M0star", "M1star", "Mm", "T", "L", "v", "v1"});
    SynthesisSpec sp;
    sp.kind = kind == ControllerKind::matching ? SynthesisSpec::Kind::matching
                                               : SynthesisSpec::Kind::pole_placement;
    sp.F0 = poly_required(j, "F0", where);
    if (sp.kind == SynthesisSpec::Kind::matching) {
        sp.Mm = poly_required(j, "Mm", where);
        if (j.contains("M0star") || j.contains("M1star"))
            fail(where, "matching synthesis takes Mm, not M0star/M1star");
    } else {
        sp.M0star = poly_required(j, "M0star", where);
        sp.M1star = poly_field(j, "M1star", where);
        if (j.contains("Mm")) fail(where, "pole placement takes M0star, not Mm");
    }
    if (j.contains("T")) sp.T = poly_at(j.at("T"), where + ".T");
    if (j.contains("L")) sp.L = poly_at(j.at("L"), where + ".L");
    sp.v = num_field(j, "v", where, 0.0);
    sp.v1 = num_field(j, "v1", where, 0.0);
    return sp;
}

ScenarioDoc parse_scenario_json(const json& j, const ParseOverrides& ov) {
    check_keys(j, "scenario",
               {"system", "disturbance", "reference", "controller", "sim",
                "tolerances"});
    ScenarioDoc doc;

    if (j.contains("tolerances")) {
        const json& t = j.at("tolerances");
        check_keys(t, "tolerances",
                   {"tol_rank", "tol_decomp", "cond_max", "trim_tol", "dioph_tol",
                    "drazin_tol"});
        doc.tols.tol_rank = num_field(t, "tol_rank", "tolerances", doc.tols.tol_rank);
        doc.tols.tol_decomp =
            num_field(t, "tol_decomp", "tolerances", doc.tols.tol_decomp);
        doc.tols.cond_max = num_field(t, "cond_max", "tolerances", doc.tols.cond_max);
        doc.tols.trim_tol = num_field(t, "trim_tol", "tolerances", doc.tols.trim_tol);
        doc.tols.dioph_tol =
            num_field(t, "dioph_tol", "tolerances", doc.tols.dioph_tol);
        doc.tols.drazin_tol =
            num_field(t, "drazin_tol", "tolerances", doc.tols.drazin_tol);
    }
    if (ov.tol_rank) doc.tols.tol_rank = *ov.tol_rank;
    if (ov.tol_decomp) doc.tols.tol_decomp = *ov.tol_decomp;

    if (!j.contains("system")) fail("scenario", "missing 'system'");
    const json& s = j.at("system");
    check_keys(s, "system", {"E", "A", "b", "d", "c", "h"});
    if (!s.contains("E") || !s.contains("A") || !s.contains("b") || !s.contains("c"))
        fail("system", "E, A, b, c are required");
    doc.sys.E = mat_at(s.at("E"), "system.E");
    doc.sys.A = mat_at(s.at("A"), "system.A");
    doc.sys.b = vec_at(s.at("b"), "system.b");
    doc.sys.c = vec_at(s.at("c"), "system.c");
    doc.sys.d = s.contains("d") ? vec_at(s.at("d"), "system.d")
                                : Eigen::VectorXd::Zero(doc.sys.E.rows()).eval();
    doc.sys.h = num_field(s, "h", "system", 1.0);

    const json* simj = j.contains("sim") ? &j.at("sim") : nullptr;
    if (simj) {
        check_keys(*simj, "sim", {"t_end", "dt", "seed", "z10", "psi"});
        doc.t_end = num_field(*simj, "t_end", "sim", doc.t_end);
        doc.dt = num_field(*simj, "dt", "sim", doc.dt);
        doc.seed = static_cast<unsigned int>(int_field(*simj, "seed", "sim", 1));
    }
    if (ov.seed) doc.seed = *ov.seed;

    // signals parse in a fixed order so derived seeds are reproducible
    unsigned int counter = 0;
    if (j.contains("reference"))
        doc.reference = parse_signal(j.at("reference"), "reference", doc.seed, counter);
    if (j.contains("disturbance")) {
        const json& d = j.at("disturbance");
        check_keys(d, "disturbance", {"eta1", "eta2"});
        for (const char* key : {"eta1", "eta2"}) {
            if (!d.contains(key)) continue;
            const json& arr = d.at(key);
            if (!arr.is_array())
                fail(std::string("disturbance.") + key, "expected an array");
            auto& dst = key == std::string("eta1") ? doc.eta1 : doc.eta2;
            for (size_t i = 0; i < arr.size(); ++i)
                dst.push_back(parse_signal(arr[i],
                                           std::string("disturbance.") + key + "[" +
                                               std::to_string(i) + "]",
                                           doc.seed, counter));
        }
    }
    if (simj && simj->contains("z10")) doc.z10 = vec_at(simj->at("z10"), "sim.z10");
    if (simj && simj->contains("psi"))
        doc.psi = parse_signal(simj->at("psi"), "sim.psi", doc.seed, counter);

    if (j.contains("controller")) {
        const json& c = j.at("controller");
        check_keys(c, "controller",
                   {"mode", "params", "adaptive", "synthesis", "compensator",
                    "lambda", "v1"});
        std::string m = c.contains("mode")
                            ? string_at(c.at("mode"), "controller.mode")
                            : std::string("known");
        if (m == "known")
            doc.kind = ControllerKind::known;
        else if (m == "adaptive")
            doc.kind = ControllerKind::adaptive;
        else if (m == "matching")
            doc.kind = ControllerKind::matching;
        else
            fail("controller.mode", "unknown mode '" + m + "'");
        if (c.contains("params"))
            doc.params = params_from_jobj(c.at("params"), "controller.params");
        if (c.contains("adaptive"))
            doc.adaptive = adaptive_from_jobj(c.at("adaptive"), "controller.adaptive", ov);
        if (c.contains("synthesis"))
            doc.synthesis = synth_from_jobj(c.at("synthesis"), "controller.synthesis",
                                            doc.kind);
        doc.compensator = bool_field(c, "compensator", "controller", false);
        if (c.contains("lambda"))
            doc.lambda = poly_at(c.at("lambda"), "controller.lambda");
        doc.v1 = num_field(c, "v1", "controller", 0.0);
        if (doc.kind == ControllerKind::adaptive && !doc.adaptive)
            fail("controller", "adaptive mode needs an 'adaptive' section");
        if (doc.kind != ControllerKind::adaptive && doc.adaptive)
            fail("controller", "'adaptive' section present but mode is not adaptive");
    }
    return doc;
}

}  // namespace

Scenario ScenarioDoc::to_scenario() const {
    if (!params)
        throw ValidationError("scenario has no controller.params to close the loop");
    Scenario sc;
    sc.sys = sys;
    sc.reference = reference;
    sc.eta1 = eta1;
    sc.eta2 = eta2;
    sc.controller = *params;
    if (kind == ControllerKind::adaptive) sc.adaptive = adaptive;
    sc.compensator = compensator;
    sc.lambda = lambda;
    sc.t_end = t_end;
    sc.dt = dt;
    sc.v1 = v1;
    sc.z10 = z10;
    sc.psi = psi;
    return sc;
}

ScenarioDoc parse_scenario_text(const std::string& text, const ParseOverrides& ov) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("JSON parse error: ") + e.what());
    }
    return parse_scenario_json(j, ov);
}

ScenarioDoc parse_scenario_file(const std::string& path, const ParseOverrides& ov) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read scenario file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario_text(buf.str(), ov);
}

namespace {

std::string poly_json(const Polynomial& p) {
    std::string out = "[";
    for (int i = 0; i <= p.degree(); ++i) {
        if (i) out += ", ";
        out += g15(p.coeff(i));
    }
    out += "]";
    return out;
}

}  // namespace

std::string controller_params_to_json(const ControllerParams& p) {
    std::ostringstream o;
    o << "{\n";
    o << "  \"F\": " << poly_json(p.F) << ",\n";
    o << "  \"F0\": " << poly_json(p.F0) << ",\n";
    o << "  \"T\": " << poly_json(p.T) << ",\n";
    o << "  \"L\": " << poly_json(p.L) << ",\n";
    o << "  \"R0\": " << poly_json(p.R0) << ",\n";
    o << "  \"R1\": " << poly_json(p.R1) << ",\n";
    o << "  \"S0\": " << poly_json(p.S0) << ",\n";
    o << "  \"S1\": " << poly_json(p.S1) << ",\n";
    o << "  \"M0star\": " << poly_json(p.M0star) << ",\n";
    o << "  \"M1star\": " << poly_json(p.M1star) << ",\n";
    o << "  \"h\": " << g15(p.h) << ",\n";
    o << "  \"v\": " << g15(p.v) << ",\n";
    o << "  \"mode\": \"" << mode_name(p.mode) << "\"\n";
    o << "}\n";
    return o.str();
}

ControllerParams controller_params_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("JSON parse error: ") + e.what());
    }
    return params_from_jobj(j, "params");
}

std::string trajectory_csv(const RunResult& r) {
    const int len = static_cast<int>(r.traj.t.size());
    const int n1 = static_cast<int>(r.traj.z1.rows());
    const int n2 = static_cast<int>(r.traj.z2.rows());
    std::ostringstream o;
    o << "t,y,u,u_c,u0,q";
    for (int k = 0; k < n1; ++k) o << ",z1_" << k;
    for (int k = 0; k < n2; ++k) o << ",z2_" << k;
    o << "\n";
    for (int i = 0; i < len; ++i) {
        o << g15(r.traj.t[i]) << ',' << g15(r.traj.y[i]) << ',' << g15(r.traj.u[i])
          << ',' << g15(i < static_cast<int>(r.u_c.size()) ? r.u_c[i] : 0.0) << ','
          << g15(i < static_cast<int>(r.u0.size()) ? r.u0[i] : 0.0) << ','
          << g15(i < static_cast<int>(r.q.size()) ? r.q[i] : 0.0);
        for (int k = 0; k < n1; ++k) o << ',' << g15(r.traj.z1(k, i));
        for (int k = 0; k < n2; ++k) o << ',' << g15(r.traj.z2(k, i));
        o << "\n";
    }
    return o.str();
}

std::string estimator_csv(const RunResult& r) {
    const int rows = static_cast<int>(r.estimator_trace.rows());
    const int cols = static_cast<int>(r.estimator_trace.cols());
    if (cols < 6) return std::string();
    const int d = cols - 6;
    std::ostringstream o;
    o << "t,e,s,b,gamma";
    for (int k = 0; k < d; ++k) o << ",theta_" << k;
    o << ",frozen\n";
    for (int i = 0; i < rows; ++i) {
        for (int c = 0; c < cols; ++c) {
            if (c) o << ',';
            o << g15(r.estimator_trace(i, c));
        }
        o << "\n";
    }
    return o.str();
}

std::string diagnostics_json(const RunResult& r) {
    const auto& d = r.diagnostics;
    std::ostringstream o;
    o << "{\n";
    o << "  \"blowup\": " << jbool(d.blowup) << ",\n";
    o << "  \"blowup_t\": " << jnum(d.blowup_t) << ",\n";
    o << "  \"samples\": " << r.traj.t.size() << ",\n";
    o << "  \"decomposition_residual\": " << jnum(d.decomposition_residual) << ",\n";
    o << "  \"max_state_norm\": " << jnum(d.max_state_norm) << ",\n";
    o << "  \"max_abs_y\": " << jnum(d.max_abs_y) << ",\n";
    o << "  \"max_abs_u\": " << jnum(d.max_abs_u) << ",\n";
    o << "  \"resyntheses\": " << d.resyntheses << ",\n";
    o << "  \"resynthesis_failures\": " << d.resynthesis_failures << ",\n";
    o << "  \"covariance_degenerate\": " << jbool(d.covariance_degenerate) << ",\n";
    o << "  \"final_gamma\": " << jnum(d.final_gamma) << ",\n";
    o << "  \"final_s\": " << jnum(d.final_s) << "\n";
    o << "}\n";
    return o.str();
}

std::string analysis_report_json(const DescriptorSystem& sys, const Tolerances& tols) {
    sys.validate();
    RegularityReport reg = check_regularity(sys);
    if (!reg.regular) return "{\n  \"regular\": false\n}\n";
    WeierstrassForm wf = weierstrass_decompose(sys, tols);
    PencilPolynomials pp = pencil_polynomials(sys, tols);
    bool impulse_free = is_impulse_free(sys, tols);
    StructuralReport ctr = controllability_test(wf, tols.tol_rank);
    StructuralReport obs = observability_test(wf, tols.tol_rank);
    MinimalityReport min = minimality_check(wf, pp, tols.tol_rank);
    std::ostringstream o;
    o << "{\n";
    o << "  \"regular\": true,\n";
    o << "  \"index\": " << wf.ell << ",\n";
    o << "  \"impulse_free\": " << jbool(impulse_free) << ",\n";
    o << "  \"n1\": " << wf.n1 << ",\n";
    o << "  \"n2\": " << wf.n2 << ",\n";
    o << "  \"controllable\": " << jbool(ctr.ok) << ",\n";
    o << "  \"observable\": " << jbool(obs.ok) << ",\n";
    o << "  \"minimal\": " << jbool(min.minimal) << ",\n";
    o << "  \"M\": " << poly_json(pp.M) << ",\n";
    o << "  \"Delta0\": " << poly_json(pp.Delta0) << ",\n";
    o << "  \"Delta1\": " << poly_json(pp.Delta1) << ",\n";
    o << "  \"decomposition_residual\": " << jnum(wf.residual) << "\n";
    o << "}\n";
    return o.str();
}

}  // namespace sdc
