#include "sdc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <utility>

namespace sdc {

namespace {

constexpr double kStrict = 1e-12;
constexpr double kBlowup = 1e9;
constexpr int kHarmonics = 16;
constexpr double kTwoPi = 6.283185307179586;

// k-th derivative of a 1/f chain (f monic, deg n); k == n closes through the
// dynamics row with the raw input
double chain_value(const Polynomial& f, int n, const double* x, double input, int k) {
    if (k < n) return x[k];
    double top = input;
    for (int j = 0; j < n; ++j) top -= f.coeff(j) * x[j];
    return top;
}

void chain_deriv(const Polynomial& f, int n, const double* x, double input,
                 double* dx) {
    for (int i = 0; i + 1 < n; ++i) dx[i] = x[i + 1];
    if (n > 0) dx[n - 1] = chain_value(f, n, x, input, n);
}

// cubic Lagrange read of a recorded grid column; exact hits return the stored
// value, the stencil clamps at the ends
double grid_interp(const std::vector<std::vector<double>>& hist, int comp, double dt,
                   double tau) {
    int count = static_cast<int>(hist.size());
    if (count == 0) throw HistoryUnderflow("no recorded history");
    double pos = tau / dt;
    int nearest = static_cast<int>(std::llround(pos));
    if (nearest >= 0 && nearest < count &&
        std::abs(pos - nearest) <= 1e-9 * std::max(1.0, std::abs(pos)))
        return hist[nearest][comp];
    int start = std::min(static_cast<int>(std::floor(pos)) - 1, count - 4);
    start = std::max(start, 0);
    int npts = std::min(4, count - start);
    double acc = 0.0;
    for (int i = 0; i < npts; ++i) {
        double li = 1.0;
        for (int j = 0; j < npts; ++j) {
            if (j == i) continue;
            li *= (pos - (start + j)) / static_cast<double>(i - j);
        }
        acc += li * hist[start + i][comp];
    }
    return acc;
}

int checked_delay_steps(double h, double dt) {
    if (h <= 0.0) return 0;
    double ratio = h / dt;
    int steps = static_cast<int>(std::llround(ratio));
    if (steps < 1 || std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio))
        throw StepTooLarge("step size must divide the delay exactly");
    return steps;
}

// N(0,1) from two raw engine words; spelled out so the stream is identical
// on every platform
double normal_draw(std::mt19937& eng) {
    double u1 = (static_cast<double>(eng()) + 1.0) / 4294967296.0;
    double u2 = static_cast<double>(eng()) / 4294967296.0;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

VectorSmoothSignal realize_stack(const std::vector<SignalSpec>& specs, int dim,
                                 const char* name) {
    if (specs.empty()) return VectorSmoothSignal(dim);
    if (static_cast<int>(specs.size()) != dim)
        throw ValidationError(std::string(name) + " needs " + std::to_string(dim) +
                              " component specs or none");
    std::vector<SmoothSignal> comps;
    comps.reserve(specs.size());
    for (const auto& s : specs) comps.push_back(s.realize());
    return VectorSmoothSignal::from_components(std::move(comps));
}

// zero-state phase chain of 1/f driven by sig over [t0, t0 + steps*dt),
// one row per step start; rows hold all chain values plus the top derivative
struct ChainPre {
    std::vector<std::vector<double>> rows;
    Eigen::VectorXd z;
};

ChainPre preintegrate_chain(const Polynomial& f, int n, const SmoothSignal& sig,
                            double t0, int steps, double dt, bool descending) {
    ChainPre out;
    out.z = Eigen::VectorXd::Zero(n);
    out.rows.reserve(steps);
    auto rhs = [&](double tt, const Eigen::VectorXd& zz) {
        Eigen::VectorXd dz(n);
        chain_deriv(f, n, zz.data(), sig(tt), dz.data());
        return dz;
    };
    for (int j = 0; j < steps; ++j) {
        double t = t0 + j * dt;
        std::vector<double> row(n + 1);
        for (int k = 0; k <= n; ++k)
            row[descending ? n - k : k] = chain_value(f, n, out.z.data(), sig(t), k);
        out.rows.push_back(std::move(row));
        Eigen::VectorXd k1 = rhs(t, out.z);
        Eigen::VectorXd k2 = rhs(t + 0.5 * dt, out.z + 0.5 * dt * k1);
        Eigen::VectorXd k3 = rhs(t + 0.5 * dt, out.z + 0.5 * dt * k2);
        Eigen::VectorXd k4 = rhs(t + dt, out.z + dt * k3);
        out.z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SignalSpec

SmoothSignal SignalSpec::realize() const {
    switch (kind) {
        case Kind::zero:
            return SmoothSignal::zero();
        case Kind::constant:
            return SmoothSignal::constant(value);
        case Kind::sinusoid:
            return SmoothSignal::sinusoid(amplitude, omega, phase);
        case Kind::noise:
            break;
    }
    if (cutoff <= 0.0) throw ValidationError("noise cutoff must be positive");
    std::mt19937 eng(seed);
    std::vector<double> ca(kHarmonics), cb(kHarmonics), w(kHarmonics);
    double norm1 = 0.0;
    for (int k = 0; k < kHarmonics; ++k) {
        ca[k] = normal_draw(eng);
        cb[k] = normal_draw(eng);
        w[k] = cutoff * (k + 1) / kHarmonics;
        norm1 += std::hypot(ca[k], cb[k]);
    }
    // l1 normalization keeps |signal| <= amplitude for every draw
    double scale = norm1 > 1e-300 ? amplitude / norm1 : 0.0;
    auto eval = [ca, cb, w, scale](double t, int m) {
        double shift = m * (kTwoPi / 4.0);
        double acc = 0.0;
        for (int k = 0; k < kHarmonics; ++k) {
            double wm = std::pow(w[k], m);
            acc += wm * (ca[k] * std::cos(w[k] * t + shift) +
                         cb[k] * std::sin(w[k] * t + shift));
        }
        return scale * acc;
    };
    return SmoothSignal(eval, std::numeric_limits<int>::max());
}

double SignalSpec::bound() const {
    switch (kind) {
        case Kind::zero:
            return 0.0;
        case Kind::constant:
            return std::abs(value);
        case Kind::sinusoid:
        case Kind::noise:
            return std::abs(amplitude);
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// run_closed_loop

RunResult run_closed_loop(const Scenario& sc) {
    sc.sys.validate();
    if (sc.dt <= 0.0) throw ValidationError("dt must be positive");
    if (sc.t_end < sc.dt) throw ValidationError("t_end must cover at least one step");

    WeierstrassForm wf = weierstrass_decompose(sc.sys);
    if (wf.ell > 1)
        throw ValidationError(
            "fast nilpotency index exceeds one; the pointwise fast solve needs an "
            "impulse-free plant");
    PencilPolynomials pp = pencil_polynomials(sc.sys);

    const int n1 = wf.n1;
    const int n2 = wf.n2;
    const double h = sc.sys.h;
    const double dt = sc.dt;

    ControllerParams prm = sc.controller;
    prm.check_degrees();

    const bool plant_delay =
        sc.sys.d.size() > 0 && sc.sys.d.cwiseAbs().maxCoeff() > 0.0;
    const bool law_delay =
        !prm.R1.trimmed().is_zero() || !prm.S1.trimmed().is_zero();
    if (law_delay && h <= 0.0)
        throw ValidationError("delayed controller terms need a positive plant delay");
    if ((plant_delay || law_delay) && h > 0.0 &&
        std::abs(prm.h - h) > 1e-9 * std::max(1.0, h))
        throw ValidationError("controller delay does not match the plant delay");

    const bool adaptive = sc.adaptive.has_value();
    if (adaptive && sc.compensator)
        throw ValidationError("adaptive runs do not drive the compensation channel");

    const bool uses_delay =
        h > 0.0 && (plant_delay || law_delay || sc.compensator || adaptive);
    int hsteps = 0;
    if (uses_delay) {
        hsteps = checked_delay_steps(h, dt);
        if (sc.t_end < 2.0 * h - 1e-9 * std::max(1.0, h))
            throw ValidationError("t_end must be at least twice the delay");
    }

    const QChannel qmode = sc.compensator ? QChannel::direct_q : QChannel::none;
    ControlLaw law(prm, qmode, sc.lambda);
    const int nl = law.n_lambda();
    if (prm.S0.trimmed().degree() >= nl)
        throw ValidationError(
            "deg S0 must stay below deg lambda so the measurement path has no "
            "feedthrough");

    const AdaptiveConfig* cfg = adaptive ? &*sc.adaptive : nullptr;
    int ntheta = 0;
    EstimatorState est;
    if (adaptive) {
        ntheta = cfg->theta0.n;
        if (ntheta < 1) throw ValidationError("adaptive order must be at least 1");
        Polynomial f = cfg->F.trimmed();
        if (f.degree() != ntheta || std::abs(f.leading_coeff() - 1.0) > 1e-9)
            throw ValidationError("estimation filter must be monic of the adaptive order");
        if (!is_hurwitz(f, kStrict))
            throw NotHurwitz("estimation filter must be Hurwitz");
        if (cfg->k_syn < 1) throw ValidationError("k_syn must be >= 1");
        if (cfg->resynthesize) {
            int nf0 = prm.F0.trimmed().degree();
            if (prm.R0.trimmed().degree() != nf0 + ntheta - 1)
                throw ValidationError(
                    "initial R0 degree must equal deg F0 + n - 1 so redesign swaps "
                    "keep the realization size");
            if (prm.M0star.trimmed().degree() != 2 * (nf0 + ntheta) - 1)
                throw ValidationError(
                    "M0star degree must equal 2 (deg F0 + n) - 1 for redesigns");
        }
        double dist_bound = 0.0;
        for (const auto& s : sc.eta1) dist_bound = std::max(dist_bound, s.bound());
        for (const auto& s : sc.eta2) dist_bound = std::max(dist_bound, s.bound());
        if (dist_bound > 0.0 && cfg->opts.eps2 <= 0.0)
            throw ValidationError(
                "bounded disturbance needs a positive eps2 dead-zone floor");
        est = make_estimator(cfg->theta0, cfg->omega, cfg->opts);
    }

    if (sc.z10.size() != 0 && sc.z10.size() != n1)
        throw ValidationError("z10 must be empty or of the slow dimension");

    SmoothSignal ref = sc.reference.realize();
    SmoothSignal psi = sc.psi.realize();
    VectorSmoothSignal eta1s = realize_stack(sc.eta1, n1, "eta1");
    VectorSmoothSignal eta2s = realize_stack(sc.eta2, n2, "eta2");

    std::optional<Compensator> comp;
    SmoothSignal wv = SmoothSignal::zero();
    if (sc.compensator) {
        comp.emplace(prm, pp, sc.v1);
        int n = sc.sys.n();
        int mo = std::min(eta1s.max_order(), eta2s.max_order());
        VectorSmoothSignal eta_all(
            [eta1s, eta2s, n1, n2](double t, int m) {
                Eigen::VectorXd v(n1 + n2);
                if (n1 > 0) v.head(n1) = eta1s(t, m);
                if (n2 > 0) v.tail(n2) = eta2s(t, m);
                return v;
            },
            n, mo);
        VectorSmoothSignal v0s =
            VectorSmoothSignal::transform(wf.Q.inverse(), eta_all);
        wv = Compensator::forcing(prm, pp, v0s);
    }

    const int law_off = n1;
    const int comp_off = law_off + law.dim();
    const int comp_dim = comp ? comp->dim() : 0;
    const int est_off = comp_off + comp_dim;
    const int total = est_off + (adaptive ? 2 * ntheta : 0);

    const int rec = law.rec_len();
    const bool keep_u = hsteps > 0 && plant_delay;
    const bool keep_y2h = comp && comp->needs_y_history();
    const bool keep_q = comp && comp->needs_q_history();
    const bool keep_law_y = hsteps > 0 && law.needs_delayed_y();
    const bool keep_law_u = hsteps > 0 && law.needs_delayed_u();
    std::vector<std::vector<double>> u_hist, y_hist, q_hist, law_y_hist, law_u_hist,
        est_u_hist;

    Eigen::VectorXd X = Eigen::VectorXd::Zero(total);
    if (sc.z10.size() == n1 && n1 > 0) X.head(n1) = sc.z10;

    if (hsteps > 0) {
        if (keep_u)
            for (int j = 0; j < hsteps; ++j) u_hist.push_back({psi(-h + j * dt)});
        if (keep_y2h) y_hist.assign(2 * hsteps, {0.0});
        if (keep_q) q_hist.assign(hsteps, {0.0});
        if (keep_law_y) law_y_hist.assign(hsteps, std::vector<double>(rec, 0.0));
        // warm the control chain from the pre-history so the realization
        // identity holds from t = 0
        ChainPre cp = preintegrate_chain(law.lambda(), nl, psi, -h, hsteps, dt, false);
        if (keep_law_u) law_u_hist = cp.rows;
        X.segment(law_off, nl) = cp.z;
        if (adaptive) {
            ChainPre ep = preintegrate_chain(cfg->F, ntheta, psi, -h, hsteps, dt, true);
            est_u_hist = ep.rows;
            X.segment(est_off + ntheta, ntheta) = ep.z;
        }
    }

    const int N = static_cast<int>(std::floor(sc.t_end / dt + 1e-9));
    RunResult out;
    out.traj.z1.resize(n1, N + 1);
    out.traj.z2.resize(n2, N + 1);
    out.traj.t.reserve(N + 1);
    out.traj.y.reserve(N + 1);
    out.traj.u.reserve(N + 1);
    out.u_c.reserve(N + 1);
    out.u0.reserve(N + 1);
    out.q.reserve(N + 1);
    if (adaptive)
        out.estimator_trace.resize(N + 1, 6 + cfg->theta0.dim());
    out.diagnostics.decomposition_residual = wf.residual;

    // fold an instantaneous d-path into the direct terms
    Eigen::VectorXd a1eff = wf.alpha1, b1eff = wf.beta1;
    Eigen::VectorXd a2eff = wf.alpha2, b2eff = wf.beta2;
    if (h <= 0.0) {
        a1eff += wf.beta1;
        b1eff.setZero();
        a2eff += wf.beta2;
        b2eff.setZero();
    }

    struct Eval {
        double u = 0.0, y = 0.0, q = 0.0, u0 = 0.0, ucv = 0.0;
        Eigen::VectorXd z2;
    };
    std::vector<double> ydel(rec), udel(rec);

    // one evaluation of the loop at (tau, x): delayed reads, compensation
    // channel, control, pointwise fast solve, output, and optionally the
    // packed state derivative
    auto stage = [&](double tau, const Eigen::VectorXd& x, bool want_u0,
                     Eigen::VectorXd* dx) {
        Eval ev;
        ev.ucv = ref(tau);
        double u_del_raw = keep_u ? grid_interp(u_hist, 0, dt, tau) : 0.0;
        ControlLaw::Inputs in;
        in.t = tau;
        in.u_c = &ref;
        in.y = 0.0;
        if (keep_law_y) {
            for (int k = 0; k < rec; ++k) ydel[k] = grid_interp(law_y_hist, k, dt, tau);
            in.y_del = ydel.data();
        }
        if (keep_law_u) {
            for (int k = 0; k < rec; ++k) udel[k] = grid_interp(law_u_hist, k, dt, tau);
            in.u_del = udel.data();
        }
        Compensator::Inputs ci;
        if (comp) {
            ci.wv = wv(tau);
            ci.y_2h = keep_y2h ? grid_interp(y_hist, 0, dt, tau) : 0.0;
            ci.q_h = keep_q ? grid_interp(q_hist, 0, dt, tau) : 0.0;
            ev.q = comp->q_at(x.segment(comp_off, comp_dim), ci);
            if (want_u0) ev.u0 = comp->u0_at(x.segment(comp_off, comp_dim), ev.q);
        }
        in.q = ev.q;
        ev.u = law.output_u(x.segment(law_off, law.dim()), in);
        if (n2 > 0) {
            ev.z2 = -(a2eff * ev.u + b2eff * u_del_raw + eta2s(tau));
            ev.y = wf.gamma1.dot(x.head(n1)) + wf.gamma2.dot(ev.z2);
        } else {
            ev.z2.resize(0);
            ev.y = wf.gamma1.dot(x.head(n1));
        }
        if (dx) {
            dx->resize(total);
            dx->head(n1) =
                wf.W * x.head(n1) + a1eff * ev.u + b1eff * u_del_raw + eta1s(tau);
            in.y = ev.y;
            dx->segment(law_off, law.dim()) =
                law.deriv(x.segment(law_off, law.dim()), in);
            if (comp)
                dx->segment(comp_off, comp_dim) =
                    comp->deriv(x.segment(comp_off, comp_dim), ci, ev.q);
            if (adaptive) {
                chain_deriv(cfg->F, ntheta, x.data() + est_off, ev.y,
                            dx->data() + est_off);
                chain_deriv(cfg->F, ntheta, x.data() + est_off + ntheta, ev.u,
                            dx->data() + est_off + ntheta);
            }
        }
        return ev;
    };

    auto& dg = out.diagnostics;
    Eigen::VectorXd k1(total), k2(total), k3(total), k4(total);
    for (int i = 0; i <= N; ++i) {
        const double t = i * dt;
        Eval ev = stage(t, X, true, nullptr);

        if (keep_u) u_hist.push_back({ev.u});
        if (keep_y2h) y_hist.push_back({ev.y});
        if (keep_q) q_hist.push_back({ev.q});
        if (keep_law_y) {
            std::vector<double> row(rec);
            law.record_y_chain(X.segment(law_off, law.dim()), ev.y, row.data());
            law_y_hist.push_back(std::move(row));
        }
        if (keep_law_u) {
            std::vector<double> row(rec);
            law.record_u_chain(X.segment(law_off, law.dim()), ev.u, row.data());
            law_u_hist.push_back(std::move(row));
        }
        if (adaptive && hsteps > 0) {
            std::vector<double> row(ntheta + 1);
            for (int k = 0; k <= ntheta; ++k)
                row[ntheta - k] =
                    chain_value(cfg->F, ntheta, X.data() + est_off + ntheta, ev.u, k);
            est_u_hist.push_back(std::move(row));
        }

        out.traj.t.push_back(t);
        if (n1 > 0) out.traj.z1.col(i) = X.head(n1);
        if (n2 > 0) out.traj.z2.col(i) = ev.z2;
        out.traj.y.push_back(ev.y);
        out.traj.u.push_back(ev.u);
        out.u_c.push_back(ev.ucv);
        out.u0.push_back(ev.u0);
        out.q.push_back(ev.q);
        dg.max_state_norm = std::max(dg.max_state_norm, X.norm());
        dg.max_abs_y = std::max(dg.max_abs_y, std::abs(ev.y));
        dg.max_abs_u = std::max(dg.max_abs_u, std::abs(ev.u));

        if (adaptive) {
            Eigen::VectorXd phi;
            if (hsteps > 0) {
                phi = assemble_regressor(cfg->F, ntheta, X.data() + est_off,
                                         X.data() + est_off + ntheta, ev.u,
                                         est_u_hist[i].data());
            } else {
                std::vector<double> row(ntheta + 1);
                for (int k = 0; k <= ntheta; ++k)
                    row[ntheta - k] = chain_value(cfg->F, ntheta,
                                                  X.data() + est_off + ntheta, ev.u, k);
                phi = assemble_regressor(cfg->F, ntheta, X.data() + est_off,
                                         X.data() + est_off + ntheta, ev.u, row.data());
            }
            estimator_update(est, phi, ev.y, dt);
            const int td = est.theta_hat.dim();
            out.estimator_trace(i, 0) = t;
            out.estimator_trace(i, 1) = est.e;
            out.estimator_trace(i, 2) = est.s;
            out.estimator_trace(i, 3) = est.b;
            out.estimator_trace(i, 4) = est.gamma;
            out.estimator_trace.row(i).segment(5, td) = est.theta_hat.theta.transpose();
            out.estimator_trace(i, 5 + td) = est.frozen ? 1.0 : 0.0;

            if (cfg->resynthesize && i > 0 && i % cfg->k_syn == 0) {
                try {
                    const ControllerParams& cur = law.params();
                    ControllerParams np = adaptive_resynthesis(
                        est.theta_hat, cfg->F, cur.F0, cur.M0star, cur.M1star, cur.T,
                        cur.L, cur.h, cfg->sylv_min);
                    law.swap_params(np);
                    ++dg.resyntheses;
                } catch (const ControllabilityLost&) {
                    // keep the previous controller; counted, not fatal
                    ++dg.resynthesis_failures;
                }
            }
        }

        if (i == N) break;

        stage(t, X, false, &k1);
        stage(t + 0.5 * dt, X + 0.5 * dt * k1, false, &k2);
        stage(t + 0.5 * dt, X + 0.5 * dt * k2, false, &k3);
        stage(t + dt, X + dt * k3, false, &k4);
        Eigen::VectorXd xn = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!xn.allFinite() || xn.norm() > kBlowup) {
            dg.blowup = true;
            dg.blowup_t = t + dt;
            break;
        }
        X = xn;
    }

    const int len = static_cast<int>(out.traj.t.size());
    if (len <= N) {
        out.traj.z1.conservativeResize(Eigen::NoChange, len);
        out.traj.z2.conservativeResize(Eigen::NoChange, len);
        if (adaptive) out.estimator_trace.conservativeResize(len, Eigen::NoChange);
    }
    if (adaptive) {
        dg.covariance_degenerate = est.covariance_degenerate();
        dg.final_gamma = est.gamma;
        dg.final_s = est.s;
    }
    return out;
}

// ---------------------------------------------------------------------------
// run_open_loop_estimation

RunResult run_open_loop_estimation(const Scenario& sc) {
    sc.sys.validate();
    if (sc.dt <= 0.0) throw ValidationError("dt must be positive");
    if (sc.t_end < sc.dt) throw ValidationError("t_end must cover at least one step");
    if (!sc.adaptive)
        throw ValidationError("estimation runs need an adaptive section");

    WeierstrassForm wf = weierstrass_decompose(sc.sys);
    if (wf.ell > 1)
        throw ValidationError(
            "fast nilpotency index exceeds one; the pointwise fast solve needs an "
            "impulse-free plant");

    const int n1 = wf.n1;
    const int n2 = wf.n2;
    const double h = sc.sys.h;
    const double dt = sc.dt;
    const AdaptiveConfig* cfg = &*sc.adaptive;

    const int ntheta = cfg->theta0.n;
    if (ntheta < 1) throw ValidationError("adaptive order must be at least 1");
    Polynomial f = cfg->F.trimmed();
    if (f.degree() != ntheta || std::abs(f.leading_coeff() - 1.0) > 1e-9)
        throw ValidationError("estimation filter must be monic of the adaptive order");
    if (!is_hurwitz(f, kStrict))
        throw NotHurwitz("estimation filter must be Hurwitz");
    double dist_bound = 0.0;
    for (const auto& s : sc.eta1) dist_bound = std::max(dist_bound, s.bound());
    for (const auto& s : sc.eta2) dist_bound = std::max(dist_bound, s.bound());
    if (dist_bound > 0.0 && cfg->opts.eps2 <= 0.0)
        throw ValidationError("bounded disturbance needs a positive eps2 dead-zone floor");
    EstimatorState est = make_estimator(cfg->theta0, cfg->omega, cfg->opts);

    if (sc.z10.size() != 0 && sc.z10.size() != n1)
        throw ValidationError("z10 must be empty or of the slow dimension");

    const bool plant_delay =
        sc.sys.d.size() > 0 && sc.sys.d.cwiseAbs().maxCoeff() > 0.0;
    int hsteps = 0;
    if (h > 0.0) {
        hsteps = checked_delay_steps(h, dt);
        if (sc.t_end < 2.0 * h - 1e-9 * std::max(1.0, h))
            throw ValidationError("t_end must be at least twice the delay");
    }

    SmoothSignal ref = sc.reference.realize();
    SmoothSignal psi = sc.psi.realize();
    VectorSmoothSignal eta1s = realize_stack(sc.eta1, n1, "eta1");
    VectorSmoothSignal eta2s = realize_stack(sc.eta2, n2, "eta2");
    auto u_at = [&](double tau) { return tau >= 0.0 ? ref(tau) : psi(tau); };

    Eigen::VectorXd a1eff = wf.alpha1, b1eff = wf.beta1;
    Eigen::VectorXd a2eff = wf.alpha2, b2eff = wf.beta2;
    if (h <= 0.0) {
        a1eff += wf.beta1;
        b1eff.setZero();
        a2eff += wf.beta2;
        b2eff.setZero();
    }

    const int est_off = n1;
    const int total = n1 + 2 * ntheta;
    Eigen::VectorXd X = Eigen::VectorXd::Zero(total);
    if (sc.z10.size() == n1 && n1 > 0) X.head(n1) = sc.z10;

    std::vector<std::vector<double>> est_u_hist;
    if (hsteps > 0) {
        ChainPre ep = preintegrate_chain(f, ntheta, psi, -h, hsteps, dt, true);
        est_u_hist = ep.rows;
        X.segment(est_off + ntheta, ntheta) = ep.z;
    }

    const int N = static_cast<int>(std::floor(sc.t_end / dt + 1e-9));
    RunResult out;
    out.traj.z1.resize(n1, N + 1);
    out.traj.z2.resize(n2, N + 1);
    out.traj.t.reserve(N + 1);
    out.traj.y.reserve(N + 1);
    out.traj.u.reserve(N + 1);
    out.u_c.reserve(N + 1);
    out.u0.assign(0, 0.0);
    out.estimator_trace.resize(N + 1, 6 + cfg->theta0.dim());
    out.diagnostics.decomposition_residual = wf.residual;

    struct Eval {
        double u = 0.0, y = 0.0;
        Eigen::VectorXd z2;
    };
    auto stage = [&](double tau, const Eigen::VectorXd& x, Eigen::VectorXd* dx) {
        Eval ev;
        ev.u = u_at(tau);
        double u_del = (h > 0.0 && plant_delay) ? u_at(tau - h) : 0.0;
        if (n2 > 0) {
            ev.z2 = -(a2eff * ev.u + b2eff * u_del + eta2s(tau));
            ev.y = wf.gamma1.dot(x.head(n1)) + wf.gamma2.dot(ev.z2);
        } else {
            ev.z2.resize(0);
            ev.y = wf.gamma1.dot(x.head(n1));
        }
        if (dx) {
            dx->resize(total);
            dx->head(n1) =
                wf.W * x.head(n1) + a1eff * ev.u + b1eff * u_del + eta1s(tau);
            chain_deriv(f, ntheta, x.data() + est_off, ev.y, dx->data() + est_off);
            chain_deriv(f, ntheta, x.data() + est_off + ntheta, ev.u,
                        dx->data() + est_off + ntheta);
        }
        return ev;
    };

    auto& dg = out.diagnostics;
    Eigen::VectorXd k1(total), k2(total), k3(total), k4(total);
    for (int i = 0; i <= N; ++i) {
        const double t = i * dt;
        Eval ev = stage(t, X, nullptr);

        std::vector<double> row(ntheta + 1);
        for (int k = 0; k <= ntheta; ++k)
            row[ntheta - k] =
                chain_value(f, ntheta, X.data() + est_off + ntheta, ev.u, k);
        if (hsteps > 0) est_u_hist.push_back(row);

        out.traj.t.push_back(t);
        if (n1 > 0) out.traj.z1.col(i) = X.head(n1);
        if (n2 > 0) out.traj.z2.col(i) = ev.z2;
        out.traj.y.push_back(ev.y);
        out.traj.u.push_back(ev.u);
        out.u_c.push_back(ev.u);
        dg.max_state_norm = std::max(dg.max_state_norm, X.norm());
        dg.max_abs_y = std::max(dg.max_abs_y, std::abs(ev.y));
        dg.max_abs_u = std::max(dg.max_abs_u, std::abs(ev.u));

        const double* urow = hsteps > 0 ? est_u_hist[i].data() : row.data();
        Eigen::VectorXd phi = assemble_regressor(f, ntheta, X.data() + est_off,
                                                 X.data() + est_off + ntheta, ev.u,
                                                 urow);
        estimator_update(est, phi, ev.y, dt);
        const int td = est.theta_hat.dim();
        out.estimator_trace(i, 0) = t;
        out.estimator_trace(i, 1) = est.e;
        out.estimator_trace(i, 2) = est.s;
        out.estimator_trace(i, 3) = est.b;
        out.estimator_trace(i, 4) = est.gamma;
        out.estimator_trace.row(i).segment(5, td) = est.theta_hat.theta.transpose();
        out.estimator_trace(i, 5 + td) = est.frozen ? 1.0 : 0.0;

        if (i == N) break;
        stage(t, X, &k1);
        stage(t + 0.5 * dt, X + 0.5 * dt * k1, &k2);
        stage(t + 0.5 * dt, X + 0.5 * dt * k2, &k3);
        stage(t + dt, X + dt * k3, &k4);
        Eigen::VectorXd xn = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!xn.allFinite() || xn.norm() > kBlowup) {
            dg.blowup = true;
            dg.blowup_t = t + dt;
            break;
        }
        X = xn;
    }

    const int len = static_cast<int>(out.traj.t.size());
    if (len <= N) {
        out.traj.z1.conservativeResize(Eigen::NoChange, len);
        out.traj.z2.conservativeResize(Eigen::NoChange, len);
        out.estimator_trace.conservativeResize(len, Eigen::NoChange);
    }
    dg.covariance_degenerate = est.covariance_degenerate();
    dg.final_gamma = est.gamma;
    dg.final_s = est.s;
    return out;
}

// ---------------------------------------------------------------------------
// run_reference_model

Trajectory run_reference_model(const Polynomial& Mm0in, const Polynomial& Mm1in,
                               const Polynomial& D1S1in,
                               const QuasiPolynomial& numerator, double h,
                               const SmoothSignal& u_c, double t_end, double dt) {
    if (dt <= 0.0) throw ValidationError("dt must be positive");
    if (t_end < dt) throw ValidationError("t_end must cover at least one step");

    Polynomial Mm0 = Mm0in.trimmed();
    if (Mm0.degree() < 1)
        throw DegreeConstraintViolated("reference denominator must have degree >= 1");
    const double lead = Mm0.leading_coeff();
    Mm0 = Mm0 * (1.0 / lead);
    Polynomial Mm1 = Mm1in.trimmed() * (1.0 / lead);
    Polynomial D1S1 = D1S1in.trimmed() * (1.0 / lead);
    if (Mm1.degree() > Mm0.degree() || D1S1.degree() > Mm0.degree())
        throw DegreeConstraintViolated(
            "delayed denominator terms must not exceed deg Mm0");

    std::map<int, Polynomial> terms;
    bool shifted_num = false;
    for (const auto& [k, p] : numerator.terms()) {
        if (k < 0) throw ValidationError("numerator shifts must be causal");
        Polynomial q = p.trimmed() * (1.0 / lead);
        if (q.is_zero()) continue;
        terms[k] = q;
        if (k > 0) shifted_num = true;
    }
    if (shifted_num &&
        std::abs(numerator.delay() - h) > 1e-12 * std::max(1.0, std::abs(h)))
        throw ValidationError("numerator delay must match h");

    if (h <= 0.0 && (!Mm1.is_zero() || !D1S1.is_zero() || shifted_num)) {
        // zero delay: every shifted term acts instantaneously
        Mm0 = (Mm0 + Mm1 + D1S1).trimmed();
        Mm1 = Polynomial{};
        D1S1 = Polynomial{};
        Polynomial p0;
        for (const auto& [k, p] : terms) p0 = p0 + p;
        terms.clear();
        if (!p0.trimmed().is_zero()) terms[0] = p0.trimmed();
        if (Mm0.degree() < 1)
            throw DegreeConstraintViolated(
                "reference denominator must keep degree >= 1");
        double l2 = Mm0.leading_coeff();
        Mm0 = Mm0 * (1.0 / l2);
        for (auto& [k, p] : terms) p = p * (1.0 / l2);
    }

    if (!is_hurwitz(Mm0, kStrict))
        throw NotStable("reference denominator is not Hurwitz");
    const bool self_delay = !Mm1.is_zero() || !D1S1.is_zero();
    int hsteps = 0;
    if (self_delay || shifted_num) hsteps = checked_delay_steps(h, dt);
    if (self_delay) {
        if (!Mm1.is_zero()) {
            double m1 = delay_stability_margin(Mm0, Polynomial{}, Mm1, h, 0.0);
            if (m1 >= 1.0)
                throw NotStable("delayed-term margin " + std::to_string(m1) +
                                " is not below one");
        }
        if (!D1S1.is_zero()) {
            double m2 = delay_stability_margin(Mm0, Mm1, D1S1, h, 0.0);
            if (m2 >= 1.0)
                throw NotStable("twice-delayed margin " + std::to_string(m2) +
                                " is not below one");
        }
    }

    const int d0 = Mm0.degree();
    const int N = static_cast<int>(std::floor(t_end / dt + 1e-9));
    Trajectory tr;
    tr.z1.resize(d0, N + 1);
    tr.z2.resize(0, N + 1);
    tr.t.reserve(N + 1);
    tr.y.reserve(N + 1);
    tr.u.reserve(N + 1);

    // self-delay rows [y, y', ..., y^(d0)] on the grid, zero before the start
    std::vector<std::vector<double>> hist;
    if (self_delay) hist.assign(2 * hsteps, std::vector<double>(d0 + 1, 0.0));

    auto forcing = [&](double tau) {
        double acc = 0.0;
        for (const auto& [k, p] : terms)
            for (int m = 0; m <= p.degree(); ++m)
                acc += p.coeff(m) * u_c(tau - k * h, m);
        return acc;
    };
    auto top_of = [&](double tau, const Eigen::VectorXd& z) {
        double top = forcing(tau);
        for (int k = 0; k < d0; ++k) top -= Mm0.coeff(k) * z[k];
        if (self_delay) {
            for (int k = 0; k <= Mm1.degree(); ++k)
                top -= Mm1.coeff(k) * grid_interp(hist, k, dt, tau + h);
            for (int k = 0; k <= D1S1.degree(); ++k)
                top -= D1S1.coeff(k) * grid_interp(hist, k, dt, tau);
        }
        return top;
    };
    auto rhs = [&](double tau, const Eigen::VectorXd& z) {
        Eigen::VectorXd dz(d0);
        for (int j = 0; j + 1 < d0; ++j) dz[j] = z[j + 1];
        dz[d0 - 1] = top_of(tau, z);
        return dz;
    };

    Eigen::VectorXd z = Eigen::VectorXd::Zero(d0);
    for (int i = 0; i <= N; ++i) {
        const double t = i * dt;
        if (self_delay) {
            std::vector<double> row(d0 + 1);
            for (int k = 0; k < d0; ++k) row[k] = z[k];
            row[d0] = top_of(t, z);
            hist.push_back(std::move(row));
        }
        tr.t.push_back(t);
        tr.z1.col(i) = z;
        tr.y.push_back(z[0]);
        tr.u.push_back(u_c(t));
        if (i == N) break;
        Eigen::VectorXd k1 = rhs(t, z);
        Eigen::VectorXd k2 = rhs(t + 0.5 * dt, z + 0.5 * dt * k1);
        Eigen::VectorXd k3 = rhs(t + 0.5 * dt, z + 0.5 * dt * k2);
        Eigen::VectorXd k4 = rhs(t + dt, z + dt * k3);
        z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!z.allFinite() || z.norm() > kBlowup) throw NumericalBlowup(t + dt);
    }
    return tr;
}

}  // namespace sdc
