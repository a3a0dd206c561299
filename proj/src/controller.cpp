#include "sdc/controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdc {

namespace {

constexpr double kMonicTol = 1e-9;
constexpr double kStrict = 1e-12;        // strict-Hurwitz root margin
constexpr double kCommonRootTol = 1e-6;  // shared-root detection

void require_monic(const Polynomial& p, const char* name) {
    if (p.is_zero() || std::abs(p.leading_coeff() - 1.0) > kMonicTol)
        throw NotMonic(std::string(name) + " must be monic");
}

// |q(r)| tested against the size q could take near r
bool vanishes_at(const Polynomial& q, std::complex<double> r, double tol) {
    if (q.is_zero()) return true;
    int d = std::max(q.degree(), 0);
    double scale = q.max_abs_coeff() * (d + 1) * std::max(1.0, std::pow(std::abs(r), d));
    return std::abs(q.eval(r)) <= tol * scale;
}

bool has_common_root(const Polynomial& p, const Polynomial& q, double tol) {
    if (p.degree() < 1 || q.is_zero()) return false;
    for (const auto& r : p.roots())
        if (vanishes_at(q, r, tol)) return true;
    return false;
}

// value of the k-th derivative of a 1/f chain (f monic, deg n) with states x
// and current raw input; k may reach n via the dynamics row
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

// cubic Lagrange read of a recorded grid column; clamps the stencil to the
// available range, degrading to lower order when fewer points exist
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

}  // namespace

// ---------------------------------------------------------------------------
// FilterRealization

FilterRealization::FilterRealization()
    : A_(0, 0), b_(0), c_(0), d_(1.0), num_({1.0}), den_({1.0}), state_(0) {}

FilterRealization FilterRealization::proper(const Polynomial& num,
                                            const Polynomial& den) {
    Polynomial dt = den.trimmed();
    Polynomial nt = num.trimmed();
    if (dt.is_zero()) throw ZeroPolynomial("realization denominator is zero");
    if (nt.degree() > dt.degree())
        throw DegreeViolation("numerator degree exceeds denominator degree");
    double lead = dt.leading_coeff();
    FilterRealization f;
    f.den_ = dt * (1.0 / lead);
    f.num_ = nt * (1.0 / lead);
    int n = f.den_.degree();
    if (n == 0) {
        f.d_ = f.num_.coeff(0);
        return f;
    }
    auto dv = divide(f.num_, f.den_);
    f.d_ = dv.quotient.coeff(0);
    f.A_ = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i + 1 < n; ++i) f.A_(i, i + 1) = 1.0;
    for (int j = 0; j < n; ++j) f.A_(n - 1, j) = -f.den_.coeff(j);
    f.b_ = Eigen::VectorXd::Zero(n);
    f.b_[n - 1] = 1.0;
    f.c_ = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) f.c_[j] = dv.remainder.coeff(j);
    f.state_ = Eigen::VectorXd::Zero(n);
    return f;
}

double FilterRealization::output_at(const Eigen::Ref<const Eigen::VectorXd>& x,
                                    double input) const {
    double val = d_ * input;
    if (dim() > 0) val += c_.dot(x);
    return val;
}

Eigen::VectorXd FilterRealization::deriv_at(const Eigen::Ref<const Eigen::VectorXd>& x,
                                            double input) const {
    if (dim() == 0) return Eigen::VectorXd(0);
    return A_ * x + b_ * input;
}

double FilterRealization::top_derivative(const Eigen::Ref<const Eigen::VectorXd>& x,
                                         double input) const {
    int n = dim();
    if (n == 0) return d_ * input;
    double top = input;
    for (int j = 0; j < n; ++j) top -= den_.coeff(j) * x[j];
    return top;
}

void FilterRealization::step(double t, double dt,
                             const std::function<double(double)>& input) {
    if (dim() == 0) return;
    auto f = [&](const Eigen::VectorXd& x, double tau) {
        return deriv_at(x, input(tau)).eval();
    };
    Eigen::VectorXd k1 = f(state_, t);
    Eigen::VectorXd k2 = f(state_ + 0.5 * dt * k1, t + 0.5 * dt);
    Eigen::VectorXd k3 = f(state_ + 0.5 * dt * k2, t + 0.5 * dt);
    Eigen::VectorXd k4 = f(state_ + dt * k3, t + dt);
    state_ += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

FilterRealization make_filter(const Polynomial& F) {
    Polynomial Ft = F.trimmed();
    if (Ft.degree() < 1)
        throw DegreeViolation("filter denominator needs degree at least 1");
    require_monic(Ft, "filter denominator");
    if (!is_hurwitz(Ft, kStrict)) throw NotHurwitz("filter denominator must be Hurwitz");
    return FilterRealization::proper(Polynomial::constant(1.0), Ft);
}

// ---------------------------------------------------------------------------
// ControllerParams

const char* mode_name(ControllerMode m) {
    switch (m) {
        case ControllerMode::full_delay: return "full_delay";
        case ControllerMode::delay_free: return "delay_free";
        case ControllerMode::model_matching: return "model_matching";
    }
    return "unknown";
}

ControllerMode mode_from_name(const std::string& s) {
    if (s == "full_delay") return ControllerMode::full_delay;
    if (s == "delay_free") return ControllerMode::delay_free;
    if (s == "model_matching") return ControllerMode::model_matching;
    throw ValidationError("unknown controller mode: " + s);
}

void ControllerParams::check_degrees() const {
    int nf0 = F0.degree();
    if (nf0 < 1) throw DegreeConstraintViolated("deg F0 >= 1 violated");
    if (R0.is_zero()) throw DegreeConstraintViolated("R0 must be nonzero");
    int nl = nf0 + R0.degree();
    if (S0.degree() > nl)
        throw DegreeConstraintViolated("deg S0 <= deg F0 + deg R0 violated");
    if (S1.degree() > nl)
        throw DegreeConstraintViolated("deg S1 <= deg F0 + deg R0 violated");
    if (T.degree() > nl)
        throw DegreeConstraintViolated("deg T <= deg F0 + deg R0 violated");
    if (R1.degree() > R0.degree())
        throw DegreeConstraintViolated("deg R1 <= deg R0 violated");
    bool delayed = !R1.is_zero() || !S1.is_zero() || !M1star.is_zero();
    if (delayed && h <= 0.0)
        throw DegreeConstraintViolated("delayed terms present but the delay is not positive");
    if (mode != ControllerMode::full_delay && delayed)
        throw DegreeConstraintViolated("delayed terms present outside full_delay mode");
}

// ---------------------------------------------------------------------------
// synthesis

namespace {

void check_plant_minimal(const PencilPolynomials& pp) {
    if (pp.M.degree() < 1) return;
    for (const auto& r : pp.M.roots()) {
        bool cancel0 = vanishes_at(pp.Delta0, r, kCommonRootTol);
        bool cancel1 = pp.Delta1.is_zero() || vanishes_at(pp.Delta1, r, kCommonRootTol);
        if (cancel0 && cancel1)
            throw NotMinimal("transfer function has a pole-zero cancellation near root of the denominator");
    }
}

void check_f0(const Polynomial& F0) {
    if (F0.degree() < 1) throw DegreeConstraintViolated("deg F0 >= 1 violated");
    require_monic(F0, "F0");
    if (!is_hurwitz(F0, kStrict)) throw NotHurwitz("F0 must be Hurwitz");
}

Polynomial default_tracking_gain(const Polynomial& M0star, const Polynomial& M1star,
                                 const Polynomial& Delta0, const Polynomial& Delta1) {
    double den = Delta0.eval(0.0) + Delta1.eval(0.0);
    double scale = std::max(Delta0.max_abs_coeff(), Delta1.max_abs_coeff());
    if (std::abs(den) <= 1e-12 * std::max(1.0, scale))
        throw ValidationError("plant DC gain vanishes, supply T explicitly");
    return Polynomial::constant((M0star.eval(0.0) + M1star.eval(0.0)) / den);
}

}  // namespace

ControllerParams synthesize_pole_placement(
    const PencilPolynomials& pp, const Polynomial& F0in, const Polynomial& M0in,
    const Polynomial& M1in, const std::optional<Polynomial>& Tin,
    const std::optional<Polynomial>& Lin, double h, double v, double v1,
    const MarginOptions& mopts) {
    Polynomial F0 = F0in.trimmed();
    Polynomial M0star = M0in.trimmed();
    Polynomial M1star = M1in.trimmed();
    Polynomial M = pp.M.trimmed();
    Polynomial D0 = pp.Delta0.trimmed();
    Polynomial D1 = pp.Delta1.trimmed();
    if (M.is_zero()) throw ZeroPolynomial("pencil determinant polynomial is zero");
    if (D0.is_zero()) throw ZeroPolynomial("direct input path polynomial is zero");
    if (v < 0.0 || v1 < 0.0) throw ValidationError("stability margins must be nonnegative");

    check_f0(F0);
    check_plant_minimal(pp);
    if (has_common_root(F0, D0, kCommonRootTol) ||
        (!D1.is_zero() && has_common_root(F0, D1, kCommonRootTol)))
        throw NotCoprime("F0 shares a root with an input path polynomial");

    int nf0 = F0.degree();
    int nM = M.degree();
    int target_deg = 2 * (nf0 + nM) - 1;
    require_monic(M0star, "M0star");
    if (M0star.degree() != target_deg)
        throw DegreeConstraintViolated("deg M0star = 2*(deg F0 + deg M) - 1 violated");
    if (!M1star.is_zero()) {
        require_monic(M1star, "M1star");
        if (M1star.degree() != target_deg)
            throw DegreeConstraintViolated("deg M1star = 2*(deg F0 + deg M) - 1 violated");
    }
    if (!is_hurwitz(M0star, v))
        throw NotHurwitz("M0star must have all roots with real part <= -v");

    int degR = nf0 + nM - 1;
    int degS = nf0 + nM - 1;

    ControllerParams out;
    out.F0 = F0;
    out.F = F0;
    out.M0star = M0star;
    out.M1star = M1star;
    out.h = h;
    out.v = v;

    Polynomial A = (F0 * M).trimmed();
    DiophantineSolution main;
    try {
        main = solve_diophantine(A, D0, M0star, degR, degS);
    } catch (const SingularSylvester& e) {
        throw NotCoprime(std::string("pole placement system is singular: ") + e.what());
    }
    out.R0 = main.X.trimmed();
    out.S0 = main.Y.trimmed();

    bool delay_free = M1star.is_zero() && D1.is_zero();
    if (delay_free) {
        out.mode = ControllerMode::delay_free;
    } else {
        out.mode = ControllerMode::full_delay;
        if (h <= 0.0) throw ValidationError("delayed design requires a positive delay");
        if (!M1star.is_zero()) {
            double mg = delay_stability_margin(M0star, Polynomial{}, M1star, h, v1, mopts);
            if (mg >= 1.0) throw StabilityMarginFailed(mg);
        }
        Polynomial rhs = (M1star - D1 * out.S0).trimmed();
        if (rhs.is_zero()) {
            out.R1 = Polynomial{};
            out.S1 = Polynomial{};
        } else {
            DiophantineSolution shifted;
            try {
                shifted = solve_diophantine(A, D0, rhs, degR, degS);
            } catch (const SingularSylvester& e) {
                throw NotCoprime(std::string("delayed pole placement system is singular: ") +
                                 e.what());
            }
            out.R1 = shifted.X.trimmed();
            out.S1 = shifted.Y.trimmed();
        }
        Polynomial third = (D1 * out.S1).trimmed();
        if (!third.is_zero()) {
            double mg = delay_stability_margin(M0star, M1star, third, h, v1, mopts);
            if (mg >= 1.0) throw StabilityMarginFailed(mg);
        }
    }

    if (Tin) {
        out.T = Tin->trimmed();
        if (out.T.degree() > 2 * nf0 + nM - 1)
            throw DegreeConstraintViolated("deg T <= 2*deg F0 + deg M - 1 violated");
    } else {
        out.T = default_tracking_gain(M0star, M1star, D0, D1);
    }

    int lfloor = std::max(0, nf0 + nM - 2);
    if (Lin) {
        out.L = Lin->trimmed();
        if (out.L.degree() < lfloor)
            throw DegreeConstraintViolated("deg L >= deg F0 + deg M - 2 violated");
    } else {
        int k = (lfloor + nf0 - 1) / nf0;  // smallest k with k*nf0 >= lfloor
        out.L = pow(F0, k);
    }

    out.check_degrees();
    return out;
}

Delta0Split split_delta0(const Polynomial& delta0, double v) {
    Polynomial d0 = delta0.trimmed();
    if (d0.is_zero()) throw ZeroPolynomial("cannot split the zero polynomial");
    Delta0Split sp;
    sp.plus = Polynomial::constant(1.0);
    sp.minus = d0;
    if (d0.degree() < 1) return sp;
    std::vector<std::complex<double>> cancelled;
    for (const auto& r : d0.roots())
        if (r.real() <= -v - 1e-7) cancelled.push_back(r);
    if (cancelled.empty()) return sp;
    sp.plus = Polynomial::from_roots(cancelled);
    auto dv = divide(d0, sp.plus);
    sp.minus = dv.quotient.trimmed();
    return sp;
}

ControllerParams model_matching_synthesis(const PencilPolynomials& pp,
                                          const Polynomial& F0in, const Polynomial& Mmin,
                                          double v, const std::optional<Polynomial>& Tin,
                                          double h) {
    Polynomial F0 = F0in.trimmed();
    Polynomial Mm = Mmin.trimmed();
    Polynomial M = pp.M.trimmed();
    Polynomial D0 = pp.Delta0.trimmed();
    if (!pp.Delta1.trimmed().is_zero())
        throw ValidationError("model matching requires a delay-free input path");
    if (M.is_zero()) throw ZeroPolynomial("pencil determinant polynomial is zero");
    if (D0.is_zero()) throw ZeroPolynomial("direct input path polynomial is zero");
    if (v < 0.0) throw ValidationError("stability margin must be nonnegative");

    check_f0(F0);
    check_plant_minimal(pp);
    if (has_common_root(F0, D0, kCommonRootTol))
        throw NotCoprime("F0 shares a root with the input path polynomial");
    require_monic(Mm, "Mm");
    if (!is_hurwitz(Mm, v))
        throw NotHurwitz("Mm must have all roots with real part <= -v");

    int nf0 = F0.degree();
    int nM = M.degree();
    Delta0Split sp = split_delta0(D0, v);
    int nminus = std::max(sp.minus.degree(), 0);
    int degRp = nf0 + nM - nminus - 1;
    if (degRp < 0)
        throw DegreeConstraintViolated("deg F0 + deg M - deg of the kept input factor - 1 must be nonnegative");
    if (Mm.degree() != nf0 + nM + degRp)
        throw DegreeConstraintViolated("deg Mm must equal 2*(deg F0 + deg M) - deg of the kept input factor - 1");

    Polynomial A = (F0 * M).trimmed();
    DiophantineSolution sol;
    try {
        sol = solve_diophantine(A, sp.minus, Mm, degRp, nf0 + nM - 1);
    } catch (const SingularSylvester& e) {
        throw NotCoprime(std::string("matching system is singular: ") + e.what());
    }

    ControllerParams out;
    out.F0 = F0;
    out.F = F0;
    out.M0star = Mm;
    out.R0 = (sp.plus * sol.X).trimmed();
    out.S0 = sol.Y.trimmed();
    out.h = h;
    out.v = v;
    out.mode = ControllerMode::model_matching;
    if (Tin) {
        out.T = Tin->trimmed();
    } else {
        double den = sp.minus.eval(0.0);
        if (std::abs(den) <= 1e-12 * std::max(1.0, sp.minus.max_abs_coeff()))
            throw ValidationError("reference model DC gain vanishes, supply T explicitly");
        out.T = Polynomial::constant(Mm.eval(0.0) / den);
    }
    out.L = Polynomial::constant(1.0);
    out.check_degrees();
    return out;
}

// ---------------------------------------------------------------------------
// ControlLaw

ControlLaw::ControlLaw(const ControllerParams& p, QChannel qmode,
                       const std::optional<Polynomial>& lambda)
    : p_(p), qmode_(qmode) {
    p_.check_degrees();
    f0_ = p_.F0.trimmed();
    r0_ = p_.R0.trimmed();
    s0_ = p_.S0.trimmed();
    s1_ = p_.S1.trimmed();
    t_ = p_.T.trimmed();
    l_ = p_.L.trimmed();
    if (std::abs(f0_.leading_coeff() - 1.0) > kMonicTol)
        throw NotMonic("F0 must be monic");
    int m = r0_.degree();
    nl_ = f0_.degree() + m;
    if (lambda) {
        lam_ = lambda->trimmed();
        require_monic(lam_, "realization polynomial");
        if (lam_.degree() != nl_)
            throw DegreeConstraintViolated(
                "deg of the realization polynomial must equal deg F0 + deg R0");
    } else {
        double pole = std::max(p_.v, 0.0) + 1.0;
        lam_ = (f0_ * pow(Polynomial{pole, 1.0}, m)).trimmed();
    }
    if (!is_hurwitz(lam_, kStrict))
        throw NotHurwitz("realization polynomial must be Hurwitz");

    // lead-normalize so lambda - F0*R0 is strictly proper
    rho_inv_ = 1.0 / r0_.leading_coeff();
    g_ = (lam_ - f0_ * r0_ * rho_inv_).trimmed();
    f0r1_ = (f0_ * p_.R1.trimmed() * rho_inv_).trimmed();
    s0_ = s0_ * rho_inv_;
    s1_ = s1_ * rho_inv_;
    t_ = t_ * rho_inv_;
    l_ = l_ * rho_inv_;

    if (qmode_ == QChannel::raw_u0 && l_.is_zero()) qmode_ = QChannel::none;
    if (qmode_ == QChannel::raw_u0 && l_.degree() > nl_)
        throw DegreeConstraintViolated("deg L <= deg F0 + deg R0 violated");

    u_off_ = 0;
    y_off_ = nl_;
    uc_off_ = 2 * nl_;
    q_off_ = 3 * nl_;
    total_dim_ = 3 * nl_ + (has_q() ? nl_ : 0);
}

double ControlLaw::output_u(const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Inputs& in) const {
    double u = 0.0;
    for (int k = 0; k <= g_.degree(); ++k) u += g_.coeff(k) * x[u_off_ + k];
    if (!t_.is_zero()) {
        if (!in.u_c) throw ValidationError("reference signal required by T");
        double ucv = (*in.u_c)(in.t, 0);
        for (int k = 0; k <= t_.degree(); ++k)
            u += t_.coeff(k) * chain_value(lam_, nl_, x.data() + uc_off_, ucv, k);
    }
    for (int k = 0; k <= s0_.degree() && !s0_.is_zero(); ++k)
        u -= s0_.coeff(k) * chain_value(lam_, nl_, x.data() + y_off_, in.y, k);
    if (!s1_.is_zero()) {
        if (!in.y_del) throw HistoryUnderflow("delayed output history missing");
        for (int k = 0; k <= s1_.degree(); ++k) u -= s1_.coeff(k) * in.y_del[k];
    }
    if (!f0r1_.is_zero()) {
        if (!in.u_del) throw HistoryUnderflow("delayed input history missing");
        for (int k = 0; k <= f0r1_.degree(); ++k) u -= f0r1_.coeff(k) * in.u_del[k];
    }
    if (qmode_ == QChannel::direct_q) {
        u += rho_inv_ * x[q_off_];
    } else if (qmode_ == QChannel::raw_u0) {
        for (int k = 0; k <= l_.degree(); ++k)
            u += l_.coeff(k) * chain_value(lam_, nl_, x.data() + q_off_, in.q, k);
    }
    return u;
}

Eigen::VectorXd ControlLaw::deriv(const Eigen::Ref<const Eigen::VectorXd>& x,
                                  const Inputs& in) const {
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(total_dim_);
    double u = output_u(x, in);
    double ucv = in.u_c ? (*in.u_c)(in.t, 0) : 0.0;
    chain_deriv(lam_, nl_, x.data() + u_off_, u, dx.data() + u_off_);
    chain_deriv(lam_, nl_, x.data() + y_off_, in.y, dx.data() + y_off_);
    chain_deriv(lam_, nl_, x.data() + uc_off_, ucv, dx.data() + uc_off_);
    if (has_q()) chain_deriv(lam_, nl_, x.data() + q_off_, in.q, dx.data() + q_off_);
    return dx;
}

void ControlLaw::record_y_chain(const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                                double* out) const {
    for (int k = 0; k <= nl_; ++k)
        out[k] = chain_value(lam_, nl_, x.data() + y_off_, y, k);
}

void ControlLaw::record_u_chain(const Eigen::Ref<const Eigen::VectorXd>& x, double u,
                                double* out) const {
    for (int k = 0; k <= nl_; ++k)
        out[k] = chain_value(lam_, nl_, x.data() + u_off_, u, k);
}

void ControlLaw::swap_params(const ControllerParams& p) {
    ControlLaw fresh(p, qmode_, lam_);
    if (fresh.has_q() != has_q())
        throw ValidationError("compensation channel changed during parameter swap");
    if (!fresh.f0_.approx_equal(f0_, 1e-9))
        throw ValidationError("filter denominator changed during parameter swap");
    *this = fresh;
}

// ---------------------------------------------------------------------------
// Compensator

Compensator::Compensator(const ControllerParams& p, const PencilPolynomials& pp,
                         double v1, const MarginOptions& mopts)
    : p_(p) {
    Polynomial d0 = pp.Delta0.trimmed();
    Polynomial d1 = pp.Delta1.trimmed();
    Polynomial L = p.L.trimmed();
    if (d0.is_zero()) throw ZeroPolynomial("direct input path polynomial is zero");
    if (L.is_zero())
        throw ValidationError("L must be nonzero to define the compensating input");
    if (!d1.is_zero() && p.h <= 0.0)
        throw ValidationError("delayed input path requires a positive delay");
    d0_ = d0.degree();
    lm_ = L.degree();

    int max_num = -1;
    Polynomial base0 = (p.F0 * p.R0).trimmed();
    Polynomial base1 = (p.F0 * p.R1).trimmed();
    for (const auto& d2j : pp.Delta2) {
        if (d2j.is_zero()) continue;
        if (!base0.is_zero()) max_num = std::max(max_num, base0.degree() + d2j.degree());
        if (!base1.is_zero()) max_num = std::max(max_num, base1.degree() + d2j.degree());
    }
    d1s1_ = (d1 * p.S1).trimmed();
    if (!d1s1_.is_zero()) max_num = std::max(max_num, d1s1_.degree());
    if (lm_ + d0_ < max_num)
        throw NonProperCompensator(
            "deg(L*Delta0) is below the largest numerator degree of the compensating filters");
    if (d1.degree() > d0_)
        throw NonProperCompensator("delayed input path polynomial outgrows the direct one");
    if (d1s1_.degree() > d0_)
        throw NonProperCompensator("delayed output injection is improper");

    if (!is_hurwitz(d0, kStrict)) throw DeltaNotStable("direct input path polynomial is not Hurwitz");
    if (!d1.is_zero()) {
        double mg = delay_stability_margin(d0, Polynomial{}, d1, p.h, v1, mopts);
        if (mg >= 1.0)
            throw DeltaNotStable("input path quasi-polynomial fails the delay margin bound");
    }
    if (lm_ >= 1 && !is_hurwitz(L, kStrict))
        throw NotHurwitz("L must be Hurwitz to recover the compensating signal");

    lam_ = d0.leading_coeff();
    d0m_ = d0 * (1.0 / lam_);
    d1_ = d1;
    lamL_ = L.leading_coeff();
    lm_poly_ = L * (1.0 / lamL_);
    has_y_ = !d1s1_.is_zero();
    has_d_ = !d1_.is_zero();
    has_u0f_ = lm_ >= 1;
    qv_off_ = 0;
    qy_off_ = d0_;
    qd_off_ = qy_off_ + (has_y_ ? d0_ : 0);
    u0_off_ = qd_off_ + (has_d_ ? d0_ : 0);
    total_dim_ = u0_off_ + (has_u0f_ ? lm_ : 0);
}

double Compensator::q_at(const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Inputs& in) const {
    double q = chain_value(d0m_, d0_, x.data() + qv_off_, in.wv, 0);
    if (has_y_) {
        for (int k = 0; k <= d1s1_.degree(); ++k)
            q += d1s1_.coeff(k) * chain_value(d0m_, d0_, x.data() + qy_off_, in.y_2h, k);
    }
    if (has_d_) {
        for (int k = 0; k <= d1_.degree(); ++k)
            q -= d1_.coeff(k) * chain_value(d0m_, d0_, x.data() + qd_off_, in.q_h, k);
    }
    return q / lam_;
}

double Compensator::u0_at(const Eigen::Ref<const Eigen::VectorXd>& x, double q) const {
    if (has_u0f_) return x[u0_off_] / lamL_;
    return q / (lamL_ * lm_poly_.coeff(0));
}

Eigen::VectorXd Compensator::deriv(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Inputs& in, double q) const {
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(total_dim_);
    chain_deriv(d0m_, d0_, x.data() + qv_off_, in.wv, dx.data() + qv_off_);
    if (has_y_) chain_deriv(d0m_, d0_, x.data() + qy_off_, in.y_2h, dx.data() + qy_off_);
    if (has_d_) chain_deriv(d0m_, d0_, x.data() + qd_off_, in.q_h, dx.data() + qd_off_);
    if (has_u0f_) chain_deriv(lm_poly_, lm_, x.data() + u0_off_, q, dx.data() + u0_off_);
    return dx;
}

void Compensator::swap_polynomials(const Polynomial& delta0, const Polynomial& delta1,
                                   const Polynomial& s1) {
    Polynomial d0 = delta0.trimmed();
    Polynomial d1 = delta1.trimmed();
    if (d0.degree() != d0_)
        throw ValidationError("direct path degree changed during estimate swap");
    Polynomial ds = (d1 * s1).trimmed();
    if (d1.degree() > d0_ || ds.degree() > d0_)
        throw NonProperCompensator("estimate swap would make the compensator improper");
    bool hy = !ds.is_zero(), hd = !d1.is_zero();
    if (hy != has_y_ || hd != has_d_)
        throw ValidationError("compensator layout changed during estimate swap");
    lam_ = d0.leading_coeff();
    d0m_ = d0 * (1.0 / lam_);
    d1_ = d1;
    d1s1_ = ds;
}

SmoothSignal Compensator::forcing(const ControllerParams& p, const PencilPolynomials& pp,
                                  const VectorSmoothSignal& v0) {
    int n = static_cast<int>(pp.Delta2.size());
    if (v0.dim() != n)
        throw ValidationError("disturbance dimension does not match the system order");
    // minus the loop's disturbance feedthrough F0(R0 + R1 z)Delta2^T v0, so
    // adding the q channel into the law cancels it exactly
    Polynomial base0 = (p.F0 * p.R0).trimmed();
    Polynomial base1 = (p.F0 * p.R1).trimmed();
    // column k holds the coefficient of the k-th derivative of each v0 entry
    auto table = [&](const Polynomial& base) {
        std::vector<Eigen::VectorXd> cols;
        for (int j = 0; j < n; ++j) {
            Polynomial pj = (base * pp.Delta2[j]).trimmed();
            for (int k = 0; k <= pj.degree(); ++k) {
                if (static_cast<int>(cols.size()) <= k)
                    cols.push_back(Eigen::VectorXd::Zero(n));
                cols[k][j] = pj.coeff(k);
            }
        }
        return cols;
    };
    auto cols0 = table(base0);
    auto cols1 = table(base1);
    double h = p.h;
    int needed = static_cast<int>(std::max(cols0.size(), cols1.size()));
    int mo = v0.max_order();
    if (mo < std::numeric_limits<int>::max() - needed) mo -= (needed > 0 ? needed - 1 : 0);
    auto eval = [cols0, cols1, v0, h](double t, int order) {
        double acc = 0.0;
        for (int k = 0; k < static_cast<int>(cols0.size()); ++k)
            acc -= cols0[k].dot(v0(t, k + order));
        for (int k = 0; k < static_cast<int>(cols1.size()); ++k)
            acc -= cols1[k].dot(v0(t - h, k + order));
        return acc;
    };
    return SmoothSignal(eval, mo);
}

SmoothSignal compensator_u0(const ControllerParams& p, const PencilPolynomials& pp,
                            const VectorSmoothSignal& v0,
                            const std::function<double(double)>& y_history,
                            double t_end, double dt, double v1) {
    if (dt <= 0.0 || t_end <= 0.0)
        throw ValidationError("integration horizon and step must be positive");
    Compensator comp(p, pp, v1);
    SmoothSignal wv = Compensator::forcing(p, pp, v0);
    double h = p.h;
    int hsteps = checked_delay_steps(h, dt);
    int nsteps = static_cast<int>(std::llround(t_end / dt));
    if (nsteps < 1 || std::abs(t_end / dt - nsteps) > 1e-9 * std::max(1.0, t_end / dt))
        throw StepTooLarge("step size must divide the horizon exactly");

    std::vector<std::vector<double>> q_hist;
    auto read_q = [&](double tau) {
        if (tau < 0.0) return 0.0;
        return grid_interp(q_hist, 0, dt, tau);
    };
    auto read_y = [&](double tau) {
        if (tau < 0.0 || !y_history) return 0.0;
        return y_history(tau);
    };
    auto inputs_at = [&](double tau) {
        Compensator::Inputs in;
        in.wv = wv(tau);
        in.y_2h = read_y(tau - 2.0 * h);
        in.q_h = hsteps > 0 ? read_q(tau - h) : 0.0;
        return in;
    };

    Eigen::VectorXd x = Eigen::VectorXd::Zero(comp.dim());
    std::vector<double> u0_vals(nsteps + 1);
    {
        auto in0 = inputs_at(0.0);
        double q0 = comp.q_at(x, in0);
        q_hist.push_back({q0});
        u0_vals[0] = comp.u0_at(x, q0);
    }
    auto rhs = [&](const Eigen::VectorXd& xx, double tau) {
        auto in = inputs_at(tau);
        double q = comp.q_at(xx, in);
        return comp.deriv(xx, in, q).eval();
    };
    for (int i = 0; i < nsteps; ++i) {
        double t = i * dt;
        Eigen::VectorXd k1 = rhs(x, t);
        Eigen::VectorXd k2 = rhs(x + 0.5 * dt * k1, t + 0.5 * dt);
        Eigen::VectorXd k3 = rhs(x + 0.5 * dt * k2, t + 0.5 * dt);
        Eigen::VectorXd k4 = rhs(x + dt * k3, t + dt);
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!x.allFinite() || x.norm() > 1e9) throw NumericalBlowup{(i + 1) * dt};
        auto in = inputs_at((i + 1) * dt);
        double q = comp.q_at(x, in);
        q_hist.push_back({q});
        u0_vals[i + 1] = comp.u0_at(x, q);
    }
    auto eval = [u0_vals, dt, nsteps](double t, int) {
        if (t <= 0.0) return u0_vals.front();
        if (t >= nsteps * dt) return u0_vals.back();
        int i = static_cast<int>(t / dt);
        double frac = t / dt - i;
        return (1.0 - frac) * u0_vals[i] + frac * u0_vals[i + 1];
    };
    return SmoothSignal(eval, 0);
}

// ---------------------------------------------------------------------------
// ControllerStepper

ControllerStepper::ControllerStepper(const ControllerParams& p, double dt,
                                     SmoothSignal psi)
    : law_(p, p.L.trimmed().is_zero() ? QChannel::none : QChannel::raw_u0),
      dt_(dt),
      psi_(std::move(psi)) {
    if (dt_ <= 0.0) throw ValidationError("step size must be positive");
    hsteps_ = checked_delay_steps(p.h, dt_);
    bool delayed = law_.needs_delayed_u() || law_.needs_delayed_y();
    if (delayed && hsteps_ < 1)
        throw StepTooLarge("delayed terms require a positive delay on the step grid");
    x_ = Eigen::VectorXd::Zero(law_.dim());
    if (delayed) {
        // pre-history on [-h, 0): the u chain integrates psi from rest, the
        // output chain stays at zero
        t0_ = -p.h;
        int nl = law_.n_lambda();
        const Polynomial& lam = law_.lambda();
        Eigen::VectorXd xu = Eigen::VectorXd::Zero(nl);
        Eigen::VectorXd kv[4];
        auto chain_rhs = [&](const Eigen::VectorXd& z, double tau) {
            Eigen::VectorXd dz(nl);
            chain_deriv(lam, nl, z.data(), psi_(tau, 0), dz.data());
            return dz;
        };
        for (int i = 0; i < hsteps_; ++i) {
            double tau = t0_ + i * dt_;
            std::vector<double> urow(law_.rec_len());
            for (int k = 0; k <= nl; ++k)
                urow[k] = chain_value(lam, nl, xu.data(), psi_(tau, 0), k);
            u_hist_.push_back(std::move(urow));
            y_hist_.emplace_back(law_.rec_len(), 0.0);
            kv[0] = chain_rhs(xu, tau);
            kv[1] = chain_rhs(xu + 0.5 * dt_ * kv[0], tau + 0.5 * dt_);
            kv[2] = chain_rhs(xu + 0.5 * dt_ * kv[1], tau + 0.5 * dt_);
            kv[3] = chain_rhs(xu + dt_ * kv[2], tau + dt_);
            xu += (dt_ / 6.0) * (kv[0] + 2.0 * kv[1] + 2.0 * kv[2] + kv[3]);
        }
        x_.head(nl) = xu;
    }
}

ControlLaw::Inputs ControllerStepper::inputs_at(
    double tau, const SmoothSignal& u_c, const std::function<double(double)>& y,
    const std::function<double(double)>& u0, std::vector<double>& ybuf,
    std::vector<double>& ubuf) const {
    ControlLaw::Inputs in;
    in.t = tau;
    in.u_c = &u_c;
    in.y = y ? y(tau) : 0.0;
    in.q = u0 ? u0(tau) : 0.0;
    double del = tau - law_.params().h;
    if (law_.needs_delayed_y()) {
        ybuf.resize(law_.rec_len());
        for (int k = 0; k < static_cast<int>(ybuf.size()); ++k)
            ybuf[k] = grid_interp(y_hist_, k, dt_, del - t0_);
        in.y_del = ybuf.data();
    }
    if (law_.needs_delayed_u()) {
        ubuf.resize(law_.rec_len());
        for (int k = 0; k < static_cast<int>(ubuf.size()); ++k)
            ubuf[k] = grid_interp(u_hist_, k, dt_, del - t0_);
        in.u_del = ubuf.data();
    }
    return in;
}

void ControllerStepper::step(const SmoothSignal& u_c,
                             const std::function<double(double)>& y,
                             const std::function<double(double)>& u0) {
    std::vector<double> yb, ub;
    auto in_now = inputs_at(t_, u_c, y, u0, yb, ub);
    if (law_.needs_delayed_y() || law_.needs_delayed_u()) {
        std::vector<double> yrec(law_.rec_len()), urec(law_.rec_len());
        law_.record_y_chain(x_, in_now.y, yrec.data());
        law_.record_u_chain(x_, law_.output_u(x_, in_now), urec.data());
        y_hist_.push_back(std::move(yrec));
        u_hist_.push_back(std::move(urec));
    }
    auto rhs = [&](const Eigen::VectorXd& xx, double tau) {
        std::vector<double> b1, b2;
        auto in = inputs_at(tau, u_c, y, u0, b1, b2);
        return law_.deriv(xx, in).eval();
    };
    Eigen::VectorXd k1 = rhs(x_, t_);
    Eigen::VectorXd k2 = rhs(x_ + 0.5 * dt_ * k1, t_ + 0.5 * dt_);
    Eigen::VectorXd k3 = rhs(x_ + 0.5 * dt_ * k2, t_ + 0.5 * dt_);
    Eigen::VectorXd k4 = rhs(x_ + dt_ * k3, t_ + dt_);
    x_ += (dt_ / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t_ += dt_;
    if (!x_.allFinite() || x_.norm() > 1e9) throw NumericalBlowup{t_};
    std::vector<double> yb2, ub2;
    auto in_next = inputs_at(t_, u_c, y, u0, yb2, ub2);
    u_last_ = law_.output_u(x_, in_next);
}

double control_law_step(ControllerStepper& st, double u_c, double y, double u0) {
    st.step(SmoothSignal::constant(u_c), [y](double) { return y; },
            [u0](double) { return u0; });
    return st.u();
}

}  // namespace sdc
