#include "sdc/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sdc {

namespace {

constexpr double kMonicTol = 1e-9;
constexpr double kStrict = 1e-12;

// k-th derivative of a 1/f chain (f monic, deg n); k = n closes through the
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

int checked_delay_steps(double h, double dt) {
    if (h <= 0.0) return 0;
    double ratio = h / dt;
    int steps = static_cast<int>(std::llround(ratio));
    if (steps < 1 || std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio))
        throw StepTooLarge("step size must divide the delay exactly");
    return steps;
}

void require_filter(const Polynomial& F, int n) {
    if (n < 1) throw ValidationError("plant order must be at least 1");
    if (F.degree() != n)
        throw DegreeConstraintViolated("estimation filter degree must equal the plant order");
    if (std::abs(F.leading_coeff() - 1.0) > kMonicTol)
        throw NotMonic("estimation filter must be monic");
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterVector

ParameterVector::ParameterVector(int order) : n(order) {
    if (order < 1) throw ValidationError("plant order must be at least 1");
    theta = Eigen::VectorXd::Zero(dim());
}

ParameterVector::ParameterVector(int order, Eigen::VectorXd th) : n(order) {
    if (order < 1) throw ValidationError("plant order must be at least 1");
    if (th.size() != dim())
        throw ValidationError("parameter vector has wrong dimension");
    theta = std::move(th);
}

Polynomial ParameterVector::m_hat(const Polynomial& F) const {
    require_filter(F, n);
    std::vector<double> c(n, 0.0);
    for (int i = 0; i < n; ++i) c[n - 1 - i] = theta[i];
    return F - Polynomial(c);
}

Polynomial ParameterVector::delta0_hat() const {
    std::vector<double> c(n + 1, 0.0);
    for (int i = 0; i <= n; ++i) c[n - i] = theta[n + i];
    return Polynomial(c).trimmed();
}

Polynomial ParameterVector::delta1_hat() const {
    std::vector<double> c(n + 1, 0.0);
    for (int i = 0; i <= n; ++i) c[n - i] = theta[2 * n + 1 + i];
    return Polynomial(c).trimmed();
}

ParameterVector true_parameter_vector(const PencilPolynomials& pp, const Polynomial& F,
                                      int n) {
    require_filter(F, n);
    Polynomial M = pp.M.trimmed();
    if (M.is_zero()) throw ZeroPolynomial("pencil determinant polynomial is zero");
    if (M.degree() > n)
        throw DegreeConstraintViolated("plant order smaller than its denominator degree");
    auto div = divide(F, M);  // F = H*M + rem, deg rem < deg M <= n
    Polynomial hd0 = (div.quotient * pp.Delta0).trimmed();
    Polynomial hd1 = (div.quotient * pp.Delta1).trimmed();
    if (hd0.degree() > n || hd1.degree() > n)
        throw DegreeConstraintViolated("input path degree exceeds the plant order");
    ParameterVector out(n);
    for (int i = 0; i < n; ++i) out.theta[i] = div.remainder.coeff(n - 1 - i);
    for (int i = 0; i <= n; ++i) out.theta[n + i] = hd0.coeff(n - i);
    for (int i = 0; i <= n; ++i) out.theta[2 * n + 1 + i] = hd1.coeff(n - i);
    return out;
}

// ---------------------------------------------------------------------------
// regressor

Eigen::VectorXd assemble_regressor(const Polynomial& F, int n, const double* x_yf,
                                   const double* x_uf, double u_now,
                                   const double* u_del) {
    Eigen::VectorXd phi(n + 2 * (n + 1));
    for (int i = 0; i < n; ++i) phi[i] = x_yf[n - 1 - i];
    for (int i = 0; i <= n; ++i)
        phi[n + i] = chain_value(F, n, x_uf, u_now, n - i);
    for (int i = 0; i <= n; ++i) phi[2 * n + 1 + i] = u_del[i];
    return phi;
}

RegressorStepper::RegressorStepper(const Polynomial& F, int n, double h, double dt,
                                   SmoothSignal psi)
    : f_(F.trimmed()), n_(n), dt_(dt) {
    require_filter(f_, n_);
    if (!is_hurwitz(f_, kStrict)) throw NotHurwitz("estimation filter must be Hurwitz");
    if (dt_ <= 0.0) throw ValidationError("step size must be positive");
    hsteps_ = checked_delay_steps(h, dt_);
    xy_ = Eigen::VectorXd::Zero(n_);
    xu_ = Eigen::VectorXd::Zero(n_);
    if (hsteps_ >= 1) {
        t0_ = -h;
        Eigen::VectorXd z = Eigen::VectorXd::Zero(n_), k1(n_), k2(n_), k3(n_), k4(n_);
        auto rhs = [&](const Eigen::VectorXd& zz, double tau) {
            Eigen::VectorXd dz(n_);
            chain_deriv(f_, n_, zz.data(), psi(tau, 0), dz.data());
            return dz;
        };
        for (int i = 0; i < hsteps_; ++i) {
            double tau = t0_ + i * dt_;
            std::vector<double> row(n_ + 1);
            for (int j = 0; j <= n_; ++j)
                row[j] = chain_value(f_, n_, z.data(), psi(tau, 0), n_ - j);
            u_hist_.push_back(std::move(row));
            k1 = rhs(z, tau);
            k2 = rhs(z + 0.5 * dt_ * k1, tau + 0.5 * dt_);
            k3 = rhs(z + 0.5 * dt_ * k2, tau + 0.5 * dt_);
            k4 = rhs(z + dt_ * k3, tau + dt_);
            z += (dt_ / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        xu_ = z;
    }
}

std::vector<double> RegressorStepper::u_row(double u_now) const {
    std::vector<double> row(n_ + 1);
    for (int j = 0; j <= n_; ++j)
        row[j] = chain_value(f_, n_, xu_.data(), u_now, n_ - j);
    return row;
}

void RegressorStepper::step(const std::function<double(double)>& u,
                            const std::function<double(double)>& y) {
    if (hsteps_ >= 1) u_hist_.push_back(u_row(u ? u(t_) : 0.0));
    auto rhs = [&](const Eigen::VectorXd& z, double tau) {
        Eigen::VectorXd d(2 * n_);
        chain_deriv(f_, n_, z.data(), y ? y(tau) : 0.0, d.data());
        chain_deriv(f_, n_, z.data() + n_, u ? u(tau) : 0.0, d.data() + n_);
        return d;
    };
    Eigen::VectorXd z(2 * n_);
    z << xy_, xu_;
    Eigen::VectorXd k1 = rhs(z, t_);
    Eigen::VectorXd k2 = rhs(z + 0.5 * dt_ * k1, t_ + 0.5 * dt_);
    Eigen::VectorXd k3 = rhs(z + 0.5 * dt_ * k2, t_ + 0.5 * dt_);
    Eigen::VectorXd k4 = rhs(z + dt_ * k3, t_ + dt_);
    z += (dt_ / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    xy_ = z.head(n_);
    xu_ = z.tail(n_);
    t_ += dt_;
    if (!z.allFinite() || z.norm() > 1e9) throw NumericalBlowup{t_};
}

Eigen::VectorXd RegressorStepper::regressor(double u_now) const {
    std::vector<double> del;
    if (hsteps_ >= 1) {
        int idx = static_cast<int>(std::llround((t_ - hsteps_ * dt_ - t0_) / dt_));
        del = u_hist_.at(static_cast<size_t>(idx));
    } else {
        del = u_row(u_now);
    }
    return assemble_regressor(f_, n_, xy_.data(), xu_.data(), u_now, del.data());
}

// ---------------------------------------------------------------------------
// estimator

Eigen::MatrixXd default_box(const ParameterVector& center, double frac) {
    if (frac <= 0.0) throw ValidationError("box fraction must be positive");
    int d = center.dim();
    Eigen::MatrixXd box(d, 2);
    for (int i = 0; i < d; ++i) {
        double hw = frac * std::max(std::abs(center.theta[i]), 1.0);
        box(i, 0) = center.theta[i] - hw;
        box(i, 1) = center.theta[i] + hw;
    }
    return box;
}

EstimatorState make_estimator(const ParameterVector& theta0,
                              const Eigen::MatrixXd& omega,
                              const EstimatorOptions& opts) {
    int d = theta0.dim();
    if (omega.rows() != d || omega.cols() != 2)
        throw ValidationError("parameter box has wrong shape");
    if (opts.alpha1 <= 0.0) throw ValidationError("adaptation gain must be positive");
    if (opts.g <= 1.0) throw ValidationError("dead-zone factor must exceed 1");
    if (opts.rho0 <= 0.0) throw ValidationError("forgetting rate must be positive");
    if (opts.eps1 < 0.0 || opts.eps2 < 0.0)
        throw ValidationError("bound weights must be nonnegative");
    if (opts.p0 <= 0.0 || opts.p_min <= 0.0)
        throw ValidationError("covariance scales must be positive");
    if (opts.floor_frac <= 0.0 || opts.floor_frac > 1.0)
        throw ValidationError("flooring fraction must lie in (0, 1]");
    for (int i = 0; i < d; ++i) {
        if (!(omega(i, 0) <= omega(i, 1)))
            throw ValidationError("parameter box has an empty component");
        if (theta0.theta[i] < omega(i, 0) - 1e-12 ||
            theta0.theta[i] > omega(i, 1) + 1e-12)
            throw ValidationError("initial estimate outside the parameter box");
    }
    EstimatorState st;
    st.theta_hat = theta0;
    st.P = opts.p0 * Eigen::MatrixXd::Identity(d, d);
    st.omega = omega;
    st.opts = opts;
    return st;
}

Prediction predict_and_error(const ParameterVector& th, const Eigen::VectorXd& phi,
                             double y) {
    if (phi.size() != th.dim()) throw ValidationError("regressor has wrong dimension");
    Prediction p;
    p.y_hat = th.theta.dot(phi);
    p.e = y - p.y_hat;
    return p;
}

double disturbance_bound_update(EstimatorState& st, const Eigen::VectorXd& phi,
                                double dt) {
    if (dt <= 0.0) throw ValidationError("step size must be positive");
    st.gamma_sup = std::max(st.gamma_sup * std::exp(-2.0 * st.opts.rho0 * dt),
                            phi.squaredNorm());
    st.gamma = st.opts.eps1 * st.gamma_sup + st.opts.eps2;
    return st.gamma;
}

DeadZone dead_zone_gate(const EstimatorState& st, double e, double gamma,
                        const Eigen::VectorXd& phi) {
    DeadZone dz;
    double thr = st.opts.g * std::sqrt(std::max(gamma, 0.0));
    double ae = std::abs(e);
    dz.s = ae <= thr ? 0.0 : 1.0 - thr / ae;
    dz.b = st.opts.alpha1 * dz.s / (1.0 + phi.dot(st.P * phi));
    return dz;
}

void estimator_step(EstimatorState& st, const Eigen::VectorXd& phi, double e, double b,
                    double dt) {
    if (phi.size() != st.theta_hat.dim())
        throw ValidationError("regressor has wrong dimension");
    if (dt <= 0.0) throw ValidationError("step size must be positive");
    ++st.steps;
    st.e = e;
    st.b = b;
    st.frozen = b == 0.0;
    if (st.frozen) return;
    Eigen::VectorXd pphi = st.P * phi;
    Eigen::MatrixXd pn = st.P - (dt * b) * (pphi * pphi.transpose());
    pn = 0.5 * (pn + pn.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pn);
    if (es.eigenvalues().minCoeff() < st.opts.p_min) {
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(st.opts.p_min);
        pn = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        pn = 0.5 * (pn + pn.transpose());
        ++st.floored;
    }
    for (int i = 0; i < st.theta_hat.dim(); ++i) {
        double cand = st.theta_hat.theta[i] + dt * b * pphi[i] * e;
        st.theta_hat.theta[i] = std::clamp(cand, st.omega(i, 0), st.omega(i, 1));
    }
    st.P = std::move(pn);
}

void estimator_update(EstimatorState& st, const Eigen::VectorXd& phi, double y,
                      double dt) {
    double gamma = disturbance_bound_update(st, phi, dt);
    Prediction pred = predict_and_error(st.theta_hat, phi, y);
    st.y_hat = pred.y_hat;
    DeadZone dz = dead_zone_gate(st, pred.e, gamma, phi);
    st.s = dz.s;
    estimator_step(st, phi, pred.e, dz.b, dt);
}

void check_covariance(const EstimatorState& st) {
    if (st.covariance_degenerate())
        throw CovarianceDegenerate("covariance floor active on " +
                                   std::to_string(st.floored) + " of " +
                                   std::to_string(st.steps) + " steps");
}

// ---------------------------------------------------------------------------
// resynthesis

ControllerParams adaptive_resynthesis(const ParameterVector& theta_hat,
                                      const Polynomial& F, const Polynomial& F0in,
                                      const Polynomial& M0star,
                                      const Polynomial& M1star, const Polynomial& T,
                                      const Polynomial& L, double h, double sylv_min) {
    Polynomial F0 = F0in.trimmed();
    int nf0 = F0.degree();
    if (nf0 < 1) throw DegreeConstraintViolated("deg F0 >= 1 violated");
    if (std::abs(F0.leading_coeff() - 1.0) > kMonicTol) throw NotMonic("F0 must be monic");
    int n = theta_hat.n;
    Polynomial mh = theta_hat.m_hat(F);
    Polynomial d0h = theta_hat.delta0_hat();
    Polynomial d1h = theta_hat.delta1_hat();
    if (d0h.is_zero()) throw ControllabilityLost("input path estimate vanished");

    int target_deg = 2 * (nf0 + n) - 1;
    if (std::abs(M0star.leading_coeff() - 1.0) > kMonicTol)
        throw NotMonic("M0star must be monic");
    if (M0star.degree() != target_deg)
        throw DegreeConstraintViolated(
            "deg M0star = 2*(deg F0 + plant order) - 1 violated");
    Polynomial m1 = M1star.trimmed();
    if (!m1.is_zero()) {
        if (std::abs(m1.leading_coeff() - 1.0) > kMonicTol)
            throw NotMonic("M1star must be monic");
        if (m1.degree() != target_deg)
            throw DegreeConstraintViolated(
                "deg M1star = 2*(deg F0 + plant order) - 1 violated");
    }

    int degX = nf0 + n - 1;
    int degY = nf0 + n - 1;
    Polynomial A = (F0 * mh).trimmed();
    DiophantineSystem sys = diophantine_system(A, d0h, M0star, degX, degY);
    if (sys.M.rows() != sys.M.cols())
        throw ControllabilityLost("estimate degrees make the design system non-square");
    double det = std::abs(sys.M.partialPivLu().determinant());
    if (det < sylv_min)
        throw ControllabilityLost("design system determinant " + std::to_string(det) +
                                  " below threshold");

    ControllerParams out;
    out.F = F;
    out.F0 = F0;
    out.M0star = M0star;
    out.M1star = m1;
    out.T = T.trimmed();
    out.L = L.trimmed();
    out.h = h;
    out.v = 0.0;
    try {
        auto main = solve_diophantine(A, d0h, M0star, degX, degY);
        out.R0 = main.X.trimmed();
        out.S0 = main.Y.trimmed();
        Polynomial rhs = (m1 - d1h * out.S0).trimmed();
        if (!rhs.is_zero()) {
            auto shifted = solve_diophantine(A, d0h, rhs, degX, degY);
            out.R1 = shifted.X.trimmed();
            out.S1 = shifted.Y.trimmed();
        }
    } catch (const SingularSylvester& e) {
        throw ControllabilityLost(std::string("design system singular: ") + e.what());
    }
    out.mode = (m1.is_zero() && out.R1.is_zero() && out.S1.is_zero())
                   ? ControllerMode::delay_free
                   : ControllerMode::full_delay;
    out.check_degrees();
    return out;
}

}  // namespace sdc
