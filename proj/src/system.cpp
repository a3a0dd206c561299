#include "sdc/system.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace sdc {

namespace {

int svd_rank(const Eigen::MatrixXd& m, double tol_rank) {
    if (m.rows() == 0 || m.cols() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] == 0.0) return 0;
    int r = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > tol_rank * sv[0]) ++r;
    return r;
}

int svd_rank_c(const Eigen::MatrixXcd& m, double tol_rank) {
    if (m.rows() == 0 || m.cols() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] == 0.0) return 0;
    int r = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > tol_rank * sv[0]) ++r;
    return r;
}

// [v, Av, ..., A^{n-1}v] blocks side by side for each given vector.
Eigen::MatrixXd krylov(const Eigen::MatrixXd& A, const std::vector<Eigen::VectorXd>& cols) {
    const int n = static_cast<int>(A.rows());
    if (n == 0) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd out(n, n * static_cast<int>(cols.size()));
    int j = 0;
    for (const auto& v : cols) {
        Eigen::VectorXd w = v;
        for (int k = 0; k < n; ++k) {
            out.col(j++) = w;
            w = A * w;
        }
    }
    return out;
}

std::vector<std::complex<double>> eigenvalues_of(const Eigen::MatrixXd& A) {
    if (A.rows() == 0) return {};
    Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
    std::vector<std::complex<double>> out(A.rows());
    for (int i = 0; i < A.rows(); ++i) out[i] = es.eigenvalues()[i];
    return out;
}

std::string cplx_str(std::complex<double> z) {
    return "(" + std::to_string(z.real()) + ", " + std::to_string(z.imag()) + ")";
}

Eigen::MatrixXd block_diag(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

}  // namespace

Eigen::VectorXd admissible_initial_state(const WeierstrassForm& wf,
                                         const SmoothSignal& psi,
                                         const VectorSmoothSignal& eta2,
                                         const std::vector<double>& u_derivs_at_0) {
    const int n2 = wf.n2;
    if (n2 == 0) return Eigen::VectorXd(0);
    if (psi.max_order() < wf.ell - 1)
        throw InsufficientSmoothness("input history lacks required derivatives");
    if (eta2.max_order() < wf.ell - 1)
        throw InsufficientSmoothness("fast-block disturbance lacks required derivatives");
    if (static_cast<int>(u_derivs_at_0.size()) < wf.ell)
        throw InsufficientSmoothness("need ell derivatives of u at t = 0");
    if (eta2.dim() != n2) throw ValidationError("eta2 dimension mismatch");

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n2);
    Eigen::MatrixXd Ni = Eigen::MatrixXd::Identity(n2, n2);
    for (int i = 0; i < wf.ell; ++i) {
        Eigen::VectorXd term =
            wf.alpha2 * u_derivs_at_0[i] + wf.beta2 * psi(-wf.h, i) + eta2(0.0, i);
        acc.noalias() += Ni * term;
        Ni = Ni * wf.N;
    }
    return -acc;
}

Trajectory simulate_weierstrass(const WeierstrassForm& wf, const AdmissibleData& data,
                                const SmoothSignal& u, const VectorSignal& eta1,
                                const VectorSmoothSignal& eta2, double t_end,
                                double dt) {
    if (!(dt > 0.0) || !(t_end > 0.0))
        throw ValidationError("simulate_weierstrass: dt and t_end must be positive");
    if (data.z10.size() != wf.n1)
        throw ValidationError("simulate_weierstrass: z10 dimension mismatch");
    if (eta1.dim() != wf.n1 || eta2.dim() != wf.n2)
        throw ValidationError("simulate_weierstrass: disturbance dimension mismatch");
    const int need = wf.ell - 1;
    if (u.max_order() < need || data.psi.max_order() < need || eta2.max_order() < need)
        throw InsufficientSmoothness(
            "simulate_weierstrass: nilpotent chain needs ell-1 input derivatives");
    const double h = wf.h;
    double ratio = h / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
        throw StepTooLarge("simulate_weierstrass: dt must divide the delay h exactly");
    const int steps = static_cast<int>(std::round(t_end / dt));

    // delayed input: history segment for t < h, the input signal afterwards
    auto u_delayed = [&](double t, int order) {
        double tau = t - h;
        return tau < 0.0 ? data.psi(tau, order) : u(tau, order);
    };
    auto slow_rhs = [&](double t, const Eigen::VectorXd& z1) -> Eigen::VectorXd {
        Eigen::VectorXd rhs = wf.alpha1 * u(t, 0) + wf.beta1 * u_delayed(t, 0) + eta1(t);
        if (wf.n1 > 0) rhs.noalias() += wf.W * z1;
        return rhs;
    };
    auto fast_state = [&](double t) -> Eigen::VectorXd {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(wf.n2);
        Eigen::MatrixXd Ni = Eigen::MatrixXd::Identity(wf.n2, wf.n2);
        for (int i = 0; i < wf.ell; ++i) {
            Eigen::VectorXd term =
                wf.alpha2 * u(t, i) + wf.beta2 * u_delayed(t, i) + eta2(t, i);
            acc.noalias() += Ni * term;
            Ni = Ni * wf.N;
        }
        return -acc;
    };

    Trajectory traj;
    traj.t.resize(steps + 1);
    traj.y.resize(steps + 1);
    traj.u.resize(steps + 1);
    traj.z1.resize(wf.n1, steps + 1);
    traj.z2.resize(wf.n2, steps + 1);

    Eigen::VectorXd z1 = data.z10;
    for (int k = 0; k <= steps; ++k) {
        double t = k * dt;
        Eigen::VectorXd z2 = fast_state(t);
        traj.t[k] = t;
        traj.z1.col(k) = z1;
        traj.z2.col(k) = z2;
        traj.u[k] = u(t, 0);
        traj.y[k] = wf.gamma1.dot(z1) + wf.gamma2.dot(z2);
        if (z1.size() > 0 && z1.norm() > 1e9) throw NumericalBlowup(t);
        if (k == steps) break;
        Eigen::VectorXd k1 = slow_rhs(t, z1);
        Eigen::VectorXd k2 = slow_rhs(t + 0.5 * dt, z1 + 0.5 * dt * k1);
        Eigen::VectorXd k3 = slow_rhs(t + 0.5 * dt, z1 + 0.5 * dt * k2);
        Eigen::VectorXd k4 = slow_rhs(t + dt, z1 + dt * k3);
        z1 += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return traj;
}

StructuralReport controllability_test(const WeierstrassForm& wf, double tol_rank) {
    StructuralReport rep;
    rep.ok = true;
    // Krylov route
    bool slow_kry = true, fast_kry = true;
    if (wf.n1 > 0)
        slow_kry = svd_rank(krylov(wf.W, {wf.alpha1, wf.beta1}), tol_rank) == wf.n1;
    if (wf.n2 > 0)
        fast_kry = svd_rank(krylov(wf.N, {wf.alpha2, wf.beta2}), tol_rank) == wf.n2;
    // eigenvalue route
    bool slow_eig = true, fast_eig = true;
    if (wf.n1 > 0) {
        for (const auto& lam : eigenvalues_of(wf.W)) {
            Eigen::MatrixXcd m(wf.n1, wf.n1 + 2);
            m.leftCols(wf.n1) =
                lam * Eigen::MatrixXcd::Identity(wf.n1, wf.n1) - wf.W.cast<std::complex<double>>();
            m.col(wf.n1) = wf.alpha1.cast<std::complex<double>>();
            m.col(wf.n1 + 1) = wf.beta1.cast<std::complex<double>>();
            if (svd_rank_c(m, tol_rank) < wf.n1) {
                slow_eig = false;
                rep.failures.push_back("slow block rank drop at eigenvalue " + cplx_str(lam));
            }
        }
    }
    if (wf.n2 > 0) {
        Eigen::MatrixXd m(wf.n2, wf.n2 + 2);
        m.leftCols(wf.n2) = wf.N;
        m.col(wf.n2) = wf.alpha2;
        m.col(wf.n2 + 1) = wf.beta2;
        fast_eig = svd_rank(m, tol_rank) == wf.n2;
        if (!fast_eig) rep.failures.push_back("fast block rank deficient");
    }
    if (slow_kry != slow_eig || fast_kry != fast_eig)
        throw IllConditioned("controllability_test: Krylov and eigenvalue routes disagree");
    rep.ok = slow_kry && fast_kry;
    if (!slow_kry && rep.failures.empty())
        rep.failures.push_back("slow block Krylov rank deficient");
    return rep;
}

StructuralReport observability_test(const WeierstrassForm& wf, double tol_rank) {
    StructuralReport rep;
    const int n = wf.n1 + wf.n2;
    Eigen::MatrixXd Wbar = block_diag(wf.W, wf.N);
    Eigen::VectorXd gamma(n);
    gamma.head(wf.n1) = wf.gamma1;
    gamma.tail(wf.n2) = wf.gamma2;

    bool kry = svd_rank(krylov(Wbar, {gamma}), tol_rank) == n;

    std::vector<std::complex<double>> lams = eigenvalues_of(wf.W);
    lams.emplace_back(0.0, 0.0);
    bool eig = true;
    for (const auto& lam : lams) {
        Eigen::MatrixXcd m(n, n + 1);
        m.leftCols(n) =
            lam * Eigen::MatrixXcd::Identity(n, n) - Wbar.cast<std::complex<double>>();
        m.col(n) = gamma.cast<std::complex<double>>();
        if (svd_rank_c(m, tol_rank) < n) {
            eig = false;
            rep.failures.push_back("output rank drop at eigenvalue " + cplx_str(lam));
        }
    }
    if (kry != eig)
        throw IllConditioned("observability_test: Krylov and eigenvalue routes disagree");
    rep.ok = kry;
    if (!kry && rep.failures.empty()) rep.failures.push_back("output Krylov rank deficient");
    return rep;
}

std::complex<double> transfer_function_eval(const DescriptorSystem& sys,
                                            const WeierstrassForm& wf,
                                            std::complex<double> s) {
    sys.validate();
    const int n = sys.n();
    const std::complex<double> eh = std::exp(-sys.h * s);

    Eigen::MatrixXcd pencil =
        s * sys.E.cast<std::complex<double>>() - sys.A.cast<std::complex<double>>();
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(pencil);
    double hadamard = 1.0;
    for (int i = 0; i < n; ++i) hadamard *= pencil.row(i).norm();
    if (std::abs(lu.determinant()) <= 1e-12 * std::max(hadamard, 1e-300))
        throw PoleEvaluation("transfer_function_eval: s is numerically a pole");
    Eigen::VectorXcd rhs =
        sys.b.cast<std::complex<double>>() + eh * sys.d.cast<std::complex<double>>();
    // dot conjugates its left argument, a no-op here since c is real
    std::complex<double> direct = sys.c.cast<std::complex<double>>().dot(lu.solve(rhs));

    std::complex<double> canonical = 0.0;
    if (wf.n1 > 0) {
        Eigen::MatrixXcd sw = s * Eigen::MatrixXcd::Identity(wf.n1, wf.n1) -
                              wf.W.cast<std::complex<double>>();
        Eigen::VectorXcd in =
            wf.alpha1.cast<std::complex<double>>() + eh * wf.beta1.cast<std::complex<double>>();
        canonical += wf.gamma1.cast<std::complex<double>>().dot(sw.fullPivLu().solve(in));
    }
    if (wf.n2 > 0) {
        Eigen::VectorXcd in =
            wf.alpha2.cast<std::complex<double>>() + eh * wf.beta2.cast<std::complex<double>>();
        Eigen::MatrixXcd Ni = Eigen::MatrixXcd::Identity(wf.n2, wf.n2);
        std::complex<double> si = 1.0;
        for (int i = 0; i < wf.ell; ++i) {
            canonical -= si * wf.gamma2.cast<std::complex<double>>().dot(Ni * in);
            Ni = Ni * wf.N.cast<std::complex<double>>();
            si *= s;
        }
    }
    if (std::abs(direct - canonical) > 1e-7 * (1.0 + std::abs(direct)))
        throw IllConditioned("transfer_function_eval: evaluation routes disagree");
    return direct;
}

MinimalityReport minimality_check(const WeierstrassForm& wf, const PencilPolynomials& pp,
                                  double tol_rank) {
    MinimalityReport rep;
    rep.controllable = controllability_test(wf, tol_rank).ok;
    rep.observable = observability_test(wf, tol_rank).ok;
    rep.minimal = rep.controllable && rep.observable;

    if (pp.M.degree() > 0) {
        bool d1_zero = pp.Delta1.is_zero();
        bool d0_zero = pp.Delta0.is_zero();
        auto small_at = [](const Polynomial& p, std::complex<double> r) {
            double scale = 1.0, rk = 1.0;
            for (double ck : p.coeffs()) {
                scale = std::max(scale, std::abs(ck) * rk);
                rk *= std::abs(r);
            }
            return std::abs(p.eval(r)) <= 1e-6 * scale;
        };
        for (const auto& r : pp.M.roots()) {
            bool c0 = d0_zero || small_at(pp.Delta0, r);
            bool c1 = d1_zero || small_at(pp.Delta1, r);
            if (c0 && c1) rep.cancellations.push_back(r);
        }
    }
    return rep;
}

}  // namespace sdc
