#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "sdc/pencil.hpp"
#include "sdc/signals.hpp"

namespace sdc {

// Initial data for the canonical coordinates: slow state z1(0), input history
// psi on [-h, 0], and the fast-block disturbance segment used to derive the
// consistent z2(0).
struct AdmissibleData {
    Eigen::VectorXd z10;
    SmoothSignal psi;
    VectorSmoothSignal eta2_init;
};

struct Trajectory {
    std::vector<double> t;
    Eigen::MatrixXd z1;  // n1 x len
    Eigen::MatrixXd z2;  // n2 x len
    std::vector<double> y;
    std::vector<double> u;
};

// Consistent fast-block initial value:
// z2(0) = -sum_{i<ell} N^i (alpha2 u^{(i)}(0) + beta2 psi^{(i)}(-h) + eta2^{(i)}(0)).
Eigen::VectorXd admissible_initial_state(const WeierstrassForm& wf,
                                         const SmoothSignal& psi,
                                         const VectorSmoothSignal& eta2,
                                         const std::vector<double>& u_derivs_at_0);

// Open-loop integration in canonical coordinates: RK4 for the slow block and
// the pointwise nilpotent-chain formula for the fast block. dt must divide h.
Trajectory simulate_weierstrass(const WeierstrassForm& wf, const AdmissibleData& data,
                                const SmoothSignal& u, const VectorSignal& eta1,
                                const VectorSmoothSignal& eta2, double t_end,
                                double dt);

struct StructuralReport {
    bool ok = false;
    std::vector<std::string> failures;
};

// Two-route controllability check (Krylov ranks and eigenvalue tests) for the
// slow and fast blocks; the routes must agree.
StructuralReport controllability_test(const WeierstrassForm& wf,
                                      double tol_rank = 1e-10);

// Two-route observability check on Diag(W, N) with the stacked output vector.
StructuralReport observability_test(const WeierstrassForm& wf, double tol_rank = 1e-10);

// Evaluates G(s) = c^T (sE - A)^{-1} (b + d e^{-hs}) and cross-checks the
// canonical-coordinates formula; the two must agree to 1e-7 relative.
std::complex<double> transfer_function_eval(const DescriptorSystem& sys,
                                            const WeierstrassForm& wf,
                                            std::complex<double> s);

struct MinimalityReport {
    bool minimal = false;
    bool controllable = false;
    bool observable = false;
    std::vector<std::complex<double>> cancellations;  // roots of M shared with the numerator
};

MinimalityReport minimality_check(const WeierstrassForm& wf, const PencilPolynomials& pp,
                                  double tol_rank = 1e-10);

}  // namespace sdc
