#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "sdc/common.hpp"
#include "sdc/controller.hpp"
#include "sdc/pencil.hpp"
#include "sdc/polynomial.hpp"
#include "sdc/signals.hpp"

namespace sdc {

// Parameter vector of the filtered regression model for a plant of order n:
//   y = theta_y . phi_y + theta_u . phi_u + theta_ud . phi_ud + offset
// with blocks [coeffs of F - Mhat, degrees n-1..0 | coeffs of Delta0hat,
// degrees n..0 | coeffs of Delta1hat, degrees n..0], Mhat monic of degree n.
struct ParameterVector {
    int n = 0;
    Eigen::VectorXd theta;

    ParameterVector() = default;
    explicit ParameterVector(int order);
    ParameterVector(int order, Eigen::VectorXd th);

    int dim() const { return n + 2 * (n + 1); }

    Polynomial m_hat(const Polynomial& F) const;  // F minus the y block
    Polynomial delta0_hat() const;
    Polynomial delta1_hat() const;
};

// Exact parameters of a plant under the estimation filter F (monic, degree n
// >= deg M). The cofactor H = quotient of F by M makes H*M agree with F above
// degree n-1, so the y block is the division remainder and the input blocks
// are H*Delta0 and H*Delta1.
ParameterVector true_parameter_vector(const PencilPolynomials& pp, const Polynomial& F,
                                      int n);

// phi = [D^{n-1}y_f .. y_f | D^n u_f .. u_f | the u block delayed by h].
// x_yf and x_uf are the 1/F chain states (ascending derivative order, n each),
// u_now closes the top derivative of the u chain, u_del holds the n+1 delayed
// values in the same descending order.
Eigen::VectorXd assemble_regressor(const Polynomial& F, int n, const double* x_yf,
                                   const double* x_uf, double u_now,
                                   const double* u_del);

// Standalone grid integrator of the two 1/F regressor chains against external
// u and y. The delayed u block is kept on the step grid; its pre-history on
// [-h, 0) integrates psi from rest.
class RegressorStepper {
public:
    RegressorStepper(const Polynomial& F, int n, double h, double dt,
                     SmoothSignal psi = SmoothSignal::zero());

    void step(const std::function<double(double)>& u,
              const std::function<double(double)>& y);
    // regressor at the current time; u_now is u(t())
    Eigen::VectorXd regressor(double u_now) const;
    double t() const { return t_; }
    const Eigen::VectorXd& y_chain() const { return xy_; }
    const Eigen::VectorXd& u_chain() const { return xu_; }

private:
    std::vector<double> u_row(double u_now) const;

    Polynomial f_;
    int n_ = 0, hsteps_ = 0;
    double dt_ = 0.0, t_ = 0.0, t0_ = 0.0;
    Eigen::VectorXd xy_, xu_;
    std::vector<std::vector<double>> u_hist_;
};

struct EstimatorOptions {
    double alpha1 = 1.0;     // adaptation gain
    double g = 2.0;          // dead-zone width factor, > 1
    double rho0 = 1.0;       // disturbance-bound forgetting rate
    double eps1 = 1e-3;      // regressor-energy weight in the bound
    double eps2 = 1e-4;      // constant floor of the bound
    double p0 = 100.0;       // initial covariance scale, P(0) = p0 I
    double p_min = 1e-8;     // eigenvalue floor of P
    double floor_frac = 0.5; // degeneracy threshold on the flooring rate
};

struct DeadZone {
    double s = 0.0;  // dead-zone modulation in [0, 1]
    double b = 0.0;  // effective gain alpha1 * s / (1 + phi' P phi)
};

struct EstimatorState {
    ParameterVector theta_hat;
    Eigen::MatrixXd P;
    Eigen::MatrixXd omega;  // dim x 2 box bounds [lo, hi] per component
    EstimatorOptions opts;
    double gamma_sup = 0.0;
    long long steps = 0;    // estimator_step invocations
    long long floored = 0;  // eigenvalue-floor activations
    // last-step diagnostics
    double y_hat = 0.0, e = 0.0, s = 0.0, b = 0.0, gamma = 0.0;
    bool frozen = true;

    bool covariance_degenerate() const {
        return steps > 0 && floored > opts.floor_frac * static_cast<double>(steps);
    }
};

// Box of half-width frac * max(|theta_i|, 1) around a center vector.
Eigen::MatrixXd default_box(const ParameterVector& center, double frac = 0.5);

EstimatorState make_estimator(const ParameterVector& theta0,
                              const Eigen::MatrixXd& omega,
                              const EstimatorOptions& opts = {});

struct Prediction {
    double y_hat = 0.0;
    double e = 0.0;
};
Prediction predict_and_error(const ParameterVector& th, const Eigen::VectorXd& phi,
                             double y);

// gamma_sup <- max(gamma_sup * exp(-2 rho0 dt), |phi|^2); returns the bound
// gamma = eps1 * gamma_sup + eps2
double disturbance_bound_update(EstimatorState& st, const Eigen::VectorXd& phi,
                                double dt);

// s = 0 inside |e| <= g*sqrt(gamma), else 1 - g*sqrt(gamma)/|e|
DeadZone dead_zone_gate(const EstimatorState& st, double e, double gamma,
                        const Eigen::VectorXd& phi);

// Euler update with the pre-update covariance in the parameter direction:
//   theta <- Proj_Omega(theta + dt b P phi e),  P <- P - dt b (P phi)(P phi)'
// P is re-symmetrized and eigenvalue-floored at p_min. b = 0 leaves theta and
// P bitwise untouched.
void estimator_step(EstimatorState& st, const Eigen::VectorXd& phi, double e, double b,
                    double dt);

// Full grid update: disturbance bound, prediction, dead zone, then
// estimator_step. Diagnostics (y_hat, e, s, b, gamma, frozen) are refreshed.
void estimator_update(EstimatorState& st, const Eigen::VectorXd& phi, double y,
                      double dt);

// Throws CovarianceDegenerate when the flooring rate exceeds floor_frac.
void check_covariance(const EstimatorState& st);

// Certainty-equivalence redesign from the current estimates: solves
// F0*Mhat*R0 + Delta0hat*S0 = M0star and the shifted companion with right
// side M1star - Delta1hat*S0, both with deg X = deg Y = deg F0 + n - 1.
// Throws ControllabilityLost when the square coefficient matrix has
// |det| < sylv_min or the solve reports singularity.
ControllerParams adaptive_resynthesis(const ParameterVector& theta_hat,
                                      const Polynomial& F, const Polynomial& F0,
                                      const Polynomial& M0star,
                                      const Polynomial& M1star, const Polynomial& T,
                                      const Polynomial& L, double h,
                                      double sylv_min = 1e-8);

}  // namespace sdc
