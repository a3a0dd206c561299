#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdc/common.hpp"
#include "sdc/pencil.hpp"
#include "sdc/polynomial.hpp"
#include "sdc/signals.hpp"

namespace sdc {

// Proper SISO transfer function num/den in controllable canonical (phase
// variable) form. The stored denominator is monic-normalized; the state holds
// the phase variable and its first dim-1 derivatives. For num == 1 the state
// components are the filtered output and its derivatives.
class FilterRealization {
public:
    FilterRealization();  // unit gain, dimension 0

    static FilterRealization proper(const Polynomial& num, const Polynomial& den);

    const Eigen::MatrixXd& A_F() const { return A_; }
    const Eigen::VectorXd& b_F() const { return b_; }
    const Eigen::VectorXd& c_F() const { return c_; }
    double feedthrough() const { return d_; }
    const Polynomial& denominator() const { return den_; }
    const Polynomial& numerator() const { return num_; }
    int dim() const { return static_cast<int>(A_.rows()); }

    Eigen::VectorXd& state() { return state_; }
    const Eigen::VectorXd& state() const { return state_; }
    void reset() { state_.setZero(); }

    double output(double input) const { return output_at(state_, input); }
    double output_at(const Eigen::Ref<const Eigen::VectorXd>& x, double input) const;
    Eigen::VectorXd deriv_at(const Eigen::Ref<const Eigen::VectorXd>& x,
                             double input) const;
    // derivative of order dim of the phase variable, from the dynamics row
    double top_derivative(const Eigen::Ref<const Eigen::VectorXd>& x,
                          double input) const;
    // one RK4 step of the internal state with a time-resolved input
    void step(double t, double dt, const std::function<double(double)>& input);

private:
    Eigen::MatrixXd A_;
    Eigen::VectorXd b_, c_;
    double d_ = 1.0;
    Polynomial num_, den_;
    Eigen::VectorXd state_;
};

// filter 1/F with F monic Hurwitz of degree >= 1
FilterRealization make_filter(const Polynomial& F);

enum class ControllerMode { full_delay, delay_free, model_matching };

const char* mode_name(ControllerMode m);
ControllerMode mode_from_name(const std::string& s);

struct ControllerParams {
    Polynomial F;   // estimation filter; empty means "use F0"
    Polynomial F0;  // control filter denominator, monic Hurwitz
    Polynomial T, L;
    Polynomial R0, R1, S0, S1;
    Polynomial M0star, M1star;
    double h = 0.0;
    double v = 0.0;
    ControllerMode mode = ControllerMode::delay_free;

    // structural sanity; throws DegreeConstraintViolated with the violated
    // inequality spelled out
    void check_degrees() const;
};

// Solves F0*M*R0 + Delta0*S0 = M0star and, when delayed terms are present,
// F0*M*R1 + Delta0*S1 = M1star - Delta1*S0, then certifies closed-loop delay
// margins. T defaults to the constant giving unit DC tracking gain; L defaults
// to the smallest power of F0 meeting its degree floor.
ControllerParams synthesize_pole_placement(
    const PencilPolynomials& pp, const Polynomial& F0, const Polynomial& M0star,
    const Polynomial& M1star, const std::optional<Polynomial>& T,
    const std::optional<Polynomial>& L, double h, double v, double v1,
    const MarginOptions& mopts = {});

struct Delta0Split {
    Polynomial plus;   // monic, cancelled inside the loop
    Polynomial minus;  // kept factor, carries the leading coefficient
};
// Roots with Re <= -v - 1e-7 go to plus; boundary straddlers stay in minus.
Delta0Split split_delta0(const Polynomial& delta0, double v);

// Splits Delta0 = plus*minus, solves F0*M*R0p + minus*S0 = Mm, and returns
// params with R0 = plus*R0p, R1 = S1 = M1star = 0. T is the reference-model
// numerator factor; defaults to the DC-normalizing constant Mm(0)/minus(0).
ControllerParams model_matching_synthesis(const PencilPolynomials& pp,
                                          const Polynomial& F0, const Polynomial& Mm,
                                          double v,
                                          const std::optional<Polynomial>& T = {},
                                          double h = 0.0);

// How the compensating input enters the control law:
//   none      no compensation channel
//   direct_q  the channel input is q = L(D)u0, produced by a Compensator
//   raw_u0    the channel input is u0 itself and L(D) acts on its chain
enum class QChannel { none, direct_q, raw_u0 };

// Observer-form realization of
//   F0(D)R0(D)u = T(D)u_c - S0(D)y - S1(D)y(t-h) - F0(D)R1(D)u(t-h) + L(D)u0
// around a chosen Hurwitz polynomial lambda of degree deg F0 + deg R0:
//   u = [(lambda - F0*R0)/lambda]u + [T/lambda]u_c - [S0/lambda]y - ...
// Every path is proper and all realization modes are roots of lambda, so
// internal stability does not depend on the roots of R0. The law is
// lead-normalized so lambda - F0*R0 stays strictly proper and u is an
// explicit function of the chain states.
// State layout: [x_u | x_y | x_uc | x_q (optional)], each of size deg lambda.
// The default lambda is F0 * (s + v + 1)^(deg R0).
class ControlLaw {
public:
    ControlLaw(const ControllerParams& p, QChannel qmode,
               const std::optional<Polynomial>& lambda = {});

    int dim() const { return total_dim_; }
    int n_lambda() const { return nl_; }
    const Polynomial& lambda() const { return lam_; }
    bool has_q() const { return qmode_ != QChannel::none; }
    QChannel q_mode() const { return qmode_; }
    bool needs_delayed_u() const { return !f0r1_.is_zero(); }
    bool needs_delayed_y() const { return !s1_.is_zero(); }
    // width of one recorded chain row: all states plus the top derivative
    int rec_len() const { return nl_ + 1; }
    const ControllerParams& params() const { return p_; }

    struct Inputs {
        double t = 0.0;
        const SmoothSignal* u_c = nullptr;
        double y = 0.0;
        double q = 0.0;  // q or u0 depending on the channel mode
        // delayed chain rows at t - h, rec_len() values each, consulted only
        // when the matching delayed polynomial is nonzero
        const double* y_del = nullptr;
        const double* u_del = nullptr;
    };

    // u is algebraic in the chain states (plus a u_c feedthrough when
    // deg T equals deg lambda)
    double output_u(const Eigen::Ref<const Eigen::VectorXd>& x, const Inputs& in) const;

    Eigen::VectorXd deriv(const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Inputs& in) const;

    // chain rows for the delay histories; out must hold rec_len() values
    void record_y_chain(const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                        double* out) const;
    void record_u_chain(const Eigen::Ref<const Eigen::VectorXd>& x, double u,
                        double* out) const;

    // resynthesis swap; deg F0 + deg R0 and the channel mode must not change
    // and the realization polynomial is carried over so the state keeps its
    // meaning
    void swap_params(const ControllerParams& p);

private:
    ControllerParams p_;
    Polynomial f0_, r0_, s0_, s1_, t_, l_, lam_, g_, f0r1_;
    QChannel qmode_ = QChannel::none;
    double rho_inv_ = 1.0;  // 1 / lead(R0), the lead normalization
    int nl_ = 0;
    int u_off_ = 0, y_off_ = 0, uc_off_ = 0, q_off_ = 0, total_dim_ = 0;
};

// Disturbance compensator producing q = L(D)u0 from
// Delta0(D)q = w_v + (Delta1*S1)(D) y(t-2h) - Delta1(D) q(t-h), with w_v the
// analytically evaluated forcing of the disturbance channel. u0 is recovered
// for logging through a 1/L filter. State layout:
// [x_qv (deg Delta0) | x_qy (optional) | x_qd (optional) | x_u0 (deg L, optional)].
class Compensator {
public:
    Compensator(const ControllerParams& p, const PencilPolynomials& pp,
                double v1 = 0.0, const MarginOptions& mopts = {});

    int dim() const { return total_dim_; }
    bool needs_y_history() const { return has_y_; }
    bool needs_q_history() const { return has_d_; }

    struct Inputs {
        double wv = 0.0;    // analytic forcing at the evaluation time
        double y_2h = 0.0;  // y(t - 2h), zero before the start
        double q_h = 0.0;   // q(t - h), zero before the start
    };

    double q_at(const Eigen::Ref<const Eigen::VectorXd>& x, const Inputs& in) const;
    double u0_at(const Eigen::Ref<const Eigen::VectorXd>& x, double q) const;
    Eigen::VectorXd deriv(const Eigen::Ref<const Eigen::VectorXd>& x, const Inputs& in,
                          double q) const;

    // estimate swap for the adaptive variant; deg Delta0 must keep the layout
    void swap_polynomials(const Polynomial& delta0, const Polynomial& delta1,
                          const Polynomial& s1);

    // w_v = -F0(D)(R0(D) [Delta2^T v0](t) + R1(D) [Delta2^T v0](t-h))
    static SmoothSignal forcing(const ControllerParams& p, const PencilPolynomials& pp,
                                const VectorSmoothSignal& v0);

private:
    ControllerParams p_;
    Polynomial d0m_, d1_, d1s1_, lm_poly_;
    double lam_ = 1.0, lamL_ = 1.0;
    int d0_ = 0, lm_ = 0;
    bool has_y_ = false, has_d_ = false, has_u0f_ = false;
    int qv_off_ = 0, qy_off_ = 0, qd_off_ = 0, u0_off_ = 0, total_dim_ = 0;
};

// Integrates the compensator over [0, t_end] against an output history (zero
// before the start) and returns the logged u0 as an interpolated signal.
SmoothSignal compensator_u0(const ControllerParams& p, const PencilPolynomials& pp,
                            const VectorSmoothSignal& v0,
                            const std::function<double(double)>& y_history,
                            double t_end, double dt, double v1 = 0.0);

// Standalone grid stepper around ControlLaw for externally supplied signals.
// Delayed chain histories are kept internally on the step grid; the u chain
// pre-history on [-h, 0) is integrated from psi and y is taken as zero before
// t = 0. When L is nonzero the u0 input feeds the compensation channel.
class ControllerStepper {
public:
    ControllerStepper(const ControllerParams& p, double dt,
                      SmoothSignal psi = SmoothSignal::zero());

    void step(const SmoothSignal& u_c, const std::function<double(double)>& y,
              const std::function<double(double)>& u0 = {});
    double u() const { return u_last_; }
    double t() const { return t_; }
    const ControlLaw& law() const { return law_; }
    const Eigen::VectorXd& state() const { return x_; }

private:
    ControlLaw::Inputs inputs_at(double tau, const SmoothSignal& u_c,
                                 const std::function<double(double)>& y,
                                 const std::function<double(double)>& u0,
                                 std::vector<double>& ybuf,
                                 std::vector<double>& ubuf) const;

    ControlLaw law_;
    Eigen::VectorXd x_;
    double dt_ = 0.0, t_ = 0.0, t0_ = 0.0, u_last_ = 0.0;
    int hsteps_ = 0;
    SmoothSignal psi_;
    std::vector<std::vector<double>> y_hist_, u_hist_;
};

// Convenience zero-order-hold step: advances the stepper one grid interval
// with constant u_c, y, u0 over the step and returns u at the new time.
double control_law_step(ControllerStepper& st, double u_c, double y, double u0 = 0.0);

}  // namespace sdc
