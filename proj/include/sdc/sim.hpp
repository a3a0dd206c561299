#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "sdc/adaptive.hpp"
#include "sdc/common.hpp"
#include "sdc/controller.hpp"
#include "sdc/pencil.hpp"
#include "sdc/polynomial.hpp"
#include "sdc/signals.hpp"
#include "sdc/system.hpp"

namespace sdc {

// Deterministic test-signal description. noise realizes as a seeded
// band-limited trigonometric polynomial (fixed harmonics up to cutoff, raw
// mt19937 words through an explicit Box-Muller), so derivatives of every
// order exist and |signal| <= amplitude pointwise. Same seed, same bytes.
struct SignalSpec {
    enum class Kind { zero, constant, sinusoid, noise };
    Kind kind = Kind::zero;
    double value = 0.0;      // constant level
    double amplitude = 0.0;  // sinusoid / noise scale
    double omega = 1.0;      // sinusoid angular frequency
    double phase = 0.0;
    double cutoff = 1.0;     // noise band edge, rad/s
    unsigned int seed = 1;

    SmoothSignal realize() const;
    double bound() const;  // pointwise bound on |signal|
};

// Estimator wiring for an adaptive run. theta0 must lie inside the box and
// F must be monic Hurwitz of degree theta0.n.
struct AdaptiveConfig {
    ParameterVector theta0;
    Eigen::MatrixXd omega;  // dim x 2 projection box, col 0 = lo, col 1 = hi
    EstimatorOptions opts;
    Polynomial F;
    int k_syn = 10;            // redesign cadence in grid steps
    double sylv_min = 1e-8;    // determinant gate passed to the redesign
    bool resynthesize = true;  // false freezes the initial controller
};

struct Scenario {
    DescriptorSystem sys;
    SignalSpec reference;            // u_c
    std::vector<SignalSpec> eta1;    // slow-block disturbance, per component
    std::vector<SignalSpec> eta2;    // fast-block disturbance, per component
    ControllerParams controller;     // initial controller for adaptive runs
    std::optional<AdaptiveConfig> adaptive;
    bool compensator = false;        // disturbance compensation channel
    std::optional<Polynomial> lambda;  // realization polynomial override
    double t_end = 10.0;
    double dt = 0.01;
    double v1 = 0.0;  // decay line for the compensator certificates
    Eigen::VectorXd z10;  // slow initial state; empty means zero
    SignalSpec psi;       // control pre-history on [-h, 0)
};

struct RunDiagnostics {
    bool blowup = false;
    double blowup_t = 0.0;
    double decomposition_residual = 0.0;
    double max_state_norm = 0.0;
    double max_abs_y = 0.0;
    double max_abs_u = 0.0;
    int resyntheses = 0;
    int resynthesis_failures = 0;  // redesigns skipped on a singular system
    bool covariance_degenerate = false;
    double final_gamma = 0.0;  // adaptive only
    double final_s = 0.0;
};

struct RunResult {
    Trajectory traj;            // grid, slow/fast states, y, u
    std::vector<double> u_c;    // reference samples on the same grid
    std::vector<double> u0;     // recovered compensating input, zero if unused
    std::vector<double> q;      // compensation channel signal
    // one row per grid point: t, e, s, b, gamma, theta_hat..., frozen;
    // 0 x 0 for non-adaptive runs
    Eigen::MatrixXd estimator_trace;
    RunDiagnostics diagnostics;
};

// Integrates the full loop on a fixed grid: slow block by RK4, fast block
// resolved pointwise, controller chains and filters advanced in the same
// state vector, delayed reads from recorded grid rows. Adaptive runs update
// the estimator once per grid point and redesign every k_syn steps; a
// singular redesign keeps the previous controller and is counted. A state
// norm above 1e9 halts the run gracefully with diagnostics.blowup set.
RunResult run_closed_loop(const Scenario& sc);

// Open-loop estimation: the plant is driven directly by the reference signal
// with no feedback, and the estimator runs on the measured output. The
// scenario's controller and compensator sections are ignored; the adaptive
// section is required. No redesigns happen.
RunResult run_open_loop_estimation(const Scenario& sc);

// Reference trajectory of
//   Mm0(D) y + Mm1(D) y(t-h) + D1S1(D) y(t-2h) = numerator(D, shifts) u_c
// with zero pre-history. Mm0 is normalized monic; the model must be
// certified stable (Hurwitz plus small-gain margins for the delayed terms)
// or NotStable is thrown. Trajectory.z1 carries the phase chain of y and
// Trajectory.u the reference samples.
Trajectory run_reference_model(const Polynomial& Mm0, const Polynomial& Mm1,
                               const Polynomial& D1S1,
                               const QuasiPolynomial& numerator, double h,
                               const SmoothSignal& u_c, double t_end, double dt);

}  // namespace sdc
