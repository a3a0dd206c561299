#include <cmath>
#include <optional>

#include "doctest.h"
#include "fixtures.hpp"
#include "sdc/controller.hpp"
#include "sdc/pencil.hpp"

using namespace sdc;

namespace {

ControllerParams first_order_law(Polynomial S0, Polynomial T) {
    ControllerParams p;
    p.F0 = Polynomial{1.0, 1.0};
    p.F = p.F0;
    p.R0 = Polynomial{1.0};
    p.S0 = std::move(S0);
    p.T = std::move(T);
    p.M0star = Polynomial{1.0, 2.0, 1.0};  // placeholder closed-loop target
    p.mode = ControllerMode::delay_free;
    p.h = 0.0;
    return p;
}

}  // namespace

TEST_CASE("filter realization basics") {
    auto f = make_filter(Polynomial{1.0, 1.0});
    REQUIRE(f.dim() == 1);
    double t = 0.0, dt = 1e-3;
    while (t < 1.0 - dt / 2) {
        f.step(t, dt, [](double) { return 1.0; });
        t += dt;
    }
    CHECK(f.output(1.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-6));

    // feedthrough-only realization
    auto g = FilterRealization::proper(Polynomial{3.0}, Polynomial{2.0});
    CHECK(g.dim() == 0);
    CHECK(g.output(2.0) == doctest::Approx(3.0));

    CHECK_THROWS_AS(make_filter(Polynomial{5.0}), DegreeViolation);
    CHECK_THROWS_AS(make_filter(Polynomial{1.0, 2.0}), NotMonic);
    CHECK_THROWS_AS(make_filter(Polynomial{-1.0, 1.0}), NotHurwitz);
    CHECK_THROWS_AS(FilterRealization::proper(Polynomial{0.0, 0.0, 1.0},
                                              Polynomial{1.0, 1.0}),
                    DegreeViolation);
    CHECK_THROWS_AS(FilterRealization::proper(Polynomial{1.0}, Polynomial{}),
                    ZeroPolynomial);
}

TEST_CASE("input polynomial splitting") {
    auto a = split_delta0(Polynomial{-2.0, -1.0}, 1.5);
    CHECK(a.plus.approx_equal(Polynomial{2.0, 1.0}, 1e-12));
    CHECK(a.minus.approx_equal(Polynomial{-1.0}, 1e-12));

    auto b = split_delta0(Polynomial{0.0, 1.0}, 0.0);
    CHECK(b.plus.approx_equal(Polynomial{1.0}, 1e-12));
    CHECK(b.minus.approx_equal(Polynomial{0.0, 1.0}, 1e-12));

    auto c = split_delta0(Polynomial{3.0, 4.0, 1.0}, 2.0);  // (s+1)(s+3)
    CHECK(c.plus.approx_equal(Polynomial{3.0, 1.0}, 1e-10));
    CHECK(c.minus.approx_equal(Polynomial{1.0, 1.0}, 1e-10));

    CHECK_THROWS_AS(split_delta0(Polynomial{}, 1.0), ZeroPolynomial);
}

TEST_CASE("pole placement on the first-order singular plant") {
    auto pp = pencil_polynomials(fixtures::s2b());
    Polynomial F0{3.0, 1.0};
    Polynomial M0 = Polynomial::from_roots({-1.0, -2.5, -4.0});
    auto p = synthesize_pole_placement(pp, F0, M0, Polynomial{}, std::nullopt,
                                       std::nullopt, 1.0, 0.5, 0.0);

    CHECK(p.mode == ControllerMode::delay_free);
    CHECK(p.R0.approx_equal(Polynomial{-3.0, -1.0}, 1e-9));
    CHECK(p.S0.approx_equal(Polynomial{-0.5, -0.5}, 1e-9));
    CHECK(p.T.degree() == 0);
    CHECK(p.T.coeff(0) == doctest::Approx(-5.0));
    CHECK(p.L.approx_equal(Polynomial{1.0}, 1e-12));
    CHECK(p.R1.is_zero());
    CHECK(p.S1.is_zero());
    CHECK(p.v == 0.5);

    Polynomial closed = p.F0 * pp.M * p.R0 + pp.Delta0 * p.S0;
    CHECK(closed.approx_equal(M0, 1e-9));
    CHECK_NOTHROW(p.check_degrees());
}

TEST_CASE("synthesis rejects a filter root shared with the input path") {
    auto pp = pencil_polynomials(fixtures::s2b());
    Polynomial M0 = Polynomial::from_roots({-1.0, -2.5, -4.0});
    CHECK_THROWS_AS(synthesize_pole_placement(pp, Polynomial{2.0, 1.0}, M0,
                                              Polynomial{}, std::nullopt, std::nullopt,
                                              1.0, 0.5, 0.0),
                    NotCoprime);
}

TEST_CASE("synthesis validates the target degree and stability") {
    auto pp = pencil_polynomials(fixtures::s2b());
    CHECK_THROWS_AS(synthesize_pole_placement(pp, Polynomial{3.0, 1.0},
                                              Polynomial::from_roots({-1.0, -2.0}),
                                              Polynomial{}, std::nullopt, std::nullopt,
                                              1.0, 0.0, 0.0),
                    DegreeConstraintViolated);
    CHECK_THROWS_AS(synthesize_pole_placement(pp, Polynomial{3.0, 1.0},
                                              Polynomial::from_roots({-1.0, -2.5, 0.5}),
                                              Polynomial{}, std::nullopt, std::nullopt,
                                              1.0, 0.0, 0.0),
                    NotHurwitz);
}

TEST_CASE("delayed pole placement on the third-order plant") {
    auto pp = pencil_polynomials(fixtures::delayed3());
    Polynomial F0{3.0, 1.0};
    Polynomial M0 = Polynomial::from_roots({-0.8, -1.2, -1.6, -2.4, -2.8});
    auto p = synthesize_pole_placement(pp, F0, M0, Polynomial{}, std::nullopt,
                                       std::nullopt, 0.5, 0.5, 0.0);

    CHECK(p.mode == ControllerMode::full_delay);
    CHECK_FALSE(p.S0.is_zero());
    CHECK_FALSE(p.S1.is_zero());

    Polynomial A = p.F0 * pp.M;
    Polynomial main_res = A * p.R0 + pp.Delta0 * p.S0 - M0;
    CHECK(main_res.max_abs_coeff() <= 1e-8 * (1.0 + M0.max_abs_coeff()));

    Polynomial rhs = Polynomial{} - pp.Delta1 * p.S0;  // M1star is zero here
    Polynomial shift_res = A * p.R1 + pp.Delta0 * p.S1 - rhs;
    CHECK(shift_res.max_abs_coeff() <= 1e-8 * (1.0 + rhs.max_abs_coeff()));

    // the certified loop denominator perturbation stays a contraction
    double mg = delay_stability_margin(M0, Polynomial{}, pp.Delta1 * p.S1, 0.5, 0.0);
    CHECK(mg < 1.0);

    // default L clears its degree floor
    CHECK(p.L.degree() >= p.F0.degree() + pp.M.degree() - 2);
}

TEST_CASE("model matching on the first-order singular plant") {
    auto pp = pencil_polynomials(fixtures::s2b());
    Polynomial F0{3.0, 1.0};
    Polynomial Mm = Polynomial::from_roots({-2.0, -2.0, -2.0});
    auto p = model_matching_synthesis(pp, F0, Mm, 1.5);

    CHECK(p.mode == ControllerMode::model_matching);
    CHECK(p.R0.approx_equal(Polynomial{-4.0, -4.0, -1.0}, 1e-9));  // -(s+2)^2
    CHECK(p.S0.approx_equal(Polynomial{-2.0, -1.0}, 1e-9));
    CHECK(p.T.degree() == 0);
    CHECK(p.T.coeff(0) == doctest::Approx(-8.0));
    CHECK(p.M0star.approx_equal(Mm, 1e-12));

    // matching identity with the split input factor
    auto sp = split_delta0(pp.Delta0, 1.5);
    Polynomial lhs = p.F0 * pp.M * Polynomial{2.0, 1.0} * -1.0 + sp.minus * p.S0;
    CHECK(lhs.approx_equal(Mm, 1e-9));

    // a delayed input path rules the construction out
    auto ppd = pencil_polynomials(fixtures::delayed3());
    CHECK_THROWS_AS(model_matching_synthesis(ppd, F0,
                                             Polynomial::from_roots(
                                                 {-2.0, -2.0, -2.0, -2.0, -2.0}),
                                             1.5),
                    ValidationError);
}

TEST_CASE("degree guards on the parameter set") {
    auto p = first_order_law(Polynomial{}, Polynomial{1.0});
    CHECK_NOTHROW(p.check_degrees());

    auto bad_s = p;
    bad_s.S0 = Polynomial{0.0, 0.0, 1.0};
    CHECK_THROWS_AS(bad_s.check_degrees(), DegreeConstraintViolated);

    auto bad_r1 = p;
    bad_r1.h = 1.0;
    bad_r1.mode = ControllerMode::full_delay;
    bad_r1.R1 = Polynomial{0.0, 1.0};
    CHECK_THROWS_AS(bad_r1.check_degrees(), DegreeConstraintViolated);

    auto bad_mode = p;
    bad_mode.S1 = Polynomial{1.0};
    bad_mode.h = 1.0;
    CHECK_THROWS_AS(bad_mode.check_degrees(), DegreeConstraintViolated);

    auto bad_h = p;
    bad_h.mode = ControllerMode::full_delay;
    bad_h.S1 = Polynomial{1.0};
    bad_h.h = 0.0;
    CHECK_THROWS_AS(bad_h.check_degrees(), DegreeConstraintViolated);
}

TEST_CASE("control law realization and stepping") {
    auto p = first_order_law(Polynomial{}, Polynomial{1.0});
    ControlLaw law(p, QChannel::none);
    CHECK(law.dim() == 3);  // u, y, u_c chains of one state each
    CHECK(law.n_lambda() == 1);
    CHECK(law.rec_len() == 2);
    CHECK_FALSE(law.has_q());
    CHECK_FALSE(law.needs_delayed_u());
    CHECK_FALSE(law.needs_delayed_y());

    // (D + 1)u = u_c from rest: u(1) = 1 - e^{-1}
    ControllerStepper st(p, 1e-3);
    for (int i = 0; i < 1000; ++i) control_law_step(st, 1.0, 0.0);
    CHECK(st.t() == doctest::Approx(1.0));
    CHECK(st.u() == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-5));
}

TEST_CASE("control law output feedback settles at the static gain") {
    auto p = first_order_law(Polynomial{1.0}, Polynomial{1.0});
    ControllerStepper st(p, 2e-3);
    for (int i = 0; i < 5000; ++i) control_law_step(st, 0.0, 1.0);
    CHECK(st.u() == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("control law realization polynomial override rules") {
    auto p = first_order_law(Polynomial{}, Polynomial{1.0});
    CHECK_NOTHROW(ControlLaw(p, QChannel::none, Polynomial{5.0, 1.0}));
    CHECK_THROWS_AS(ControlLaw(p, QChannel::none, Polynomial{25.0, 10.0, 1.0}),
                    DegreeConstraintViolated);
    CHECK_THROWS_AS(ControlLaw(p, QChannel::none, Polynomial{5.0, 2.0}), NotMonic);
    CHECK_THROWS_AS(ControlLaw(p, QChannel::none, Polynomial{-1.0, 1.0}), NotHurwitz);
}

TEST_CASE("parameter swap keeps the realization") {
    auto p = first_order_law(Polynomial{}, Polynomial{1.0});
    ControlLaw law(p, QChannel::none);
    Polynomial lam = law.lambda();

    auto q = first_order_law(Polynomial{0.5}, Polynomial{2.0});
    law.swap_params(q);
    CHECK(law.lambda().approx_equal(lam, 1e-12));
    CHECK(law.params().T.coeff(0) == doctest::Approx(2.0));

    auto grown = q;
    grown.R0 = Polynomial{1.0, 1.0};  // changes deg F0 + deg R0
    grown.M0star = Polynomial::from_roots({-1.0, -1.0, -1.0});
    CHECK_THROWS_AS(law.swap_params(grown), Error);
}

TEST_CASE("compensator construction and rest state") {
    auto pp = pencil_polynomials(fixtures::s2b());
    Polynomial F0{3.0, 1.0};
    Polynomial M0 = Polynomial::from_roots({-1.0, -2.5, -4.0});
    auto p = synthesize_pole_placement(pp, F0, M0, Polynomial{}, std::nullopt,
                                       std::nullopt, 1.0, 0.5, 0.0);

    // the default L is too short for the disturbance channel here
    CHECK_THROWS_AS(Compensator(p, pp, 0.0), NonProperCompensator);

    auto pc = p;
    pc.L = pow(F0, 3);
    Compensator comp(pc, pp, 0.0);
    CHECK(comp.dim() == 4);  // one state for 1/Delta0, three for 1/L
    CHECK_FALSE(comp.needs_y_history());
    CHECK_FALSE(comp.needs_q_history());

    Eigen::VectorXd x = Eigen::VectorXd::Zero(comp.dim());
    Compensator::Inputs in;
    CHECK(comp.q_at(x, in) == 0.0);
    CHECK(comp.u0_at(x, 0.0) == 0.0);
    CHECK(comp.deriv(x, in, 0.0).norm() == 0.0);

    SmoothSignal wv = Compensator::forcing(pc, pp, VectorSmoothSignal(2));
    CHECK(wv(1.23) == 0.0);
}

TEST_CASE("compensator with delayed output and self injections") {
    PencilPolynomials pp;
    pp.M = Polynomial{1.0, 1.0};
    pp.Delta0 = Polynomial{2.0, 3.0, 1.0};  // (s+1)(s+2)
    pp.Delta1 = Polynomial{0.1};
    pp.Delta2 = {Polynomial{1.0}};

    ControllerParams p;
    p.F0 = Polynomial{1.0, 1.0};
    p.F = p.F0;
    p.R0 = Polynomial{2.0, 1.0};
    p.S0 = Polynomial{1.0};
    p.S1 = Polynomial{0.5, 0.2, 0.1};
    p.T = Polynomial{1.0};
    p.L = Polynomial{3.0, 1.0};
    p.M0star = Polynomial::from_roots({-1.0, -1.0, -1.0});
    p.h = 1.0;
    p.mode = ControllerMode::full_delay;

    Compensator comp(p, pp, 0.0);
    CHECK(comp.dim() == 7);  // 2 + 2 + 2 chain states plus one for 1/L
    CHECK(comp.needs_y_history());
    CHECK(comp.needs_q_history());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(comp.dim());
    CHECK(comp.q_at(x, Compensator::Inputs{}) == 0.0);

    // estimate swap keeps the layout but refuses a degree change
    CHECK_NOTHROW(comp.swap_polynomials(Polynomial{2.2, 3.1, 1.0}, Polynomial{0.12},
                                        p.S1));
    CHECK_THROWS_AS(comp.swap_polynomials(Polynomial{1.0, 1.0}, Polynomial{0.1}, p.S1),
                    ValidationError);
}

TEST_CASE("compensator rejects an unstable input polynomial") {
    PencilPolynomials pp;
    pp.M = Polynomial{1.0, 1.0};
    pp.Delta0 = Polynomial{-1.0, 1.0};  // root at +1
    pp.Delta1 = Polynomial{};
    pp.Delta2 = {Polynomial{1.0}};
    auto p = first_order_law(Polynomial{}, Polynomial{1.0});
    p.L = Polynomial{2.0, 1.0};
    CHECK_THROWS_AS(Compensator(p, pp, 0.0), DeltaNotStable);

    pp.Delta0 = Polynomial{1.0, 1.0};
    pp.Delta2 = {Polynomial{1.0, 1.0}};
    p.L = Polynomial{1.0};
    CHECK_THROWS_AS(Compensator(p, pp, 0.0), NonProperCompensator);
}
