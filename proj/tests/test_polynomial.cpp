#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "doctest.h"
#include "sdc/polynomial.hpp"

using namespace sdc;
using cplx = std::complex<double>;

TEST_CASE("degree ignores trailing noise and the zero polynomial reports -1") {
    CHECK(Polynomial{}.degree() == -1);
    CHECK(Polynomial{0.0, 0.0}.degree() == -1);
    CHECK(Polynomial{1.0}.degree() == 0);
    CHECK(Polynomial{1.0, 2.0, 1e-15}.degree() == 1);
    CHECK(Polynomial{1.0, 2.0, 3.0}.degree() == 2);
    CHECK(Polynomial{}.is_zero());
    CHECK(Polynomial{1.0}.coeff(5) == 0.0);
}

TEST_CASE("from_roots builds real polynomials from conjugate pairs") {
    auto p = Polynomial::from_roots({{-1.0, 2.0}, {-1.0, -2.0}}, 3.0);
    // 3 (s^2 + 2s + 5)
    CHECK(p.coeff(2) == doctest::Approx(3.0));
    CHECK(p.coeff(1) == doctest::Approx(6.0));
    CHECK(p.coeff(0) == doctest::Approx(15.0));
    CHECK(std::abs(p.eval(cplx(-1.0, 2.0))) < 1e-12);
}

TEST_CASE("arithmetic identities") {
    Polynomial a{1.0, 1.0};  // s + 1
    Polynomial b{2.0, 1.0};  // s + 2
    Polynomial prod = a * b;
    CHECK(prod.approx_equal(Polynomial{2.0, 3.0, 1.0}, 1e-12));
    CHECK((a + b).approx_equal(Polynomial{3.0, 2.0}, 1e-12));
    CHECK((a - a).is_zero());
    CHECK((a * 2.0).approx_equal(Polynomial{2.0, 2.0}, 1e-12));
    CHECK(pow(a, 3).approx_equal(Polynomial{1.0, 3.0, 3.0, 1.0}, 1e-12));
    CHECK(pow(a, 0).approx_equal(Polynomial{1.0}, 1e-12));
    CHECK(a.derivative().approx_equal(Polynomial{1.0}, 1e-12));
    CHECK(Polynomial{4.0, 2.0}.monic().approx_equal(Polynomial{2.0, 1.0}, 1e-12));
    CHECK_THROWS_AS(Polynomial{}.monic(), ZeroPolynomial);
}

TEST_CASE("division identity a = q*b + r with deg r < deg b") {
    std::mt19937 eng(7);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> ac(6), bc(3);
        for (auto& x : ac) x = coef(eng);
        for (auto& x : bc) x = coef(eng);
        ac.back() = 1.0;
        bc.back() = 1.0;
        Polynomial a(ac), b(bc);
        auto dv = divide(a, b);
        CHECK((dv.quotient * b + dv.remainder - a).max_abs_coeff() < 1e-9);
        CHECK(dv.remainder.degree() < b.degree());
    }
    CHECK_THROWS_AS(divide(Polynomial{1.0, 1.0}, Polynomial{}), ZeroPolynomial);
}

TEST_CASE("companion roots of a cubic") {
    auto p = Polynomial::from_roots({{-1.0, 0.0}, {-2.0, 0.0}, {-3.0, 0.0}});
    auto rts = p.roots();
    REQUIRE(rts.size() == 3);
    std::vector<double> re;
    for (auto& r : rts) {
        CHECK(std::abs(r.imag()) < 1e-9);
        re.push_back(r.real());
    }
    std::sort(re.begin(), re.end());
    CHECK(re[0] == doctest::Approx(-3.0).epsilon(1e-9));
    CHECK(re[1] == doctest::Approx(-2.0).epsilon(1e-9));
    CHECK(re[2] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("hurwitz test with a margin") {
    auto stable = Polynomial::from_roots({{-1.0, 0.0}, {-2.0, 0.0}});
    CHECK(is_hurwitz(stable, 0.5));
    CHECK_FALSE(is_hurwitz(stable, 1.5));
    CHECK_FALSE(is_hurwitz(Polynomial{-1.0, 1.0}, 0.0));  // root at +1
    // margin 0 admits imaginary-axis roots; callers wanting strictness pass one
    CHECK(is_hurwitz(Polynomial{1.0, 0.0, 1.0}, 0.0));
    CHECK_FALSE(is_hurwitz(Polynomial{1.0, 0.0, 1.0}, 1e-9));
}

TEST_CASE("quasi-polynomial evaluation and shifts") {
    QuasiPolynomial qp(1.0, {{0, Polynomial{1.0, 1.0}}, {1, Polynomial{2.0}}});
    CHECK(qp.max_shift() == 1);
    CHECK(qp.delay() == doctest::Approx(1.0));
    cplx s(0.3, 0.7);
    cplx want = (s + 1.0) + 2.0 * std::exp(-s);
    CHECK(std::abs(qp.eval(s) - want) < 1e-12);
    CHECK(std::abs(qp.eval(cplx(0.0, 0.0)) - cplx(3.0, 0.0)) < 1e-12);
    CHECK(qp.term(5).is_zero());
}

TEST_CASE("hand-checked diophantine solve") {
    Polynomial A{2.0, 3.0, 1.0};  // (s+1)(s+2)
    Polynomial B{4.0, 1.0};       // s + 4
    Polynomial C{6.0, 5.0, 2.0};
    auto sol = solve_diophantine(A, B, C, 0, 1);
    CHECK(sol.X.approx_equal(Polynomial{3.0}, 1e-10));
    CHECK(sol.Y.approx_equal(Polynomial{0.0, -1.0}, 1e-10));
    CHECK((A * sol.X + B * sol.Y - C).max_abs_coeff() < 1e-10);
}

TEST_CASE("infeasible degree pattern is rejected") {
    Polynomial A{2.0, 3.0, 1.0};
    Polynomial B{4.0, 1.0};
    Polynomial C{4.0, 3.0, 2.0, 1.0};  // cubic target, quadratic reach
    CHECK_THROWS_AS(solve_diophantine(A, B, C, 0, 1), SingularSylvester);
}

TEST_CASE("shared factor makes the system singular") {
    Polynomial g{1.0, 1.0};
    Polynomial A = g * Polynomial{2.0, 1.0};
    Polynomial B = g * Polynomial{3.0, 1.0};
    Polynomial C{1.0, 2.0, 3.0, 1.0};
    CHECK_THROWS_AS(solve_diophantine(A, B, C, 1, 1), SingularSylvester);
}

TEST_CASE("square design pattern: exactness and permuted cross-check") {
    std::mt19937 eng(11);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    for (int trial = 0; trial < 40; ++trial) {
        int nf0 = 1 + static_cast<int>(eng() % 2);
        int nm = 1 + static_cast<int>(eng() % 3);
        int p = nf0 + nm;
        std::vector<double> ac(p + 1), bc(nm + 1), cc(2 * p);
        for (auto& x : ac) x = coef(eng);
        for (auto& x : bc) x = coef(eng);
        for (auto& x : cc) x = coef(eng);
        ac.back() = 1.0;
        Polynomial A(ac), B(bc), C(cc);
        if (B.degree() < 0) continue;

        DiophantineSolution sol;
        try {
            sol = solve_diophantine(A, B, C, p - 1, p - 1);
        } catch (const SingularSylvester&) {
            continue;  // random collision, astronomically rare
        }
        double scale = 1.0 + C.max_abs_coeff();
        CHECK((A * sol.X + B * sol.Y - C).max_abs_coeff() < 1e-9 * scale);

        // independent route: permute the assembled columns, solve by full-pivot
        // LU, undo the permutation
        auto sys = diophantine_system(A, B, C, p - 1, p - 1);
        REQUIRE(sys.M.rows() == sys.M.cols());
        int dim = static_cast<int>(sys.M.cols());
        std::vector<int> perm(dim);
        for (int i = 0; i < dim; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), eng);
        Eigen::MatrixXd Mp(dim, dim);
        for (int j = 0; j < dim; ++j) Mp.col(j) = sys.M.col(perm[j]);
        Eigen::VectorXd w = Mp.fullPivLu().solve(sys.rhs);
        Eigen::VectorXd z(dim);
        for (int j = 0; j < dim; ++j) z[perm[j]] = w[j];
        // solution layout: X coefficients ascending, then Y ascending
        for (int k = 0; k <= p - 1; ++k) {
            CHECK(z[k] == doctest::Approx(sol.X.coeff(k)).epsilon(1e-7).scale(scale));
            CHECK(z[p + k] == doctest::Approx(sol.Y.coeff(k)).epsilon(1e-7).scale(scale));
        }
    }
}

namespace {

double dense_margin_oracle(const Polynomial& M0, const Polynomial& M1,
                           const Polynomial& num, double h, double v1, double wmax,
                           int points) {
    double best = 0.0;
    double sigma = -v1;
    for (int i = 0; i < points; ++i) {
        double w = wmax * i / (points - 1);
        cplx s(sigma, w);
        cplx den = M0.eval(s) * std::exp(2.0 * h * s) + M1.eval(s) * std::exp(h * s);
        double dv = std::abs(den);
        if (dv < 1e-300) continue;
        best = std::max(best, std::abs(num.eval(s)) / dv);
    }
    return best;
}

}  // namespace

TEST_CASE("delay margin basics") {
    Polynomial M0 = pow(Polynomial{1.0, 1.0}, 3);
    CHECK(delay_stability_margin(M0, Polynomial{}, Polynomial{}, 1.0, 0.0) == 0.0);

    Polynomial num{0.1};
    double m1 = delay_stability_margin(M0, Polynomial{}, num, 1.0, 0.5);
    double m2 = delay_stability_margin(M0, Polynomial{}, num * 2.0, 1.0, 0.5);
    CHECK(m2 == doctest::Approx(2.0 * m1).epsilon(1e-12));

    CHECK_THROWS_AS(
        delay_stability_margin(Polynomial{1.0, 1.0}, Polynomial{},
                               Polynomial{0.0, 0.0, 1.0}, 1.0, 0.0),
        DegreeViolation);
}

TEST_CASE("delay margin agrees with a dense-grid scan") {
    Polynomial M0 = pow(Polynomial{1.0, 1.0}, 3);
    Polynomial num{0.1};
    double got = delay_stability_margin(M0, Polynomial{}, num, 1.0, 0.5);
    double oracle = dense_margin_oracle(M0, Polynomial{}, num, 1.0, 0.5, 50.0, 100000);
    // peak sits at the origin of the scan line: 0.1 e / |0.5|^3
    CHECK(oracle == doctest::Approx(0.1 * std::exp(1.0) / 0.125).epsilon(1e-6));
    CHECK(std::abs(got - oracle) < 1e-4 * std::max(1.0, oracle));
}
