#pragma once

#include <complex>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdc/common.hpp"

namespace sdc {

inline constexpr double kTrimTol = 1e-12;  // relative cutoff for stray coefficients

// Real polynomial with ascending coefficient storage: c[k] multiplies s^k.
// The numerical degree ignores coefficients below kTrimTol relative to the
// largest one; the zero polynomial reports degree -1.
class Polynomial {
public:
    Polynomial() = default;
    explicit Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) {}
    Polynomial(std::initializer_list<double> coeffs) : c_(coeffs) {}

    static Polynomial constant(double a) { return Polynomial{{a}}; }
    static Polynomial monomial(int k, double a = 1.0);
    // Builds lead * prod (s - r_i); complex roots must come in conjugate pairs.
    static Polynomial from_roots(const std::vector<std::complex<double>>& roots,
                                 double lead = 1.0);

    int degree(double rel_tol = kTrimTol) const;
    bool is_zero(double rel_tol = kTrimTol) const { return degree(rel_tol) < 0; }
    double coeff(int k) const {
        return (k >= 0 && k < static_cast<int>(c_.size())) ? c_[k] : 0.0;
    }
    double leading_coeff() const;
    const std::vector<double>& coeffs() const { return c_; }
    double max_abs_coeff() const;

    double eval(double s) const;
    std::complex<double> eval(std::complex<double> s) const;

    Polynomial trimmed(double rel_tol = kTrimTol) const;
    Polynomial derivative() const;
    Polynomial monic() const;  // throws ZeroPolynomial
    std::vector<std::complex<double>> roots() const;  // throws ZeroPolynomial

    Polynomial operator+(const Polynomial& o) const;
    Polynomial operator-(const Polynomial& o) const;
    Polynomial operator*(const Polynomial& o) const;
    Polynomial operator*(double a) const;
    Polynomial operator-() const { return *this * -1.0; }

    bool approx_equal(const Polynomial& o, double tol) const;

    std::string str() const;

private:
    std::vector<double> c_;
};

inline Polynomial operator*(double a, const Polynomial& p) { return p * a; }

Polynomial pow(const Polynomial& p, int k);

struct PolyDivision {
    Polynomial quotient;
    Polynomial remainder;
};
PolyDivision divide(const Polynomial& a, const Polynomial& b);  // throws ZeroPolynomial

// Finite sum of delayed polynomial terms: sum_k terms[k](s) * exp(-k*h*s).
class QuasiPolynomial {
public:
    QuasiPolynomial() = default;
    QuasiPolynomial(double h, std::map<int, Polynomial> terms)
        : h_(h), terms_(std::move(terms)) {}

    double delay() const { return h_; }
    const std::map<int, Polynomial>& terms() const { return terms_; }
    const Polynomial& term(int k) const;
    void set_term(int k, Polynomial p) { terms_[k] = std::move(p); }
    int max_shift() const;
    std::complex<double> eval(std::complex<double> s) const;

private:
    double h_ = 0.0;
    std::map<int, Polynomial> terms_;
};

// Coefficient-matching linear system for Apoly*X + Bpoly*Y = Cpoly, exposed so
// tests can cross-check solutions against permuted assemblies.
struct DiophantineSystem {
    Eigen::MatrixXd M;
    Eigen::VectorXd rhs;
    int degX = -1;
    int degY = -1;
};
DiophantineSystem diophantine_system(const Polynomial& A, const Polynomial& B,
                                     const Polynomial& C, int degX, int degY);

struct DiophantineSolution {
    Polynomial X;
    Polynomial Y;
};

// Solves Apoly*X + Bpoly*Y = Cpoly with deg X <= degX, deg Y <= degY; pass a
// negative cap to drop the corresponding term entirely. Throws SingularSylvester
// when the system is rank-deficient or the residual exceeds tol * (1 + |C|).
DiophantineSolution solve_diophantine(const Polynomial& A, const Polynomial& B,
                                      const Polynomial& C, int degX, int degY,
                                      double tol = 1e-9);

// True iff every root r of p satisfies Re(r) <= -margin.
bool is_hurwitz(const Polynomial& p, double margin);

struct MarginOptions {
    int line_sign = -1;       // evaluate on the vertical line Re s = line_sign * v1
    int span_points = 4096;   // samples per frequency span (spans double in width)
    double tail_frac = 1e-3;  // stop extending once the tail bound is this small
    double omega_cap = 1e12;  // hard frequency ceiling for the scan
};

// sup over the line Re s = line_sign*v1 of |num(s)| / |M0(s)e^{2hs} + M1(s)e^{hs}|,
// computed by a coarse scan with analytic tail cutoff plus local refinement.
double delay_stability_margin(const Polynomial& M0, const Polynomial& M1,
                              const Polynomial& num, double h, double v1,
                              const MarginOptions& opts = {});

}  // namespace sdc
