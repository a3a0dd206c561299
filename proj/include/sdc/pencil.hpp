#pragma once

#include <vector>

#include <Eigen/Dense>

#include "sdc/common.hpp"
#include "sdc/polynomial.hpp"

namespace sdc {

// E x'(t) = A x(t) + b u(t) + d u(t-h) + v0(t), y = c^T x, with E possibly
// singular and a single external input delay h > 0.
struct DescriptorSystem {
    Eigen::MatrixXd E;
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::VectorXd d;
    Eigen::VectorXd c;
    double h = 1.0;

    int n() const { return static_cast<int>(E.rows()); }
    void validate() const;  // throws ValidationError on shape/finiteness problems
};

struct RegularityReport {
    bool regular = false;
    Polynomial M;  // det(sE - A), high-order coefficients below the noise scale dropped
};

// Interpolates det(sE - A) at Chebyshev nodes; the pencil counts as regular when
// some coefficient clears tol relative to a Hadamard-style determinant scale.
RegularityReport check_regularity(const DescriptorSystem& sys, double tol = 1e-8);

// Unique-solvability block-matrix rank test; equivalent to regularity.
bool solvability_rank_test(const DescriptorSystem& sys, double tol_rank = 1e-10);

// Smallest k with rank(E^k) = rank(E^{k+1}).
int index_of(const Eigen::MatrixXd& E, double tol_rank = 1e-10);

// Drazin inverse via the range/null splitting of E^index.
Eigen::MatrixXd drazin_inverse(const Eigen::MatrixXd& E, double tol_rank = 1e-10);

// Q E P = Diag(I_n1, N), Q A P = Diag(W, I_n2) with N nilpotent of index ell.
// Coordinates z = P^{-1} x split into the slow block z1 (dim n1) and the
// algebraic/nilpotent block z2 (dim n2).
struct WeierstrassForm {
    Eigen::MatrixXd P, Q;
    Eigen::MatrixXd W, N;
    Eigen::VectorXd alpha1, alpha2;  // Q b split
    Eigen::VectorXd beta1, beta2;    // Q d split
    Eigen::VectorXd gamma1, gamma2;  // P^T c split
    int n1 = 0, n2 = 0, ell = 0;
    double h = 0.0;         // delay carried over from the source system
    double shift = 0.0;     // scalar used in (shift*E - A)^{-1} E
    double residual = 0.0;  // max Frobenius defect of the two defining products
};

WeierstrassForm weierstrass_decompose(const DescriptorSystem& sys,
                                      const Tolerances& tols = default_tols());

// rank(E) == deg det(sE - A); cross-checked against ell <= 1 with N = 0.
bool is_impulse_free(const DescriptorSystem& sys, const Tolerances& tols = default_tols());

struct PencilPolynomials {
    Polynomial M;                    // det(sE - A)
    Polynomial Delta0;               // Delta2^T b
    Polynomial Delta1;               // Delta2^T d
    std::vector<Polynomial> Delta2;  // entries of c^T Adj(sE - A), each degree <= n-1
};

// Transfer-function polynomials: G(s) = (Delta0(s) + Delta1(s) e^{-hs}) / M(s).
PencilPolynomials pencil_polynomials(const DescriptorSystem& sys,
                                     const Tolerances& tols = default_tols());

}  // namespace sdc
