#include "sdc/pencil.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <lapacke.h>

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

double cond_2(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    double smin = sv[sv.size() - 1];
    return smin > 0.0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
}

// Hadamard bound on |det(m)|, used as the natural determinant scale.
double det_scale(const Eigen::MatrixXd& m) {
    double s = 1.0;
    for (int i = 0; i < m.rows(); ++i) s *= m.row(i).norm();
    return std::max(s, 1e-300);
}

std::vector<double> cheb_nodes(int count, double radius) {
    std::vector<double> xs(count);
    for (int i = 0; i < count; ++i)
        xs[i] = radius * std::cos(M_PI * (2.0 * i + 1.0) / (2.0 * count));
    return xs;
}

// Fits one polynomial of degree <= deg per column of ys through the points xs.
std::vector<Polynomial> fit_polys(const std::vector<double>& xs,
                                  const Eigen::MatrixXd& ys, int deg) {
    const int m = static_cast<int>(xs.size());
    Eigen::MatrixXd V(m, deg + 1);
    for (int i = 0; i < m; ++i) {
        double p = 1.0;
        for (int k = 0; k <= deg; ++k) {
            V(i, k) = p;
            p *= xs[i];
        }
    }
    Eigen::MatrixXd coef = V.fullPivLu().solve(ys);
    std::vector<Polynomial> out;
    out.reserve(ys.cols());
    for (int j = 0; j < ys.cols(); ++j) {
        std::vector<double> c(coef.col(j).data(), coef.col(j).data() + deg + 1);
        out.emplace_back(std::move(c));
    }
    return out;
}

Eigen::MatrixXd block_diag(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

// Solves A1 X - X A2 = R by the Kronecker-product linear system (small blocks).
Eigen::MatrixXd solve_sylvester(const Eigen::MatrixXd& A1, const Eigen::MatrixXd& A2,
                                const Eigen::MatrixXd& R) {
    const int p = static_cast<int>(A1.rows()), q = static_cast<int>(A2.rows());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(p * q, p * q);
    for (int j = 0; j < q; ++j)
        K.block(j * p, j * p, p, p) = A1;
    for (int j = 0; j < q; ++j)
        for (int i = 0; i < q; ++i)
            K.block(j * p, i * p, p, p) -= A2(i, j) * Eigen::MatrixXd::Identity(p, p);
    Eigen::VectorXd rhs(p * q);
    for (int j = 0; j < q; ++j) rhs.segment(j * p, p) = R.col(j);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible())
        throw IllConditioned("spectral splitting: Sylvester system singular");
    Eigen::VectorXd x = lu.solve(rhs);
    Eigen::MatrixXd X(p, q);
    for (int j = 0; j < q; ++j) X.col(j) = x.segment(j * p, p);
    return X;
}

}  // namespace

void DescriptorSystem::validate() const {
    const int nn = n();
    if (nn < 1) throw ValidationError("system dimension must be at least 1");
    if (E.cols() != nn || A.rows() != nn || A.cols() != nn)
        throw ValidationError("E and A must be square with matching dimensions");
    if (b.size() != nn || d.size() != nn || c.size() != nn)
        throw ValidationError("b, d, c must have length n");
    if (!(h >= 0.0)) throw ValidationError("delay h must be nonnegative");
    if (!E.allFinite() || !A.allFinite() || !b.allFinite() || !d.allFinite() ||
        !c.allFinite())
        throw ValidationError("system data must be finite");
}

RegularityReport check_regularity(const DescriptorSystem& sys, double tol) {
    sys.validate();
    const int n = sys.n();
    double radius = std::max(1.0, sys.A.norm() / std::max(1.0, sys.E.norm()));
    std::vector<double> xs = cheb_nodes(n + 1, radius);
    Eigen::MatrixXd vals(n + 1, 1);
    double scale = 0.0;
    for (int i = 0; i <= n; ++i) {
        Eigen::MatrixXd pencil = xs[i] * sys.E - sys.A;
        vals(i, 0) = pencil.determinant();
        scale = std::max(scale, det_scale(pencil));
    }
    Polynomial M = fit_polys(xs, vals, n)[0];
    const double thresh = tol * scale;

    RegularityReport rep;
    rep.regular = M.max_abs_coeff() > thresh;
    if (!rep.regular) return rep;
    // strip leading coefficients that sit below the determinant noise scale
    std::vector<double> cs = M.coeffs();
    while (!cs.empty() && std::abs(cs.back()) <= thresh) cs.pop_back();
    rep.M = Polynomial(std::move(cs)).trimmed();
    return rep;
}

bool solvability_rank_test(const DescriptorSystem& sys, double tol_rank) {
    sys.validate();
    const int n = sys.n();
    Eigen::MatrixXd blk = Eigen::MatrixXd::Zero((n + 1) * n, n * n);
    for (int bi = 0; bi <= n; ++bi)
        for (int bj = 0; bj < n; ++bj) {
            if (bi == bj) blk.block(bi * n, bj * n, n, n) = sys.E;
            else if (bi == bj + 1) blk.block(bi * n, bj * n, n, n) = sys.A;
        }
    return svd_rank(blk, tol_rank) == n * n;
}

int index_of(const Eigen::MatrixXd& E, double tol_rank) {
    if (E.rows() != E.cols() || E.rows() < 1)
        throw ValidationError("index_of: square matrix required");
    const int n = static_cast<int>(E.rows());
    int prev = n;  // rank of E^0
    Eigen::MatrixXd Ek = Eigen::MatrixXd::Identity(n, n);
    for (int k = 1; k <= n + 1; ++k) {
        Ek = Ek * E;
        int r = svd_rank(Ek, tol_rank);
        if (r == prev) return k - 1;
        prev = r;
    }
    return n;  // rank sequence must have stabilized by now
}

Eigen::MatrixXd drazin_inverse(const Eigen::MatrixXd& E, double tol_rank) {
    const int n = static_cast<int>(E.rows());
    const int ell = index_of(E, tol_rank);
    if (ell == 0) return E.fullPivLu().inverse();
    Eigen::MatrixXd Ek = Eigen::MatrixXd::Identity(n, n);
    for (int k = 0; k < ell; ++k) Ek = Ek * E;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ek, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    int r = 0;
    if (sv.size() > 0 && sv[0] > 0.0)
        for (int i = 0; i < sv.size(); ++i)
            if (sv[i] > tol_rank * sv[0]) ++r;
    if (r == 0) return Eigen::MatrixXd::Zero(n, n);

    // range(E^ell) and null(E^ell) are complementary E-invariant subspaces
    Eigen::MatrixXd S(n, n);
    S.leftCols(r) = svd.matrixU().leftCols(r);
    S.rightCols(n - r) = svd.matrixV().rightCols(n - r);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    if (!lu.isInvertible())
        throw IllConditioned("drazin_inverse: splitting basis singular");
    Eigen::MatrixXd M = lu.solve(E * S);
    Eigen::MatrixXd C = M.topLeftCorner(r, r);
    Eigen::FullPivLU<Eigen::MatrixXd> luC(C);
    if (!luC.isInvertible())
        throw IllConditioned("drazin_inverse: core block singular");
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
    D.topLeftCorner(r, r) = luC.inverse();
    return S * D * lu.inverse();
}

WeierstrassForm weierstrass_decompose(const DescriptorSystem& sys, const Tolerances& tols) {
    sys.validate();
    RegularityReport reg = check_regularity(sys);
    if (!reg.regular) throw NotRegular("weierstrass_decompose: singular pencil");
    const int n = sys.n();
    const int n1 = std::max(reg.M.degree(), 0);
    const int n2 = n - n1;

    // shift keeping (cE - A) comfortably invertible
    const double candidates[] = {0.0, 1.0, -1.0, 2.0, -2.0, 0.5, -0.5};
    double shift = 0.0, best = -1.0;
    for (double cand : candidates) {
        double d = std::abs((cand * sys.E - sys.A).determinant());
        if (d > best) {
            best = d;
            shift = cand;
        }
    }
    Eigen::MatrixXd pencil = shift * sys.E - sys.A;
    if (best <= 1e-12 * det_scale(pencil))
        throw IllConditioned("weierstrass_decompose: no usable shift candidate");
    Eigen::FullPivLU<Eigen::MatrixXd> luP(pencil);
    Eigen::MatrixXd Bmat = luP.inverse();
    Eigen::MatrixXd Ehat = luP.solve(sys.E);

    Eigen::MatrixXd S, C, Nc;
    if (n2 == 0) {
        S = Eigen::MatrixXd::Identity(n, n);
        C = Ehat;
        Nc = Eigen::MatrixXd(0, 0);
    } else if (n1 == 0) {
        S = Eigen::MatrixXd::Identity(n, n);
        C = Eigen::MatrixXd(0, 0);
        Nc = Ehat;
    } else {
        // ordered real Schur form of Ehat: leading block carries the nonzero group
        Eigen::MatrixXd T = Ehat, VS(n, n);
        std::vector<double> wr(n), wi(n);
        lapack_int sdim = 0;
        lapack_int info = LAPACKE_dgees(LAPACK_COL_MAJOR, 'V', 'N', nullptr, n, T.data(),
                                        n, &sdim, wr.data(), wi.data(), VS.data(), n);
        if (info != 0) throw IllConditioned("weierstrass_decompose: Schur factorization failed");
        std::vector<double> mod(n), sorted(n);
        for (int i = 0; i < n; ++i) mod[i] = std::hypot(wr[i], wi[i]);
        sorted = mod;
        std::sort(sorted.begin(), sorted.end(), std::greater<double>());
        const double hiv = sorted[n1 - 1], lov = sorted[n1];
        if (!(hiv > 0.0) || lov > 0.25 * hiv)
            throw IllConditioned("weierstrass_decompose: spectral groups not separated");
        const double cutoff = lov > 0.0 ? std::sqrt(lov * hiv) : 0.5 * hiv;
        std::vector<lapack_logical> sel(n);
        for (int i = 0; i < n; ++i) sel[i] = mod[i] > cutoff ? 1 : 0;
        lapack_int m_out = 0;
        // the query-based wrapper crashes with this lapack build; size the
        // workspace ourselves and call the explicit variant
        std::vector<double> work(static_cast<size_t>(4 * n * n + 16));
        std::vector<lapack_int> iwork(static_cast<size_t>(2 * n * n + 16));
        double cond_dummy = 0.0, sep_dummy = 0.0;
        info = LAPACKE_dtrsen_work(LAPACK_COL_MAJOR, 'N', 'V', sel.data(), n, T.data(),
                                   n, VS.data(), n, wr.data(), wi.data(), &m_out,
                                   &cond_dummy, &sep_dummy, work.data(),
                                   static_cast<lapack_int>(work.size()), iwork.data(),
                                   static_cast<lapack_int>(iwork.size()));
        if (info != 0 || m_out != n1)
            throw IllConditioned("weierstrass_decompose: Schur reordering failed");
        Eigen::MatrixXd T11 = T.topLeftCorner(n1, n1);
        Eigen::MatrixXd T12 = T.topRightCorner(n1, n2);
        Eigen::MatrixXd T22 = T.bottomRightCorner(n2, n2);
        Eigen::MatrixXd X = solve_sylvester(T11, T22, -T12);
        S.resize(n, n);
        S.leftCols(n1) = VS.leftCols(n1);
        S.rightCols(n2) = VS.leftCols(n1) * X + VS.rightCols(n2);
        C = T11;
        Nc = T22;
    }

    WeierstrassForm wf;
    wf.n1 = n1;
    wf.n2 = n2;
    wf.h = sys.h;
    wf.shift = shift;

    Eigen::MatrixXd G1(n1, n1), G2(n2, n2);
    if (n1 > 0) {
        Eigen::FullPivLU<Eigen::MatrixXd> luC(C);
        if (!luC.isInvertible())
            throw IllConditioned("weierstrass_decompose: slow-block core singular");
        G1 = luC.inverse();
        wf.W = shift * Eigen::MatrixXd::Identity(n1, n1) - G1;
    } else {
        wf.W = Eigen::MatrixXd(0, 0);
    }
    if (n2 > 0) {
        G2 = (shift * Nc - Eigen::MatrixXd::Identity(n2, n2)).fullPivLu().inverse();
        wf.N = G2 * Nc;
    } else {
        wf.N = Eigen::MatrixXd(0, 0);
    }

    Eigen::FullPivLU<Eigen::MatrixXd> luS(S);
    if (!luS.isInvertible())
        throw IllConditioned("weierstrass_decompose: splitting basis singular");
    wf.P = S;
    wf.Q = block_diag(G1, G2) * luS.solve(Bmat);

    // nilpotency index of N
    if (n2 == 0) {
        wf.ell = 0;
    } else {
        double base = std::max(1.0, wf.N.norm());
        Eigen::MatrixXd Nk = Eigen::MatrixXd::Identity(n2, n2);
        int ell = -1;
        double scale_k = 1.0;
        for (int k = 1; k <= n2; ++k) {
            Nk = Nk * wf.N;
            scale_k *= base;
            if (Nk.norm() <= tols.tol_rank * scale_k * static_cast<double>(n2)) {
                ell = k;
                break;
            }
        }
        if (ell < 0)
            throw IllConditioned("weierstrass_decompose: fast block is not nilpotent");
        wf.ell = ell;
    }

    Eigen::VectorXd alpha = wf.Q * sys.b, beta = wf.Q * sys.d, gamma = wf.P.transpose() * sys.c;
    wf.alpha1 = alpha.head(n1);
    wf.alpha2 = alpha.tail(n2);
    wf.beta1 = beta.head(n1);
    wf.beta2 = beta.tail(n2);
    wf.gamma1 = gamma.head(n1);
    wf.gamma2 = gamma.tail(n2);

    Eigen::MatrixXd Elhs = wf.Q * sys.E * wf.P -
                           block_diag(Eigen::MatrixXd::Identity(n1, n1), wf.N);
    Eigen::MatrixXd Alhs = wf.Q * sys.A * wf.P -
                           block_diag(wf.W, Eigen::MatrixXd::Identity(n2, n2));
    wf.residual = std::max(Elhs.norm(), Alhs.norm());
    double scale = 1.0 + std::max(sys.E.norm(), sys.A.norm());
    if (wf.residual > tols.tol_decomp * scale)
        throw IllConditioned("weierstrass_decompose: residual " +
                             std::to_string(wf.residual) + " exceeds tolerance");
    if (cond_2(wf.P) > tols.cond_max || cond_2(wf.Q) > tols.cond_max)
        throw IllConditioned("weierstrass_decompose: transformation badly conditioned");
    return wf;
}

bool is_impulse_free(const DescriptorSystem& sys, const Tolerances& tols) {
    RegularityReport reg = check_regularity(sys);
    if (!reg.regular) throw NotRegular("is_impulse_free: singular pencil");
    bool by_rank = svd_rank(sys.E, tols.tol_rank) == std::max(reg.M.degree(), 0);
    WeierstrassForm wf = weierstrass_decompose(sys, tols);
    bool n_zero = wf.n2 == 0 || wf.N.norm() <= tols.tol_decomp * (1.0 + sys.E.norm());
    bool by_form = wf.ell <= 1 && n_zero;
    if (by_rank != by_form)
        throw IllConditioned("is_impulse_free: rank and canonical-form routes disagree");
    return by_rank;
}

PencilPolynomials pencil_polynomials(const DescriptorSystem& sys, const Tolerances& tols) {
    (void)tols;
    RegularityReport reg = check_regularity(sys);
    if (!reg.regular) throw NotRegular("pencil_polynomials: singular pencil");
    const int n = sys.n();

    // sample points where M is comfortably away from zero
    double radius = 1.0 + std::max(1.0, sys.A.norm() / std::max(1.0, sys.E.norm()));
    std::vector<double> cand = cheb_nodes(std::max(4 * (n + 2), 16), radius);
    std::sort(cand.begin(), cand.end(), [&](double a, double b) {
        return std::abs(reg.M.eval(a)) > std::abs(reg.M.eval(b));
    });
    if (static_cast<int>(cand.size()) < n)
        throw SamplePointFailure("pencil_polynomials: not enough candidates");
    std::vector<double> xs(cand.begin(), cand.begin() + n);
    double mscale = reg.M.max_abs_coeff();
    for (double x : xs)
        if (std::abs(reg.M.eval(x)) <= 1e-10 * mscale)
            throw SamplePointFailure("pencil_polynomials: sample point too close to a root of M");

    // row vector c^T Adj(sE - A) = M(s) c^T (sE - A)^{-1} at each sample
    Eigen::MatrixXd rows(n, n);
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd pencil = xs[i] * sys.E - sys.A;
        Eigen::VectorXd w = pencil.transpose().fullPivLu().solve(sys.c);
        rows.row(i) = reg.M.eval(xs[i]) * w.transpose();
    }
    PencilPolynomials pp;
    pp.M = reg.M;
    pp.Delta2 = fit_polys(xs, rows, n - 1);
    for (auto& p : pp.Delta2) p = p.trimmed(1e-11);
    pp.Delta0 = Polynomial();
    pp.Delta1 = Polynomial();
    for (int j = 0; j < n; ++j) {
        pp.Delta0 = pp.Delta0 + pp.Delta2[j] * sys.b[j];
        pp.Delta1 = pp.Delta1 + pp.Delta2[j] * sys.d[j];
    }
    pp.Delta0 = pp.Delta0.trimmed(1e-11);
    pp.Delta1 = pp.Delta1.trimmed(1e-11);
    return pp;
}

}  // namespace sdc
