#include "sdc/polynomial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace sdc {

namespace {

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Maximizes f on [a, b] by golden-section search; assumes a single interior
// peak between the bracketing samples (good enough after a dense scan).
template <typename F>
double golden_max(F&& f, double a, double b) {
    constexpr double phi = 0.6180339887498949;
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < 200 && (b - a) > 1e-12 * (1.0 + std::abs(b)); ++it) {
        if (fc < fd) {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        }
    }
    return std::max(fc, fd);
}

}  // namespace

Polynomial Polynomial::monomial(int k, double a) {
    std::vector<double> c(static_cast<size_t>(k) + 1, 0.0);
    c.back() = a;
    return Polynomial(std::move(c));
}

Polynomial Polynomial::from_roots(const std::vector<std::complex<double>>& roots,
                                  double lead) {
    Polynomial p = Polynomial::constant(lead);
    std::vector<std::complex<double>> todo = roots;
    while (!todo.empty()) {
        std::complex<double> r = todo.back();
        todo.pop_back();
        double pair_tol = 1e-9 * (1.0 + std::abs(r));
        if (std::abs(r.imag()) <= pair_tol) {
            p = p * Polynomial{-r.real(), 1.0};
            continue;
        }
        // find the conjugate partner and emit a real quadratic factor
        auto it = std::min_element(todo.begin(), todo.end(),
                                   [&](const auto& x, const auto& y) {
                                       return std::abs(x - std::conj(r)) <
                                              std::abs(y - std::conj(r));
                                   });
        if (it == todo.end() || std::abs(*it - std::conj(r)) > 1e-6 * (1.0 + std::abs(r)))
            throw Error("from_roots: complex root without conjugate partner");
        todo.erase(it);
        p = p * Polynomial{std::norm(r), -2.0 * r.real(), 1.0};
    }
    return p;
}

int Polynomial::degree(double rel_tol) const {
    double scale = max_abs(c_);
    if (scale == 0.0) return -1;
    double thresh = rel_tol * scale;
    for (int k = static_cast<int>(c_.size()) - 1; k >= 0; --k)
        if (std::abs(c_[k]) > thresh) return k;
    return -1;
}

double Polynomial::leading_coeff() const {
    int d = degree();
    return d < 0 ? 0.0 : c_[d];
}

double Polynomial::max_abs_coeff() const { return max_abs(c_); }

double Polynomial::eval(double s) const {
    double acc = 0.0;
    for (int k = static_cast<int>(c_.size()) - 1; k >= 0; --k) acc = acc * s + c_[k];
    return acc;
}

std::complex<double> Polynomial::eval(std::complex<double> s) const {
    std::complex<double> acc = 0.0;
    for (int k = static_cast<int>(c_.size()) - 1; k >= 0; --k) acc = acc * s + c_[k];
    return acc;
}

Polynomial Polynomial::trimmed(double rel_tol) const {
    int d = degree(rel_tol);
    if (d < 0) return Polynomial();
    double thresh = rel_tol * max_abs(c_);
    std::vector<double> out(c_.begin(), c_.begin() + d + 1);
    for (double& x : out)
        if (std::abs(x) <= thresh) x = 0.0;
    return Polynomial(std::move(out));
}

Polynomial Polynomial::derivative() const {
    if (c_.size() <= 1) return Polynomial();
    std::vector<double> out(c_.size() - 1);
    for (size_t k = 1; k < c_.size(); ++k) out[k - 1] = c_[k] * static_cast<double>(k);
    return Polynomial(std::move(out));
}

Polynomial Polynomial::monic() const {
    int d = degree();
    if (d < 0) throw ZeroPolynomial("monic: zero polynomial");
    Polynomial t = trimmed();
    return t * (1.0 / t.coeffs().back());
}

std::vector<std::complex<double>> Polynomial::roots() const {
    Polynomial p = trimmed();
    int d = p.degree();
    if (d < 0) throw ZeroPolynomial("roots: zero polynomial");
    if (d == 0) return {};
    // variable scaling keeps the companion matrix balanced for spread coefficients
    double lead = std::abs(p.coeffs()[d]);
    double alpha = 0.0;
    for (int k = 0; k < d; ++k) {
        double ck = std::abs(p.coeff(k));
        if (ck > 0.0) alpha = std::max(alpha, std::pow(ck / lead, 1.0 / (d - k)));
    }
    if (!(alpha > 1e-8 && alpha < 1e8)) alpha = 1.0;
    Eigen::VectorXd q(d);  // monic coefficients of p(alpha*s) / (lead*alpha^d)
    for (int k = 0; k < d; ++k)
        q[k] = p.coeff(k) * std::pow(alpha, k - d) / p.coeffs()[d];
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(d, d);
    for (int k = 0; k + 1 < d; ++k) comp(k + 1, k) = 1.0;
    for (int k = 0; k < d; ++k) comp(k, d - 1) = -q[k];
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    std::vector<std::complex<double>> out(d);
    for (int k = 0; k < d; ++k) out[k] = alpha * es.eigenvalues()[k];
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return out;
}

Polynomial Polynomial::operator+(const Polynomial& o) const {
    std::vector<double> out(std::max(c_.size(), o.c_.size()), 0.0);
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = coeff(static_cast<int>(k)) + o.coeff(static_cast<int>(k));
    return Polynomial(std::move(out));
}

Polynomial Polynomial::operator-(const Polynomial& o) const {
    std::vector<double> out(std::max(c_.size(), o.c_.size()), 0.0);
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = coeff(static_cast<int>(k)) - o.coeff(static_cast<int>(k));
    return Polynomial(std::move(out));
}

Polynomial Polynomial::operator*(const Polynomial& o) const {
    if (c_.empty() || o.c_.empty()) return Polynomial();
    std::vector<double> out(c_.size() + o.c_.size() - 1, 0.0);
    for (size_t i = 0; i < c_.size(); ++i)
        for (size_t j = 0; j < o.c_.size(); ++j) out[i + j] += c_[i] * o.c_[j];
    return Polynomial(std::move(out));
}

Polynomial Polynomial::operator*(double a) const {
    std::vector<double> out = c_;
    for (double& x : out) x *= a;
    return Polynomial(std::move(out));
}

bool Polynomial::approx_equal(const Polynomial& o, double tol) const {
    double scale = 1.0 + std::max(max_abs(c_), max_abs(o.c_));
    size_t n = std::max(c_.size(), o.c_.size());
    for (size_t k = 0; k < n; ++k)
        if (std::abs(coeff(static_cast<int>(k)) - o.coeff(static_cast<int>(k))) >
            tol * scale)
            return false;
    return true;
}

std::string Polynomial::str() const {
    int d = degree();
    if (d < 0) return "0";
    std::ostringstream os;
    bool first = true;
    for (int k = d; k >= 0; --k) {
        double ck = c_[k];
        if (ck == 0.0 && d > 0) continue;
        if (!first) os << (ck < 0 ? " - " : " + ");
        else if (ck < 0) os << "-";
        double a = std::abs(ck);
        if (k == 0 || a != 1.0) os << a;
        if (k >= 1) os << (k == 1 ? "s" : "s^" + std::to_string(k));
        first = false;
    }
    return os.str();
}

Polynomial pow(const Polynomial& p, int k) {
    Polynomial out = Polynomial::constant(1.0);
    for (int i = 0; i < k; ++i) out = out * p;
    return out;
}

PolyDivision divide(const Polynomial& a, const Polynomial& b) {
    Polynomial bt = b.trimmed();
    int db = bt.degree();
    if (db < 0) throw ZeroPolynomial("divide: zero divisor");
    Polynomial rem = a.trimmed();
    int da = rem.degree();
    if (da < db) return {Polynomial(), rem};
    std::vector<double> q(static_cast<size_t>(da - db) + 1, 0.0);
    std::vector<double> r = rem.coeffs();
    r.resize(static_cast<size_t>(da) + 1, 0.0);
    double blead = bt.coeffs()[db];
    for (int k = da - db; k >= 0; --k) {
        double f = r[k + db] / blead;
        q[k] = f;
        for (int j = 0; j <= db; ++j) r[k + j] -= f * bt.coeff(j);
    }
    r.resize(db > 0 ? static_cast<size_t>(db) : 1, 0.0);
    return {Polynomial(std::move(q)), Polynomial(std::move(r))};
}

const Polynomial& QuasiPolynomial::term(int k) const {
    static const Polynomial zero;
    auto it = terms_.find(k);
    return it == terms_.end() ? zero : it->second;
}

int QuasiPolynomial::max_shift() const {
    int m = 0;
    for (const auto& [k, p] : terms_)
        if (!p.is_zero()) m = std::max(m, k);
    return m;
}

std::complex<double> QuasiPolynomial::eval(std::complex<double> s) const {
    std::complex<double> acc = 0.0;
    for (const auto& [k, p] : terms_) acc += p.eval(s) * std::exp(-double(k) * h_ * s);
    return acc;
}

DiophantineSystem diophantine_system(const Polynomial& A, const Polynomial& B,
                                     const Polynomial& C, int degX, int degY) {
    int nx = degX >= 0 ? degX + 1 : 0;
    int ny = degY >= 0 ? degY + 1 : 0;
    if (nx + ny == 0) throw Error("diophantine_system: no unknowns");
    int rows = std::max({nx > 0 ? A.degree() + degX : 0, ny > 0 ? B.degree() + degY : 0,
                         C.degree(), 0}) +
               1;
    DiophantineSystem sys;
    sys.degX = degX;
    sys.degY = degY;
    sys.M = Eigen::MatrixXd::Zero(rows, nx + ny);
    sys.rhs = Eigen::VectorXd::Zero(rows);
    for (int j = 0; j < rows; ++j) {
        for (int i = 0; i < nx; ++i) sys.M(j, i) = A.coeff(j - i);
        for (int i = 0; i < ny; ++i) sys.M(j, nx + i) = B.coeff(j - i);
        sys.rhs[j] = C.coeff(j);
    }
    return sys;
}

DiophantineSolution solve_diophantine(const Polynomial& A, const Polynomial& B,
                                      const Polynomial& C, int degX, int degY,
                                      double tol) {
    DiophantineSystem sys = diophantine_system(A, B, C, degX, degY);
    const int cols = static_cast<int>(sys.M.cols());
    // column equilibration before the rank decision
    Eigen::VectorXd colscale(cols);
    Eigen::MatrixXd Ms = sys.M;
    for (int j = 0; j < cols; ++j) {
        double s = Ms.col(j).cwiseAbs().maxCoeff();
        colscale[j] = s > 0.0 ? s : 1.0;
        Ms.col(j) /= colscale[j];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ms);
    qr.setThreshold(1e-10);
    if (qr.rank() < cols)
        throw SingularSylvester("coefficient matrix rank " + std::to_string(qr.rank()) +
                                " < " + std::to_string(cols));
    Eigen::VectorXd xs = qr.solve(sys.rhs);
    double resid = (Ms * xs - sys.rhs).cwiseAbs().maxCoeff();
    double rhs_scale = 1.0 + sys.rhs.cwiseAbs().maxCoeff();
    if (!(resid <= tol * rhs_scale))
        throw SingularSylvester("residual " + std::to_string(resid) + " exceeds " +
                                std::to_string(tol * rhs_scale));
    Eigen::VectorXd x = xs.cwiseQuotient(colscale);
    DiophantineSolution sol;
    int nx = degX >= 0 ? degX + 1 : 0;
    if (nx > 0)
        sol.X = Polynomial(std::vector<double>(x.data(), x.data() + nx));
    if (degY >= 0)
        sol.Y = Polynomial(std::vector<double>(x.data() + nx, x.data() + nx + degY + 1));
    return sol;
}

bool is_hurwitz(const Polynomial& p, double margin) {
    Polynomial t = p.trimmed();
    if (t.degree() < 0) throw ZeroPolynomial("is_hurwitz: zero polynomial");
    if (t.degree() == 0) return true;
    for (const auto& r : t.roots())
        if (r.real() > -margin) return false;
    return true;
}

double delay_stability_margin(const Polynomial& M0in, const Polynomial& M1in,
                              const Polynomial& numin, double h, double v1,
                              const MarginOptions& opts) {
    Polynomial M0 = M0in.trimmed(), M1 = M1in.trimmed(), num = numin.trimmed();
    if (num.is_zero()) return 0.0;
    int D = M0.degree();
    if (D < 0) throw ZeroPolynomial("delay_stability_margin: zero M0");
    if (num.degree() >= D)
        throw DegreeViolation("numerator degree " + std::to_string(num.degree()) +
                              " >= denominator degree " + std::to_string(D));
    if (M1.degree() > D)
        throw DegreeViolation("M1 degree exceeds M0 degree");
    if (!(h > 0.0)) throw ValidationError("delay_stability_margin: h must be positive");
    if (!(v1 >= 0.0))
        throw ValidationError("delay_stability_margin: v1 must be nonnegative");

    const double x0 = opts.line_sign * v1;
    const double e2 = std::exp(2.0 * h * x0), e1 = std::exp(h * x0);

    auto f = [&](double w) -> double {
        std::complex<double> s(x0, w);
        std::complex<double> den =
            M0.eval(s) * std::exp(2.0 * h * s) + M1.eval(s) * std::exp(h * s);
        double dm = std::abs(den);
        if (dm == 0.0) return std::numeric_limits<double>::infinity();
        return std::abs(num.eval(s)) / dm;
    };
    auto abs_sum = [](const Polynomial& p, double r) {
        double acc = 0.0, rk = 1.0;
        for (double ck : p.coeffs()) {
            acc += std::abs(ck) * rk;
            rk *= r;
        }
        return acc;
    };
    // pointwise upper bound on f for |Im s| = w, valid once the denominator
    // lower bound turns positive
    auto tail_bound = [&](double w) -> double {
        double r = std::hypot(x0, w);
        double low = std::abs(M0.coeff(D)) * std::pow(r, D);
        for (int k = 0; k < D; ++k) low -= std::abs(M0.coeff(k)) * std::pow(r, k);
        double den_low = e2 * low - e1 * abs_sum(M1, r);
        if (den_low <= 0.0) return std::numeric_limits<double>::infinity();
        return abs_sum(num, r) / den_low;
    };

    std::vector<double> ws, fs;
    double lo = 0.0, hi = std::max(16.0, 8.0 / h);
    double best = 0.0;
    for (int span = 0; span < 64; ++span) {
        int n = opts.span_points;
        for (int i = (span == 0 ? 0 : 1); i <= n; ++i) {
            double w = lo + (hi - lo) * i / n;
            double v = f(w);
            if (std::isinf(v)) return v;
            ws.push_back(w);
            fs.push_back(v);
            best = std::max(best, v);
        }
        double tb = tail_bound(hi);
        if (tb <= opts.tail_frac * best && tail_bound(2.0 * hi) <= tb) break;
        lo = hi;
        hi *= 2.0;
        if (hi > opts.omega_cap) {
            SDC_LOG_WARN("margin scan hit frequency cap at %g", hi);
            break;
        }
    }

    // refine every prominent local maximum, including the w = 0 boundary
    size_t m = ws.size();
    for (size_t k = 0; k < m; ++k) {
        bool local = (k == 0 || fs[k] >= fs[k - 1]) && (k + 1 == m || fs[k] >= fs[k + 1]);
        if (!local || fs[k] < 0.25 * best) continue;
        double a = k == 0 ? ws[0] : ws[k - 1];
        double b = k + 1 == m ? ws[m - 1] : ws[k + 1];
        if (b > a) best = std::max(best, golden_max(f, a, b));
    }
    return best;
}

}  // namespace sdc
