#include "sdc/signals.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace sdc {

SmoothSignal SmoothSignal::constant(double a) {
    return SmoothSignal([a](double, int order) { return order == 0 ? a : 0.0; },
                        std::numeric_limits<int>::max());
}

SmoothSignal SmoothSignal::step(double amplitude, double t_on) {
    return SmoothSignal(
        [amplitude, t_on](double t, int order) {
            if (order > 0) return 0.0;
            return t >= t_on ? amplitude : 0.0;
        },
        std::numeric_limits<int>::max());
}

SmoothSignal SmoothSignal::sinusoid(double amp, double omega, double phase) {
    return SmoothSignal(
        [amp, omega, phase](double t, int order) {
            double shift = 0.5 * M_PI * order;
            return amp * std::pow(omega, order) * std::sin(omega * t + phase + shift);
        },
        std::numeric_limits<int>::max());
}

SmoothSignal SmoothSignal::poly_in_t(std::vector<double> coeffs) {
    return SmoothSignal(
        [c = std::move(coeffs)](double t, int order) {
            double acc = 0.0;
            for (int k = static_cast<int>(c.size()) - 1; k >= order; --k) {
                double f = 1.0;
                for (int j = 0; j < order; ++j) f *= static_cast<double>(k - j);
                acc = acc * t + f * c[k];
            }
            return acc;
        },
        std::numeric_limits<int>::max());
}

SmoothSignal SmoothSignal::sum(SmoothSignal a, SmoothSignal b) {
    int mo = std::min(a.max_order(), b.max_order());
    return SmoothSignal(
        [a = std::move(a), b = std::move(b)](double t, int order) {
            return a(t, order) + b(t, order);
        },
        mo);
}

SmoothSignal SmoothSignal::scaled(SmoothSignal a, double k) {
    int mo = a.max_order();
    return SmoothSignal(
        [a = std::move(a), k](double t, int order) { return k * a(t, order); }, mo);
}

VectorSmoothSignal VectorSmoothSignal::constant(Eigen::VectorXd v) {
    int dim = static_cast<int>(v.size());
    return VectorSmoothSignal(
        [v = std::move(v), dim](double, int order) {
            return order == 0 ? v : Eigen::VectorXd::Zero(dim).eval();
        },
        dim, std::numeric_limits<int>::max());
}

VectorSmoothSignal VectorSmoothSignal::sinusoid(Eigen::VectorXd amp, double omega,
                                                double phase) {
    int dim = static_cast<int>(amp.size());
    return VectorSmoothSignal(
        [amp = std::move(amp), omega, phase](double t, int order) {
            double shift = 0.5 * M_PI * order;
            return (amp * std::pow(omega, order) * std::sin(omega * t + phase + shift))
                .eval();
        },
        dim, std::numeric_limits<int>::max());
}

VectorSmoothSignal VectorSmoothSignal::from_components(std::vector<SmoothSignal> comps) {
    int dim = static_cast<int>(comps.size());
    int mo = std::numeric_limits<int>::max();
    for (const auto& c : comps) mo = std::min(mo, c.max_order());
    return VectorSmoothSignal(
        [comps = std::move(comps), dim](double t, int order) {
            Eigen::VectorXd out(dim);
            for (int i = 0; i < dim; ++i) out[i] = comps[i](t, order);
            return out;
        },
        dim, mo);
}

VectorSmoothSignal VectorSmoothSignal::transform(Eigen::MatrixXd m, VectorSmoothSignal v) {
    if (m.cols() != v.dim())
        throw ValidationError("VectorSmoothSignal::transform: dimension mismatch");
    int dim = static_cast<int>(m.rows());
    int mo = v.max_order();
    return VectorSmoothSignal(
        [m = std::move(m), v = std::move(v)](double t, int order) {
            return (m * v(t, order)).eval();
        },
        dim, mo);
}

}  // namespace sdc
