#pragma once

#include <functional>
#include <limits>

#include <Eigen/Dense>

#include "sdc/common.hpp"

namespace sdc {

// Scalar signal exposing analytic derivatives up to max_order. Asking for a
// higher order throws InsufficientSmoothness.
class SmoothSignal {
public:
    SmoothSignal() : SmoothSignal([](double, int) { return 0.0; },
                                  std::numeric_limits<int>::max()) {}
    SmoothSignal(std::function<double(double, int)> eval, int max_order)
        : eval_(std::move(eval)), max_order_(max_order) {}

    double operator()(double t, int order = 0) const {
        if (order > max_order_)
            throw InsufficientSmoothness("signal derivative order " +
                                         std::to_string(order) + " unavailable");
        return eval_(t, order);
    }
    int max_order() const { return max_order_; }

    static SmoothSignal zero() { return SmoothSignal(); }
    static SmoothSignal constant(double a);
    // value jumps at t_on; derivatives are taken piecewise (zero away from t_on)
    static SmoothSignal step(double amplitude, double t_on = 0.0);
    static SmoothSignal sinusoid(double amp, double omega, double phase = 0.0);
    static SmoothSignal poly_in_t(std::vector<double> coeffs);
    static SmoothSignal sum(SmoothSignal a, SmoothSignal b);
    static SmoothSignal scaled(SmoothSignal a, double k);

private:
    std::function<double(double, int)> eval_;
    int max_order_ = 0;
};

// Piecewise-continuous vector signal, values only.
class VectorSignal {
public:
    VectorSignal() : VectorSignal(0) {}
    explicit VectorSignal(int dim)
        : f_([dim](double) { return Eigen::VectorXd::Zero(dim).eval(); }), dim_(dim) {}
    VectorSignal(std::function<Eigen::VectorXd(double)> f, int dim)
        : f_(std::move(f)), dim_(dim) {}

    Eigen::VectorXd operator()(double t) const { return f_(t); }
    int dim() const { return dim_; }

private:
    std::function<Eigen::VectorXd(double)> f_;
    int dim_ = 0;
};

// Vector signal with analytic derivatives up to max_order per component.
class VectorSmoothSignal {
public:
    VectorSmoothSignal() : VectorSmoothSignal(0) {}
    explicit VectorSmoothSignal(int dim)
        : f_([dim](double, int) { return Eigen::VectorXd::Zero(dim).eval(); }),
          dim_(dim),
          max_order_(std::numeric_limits<int>::max()) {}
    VectorSmoothSignal(std::function<Eigen::VectorXd(double, int)> f, int dim,
                       int max_order)
        : f_(std::move(f)), dim_(dim), max_order_(max_order) {}

    Eigen::VectorXd operator()(double t, int order = 0) const {
        if (order > max_order_)
            throw InsufficientSmoothness("vector signal derivative order " +
                                         std::to_string(order) + " unavailable");
        return f_(t, order);
    }
    int dim() const { return dim_; }
    int max_order() const { return max_order_; }

    static VectorSmoothSignal constant(Eigen::VectorXd v);
    static VectorSmoothSignal sinusoid(Eigen::VectorXd amp, double omega,
                                       double phase = 0.0);
    static VectorSmoothSignal from_components(std::vector<SmoothSignal> comps);
    // m * v, componentwise in each derivative order
    static VectorSmoothSignal transform(Eigen::MatrixXd m, VectorSmoothSignal v);

private:
    std::function<Eigen::VectorXd(double, int)> f_;
    int dim_ = 0;
    int max_order_ = 0;
};

}  // namespace sdc
