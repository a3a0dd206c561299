#pragma once

// shared plant fixtures for the unit and acceptance suites

#include <Eigen/Dense>

#include "sdc/pencil.hpp"

namespace fixtures {

// n1 = 1 slow pole at -1, n2 = 1 algebraic block, no delay channel;
// already in canonical coordinates, transfer -s/(s+1)
inline sdc::DescriptorSystem s2() {
    sdc::DescriptorSystem s;
    s.E = Eigen::Matrix2d{{1.0, 0.0}, {0.0, 0.0}};
    s.A = Eigen::Matrix2d{{-1.0, 0.0}, {0.0, 1.0}};
    s.b = Eigen::Vector2d{1.0, 1.0};
    s.d = Eigen::Vector2d{0.0, 0.0};
    s.c = Eigen::Vector2d{1.0, 1.0};
    s.h = 1.0;
    return s;
}

// same pencil with b flipped in the fast block, transfer (s+2)/(s+1);
// nonzero DC gain makes it the tracking test bed
inline sdc::DescriptorSystem s2b() {
    sdc::DescriptorSystem s = s2();
    s.b = Eigen::Vector2d{1.0, -1.0};
    return s;
}

// scalar integrator, no algebraic block, transfer 1/s
inline sdc::DescriptorSystem integrator() {
    sdc::DescriptorSystem s;
    s.E = Eigen::MatrixXd::Identity(1, 1);
    s.A = Eigen::MatrixXd::Zero(1, 1);
    s.b = Eigen::VectorXd::Ones(1);
    s.d = Eigen::VectorXd::Zero(1);
    s.c = Eigen::VectorXd::Ones(1);
    s.h = 1.0;
    return s;
}

// 3-state delayed plant in canonical coordinates: slow poles {-1, -2},
// one algebraic state, delayed channel on every block, h = 1/2;
// direct path -(s^2+5s+5) is Hurwitz so compensation is admissible
inline sdc::DescriptorSystem delayed3(double d_scale = 1.0) {
    sdc::DescriptorSystem s;
    s.E = Eigen::Matrix3d{{1, 0, 0}, {0, 1, 0}, {0, 0, 0}};
    s.A = Eigen::Matrix3d{{-1, 0, 0}, {0, -2, 0}, {0, 0, 1}};
    s.b = Eigen::Vector3d{1.0, 1.0, -1.0};
    s.d = d_scale * Eigen::Vector3d{0.2, -0.1, 0.1};
    s.c = Eigen::Vector3d{1.0, 1.0, 1.0};
    s.h = 0.5;
    return s;
}

// ordinary state-space plant (E = I) with a delayed input channel,
// transfer (1 + 0.5 e^{-hs})/(s^2+3s+2)
inline sdc::DescriptorSystem standard2() {
    sdc::DescriptorSystem s;
    s.E = Eigen::MatrixXd::Identity(2, 2);
    s.A = Eigen::Matrix2d{{0.0, 1.0}, {-2.0, -3.0}};
    s.b = Eigen::Vector2d{0.0, 1.0};
    s.d = Eigen::Vector2d{0.0, 0.5};
    s.c = Eigen::Vector2d{1.0, 0.0};
    s.h = 0.5;
    return s;
}

}  // namespace fixtures
