#pragma once

#include "invargc/common.hpp"

#include <cmath>

namespace invargc::prox {

inline double soft_threshold(double v, double tau) {
    if (v > tau) return v - tau;
    if (v < -tau) return v + tau;
    return 0.0;
}

/// Block soft-thresholding: argmin_x 1/2 ||x - v||^2 + tau ||x||_2, in place.
/// Blocks at or below the threshold are set exactly to zero.
template <class Derived>
void block_soft_threshold(Eigen::MatrixBase<Derived>&& v, double tau) {
    const double norm = v.norm();
    if (norm <= tau || norm == 0.0)
        v.setZero();
    else
        v *= (1.0 - tau / norm);
}

template <class Derived>
void block_soft_threshold(Eigen::MatrixBase<Derived>& v, double tau) {
    block_soft_threshold(std::move(v), tau);
}

}  // namespace invargc::prox
