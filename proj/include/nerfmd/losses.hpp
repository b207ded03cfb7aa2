#pragma once

#include <cmath>
#include <stdexcept>

#include "nerfmd/field.hpp"
#include "nerfmd/geometry.hpp"

namespace nerfmd {

// Piecewise-linear p(tau): 2 -> 1 over [0, tau_init], 1 on [tau_init,
// tau_inc], back to 2 over [tau_inc, tau_std], then constant 2.
struct PNormSchedule {
  int tau_init = 1;
  int tau_inc = 2;
  int tau_std = 3;

  PNormSchedule() = default;
  PNormSchedule(int init, int inc, int std_) : tau_init(init), tau_inc(inc), tau_std(std_) {
    if (!(0 < tau_init && tau_init <= tau_inc && tau_inc < tau_std))
      throw std::invalid_argument("p-norm schedule: need 0 < tau_init <= tau_inc < tau_std");
  }

  double operator()(double tau) const {
    if (tau <= 0.0) return 2.0;
    if (tau < tau_init) return 2.0 - tau / tau_init;
    if (tau <= tau_inc) return 1.0;
    if (tau < tau_std) return 1.0 + (tau - tau_inc) / double(tau_std - tau_inc);
    return 2.0;
  }
};

struct LossReport {
  double image_loss = 0.0;
  double depth_loss = 0.0;
  double var_loss = 0.0;
  double gt_depth_loss = 0.0;
  double p_used = 2.0;
  double total = 0.0;
};

constexpr double kPnormEps = 1e-6;

// Smoothed |x|^p: (x^2 + eps^2)^(p/2) - eps^p. Exactly x^2 at p = 2, zero at
// x = 0 for every p, and differentiable at the origin.
template <class T>
T pnorm_term(T x, double p) {
  T e2 = T(kPnormEps * kPnormEps);
  return std::pow(x * x + e2, T(0.5 * p)) - std::pow(T(kPnormEps), T(p));
}

template <class T>
T pnorm_term_grad(T x, double p) {
  T e2 = T(kPnormEps * kPnormEps);
  return T(p) * x * std::pow(x * x + e2, T(0.5 * p - 1.0));
}

// Mean over rays of sum over channels of |C - C*|^p.
template <class T>
T image_loss(const Eigen::Matrix<T, Eigen::Dynamic, 3>& rendered,
             const Eigen::Matrix<T, Eigen::Dynamic, 3>& target, double p) {
  if (rendered.rows() == 0) throw std::invalid_argument("image_loss: empty batch");
  if (rendered.rows() != target.rows())
    throw std::invalid_argument("image_loss: batch size mismatch");
  T acc = T(0);
  for (ptrdiff_t i = 0; i < rendered.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      acc += pnorm_term(rendered(i, c) - target(i, c), p);
  return acc / T(rendered.rows());
}

// d(image_loss)/d(rendered)
template <class T>
Eigen::Matrix<T, Eigen::Dynamic, 3> image_loss_grad(
    const Eigen::Matrix<T, Eigen::Dynamic, 3>& rendered,
    const Eigen::Matrix<T, Eigen::Dynamic, 3>& target, double p) {
  Eigen::Matrix<T, Eigen::Dynamic, 3> g(rendered.rows(), 3);
  T inv_n = T(1) / T(rendered.rows());
  for (ptrdiff_t i = 0; i < rendered.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      g(i, c) = inv_n * pnorm_term_grad(rendered(i, c) - target(i, c), p);
  return g;
}

// w_ij = |phi_ij| * ||o_i - o_j|| / w_max, clamped to [0,1].
inline double camera_weight(const Camera& cam_i, const Camera& cam_j,
                            double w_max) {
  if (!(w_max > 0.0)) throw std::invalid_argument("camera_weight: w_max must be positive");
  double cosang = std::clamp(cam_i.optical_axis().dot(cam_j.optical_axis()), -1.0, 1.0);
  double phi = std::acos(cosang);
  double w = std::abs(phi) * (cam_i.origin - cam_j.origin).norm() / w_max;
  return std::clamp(w, 0.0, 1.0);
}

inline double max_camera_weight(const std::vector<Camera>& cams) {
  double w_max = 0.0;
  for (size_t i = 0; i < cams.size(); ++i)
    for (size_t j = i + 1; j < cams.size(); ++j) {
      double cosang = std::clamp(
          cams[i].optical_axis().dot(cams[j].optical_axis()), -1.0, 1.0);
      w_max = std::max(w_max, std::acos(cosang) *
                                  (cams[i].origin - cams[j].origin).norm());
    }
  return w_max;
}

}  // namespace nerfmd
