#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "slowregion/error.hpp"
#include "slowregion/tensor.hpp"

namespace slowregion {

inline constexpr double kNormEpsilon = 1e-12;

// D(u, v) = 1 - u.v / (|u||v|), range [0, 2]. Degenerate (near-zero norm)
// inputs return the maximally uninformative 1.0; that branch is flat, so
// its gradient is zero. Accumulation is in double regardless of the
// embedding scalar type.
template <typename T>
double cosine_distance(const Tensor<T>& u, const Tensor<T>& v) {
  if (u.shape != v.shape || u.shape.size() != 1) {
    throw ShapeError("cosine_distance: embedding shape mismatch");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    const double a = static_cast<double>(u.data[i]);
    const double b = static_cast<double>(v.data[i]);
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < kNormEpsilon || nv < kNormEpsilon) return 1.0;
  return 1.0 - dot / (nu * nv);
}

// Accumulates coeff * dD/du into du and coeff * dD/dv into dv.
// dD/du_i = -v_i/(|u||v|) + (u.v) u_i / (|u|^3 |v|).
template <typename T>
void add_cosine_distance_grad(const Tensor<T>& u, const Tensor<T>& v, double coeff,
                              std::vector<double>& du, std::vector<double>& dv) {
  double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    const double a = static_cast<double>(u.data[i]);
    const double b = static_cast<double>(v.data[i]);
    dot += a * b;
    nu2 += a * a;
    nv2 += b * b;
  }
  const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  if (nu < kNormEpsilon || nv < kNormEpsilon) return;  // flat branch
  const double inv = 1.0 / (nu * nv);
  for (std::size_t i = 0; i < u.numel(); ++i) {
    const double a = static_cast<double>(u.data[i]);
    const double b = static_cast<double>(v.data[i]);
    du[i] += coeff * (-b * inv + dot * a / (nu2 * nu * nv));
    dv[i] += coeff * (-a * inv + dot * b / (nu * nv2 * nv));
  }
}

// Hinge ranking loss: max{0, d_pos - d_neg + m}.
inline double triplet_loss(double d_pos, double d_neg, double m) {
  return std::max(0.0, d_pos - d_neg + m);
}

}  // namespace slowregion
