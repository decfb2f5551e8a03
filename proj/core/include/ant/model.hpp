#pragma once

#include <Eigen/Core>

#include "ant/mvn.hpp"

namespace ant {

/// Implicit residual model f(x*) = eps, eps ~ N(0, noise_cov), evaluated on
/// the concatenated state x* = [x_{t+1}; x_t].
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;

  /// Dimension of x* (twice the node state dimension).
  virtual Eigen::Index in_dim() const = 0;
  virtual Eigen::Index out_dim() const = 0;
  virtual const Matrix& noise_cov() const = 0;
  virtual Vector evaluate(const Vector& x) const = 0;
  virtual Matrix jacobian(const Vector& x) const = 0;

  /// True when f is affine in x*, so second_order() is zero.
  virtual bool is_linear() const { return false; }

  /// sum_k v_k * Hessian(f_k)(x), shape [in_dim x in_dim]. The default uses
  /// central differences of jacobian().
  virtual Matrix second_order(const Vector& x, const Vector& v) const;
};

}  // namespace ant
