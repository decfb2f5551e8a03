#include "ant/model.hpp"

#include <algorithm>
#include <cmath>

namespace ant {

Matrix DifferentiableModel::second_order(const Vector& x, const Vector& v) const {
  const auto n = in_dim();
  if (is_linear()) return Matrix::Zero(n, n);
  Matrix h(n, n);
  Vector xp = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double step = 1e-5 * std::max(1.0, std::abs(x(k)));
    xp(k) = x(k) + step;
    const Vector gp = jacobian(xp).transpose() * v;
    xp(k) = x(k) - step;
    const Vector gm = jacobian(xp).transpose() * v;
    xp(k) = x(k);
    h.col(k) = (gp - gm) / (2.0 * step);
  }
  return symmetrized(h);
}

}  // namespace ant
