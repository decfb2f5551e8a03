#include "ant/rprop.hpp"

#include <algorithm>
#include <cmath>

#include "ant/errors.hpp"

namespace ant {

Rprop::Rprop(double lo, double hi, RpropOptions options) : lo_(lo), hi_(hi), opt_(options) {
  if (!(hi > lo)) throw ConfigError("parameter bounds need lo < hi");
  if (!(opt_.eta_plus > 1.0) || !(opt_.eta_minus > 0.0 && opt_.eta_minus < 1.0))
    throw ConfigError("rprop needs eta_plus > 1 and 0 < eta_minus < 1");
  if (!(opt_.min_fraction > 0.0) || opt_.min_fraction > opt_.initial_fraction ||
      opt_.initial_fraction > opt_.max_fraction)
    throw ConfigError("rprop step fractions must satisfy 0 < min <= initial <= max");
  delta_ = opt_.initial_fraction * (hi_ - lo_);
}

double Rprop::clamp(double value) const { return std::clamp(value, lo_, hi_); }

double Rprop::step(double value, double gradient) {
  if (!std::isfinite(gradient)) throw NonFiniteResidual("non-finite parameter gradient");
  const double range = hi_ - lo_;
  const double s = gradient * prev_gradient_;
  if (s > 0.0) {
    delta_ = std::min(delta_ * opt_.eta_plus, opt_.max_fraction * range);
  } else if (s < 0.0) {
    delta_ = std::max(delta_ * opt_.eta_minus, opt_.min_fraction * range);
    prev_gradient_ = 0.0;
    return clamp(value);
  }
  prev_gradient_ = gradient;
  if (gradient == 0.0) return clamp(value);
  return clamp(value - (gradient > 0.0 ? delta_ : -delta_));
}

}  // namespace ant
