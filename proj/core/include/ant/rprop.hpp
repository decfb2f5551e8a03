#pragma once

// Sign-based bounded parameter update (iRprop-).

namespace ant {

struct RpropOptions {
  double eta_plus = 1.2;
  double eta_minus = 0.5;
  // Step sizes as fractions of the parameter range.
  double initial_fraction = 0.02;
  double min_fraction = 0.001;
  double max_fraction = 0.1;
};

/// One scalar parameter constrained to [lo, hi]. step() moves against the
/// sign of the gradient; the step size grows on consistent signs and
/// shrinks on sign flips, after which the flipped gradient is ignored once.
class Rprop {
 public:
  Rprop(double lo, double hi, RpropOptions options = {});

  /// Returns the new value, clamped to the bounds.
  double step(double value, double gradient);

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double step_size() const noexcept { return delta_; }
  double clamp(double value) const;

 private:
  double lo_, hi_;
  RpropOptions opt_;
  double delta_;
  double prev_gradient_ = 0.0;
};

}  // namespace ant
