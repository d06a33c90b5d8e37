#pragma once

#include <cmath>
#include <stdexcept>

#include "spherefield/point.hpp"

namespace spherefield {

/// Mobius transformation z -> (a z + b) / (c z + d), ad - bc != 0.
class MobiusMap {
 public:
  MobiusMap() : a_(1.0), b_(0.0), c_(0.0), d_(1.0) {}
  MobiusMap(Complex a, Complex b, Complex c, Complex d) : a_(a), b_(b), c_(c), d_(d) {
    normalize();
  }

  static MobiusMap identity() { return MobiusMap(); }
  static MobiusMap translation(Complex t) { return MobiusMap(1.0, t, 0.0, 1.0); }
  static MobiusMap scaling(Complex s) { return MobiusMap(s, 0.0, 0.0, 1.0); }
  static MobiusMap rotation(double angle) {
    return MobiusMap(std::polar(1.0, angle), 0.0, 0.0, 1.0);
  }
  static MobiusMap inversion() { return MobiusMap(0.0, 1.0, 1.0, 0.0); }

  Complex a() const { return a_; }
  Complex b() const { return b_; }
  Complex c() const { return c_; }
  Complex d() const { return d_; }

  Complex operator()(Complex z) const {
    Complex den = c_ * z + d_;
    if (den == Complex{0.0, 0.0}) throw std::domain_error("MobiusMap: image is infinity");
    return (a_ * z + b_) / den;
  }

  SpherePoint operator()(const SpherePoint& p) const {
    if (p.is_infinity()) {
      if (c_ == Complex{0.0, 0.0}) return SpherePoint::infinity();
      return SpherePoint::z(a_ / c_).normalized();
    }
    Complex z = p.as_z();
    Complex den = c_ * z + d_;
    Complex num = a_ * z + b_;
    if (std::abs(den) >= std::abs(num)) {
      if (den == Complex{0.0, 0.0}) return SpherePoint::infinity();
      return SpherePoint::z(num / den);
    }
    return SpherePoint::zeta(den / num);
  }

  /// Derivative d(alpha z)/dz = (ad - bc) / (cz + d)^2 at finite z.
  Complex derivative(Complex z) const {
    Complex den = c_ * z + d_;
    return (a_ * d_ - b_ * c_) / (den * den);
  }

  MobiusMap inverse() const { return MobiusMap(d_, -b_, -c_, a_); }

  /// (f o g)(z) = f(g(z)).
  friend MobiusMap compose(const MobiusMap& f, const MobiusMap& g) {
    return MobiusMap(f.a_ * g.a_ + f.b_ * g.c_, f.a_ * g.b_ + f.b_ * g.d_,
                     f.c_ * g.a_ + f.d_ * g.c_, f.c_ * g.b_ + f.d_ * g.d_);
  }

  /// Pointwise reciprocal w -> 1 / alpha(w), again a Mobius map.
  MobiusMap reciprocal() const { return MobiusMap(c_, d_, a_, b_); }

 private:
  // Scale so |ad - bc| = 1; rejects coefficient tuples that are
  // degenerate relative to their own magnitude.
  void normalize() {
    double n2 = std::norm(a_) + std::norm(b_) + std::norm(c_) + std::norm(d_);
    Complex det = a_ * d_ - b_ * c_;
    if (std::abs(det) <= 1e-12 * n2)
      throw std::invalid_argument("MobiusMap: degenerate coefficients (ad - bc ~ 0)");
    double s = std::sqrt(std::abs(det));
    a_ /= s; b_ /= s; c_ /= s; d_ /= s;
  }

  Complex a_, b_, c_, d_;
};

}  // namespace spherefield
