#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>

namespace spherefield {

using Complex = std::complex<double>;

/// Coordinate chart on the Riemann sphere. The two charts overlap away
/// from their respective poles and are related by zeta = 1/z.
enum class Chart { Z, Zeta };

/// A point on the Riemann sphere, stored as a finite coordinate in one
/// of the two charts. The point at infinity is (Zeta, 0), the origin is
/// (Z, 0).
struct SpherePoint {
  Chart chart = Chart::Z;
  Complex value{0.0, 0.0};

  static SpherePoint z(Complex v) { return {Chart::Z, v}; }
  static SpherePoint zeta(Complex v) { return {Chart::Zeta, v}; }
  static SpherePoint infinity() { return {Chart::Zeta, {0.0, 0.0}}; }

  bool is_origin() const { return chart == Chart::Z && value == Complex{0.0, 0.0}; }
  bool is_infinity() const { return chart == Chart::Zeta && value == Complex{0.0, 0.0}; }

  /// Coordinate in the z chart; throws at the point at infinity.
  Complex as_z() const {
    if (chart == Chart::Z) return value;
    if (is_infinity()) throw std::domain_error("SpherePoint: infinity has no z coordinate");
    return 1.0 / value;
  }

  /// Coordinate in the zeta chart; throws at the origin.
  Complex as_zeta() const {
    if (chart == Chart::Zeta) return value;
    if (is_origin()) throw std::domain_error("SpherePoint: origin has no zeta coordinate");
    return 1.0 / value;
  }

  /// Switch to whichever chart keeps the coordinate inside the unit disc
  /// (ties keep the current chart).
  SpherePoint normalized() const {
    if (std::abs(value) <= 1.0) return *this;
    Chart other = (chart == Chart::Z) ? Chart::Zeta : Chart::Z;
    return {other, 1.0 / value};
  }
};

/// Radial reflection through the unit circle, z -> z / |z|^2. Fixes
/// |z| = 1 pointwise and exchanges the origin with infinity. In chart
/// coordinates it swaps the chart and conjugates the value, which makes
/// the involution exact at the poles.
inline SpherePoint reflect(const SpherePoint& p) {
  SpherePoint r;
  r.chart = (p.chart == Chart::Z) ? Chart::Zeta : Chart::Z;
  r.value = std::conj(p.value);
  return r.normalized();
}

/// Reflection for finite nonzero z-chart coordinates.
inline Complex reflect_z(Complex z) { return z / std::norm(z); }

/// Chordal-style distance used by tests to compare points across charts.
inline double point_gap(const SpherePoint& a, const SpherePoint& b) {
  auto in_chart = [](const SpherePoint& p, Chart c) -> Complex {
    return c == Chart::Z ? p.as_z() : p.as_zeta();
  };
  // Compare in the chart where both are well conditioned.
  SpherePoint an = a.normalized(), bn = b.normalized();
  if (an.chart == bn.chart) return std::abs(an.value - bn.value);
  // Mixed charts: one point near a pole the other is not; use whichever
  // chart is finite for both.
  try {
    return std::abs(in_chart(a, Chart::Z) - in_chart(b, Chart::Z));
  } catch (const std::domain_error&) {
    return std::abs(in_chart(a, Chart::Zeta) - in_chart(b, Chart::Zeta));
  }
}

}  // namespace spherefield
