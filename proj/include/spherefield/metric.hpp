#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spherefield/mobius.hpp"
#include "spherefield/point.hpp"

namespace spherefield {

/// log|z| of a sphere point; +inf at infinity, -inf at the origin.
inline double log_radius(const SpherePoint& p) {
  double m = std::abs(p.value);
  if (m == 0.0) return p.chart == Chart::Z ? -std::numeric_limits<double>::infinity()
                                           : std::numeric_limits<double>::infinity();
  double t = std::log(m);
  return p.chart == Chart::Z ? t : -t;
}

namespace detail {

/// Quintic smoothstep: S(0)=0, S(1)=1, S'=S''=0 at both ends.
inline double smoothstep5(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
}

/// Integral of smoothstep5 from 0 to x (value 1/2 at x=1).
inline double smoothstep5_integral(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 0.5 + (x - 1.0);
  double x2 = x * x, x4 = x2 * x2;
  return x4 * (2.5 - 3.0 * x + x2);
}

/// Quintic Hermite interpolant on [0,1] with prescribed endpoint values,
/// first and second derivatives.
inline double hermite5(double u, double p0, double m0, double c0, double p1, double m1,
                       double c1) {
  double u2 = u * u, u3 = u2 * u, u4 = u3 * u, u5 = u4 * u;
  double h00 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
  double h10 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
  double h20 = 0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5;
  double h01 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
  double h11 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
  double h21 = 0.5 * u3 - u4 + 0.5 * u5;
  return p0 * h00 + m0 * h10 + c0 * h20 + p1 * h01 + m1 * h11 + c1 * h21;
}

/// Radial profile of the massive standard metric in t = log|z|:
/// log rho = -2t - 2 psi(|t|) with psi = 0 on [0,d], slope 1 beyond 2d.
inline double standard_massive_log_density(double t, double d) {
  double s = std::abs(t);
  double psi;
  if (s <= d) {
    psi = 0.0;
  } else if (s >= 2.0 * d) {
    psi = s - 1.5 * d;
  } else {
    psi = d * smoothstep5_integral((s - d) / d);
  }
  return -2.0 * t - 2.0 * psi;
}

/// Radial profile of the flat standard metric in t = log|z|:
/// log rho = 0 below -2d, -2t in |t|<d, -4t above 2d, quintic Hermite
/// in between; the upper interpolation mirrors the lower one so that the
/// reflection identity L(t) = L(-t) - 4t is exact.
inline double standard_flat_log_density(double t, double d) {
  auto lower = [d](double t_) {
    // t_ in [-2d, -d]: from (0,0,0) to (2d, -2, 0).
    double u = (t_ + 2.0 * d) / d;
    return hermite5(u, 0.0, 0.0, 0.0, 2.0 * d, -2.0 * d, 0.0);
  };
  if (t <= -2.0 * d) return 0.0;
  if (t < -d) return lower(t);
  if (t <= d) return -2.0 * t;
  if (t < 2.0 * d) return lower(-t) - 4.0 * t;
  return -4.0 * t;
}

}  // namespace detail

/// Conformal metric gamma = rho(z) |dz|^2 on the Riemann sphere, stored
/// as a closed-form density evaluator. Instances are immutable; copies
/// share the underlying definition.
class ConformalMetric {
 public:
  enum class Kind {
    Flat,
    Round,
    Cylindrical,
    StandardMassive,
    StandardFlat,
    Pullback,
    Scaled,
    Custom
  };

  using SigmaFn = std::function<double(const SpherePoint&)>;
  using DensityFn = std::function<double(const SpherePoint&)>;

  static ConformalMetric flat() { return ConformalMetric(Kind::Flat, "flat"); }
  static ConformalMetric round() { return ConformalMetric(Kind::Round, "round"); }
  static ConformalMetric cylindrical() {
    return ConformalMetric(Kind::Cylindrical, "cylindrical");
  }

  /// Reflection- and rotation-invariant metric equal to |z|^-2 |dz|^2 on
  /// e^-d < |z| < e^d, extended to a smooth positive density on the
  /// whole sphere.
  static ConformalMetric standard_massive(double d) {
    require_positive_d(d);
    ConformalMetric m(Kind::StandardMassive, "standard-massive");
    m.d_ = d;
    return m;
  }

  /// Reflection- and rotation-invariant metric equal to |dz|^2 below
  /// |z| = e^-2d, |z|^-2 |dz|^2 in the middle annulus and |z|^-4 |dz|^2
  /// beyond |z| = e^2d.
  static ConformalMetric standard_flat(double d) {
    require_positive_d(d);
    ConformalMetric m(Kind::StandardFlat, "standard-flat");
    m.d_ = d;
    return m;
  }

  /// Pullback alpha^* base, density rho(z) = rho_base(alpha z) |alpha'(z)|^2.
  static ConformalMetric pullback(ConformalMetric base, MobiusMap map) {
    ConformalMetric m(Kind::Pullback, "pullback(" + base.name_ + ")");
    m.base_ = std::make_shared<ConformalMetric>(std::move(base));
    m.map_ = map;
    return m;
  }

  /// e^sigma * base.
  static ConformalMetric scaled(ConformalMetric base, SigmaFn sigma) {
    ConformalMetric m(Kind::Scaled, "scaled(" + base.name_ + ")");
    m.base_ = std::make_shared<ConformalMetric>(std::move(base));
    m.sigma_ = std::move(sigma);
    return m;
  }

  static ConformalMetric custom(std::string name, DensityFn rho) {
    ConformalMetric m(Kind::Custom, std::move(name));
    m.rho_ = std::move(rho);
    return m;
  }

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double d() const { return d_; }
  const ConformalMetric* base() const { return base_.get(); }
  const MobiusMap& map() const { return map_; }

  /// Density in the chart the point is stored in. For kinds that are
  /// reflection and rotation invariant the z- and zeta-chart densities
  /// coincide as radial profiles, which keeps pole evaluations exact.
  double density(const SpherePoint& p) const {
    switch (kind_) {
      case Kind::Flat:
        return p.chart == Chart::Z ? 1.0 : std::pow(std::abs(p.value), -4.0);
      case Kind::Round: {
        double r2 = std::norm(p.value);
        return 4.0 / ((1.0 + r2) * (1.0 + r2));
      }
      case Kind::Cylindrical: {
        double r2 = std::norm(p.value);
        if (r2 == 0.0) throw std::domain_error("cylindrical metric is singular at the poles");
        return 1.0 / r2;
      }
      case Kind::StandardMassive: {
        // Reflection + rotation invariance make the zeta-chart density
        // the same radial profile of the chart coordinate.
        double r = std::abs(p.value);
        if (r == 0.0) return std::exp(3.0 * d_);
        return std::exp(detail::standard_massive_log_density(std::log(r), d_));
      }
      case Kind::StandardFlat: {
        double r = std::abs(p.value);
        if (r == 0.0) return 1.0;
        return std::exp(detail::standard_flat_log_density(std::log(r), d_));
      }
      case Kind::Pullback: {
        SpherePoint q = map_(to_point(p));
        MobiusMap rep = chart_representative(map_, p.chart, q.chart);
        Complex der = rep.derivative(p.value);
        return base_->density(q) * std::norm(der);
      }
      case Kind::Scaled:
        return std::exp(sigma_(to_point(p))) * base_->density(p);
      case Kind::Custom:
        return rho_(to_point(p));
    }
    throw std::logic_error("unreachable");
  }

  double density(Complex z) const { return density(SpherePoint::z(z)); }

  /// log rho relative to the flat metric, in the z chart.
  double log_density(Complex z) const { return std::log(density(z)); }

 private:
  explicit ConformalMetric(Kind k, std::string name) : kind_(k), name_(std::move(name)) {}

  static void require_positive_d(double d) {
    if (!(d > 0.0)) throw std::invalid_argument("standard metric requires d > 0");
  }

  static SpherePoint to_point(const SpherePoint& p) { return p; }

  // Coordinate representation of `map` from chart `from` to chart `to`.
  static MobiusMap chart_representative(const MobiusMap& map, Chart from, Chart to) {
    MobiusMap rep = map;
    if (from == Chart::Zeta) rep = compose(rep, MobiusMap::inversion());
    if (to == Chart::Zeta) rep = rep.reciprocal();
    return rep;
  }

  Kind kind_;
  std::string name_;
  double d_ = 0.0;
  std::shared_ptr<const ConformalMetric> base_;
  MobiusMap map_;
  SigmaFn sigma_;
  DensityFn rho_;
};

/// sigma = log(rho1 / rho2) at a point, for gamma1 = e^sigma gamma2.
inline double conformal_factor(const ConformalMetric& m1, const ConformalMetric& m2,
                               const SpherePoint& p) {
  return std::log(m1.density(p)) - std::log(m2.density(p));
}

struct ReflectionReport {
  double max_error = 0.0;
  SpherePoint worst_point;
  bool pass(double tol) const { return max_error <= tol; }
};

/// Checks |z|^-4 rho(1/conj z) = rho(z) over z-chart samples, reporting
/// the worst relative error. Both densities are taken in the z chart.
inline ReflectionReport check_reflection_invariance(const ConformalMetric& m,
                                                    const std::vector<SpherePoint>& samples) {
  ReflectionReport rep;
  for (const auto& p : samples) {
    Complex z = p.as_z();
    if (z == Complex{0.0, 0.0}) continue;
    double rho = m.density(z);
    double rho_ref = m.density(reflect_z(z));
    double lhs = std::exp(std::log(rho_ref) - 4.0 * std::log(std::abs(z)));
    double err = std::abs(lhs - rho) / rho;
    if (err > rep.max_error) {
      rep.max_error = err;
      rep.worst_point = p;
    }
  }
  return rep;
}

/// Default sample set for invariance checks: rings of radii away from
/// the poles, with odd angular offsets so no symmetry axis is favored.
inline std::vector<SpherePoint> reflection_sample_points() {
  std::vector<SpherePoint> pts;
  const double radii[] = {0.21, 0.4, 0.55, 0.77, 1.0, 1.31, 1.9, 2.6, 4.1};
  for (double r : radii)
    for (int k = 0; k < 12; ++k) {
      double a = 0.37 + 2.0 * M_PI * k / 12.0;
      pts.push_back(SpherePoint::z(std::polar(r, a)));
    }
  return pts;
}

}  // namespace spherefield
