#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spherefield/metric.hpp"
#include "spherefield/mobius.hpp"
#include "spherefield/point.hpp"

namespace spherefield {

/// A closed disc on the sphere together with its parametrization data.
/// Interior discs are {|z - a| <= r}, exterior discs {|z - a| >= r}.
struct DiscSpec {
  enum class Shape { Interior, Exterior };
  enum class Orientation { In, Out };

  Shape shape = Shape::Interior;
  Complex center{0.0, 0.0};
  double radius = 1.0;
  Orientation orientation = Orientation::In;
  double twist = 0.0;

  static DiscSpec interior(Complex a, double r, Orientation o, double tw = 0.0) {
    DiscSpec d;
    d.shape = Shape::Interior;
    d.center = a;
    d.radius = r;
    d.orientation = o;
    d.twist = tw;
    d.validate();
    return d;
  }
  static DiscSpec exterior(Complex a, double r, Orientation o, double tw = 0.0) {
    DiscSpec d;
    d.shape = Shape::Exterior;
    d.center = a;
    d.radius = r;
    d.orientation = o;
    d.twist = tw;
    d.validate();
    return d;
  }

  /// The unit out-disc D'0 = {|z| >= 1} with identity parametrization
  /// (j' = z).
  static DiscSpec unit_out() { return exterior({0.0, 0.0}, 1.0, Orientation::Out, 0.0); }
  /// The unit in-disc D0 with identity parametrization (j = z).
  static DiscSpec unit_in() { return interior({0.0, 0.0}, 1.0, Orientation::In, 0.0); }

  void validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("DiscSpec: radius must be positive");
  }

  /// alpha mapping the disc onto the unit disc D0.
  MobiusMap disc_map() const {
    if (shape == Shape::Interior)
      return MobiusMap(1.0, -center, 0.0, radius);
    return MobiusMap(0.0, radius, 1.0, -center);
  }

  /// The parametrization map: j = e^{i twist} alpha for in-discs
  /// (disc -> D0), j' = e^{i twist} / alpha for out-discs (disc -> D'0).
  MobiusMap param_map() const {
    MobiusMap rot = MobiusMap::rotation(twist);
    if (orientation == Orientation::In) return compose(rot, disc_map());
    return compose(rot, disc_map().reciprocal());
  }

  /// s = log |alpha(p)|: s <= 0 on the disc, s <= eps on the enlarged
  /// disc with scale factor e^eps.
  double enlargement_coordinate(const SpherePoint& p) const {
    return log_radius(disc_map()(p));
  }

  bool contains(const SpherePoint& p, double enlargement = 0.0) const {
    return enlargement_coordinate(p) <= enlargement;
  }

  /// Boundary of the enlarged disc alpha^{-1}({|w| = e^s}).
  std::vector<SpherePoint> boundary_samples(double s, int count) const {
    MobiusMap inv = disc_map().inverse();
    std::vector<SpherePoint> pts;
    pts.reserve(count);
    for (int k = 0; k < count; ++k) {
      double a = 2.0 * M_PI * (k + 0.13) / count;
      pts.push_back(inv(SpherePoint::z(std::polar(std::exp(s), a))));
    }
    return pts;
  }
};

/// Verifies that the enlargements (scale e^s) of all discs are pairwise
/// disjoint, by boundary sampling plus a center-containment check.
inline bool enlarged_discs_disjoint(const std::vector<DiscSpec>& discs, double s,
                                    int samples = 64) {
  for (size_t i = 0; i < discs.size(); ++i) {
    for (size_t j = 0; j < discs.size(); ++j) {
      if (i == j) continue;
      for (const auto& p : discs[i].boundary_samples(s, samples))
        if (discs[j].contains(p, s)) return false;
      // Containment without boundary crossing: test one deep interior point.
      SpherePoint core = discs[i].disc_map().inverse()(SpherePoint::z({0.0, 0.0}));
      if (discs[j].contains(core, s)) return false;
    }
  }
  return true;
}

}  // namespace spherefield
