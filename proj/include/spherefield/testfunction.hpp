#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "spherefield/fem.hpp"

namespace spherefield {

/// Test functions pair with the field through phi(f) = f^T M phi.
/// Node deltas represent delta_x (f = M^{-1} e_x); bumps are compactly
/// supported mollifiers normalized so the integral equals `amplitude`.
struct TestFunction {
  enum class Form { NodeDelta, Bump };

  Form form = Form::NodeDelta;
  int vertex = 0;
  Complex center{0.0, 0.0};
  double width = 0.1;
  double amplitude = 1.0;

  static TestFunction delta(int v) {
    TestFunction f;
    f.form = Form::NodeDelta;
    f.vertex = v;
    return f;
  }

  static TestFunction bump(Complex c, double w, double a = 1.0) {
    if (!(w > 0.0)) throw std::invalid_argument("bump: width must be positive");
    TestFunction f;
    f.form = Form::Bump;
    f.center = c;
    f.width = w;
    f.amplitude = a;
    return f;
  }

  /// Nodal coefficient vector on the model's mesh.
  Vector realize(const GaussianFieldModel& model) const {
    const int n = model.size();
    Vector out = Vector::Zero(n);
    if (form == Form::NodeDelta) {
      out[vertex] = 1.0 / model.lumped_mass()[vertex];
      return out;
    }
    const auto& mesh = model.mesh();
    double integral = 0.0;
    for (int v = 0; v < n; ++v) {
      SpherePoint p = mesh.position(v);
      if (p.is_infinity()) continue;
      Complex z = p.as_z();
      if (std::abs(z) > std::abs(center) + 4.0 * width + 4.0) continue;
      double u = std::abs(z - center) / width;
      if (u >= 1.0) continue;
      out[v] = std::exp(1.0 - 1.0 / (1.0 - u * u));
      integral += out[v] * model.lumped_mass()[v];
    }
    if (integral <= 0.0)
      throw std::runtime_error("bump: support missed the mesh (width below resolution?)");
    out *= amplitude / integral;
    return out;
  }

  std::vector<int> support(const GaussianFieldModel& model) const {
    if (form == Form::NodeDelta) return {vertex};
    Vector v = realize(model);
    std::vector<int> out;
    for (int i = 0; i < v.size(); ++i)
      if (v[i] != 0.0) out.push_back(i);
    return out;
  }
};

}  // namespace spherefield
