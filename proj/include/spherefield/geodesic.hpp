#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "spherefield/metric.hpp"

namespace spherefield {

namespace detail {

// 8-point Gauss-Legendre nodes/weights on [0,1].
inline const std::array<std::pair<double, double>, 8>& gl8() {
  static const std::array<std::pair<double, double>, 8> data = {{
      {0.01985507175123188, 0.05061426814518813},
      {0.10166676129318664, 0.11119051722668724},
      {0.2372337950418355, 0.15685332293894364},
      {0.40828267875217505, 0.18134189168918099},
      {0.5917173212478249, 0.18134189168918099},
      {0.7627662049581645, 0.15685332293894364},
      {0.8983332387068134, 0.11119051722668724},
      {0.9801449282487681, 0.05061426814518813},
  }};
  return data;
}

inline double segment_length(const ConformalMetric& m, Complex a, Complex b) {
  double len = 0.0;
  for (const auto& [x, w] : gl8()) {
    Complex z = a + x * (b - a);
    len += w * std::sqrt(m.density(z));
  }
  return len * std::abs(b - a);
}

inline double path_length(const ConformalMetric& m, const std::vector<Complex>& path) {
  double len = 0.0;
  for (size_t i = 0; i + 1 < path.size(); ++i) len += segment_length(m, path[i], path[i + 1]);
  return len;
}

// Discrete path energy sum_j rho(mid_j) |dz_j|^2 (constant-speed geodesic
// functional); better conditioned for descent than the length itself.
inline double path_energy(const ConformalMetric& m, const std::vector<Complex>& path) {
  double e = 0.0;
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    Complex mid = 0.5 * (path[i] + path[i + 1]);
    e += m.density(mid) * std::norm(path[i + 1] - path[i]);
  }
  return e;
}

// Local energy of the two segments meeting at p: rho(mid)|dz|^2 each.
inline double local_energy(const ConformalMetric& m, Complex a, Complex p, Complex b) {
  Complex m1 = 0.5 * (a + p), m2 = 0.5 * (p + b);
  return m.density(m1) * std::norm(p - a) + m.density(m2) * std::norm(b - p);
}

// One damped-Newton update of an interior node against its neighbors.
// Returns the displacement magnitude.
inline double relax_node(const ConformalMetric& m, Complex a, Complex& p, Complex b, double h) {
  auto e = [&](Complex q) { return local_energy(m, a, q, b); };
  double e0 = e(p);
  double ex = e(p + Complex{h, 0.0}), exm = e(p - Complex{h, 0.0});
  double ey = e(p + Complex{0.0, h}), eym = e(p - Complex{0.0, h});
  double gx = (ex - exm) / (2.0 * h), gy = (ey - eym) / (2.0 * h);
  double hxx = (ex - 2.0 * e0 + exm) / (h * h);
  double hyy = (ey - 2.0 * e0 + eym) / (h * h);
  double exy = e(p + Complex{h, h}), exym = e(p - Complex{h, h});
  double hxy = (exy + exym + 2.0 * e0 - ex - exm - ey - eym) / (2.0 * h * h);
  // Levenberg damping keeps the step a descent direction.
  double lam = 1e-8 * (std::abs(hxx) + std::abs(hyy)) + 1e-300;
  for (int attempt = 0; attempt < 8; ++attempt) {
    double axx = hxx + lam, ayy = hyy + lam;
    double det = axx * ayy - hxy * hxy;
    if (det > 0.0 && axx > 0.0) {
      Complex step{(ayy * gx - hxy * gy) / det, (axx * gy - hxy * gx) / det};
      Complex trial = p - step;
      if (e(trial) <= e0) {
        p = trial;
        return std::abs(step);
      }
    }
    lam = std::max(lam * 10.0, 1e-6 * (std::abs(hxx) + std::abs(hyy)) + 1e-300);
  }
  // Fall back to a tiny gradient step.
  Complex g{gx, gy};
  double gn = std::abs(g);
  if (gn == 0.0) return 0.0;
  Complex dir = g / gn;
  double step = 0.25 * std::min(std::abs(p - a), std::abs(b - p));
  while (step > 1e-16 * std::abs(b - a)) {
    if (e(p - step * dir) < e0) {
      p -= step * dir;
      return step;
    }
    step *= 0.5;
  }
  return 0.0;
}

// Resample to `segments` pieces of equal metric arclength, so nodes
// concentrate where the density is large.
inline std::vector<Complex> resample(const ConformalMetric& m, const std::vector<Complex>& path,
                                     size_t segments) {
  std::vector<double> cum(path.size(), 0.0);
  for (size_t i = 1; i < path.size(); ++i) {
    Complex mid = 0.5 * (path[i] + path[i - 1]);
    cum[i] = cum[i - 1] + std::sqrt(m.density(mid)) * std::abs(path[i] - path[i - 1]);
  }
  double total = cum.back();
  std::vector<Complex> out;
  out.reserve(segments + 1);
  out.push_back(path.front());
  size_t k = 1;
  for (size_t j = 1; j < segments; ++j) {
    double target = total * j / segments;
    while (k < path.size() - 1 && cum[k] < target) ++k;
    double seg = cum[k] - cum[k - 1];
    double u = seg > 0.0 ? (target - cum[k - 1]) / seg : 0.0;
    out.push_back(path[k - 1] + u * (path[k] - path[k - 1]));
  }
  out.push_back(path.back());
  return out;
}

// Dijkstra on a local rectangular grid with 16-neighborhood moves.
inline std::vector<Complex> grid_shortest_path(const ConformalMetric& m, Complex x, Complex y,
                                               int n) {
  Complex lo{std::min(x.real(), y.real()), std::min(x.imag(), y.imag())};
  Complex hi{std::max(x.real(), y.real()), std::max(x.imag(), y.imag())};
  double diam = std::max({hi.real() - lo.real(), hi.imag() - lo.imag(), 1e-6});
  double pad = 0.45 * diam;
  lo -= Complex{pad, pad};
  hi += Complex{pad, pad};
  auto at = [&](int i, int j) -> Complex {
    return {lo.real() + (hi.real() - lo.real()) * i / (n - 1),
            lo.imag() + (hi.imag() - lo.imag()) * j / (n - 1)};
  };
  auto idx = [&](int i, int j) { return i * n + j; };
  const int moves[16][2] = {{1, 0},  {0, 1},  {-1, 0}, {0, -1}, {1, 1},  {1, -1},
                            {-1, 1}, {-1, -1}, {2, 1},  {1, 2},  {-1, 2}, {-2, 1},
                            {-2, -1}, {-1, -2}, {1, -2}, {2, -1}};
  std::vector<double> dist(n * n, std::numeric_limits<double>::infinity());
  std::vector<int> prev(n * n, -1);
  auto nearest = [&](Complex p) {
    int i = static_cast<int>(std::lround((p.real() - lo.real()) / (hi.real() - lo.real()) * (n - 1)));
    int j = static_cast<int>(std::lround((p.imag() - lo.imag()) / (hi.imag() - lo.imag()) * (n - 1)));
    return std::pair<int, int>(std::clamp(i, 0, n - 1), std::clamp(j, 0, n - 1));
  };
  auto [si, sj] = nearest(x);
  auto [ti, tj] = nearest(y);
  using QE = std::pair<double, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;
  dist[idx(si, sj)] = 0.0;
  pq.push({0.0, idx(si, sj)});
  while (!pq.empty()) {
    auto [d0, u] = pq.top();
    pq.pop();
    if (d0 > dist[u]) continue;
    if (u == idx(ti, tj)) break;
    int ui = u / n, uj = u % n;
    for (auto& mv : moves) {
      int vi = ui + mv[0], vj = uj + mv[1];
      if (vi < 0 || vj < 0 || vi >= n || vj >= n) continue;
      Complex a = at(ui, uj), b = at(vi, vj);
      Complex mid = 0.5 * (a + b);
      double w = std::sqrt(m.density(mid)) * std::abs(b - a);
      int v = idx(vi, vj);
      if (dist[u] + w < dist[v]) {
        dist[v] = dist[u] + w;
        prev[v] = u;
        pq.push({dist[v], v});
      }
    }
  }
  std::vector<Complex> path;
  int cur = idx(ti, tj);
  while (cur != -1) {
    path.push_back(at(cur / n, cur % n));
    cur = prev[cur];
  }
  std::reverse(path.begin(), path.end());
  path.front() = x;
  path.back() = y;
  return path;
}

}  // namespace detail

struct GeodesicResult {
  double distance = 0.0;
  double residual = 0.0;  // final gradient norm relative to path scale
  bool converged = false;
  std::vector<Complex> path;
};

/// Shortest-path length between two z-chart points: graph shortest path
/// on a local grid seeds a discrete-energy descent, then the length is
/// evaluated by per-segment quadrature. `refinement` controls both the
/// number of path nodes and the number of subdivision rounds.
inline GeodesicResult geodesic_distance(const ConformalMetric& m, Complex x, Complex y,
                                        int refinement = 2) {
  if (x == y) throw std::invalid_argument("geodesic_distance: endpoints coincide");
  GeodesicResult res;
  int grid = 24 + 8 * std::min(refinement, 4);
  std::vector<Complex> path = detail::grid_shortest_path(m, x, y, grid);
  size_t segments = 24;
  double scale = std::abs(y - x);
  double fd = std::max(1e-8, 2e-5 * scale);
  for (int round = 0; round <= refinement; ++round) {
    path = detail::resample(m, path, segments);
    double move = 0.0;
    for (int sweep = 0; sweep < 400; ++sweep) {
      move = 0.0;
      // Alternate sweep direction to propagate corrections both ways.
      if (sweep % 2 == 0) {
        for (size_t k = 1; k + 1 < path.size(); ++k)
          move = std::max(move, detail::relax_node(m, path[k - 1], path[k], path[k + 1], fd));
      } else {
        for (size_t k = path.size() - 2; k >= 1; --k)
          move = std::max(move, detail::relax_node(m, path[k - 1], path[k], path[k + 1], fd));
      }
      if (move < 1e-11 * scale) break;
    }
    res.residual = move / scale;
    segments *= 2;
  }
  res.converged = res.residual < 1e-6;
  res.distance = detail::path_length(m, path);
  res.path = std::move(path);
  return res;
}

struct DistanceRatioReport {
  std::vector<double> ratios;
  double limit = 0.0;
  double expected = 0.0;  // e^{sigma(x)/2}
  bool converged = false;
};

/// Ratios d_{gamma'}(x, y_k) / d_gamma(x, y_k) along a geometrically
/// shrinking sequence y_k -> x, with Richardson extrapolation of the
/// limit; gamma' = e^sigma gamma.
inline DistanceRatioReport distance_ratio_limit(const ConformalMetric& base,
                                                const ConformalMetric::SigmaFn& sigma, Complex x,
                                                Complex direction, double h0, int steps,
                                                int refinement = 2) {
  ConformalMetric scaled = ConformalMetric::scaled(base, sigma);
  DistanceRatioReport rep;
  Complex dir = direction / std::abs(direction);
  for (int k = 0; k < steps; ++k) {
    Complex y = x + dir * (h0 * std::pow(0.5, k));
    auto d1 = geodesic_distance(scaled, x, y, refinement);
    auto d0 = geodesic_distance(base, x, y, refinement);
    if (!d1.converged || !d0.converged) return rep;
    rep.ratios.push_back(d1.distance / d0.distance);
  }
  size_t n = rep.ratios.size();
  if (n >= 2) {
    // First-order Richardson: r(h) = r* + c h.
    rep.limit = 2.0 * rep.ratios[n - 1] - rep.ratios[n - 2];
  } else {
    rep.limit = rep.ratios.back();
  }
  rep.expected = std::exp(0.5 * sigma(SpherePoint::z(x)));
  rep.converged = true;
  return rep;
}

}  // namespace spherefield
