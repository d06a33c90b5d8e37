#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "spherefield/metric.hpp"
#include "spherefield/point.hpp"

namespace spherefield {

/// Triangulation of the Riemann sphere built on a log-polar grid
/// z = e^{t + i theta}, |t| <= T, closed by two pole caps. The vertex
/// set and the triangle set are exactly symmetric under radial
/// reflection (t -> -t at fixed theta), and rings are placed at
/// t = 0, +-d/2, +-d, +-2d so circle separators and disc enlargements
/// are unions of mesh rings.
class SphereMesh {
 public:
  /// resolution = number of angular subdivisions (>= 8).
  SphereMesh(int resolution, double d, double band_half_width = 0.0) {
    if (resolution < 8) throw std::invalid_argument("SphereMesh: resolution must be >= 8");
    if (!(d > 0.0)) throw std::invalid_argument("SphereMesh: d must be positive");
    n_ = resolution;
    d_ = d;
    double dt = 2.0 * M_PI / n_;
    double T = band_half_width > 0.0 ? band_half_width : std::max(2.5, 2.0 * d + 3.0 * dt);
    build_rings(T, dt);
    if (std::exp(-T) < 1e-14)
      throw std::invalid_argument("SphereMesh: band too wide, degenerate pole caps");
    build_triangles();
  }

  int angular() const { return n_; }
  double d() const { return d_; }
  double band_half_width() const { return rings_.back(); }
  int ring_count() const { return static_cast<int>(rings_.size()); }
  const std::vector<double>& ring_values() const { return rings_; }
  int vertex_count() const { return 2 + ring_count() * n_; }
  const std::vector<std::array<int, 3>>& triangles() const { return tris_; }

  static constexpr int kApexOrigin = 0;
  static constexpr int kApexInfinity = 1;

  int vertex(int ring, int slot) const { return 2 + ring * n_ + ((slot % n_) + n_) % n_; }
  int ring_of(int v) const { return v < 2 ? -1 : (v - 2) / n_; }
  int slot_of(int v) const { return v < 2 ? -1 : (v - 2) % n_; }

  /// t = log|z| of a vertex; -inf/+inf at the pole apexes.
  double t_of(int v) const {
    if (v == kApexOrigin) return -std::numeric_limits<double>::infinity();
    if (v == kApexInfinity) return std::numeric_limits<double>::infinity();
    return rings_[ring_of(v)];
  }

  SpherePoint position(int v) const {
    if (v == kApexOrigin) return SpherePoint::z({0.0, 0.0});
    if (v == kApexInfinity) return SpherePoint::infinity();
    double t = rings_[ring_of(v)];
    double theta = 2.0 * M_PI * slot_of(v) / n_;
    if (t <= 0.0) return SpherePoint::z(std::polar(std::exp(t), theta));
    return SpherePoint::zeta(std::polar(std::exp(-t), -theta));
  }

  /// Radial reflection as a vertex permutation.
  int mirror_vertex(int v) const {
    if (v == kApexOrigin) return kApexInfinity;
    if (v == kApexInfinity) return kApexOrigin;
    return vertex(ring_count() - 1 - ring_of(v), slot_of(v));
  }

  /// Rotation by steps * 2 pi / n as a vertex permutation.
  int rotate_vertex(int v, int steps) const {
    if (v < 2) return v;
    return vertex(ring_of(v), slot_of(v) + steps);
  }

  /// Index of the ring closest to t (within tol), or -1.
  int find_ring(double t, double tol = 1e-9) const {
    int best = -1;
    double bd = tol;
    for (int k = 0; k < ring_count(); ++k) {
      double delta = std::abs(rings_[k] - t);
      if (delta <= bd) {
        bd = delta;
        best = k;
      }
    }
    return best;
  }

  std::vector<int> ring_vertices(int ring) const {
    std::vector<int> out(n_);
    for (int j = 0; j < n_; ++j) out[j] = vertex(ring, j);
    return out;
  }

  /// All vertices with t <= cut (includes the origin apex).
  std::vector<int> vertices_below(double cut) const {
    std::vector<int> out;
    out.push_back(kApexOrigin);
    for (int k = 0; k < ring_count(); ++k)
      if (rings_[k] <= cut + 1e-12)
        for (int j = 0; j < n_; ++j) out.push_back(vertex(k, j));
    return out;
  }

  std::vector<int> vertices_above(double cut) const {
    std::vector<int> out;
    out.push_back(kApexInfinity);
    for (int k = 0; k < ring_count(); ++k)
      if (rings_[k] >= cut - 1e-12)
        for (int j = 0; j < n_; ++j) out.push_back(vertex(k, j));
    return out;
  }

  /// Vertex adjacency from shared triangles (includes the diagonal).
  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::set<int>> adj(vertex_count());
    for (const auto& t : tris_)
      for (int a : t)
        for (int b : t)
          if (a != b) adj[a].insert(b);
    std::vector<std::vector<int>> out(vertex_count());
    for (int v = 0; v < vertex_count(); ++v) out[v].assign(adj[v].begin(), adj[v].end());
    return out;
  }

  int euler_characteristic() const {
    std::set<std::pair<int, int>> edges;
    for (const auto& t : tris_) {
      for (int e = 0; e < 3; ++e) {
        int a = t[e], b = t[(e + 1) % 3];
        edges.insert({std::min(a, b), std::max(a, b)});
      }
    }
    return vertex_count() - static_cast<int>(edges.size()) + static_cast<int>(tris_.size());
  }

  /// Chart a triangle is measured in: pole caps use their disc chart,
  /// band triangles the cylinder chart w = t + i theta.
  enum class TriChart { Z, Zeta, Band };
  TriChart tri_chart(size_t ti) const {
    const auto& t = tris_[ti];
    if (t[0] == kApexOrigin || t[1] == kApexOrigin || t[2] == kApexOrigin) return TriChart::Z;
    if (t[0] == kApexInfinity || t[1] == kApexInfinity || t[2] == kApexInfinity)
      return TriChart::Zeta;
    return TriChart::Band;
  }

  /// Coordinates of a triangle's vertices in its own chart. Band
  /// triangles use unwrapped theta so a seam-crossing quad stays thin.
  std::array<Complex, 3> tri_coords(size_t ti) const {
    const auto& t = tris_[ti];
    std::array<Complex, 3> out;
    switch (tri_chart(ti)) {
      case TriChart::Z:
        for (int i = 0; i < 3; ++i) {
          if (t[i] == kApexOrigin)
            out[i] = {0.0, 0.0};
          else
            out[i] = std::polar(std::exp(rings_[ring_of(t[i])]),
                                2.0 * M_PI * slot_of(t[i]) / n_);
        }
        return out;
      case TriChart::Zeta:
        for (int i = 0; i < 3; ++i) {
          if (t[i] == kApexInfinity)
            out[i] = {0.0, 0.0};
          else
            out[i] = std::polar(std::exp(-rings_[ring_of(t[i])]),
                                -2.0 * M_PI * slot_of(t[i]) / n_);
        }
        return out;
      case TriChart::Band: {
        // Unwrap: slots may straddle the theta seam.
        int s0 = slot_of(t[0]), s1 = slot_of(t[1]), s2 = slot_of(t[2]);
        auto unwrap = [&](int s, int ref) {
          int ds = s - ref;
          if (ds > n_ / 2) s -= n_;
          if (ds < -n_ / 2) s += n_;
          return s;
        };
        s1 = unwrap(s1, s0);
        s2 = unwrap(s2, s0);
        double th0 = 2.0 * M_PI * s0 / n_;
        double th1 = 2.0 * M_PI * s1 / n_;
        double th2 = 2.0 * M_PI * s2 / n_;
        out[0] = {rings_[ring_of(t[0])], th0};
        out[1] = {rings_[ring_of(t[1])], th1};
        out[2] = {rings_[ring_of(t[2])], th2};
        return out;
      }
    }
    throw std::logic_error("unreachable");
  }

  /// Metric density at vertex v in the chart of triangle ti.
  double chart_density(const ConformalMetric& m, int v, size_t ti) const {
    SpherePoint p = position(v);
    double rho = m.density(p);
    switch (tri_chart(ti)) {
      case TriChart::Z:
        // Vertices of origin-cap triangles are stored in the z chart.
        return rho;
      case TriChart::Zeta:
        return rho;
      case TriChart::Band: {
        // rho_w = rho_chart * |dz/dw|^2 = rho_chart * |chart coord|^2.
        double r2 = std::norm(p.value);
        return rho * r2;
      }
    }
    throw std::logic_error("unreachable");
  }

 private:
  void build_rings(double T, double dt) {
    // Positive side: uniform grid snapped to the mandatory ring values.
    int steps = std::max(3, static_cast<int>(std::round(T / dt)));
    double h = T / steps;
    std::vector<double> pos(steps);
    for (int k = 1; k <= steps; ++k) pos[k - 1] = k * h;
    for (double m : {0.5 * d_, d_, 2.0 * d_}) {
      if (m >= T) continue;
      size_t nearest = 0;
      double best = 1e300;
      for (size_t i = 0; i < pos.size(); ++i) {
        if (std::abs(pos[i] - m) < best) {
          best = std::abs(pos[i] - m);
          nearest = i;
        }
      }
      if (best <= 0.5 * h)
        pos[nearest] = m;
      else
        pos.push_back(m);
    }
    std::sort(pos.begin(), pos.end());
    // Merge rings that ended up closer than a quarter step.
    std::vector<double> merged;
    for (double t : pos) {
      if (!merged.empty() && t - merged.back() < 0.25 * h) {
        bool keep_new = is_mandatory(t) && !is_mandatory(merged.back());
        if (keep_new) merged.back() = t;
        continue;
      }
      merged.push_back(t);
    }
    merged.back() = T;
    rings_.clear();
    for (auto it = merged.rbegin(); it != merged.rend(); ++it) rings_.push_back(-*it);
    rings_.push_back(0.0);
    for (double t : merged) rings_.push_back(t);
  }

  bool is_mandatory(double t) const {
    for (double m : {0.5 * d_, d_, 2.0 * d_})
      if (std::abs(t - m) < 1e-12) return true;
    return false;
  }

  void build_triangles() {
    int R = ring_count();
    tris_.clear();
    tris_.reserve(2 * n_ * R);
    for (int j = 0; j < n_; ++j)
      tris_.push_back({kApexOrigin, vertex(0, j), vertex(0, j + 1)});
    for (int k = 0; k + 1 < R; ++k) {
      bool upper = rings_[k] >= 0.0;
      for (int j = 0; j < n_; ++j) {
        int A = vertex(k, j), B = vertex(k, j + 1);
        int C = vertex(k + 1, j + 1), D = vertex(k + 1, j);
        if (upper) {
          tris_.push_back({A, B, C});
          tris_.push_back({A, C, D});
        } else {
          tris_.push_back({A, B, D});
          tris_.push_back({B, C, D});
        }
      }
    }
    for (int j = 0; j < n_; ++j)
      tris_.push_back({kApexInfinity, vertex(R - 1, j + 1), vertex(R - 1, j)});
  }

  int n_ = 0;
  double d_ = 0.0;
  std::vector<double> rings_;
  std::vector<std::array<int, 3>> tris_;
};

/// A tagged set of mesh vertices.
struct NodeRegion {
  std::vector<int> indices;
  std::string label;

  static NodeRegion of(std::vector<int> idx, std::string lbl) {
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return {std::move(idx), std::move(lbl)};
  }
  bool contains(int v) const {
    return std::binary_search(indices.begin(), indices.end(), v);
  }
  size_t size() const { return indices.size(); }
};

/// Checks that `separator` disconnects `inside` from its complement in
/// the mesh adjacency graph.
inline bool separates(const SphereMesh& mesh, const NodeRegion& separator,
                      const NodeRegion& inside) {
  auto adj = mesh.adjacency();
  std::vector<char> blocked(mesh.vertex_count(), 0), seen(mesh.vertex_count(), 0);
  for (int v : separator.indices) blocked[v] = 1;
  std::vector<int> stack;
  for (int v : inside.indices)
    if (!blocked[v]) {
      stack.push_back(v);
      seen[v] = 1;
    }
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (!blocked[w] && !seen[w]) {
        seen[w] = 1;
        stack.push_back(w);
      }
  }
  // No reachable vertex may lie outside inside-set plus separator.
  for (int v = 0; v < mesh.vertex_count(); ++v)
    if (seen[v] && !inside.contains(v) && !separator.contains(v)) return false;
  return true;
}

}  // namespace spherefield
