#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "spherefield/disc.hpp"
#include "spherefield/gaussian.hpp"
#include "spherefield/perturbation.hpp"

namespace spherefield {

/// Parametric polynomial with compactly supported bump factors inside
/// the unit disc; each term is one Wick block. Kept parametric so it
/// can be realized after a Mobius transport into any standard disc.
struct DictionaryPolynomial {
  struct Term {
    Complex coeff;
    std::vector<TestFunction> factors;
  };
  std::vector<Term> terms;

  WickPolynomial realize(const GaussianFieldModel& model) const {
    WickPolynomial out;
    for (const auto& t : terms) {
      std::vector<Factor> fs;
      for (const auto& b : t.factors) fs.push_back(Factor::make(b.realize(model)));
      out += WickPolynomial::wick_monomial(t.coeff, std::move(fs));
    }
    return out;
  }
};

/// Scalar + single bumps + bump pairs, all supported well inside D0.
inline std::vector<DictionaryPolynomial> bump_dictionary(int degree, int bump_count,
                                                         double radius, double width) {
  std::vector<TestFunction> bumps;
  for (int k = 0; k < bump_count; ++k) {
    double ang = 2.0 * M_PI * k / bump_count + 0.31;
    bumps.push_back(TestFunction::bump(std::polar(radius, ang), width));
  }
  std::vector<DictionaryPolynomial> dict;
  dict.push_back({{{Complex{1.0, 0.0}, {}}}});
  if (degree >= 1)
    for (const auto& b : bumps) dict.push_back({{{Complex{1.0, 0.0}, {b}}}});
  if (degree >= 2) {
    for (int k = 0; k < bump_count; ++k) {
      dict.push_back({{{Complex{1.0, 0.0}, {bumps[k], bumps[k]}}}});
      dict.push_back({{{Complex{1.0, 0.0}, {bumps[k], bumps[(k + 1) % bump_count]}}}});
    }
  }
  return dict;
}

namespace detail {

/// Exact vertex-permutation transport when the disc map is realized by
/// a mesh symmetry: identity parametrizations of D0 / D'0, optionally
/// twisted by a multiple of the angular step.
inline std::optional<std::function<int(int)>> nodal_transport(const DiscSpec& disc,
                                                              const SphereMesh& mesh) {
  if (std::abs(disc.center) != 0.0 || std::abs(disc.radius - 1.0) > 0.0) return std::nullopt;
  double step = 2.0 * M_PI / mesh.angular();
  double k = disc.twist / step;
  int ki = static_cast<int>(std::lround(k));
  if (std::abs(k - ki) > 1e-12) return std::nullopt;
  bool mirror;
  int rot;
  if (disc.orientation == DiscSpec::Orientation::In) {
    if (disc.shape != DiscSpec::Shape::Interior) return std::nullopt;
    // J F: factor pullback by j^{-1}(w) = e^{-i tau} w, a rotation.
    mirror = false;
    rot = ki;
  } else {
    if (disc.shape != DiscSpec::Shape::Exterior) return std::nullopt;
    // J' Theta: j'(z) = e^{i tau} z, so the composite is the mirror
    // followed by a rotation.
    mirror = true;
    rot = ki;
  }
  return std::function<int(int)>([mirror, rot, &mesh](int v) {
    int w = mirror ? mesh.mirror_vertex(v) : v;
    return mesh.rotate_vertex(w, rot);
  });
}

inline TestFunction transport_bump(const TestFunction& b, const MobiusMap& map) {
  if (b.form != TestFunction::Form::Bump)
    throw std::invalid_argument("transport_bump: only bump factors can be transported");
  Complex c = map(b.center);
  double scale = std::abs(map.derivative(b.center));
  return TestFunction::bump(c, b.width * scale, b.amplitude);
}

inline TestFunction reflect_bump(const TestFunction& b) {
  if (b.form != TestFunction::Form::Bump)
    throw std::invalid_argument("reflect_bump: only bump factors can be reflected");
  Complex c = reflect_z(b.center);
  double scale = 1.0 / std::norm(b.center);
  return TestFunction::bump(c, b.width * scale, b.amplitude);
}

}  // namespace detail

/// J_i F (in-discs) or J'_i Theta F (out-discs) realized on a model.
/// Uses exact vertex permutations when the parametrization is a mesh
/// symmetry, and parametric bump transport otherwise.
inline WickPolynomial realize_transported(const DictionaryPolynomial& p, const DiscSpec& disc,
                                          const GaussianFieldModel& model) {
  const SphereMesh& mesh = model.mesh();
  if (auto perm = detail::nodal_transport(disc, mesh)) {
    WickPolynomial realized = p.realize(model);
    bool out = disc.orientation == DiscSpec::Orientation::Out;
    WickPolynomial base = out ? realized.conj() : realized;
    auto& map = *perm;
    return base.map_factors([&](const Vector& f) {
      Vector v(f.size());
      for (int i = 0; i < f.size(); ++i) v[i] = f[map(i)];
      return v;
    });
  }
  MobiusMap inv = disc.param_map().inverse();
  DictionaryPolynomial moved;
  for (const auto& t : p.terms) {
    DictionaryPolynomial::Term nt;
    bool out = disc.orientation == DiscSpec::Orientation::Out;
    nt.coeff = out ? std::conj(t.coeff) : t.coeff;
    for (const auto& b : t.factors) {
      TestFunction tb = out ? detail::transport_bump(detail::reflect_bump(b), inv)
                            : detail::transport_bump(b, inv);
      nt.factors.push_back(tb);
    }
    moved.terms.push_back(std::move(nt));
  }
  return moved.realize(model);
}

/// A sphere with standard discs: the blended metric agrees with the
/// pulled-back standard metric on each enlarged disc and with gamma0
/// outside all blend zones.
struct MassiveConfig {
  std::shared_ptr<const SphereMesh> mesh;
  double d = 0.0;
  double mu = 0.0;
  std::vector<DiscSpec> in_discs, out_discs;
  ConformalMetric gamma0 = ConformalMetric::flat();
  ConformalMetric gamma = ConformalMetric::flat();
  std::shared_ptr<GaussianFieldModel> model0, model;
  Vector lambda;                      // nodal rho_gamma / rho_gamma0
  double max_pinning_deviation = 0.0; // |rho_gamma/rho_gamma_i - 1| on the enlargements

  std::vector<DiscSpec> all_discs() const {
    std::vector<DiscSpec> d = in_discs;
    d.insert(d.end(), out_discs.begin(), out_discs.end());
    return d;
  }
};

/// Partition-of-unity blend of the per-disc standard metrics over the
/// gamma0 background; weights are pinned to one on the enlarged discs.
inline MassiveConfig blend_metric(std::shared_ptr<const SphereMesh> mesh, double d, double mu,
                                  std::vector<DiscSpec> in_discs, std::vector<DiscSpec> out_discs,
                                  bool validate = true) {
  MassiveConfig cfg;
  cfg.mesh = std::move(mesh);
  cfg.d = d;
  cfg.mu = mu;
  cfg.in_discs = std::move(in_discs);
  cfg.out_discs = std::move(out_discs);
  cfg.gamma0 = ConformalMetric::standard_massive(d);

  auto discs = cfg.all_discs();
  if (validate && !enlarged_discs_disjoint(discs, 2.0 * d))
    throw std::invalid_argument("blend_metric: blend zones of the discs overlap");

  std::vector<ConformalMetric> pulled;
  for (const auto& disc : discs) pulled.push_back(ConformalMetric::pullback(cfg.gamma0, disc.disc_map()));

  ConformalMetric gamma0 = cfg.gamma0;
  double dd = d;
  cfg.gamma = ConformalMetric::custom(
      "blend", [discs, pulled, gamma0, dd](const SpherePoint& p) -> double {
        double log_bg = std::log(gamma0.density(p));
        double acc = log_bg;
        for (size_t i = 0; i < discs.size(); ++i) {
          double s = discs[i].enlargement_coordinate(p);
          if (s <= dd) return pulled[i].density(p);  // pinned
          if (s >= 2.0 * dd) continue;
          double w = 1.0 - detail::smoothstep5((s - dd) / dd);
          acc += w * (std::log(pulled[i].density(p)) - log_bg);
        }
        return std::exp(acc);
      });

  cfg.model0 = std::make_shared<GaussianFieldModel>(cfg.mesh, cfg.gamma0, mu);
  cfg.model = std::make_shared<GaussianFieldModel>(cfg.mesh, cfg.gamma, mu);

  const int n = cfg.mesh->vertex_count();
  cfg.lambda.resize(n);
  for (int v = 0; v < n; ++v) {
    SpherePoint p = cfg.mesh->position(v);
    cfg.lambda[v] = cfg.gamma.density(p) / cfg.gamma0.density(p);
  }

  if (validate) {
    for (size_t i = 0; i < discs.size(); ++i) {
      for (int v = 0; v < n; ++v) {
        SpherePoint p = cfg.mesh->position(v);
        if (discs[i].enlargement_coordinate(p) <= dd) {
          double li = cfg.gamma.density(p) / pulled[i].density(p);
          cfg.max_pinning_deviation = std::max(cfg.max_pinning_deviation, std::abs(li - 1.0));
        }
      }
    }
    if (cfg.max_pinning_deviation > 1e-12)
      throw std::runtime_error("blend_metric: pinning failed on an enlarged disc");
  }
  return cfg;
}

/// The standard Hilbert space data shared by all configurations with
/// the same (mesh, d, mu): dictionary Gram on the gamma0 model and its
/// orthonormal quotient basis.
struct AmplitudeBasis {
  std::vector<DictionaryPolynomial> dictionary;
  RpGramReport gram;
  HilbertBasis hilbert;

  int dim() const { return hilbert.dim; }
};

inline AmplitudeBasis build_basis(const GaussianFieldModel& gamma0_model,
                                  std::vector<DictionaryPolynomial> dictionary,
                                  double quotient_tol = 1e-10) {
  AmplitudeBasis basis;
  basis.dictionary = std::move(dictionary);
  std::vector<WickPolynomial> realized;
  for (const auto& p : basis.dictionary) realized.push_back(p.realize(gamma0_model));
  const SphereMesh& mesh = gamma0_model.mesh();
  RegionProjector ring(gamma0_model,
                       NodeRegion::of(mesh.ring_vertices(mesh.find_ring(0.0)), "C0"));
  basis.gram = rp_gram(gamma0_model, realized, &ring);
  basis.hilbert = hilbert_space(basis.gram.gram, quotient_tol);
  return basis;
}

namespace detail {

/// Multi-index iteration over tensor powers of the basis.
inline std::vector<std::vector<int>> multi_indices(int dim, int count) {
  std::vector<std::vector<int>> out;
  std::vector<int> idx(count, 0);
  if (count == 0) {
    out.push_back({});
    return out;
  }
  while (true) {
    out.push_back(idx);
    int k = 0;
    while (k < count && ++idx[k] == dim) idx[k++] = 0;
    if (k == count) break;
  }
  return out;
}

}  // namespace detail

/// Transported dictionary realizations for one configuration, one list
/// per disc. Entries are evaluated on the dictionary level first and
/// contracted with the basis coefficients afterwards.
struct TransportedBasis {
  std::vector<std::vector<WickPolynomial>> in_dict;   // [disc][dictionary a]
  std::vector<std::vector<WickPolynomial>> out_dict;  // [disc][dictionary a]
};

inline TransportedBasis transport_basis(const MassiveConfig& cfg, const AmplitudeBasis& basis) {
  TransportedBasis tb;
  auto build = [&](const std::vector<DiscSpec>& discs) {
    std::vector<std::vector<WickPolynomial>> reps;
    for (const auto& disc : discs) {
      std::vector<WickPolynomial> realized;
      for (const auto& p : basis.dictionary)
        realized.push_back(realize_transported(p, disc, *cfg.model));
      reps.push_back(std::move(realized));
    }
    return reps;
  };
  tb.in_dict = build(cfg.in_discs);
  tb.out_dict = build(cfg.out_discs);
  return tb;
}

namespace detail {

/// Kronecker power of the representative-coefficient matrix: column =
/// basis multi-index, row = dictionary multi-index.
inline MatrixC kron_power(const MatrixC& R, int count) {
  MatrixC out = MatrixC::Identity(1, 1);
  for (int c = 0; c < count; ++c) {
    MatrixC next(out.rows() * R.rows(), out.cols() * R.cols());
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j)
        next.block(i * R.rows(), j * R.cols(), R.rows(), R.cols()) = out(i, j) * R;
    out = std::move(next);
  }
  return out;
}

}  // namespace detail

struct AmplitudeMatrix {
  MatrixC matrix;  // rows: out multi-index, cols: in multi-index
  Vector singular_values;
  double hs_norm = 0.0;
  double trace_norm = 0.0;
  double z_constant = 1.0;

  void finalize() {
    Eigen::JacobiSVD<MatrixC> svd(matrix);
    singular_values = svd.singularValues();
    hs_norm = singular_values.norm();
    trace_norm = singular_values.sum();
  }
};

/// Contract a dictionary-level entry tensor with the basis coefficient
/// matrices (conjugated on the out slots, where Theta acts antilinearly).
inline MatrixC contract_with_basis(const MatrixC& dict_entries, const AmplitudeBasis& basis,
                                   int out_count, int in_count) {
  MatrixC R = basis.hilbert.representatives;
  MatrixC k_out = detail::kron_power(R, out_count);
  MatrixC k_in = detail::kron_power(R, in_count);
  return k_out.adjoint() * dict_entries * k_in;
}

/// Amplitude entries through the blended-metric expectation:
/// Z_{gamma,mu} < prod Phi(J' Theta F) prod Phi(J F) >_{gamma, mu}.
inline AmplitudeMatrix amplitude_matrix(const MassiveConfig& cfg, const AmplitudeBasis& basis,
                                        const TransportedBasis& tb) {
  MomentEngine engine(*cfg.model);
  auto z = sewing_constant(*cfg.model0, cfg.lambda);
  const int m = static_cast<int>(basis.dictionary.size());
  auto rows = detail::multi_indices(m, static_cast<int>(cfg.out_discs.size()));
  auto cols = detail::multi_indices(m, static_cast<int>(cfg.in_discs.size()));
  MatrixC entries(rows.size(), cols.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    WickPolynomial outp = WickPolynomial::scalar({1.0, 0.0});
    for (size_t j = 0; j < cfg.out_discs.size(); ++j) outp = outp * tb.out_dict[j][rows[r][j]];
    for (size_t c = 0; c < cols.size(); ++c) {
      WickPolynomial full = outp;
      for (size_t i = 0; i < cfg.in_discs.size(); ++i) full = full * tb.in_dict[i][cols[c][i]];
      entries(r, c) = z.value * engine.moment(full);
    }
  }
  AmplitudeMatrix amp;
  amp.z_constant = z.value;
  amp.matrix = contract_with_basis(entries, basis, static_cast<int>(cfg.out_discs.size()),
                                   static_cast<int>(cfg.in_discs.size()));
  amp.finalize();
  return amp;
}

/// The same entries through the one-disc representations: the metric is
/// split across C0, the two reweighting exponents combine, and the
/// pairing is evaluated in the gamma0 model. Exact sewing makes this
/// equal to amplitude_matrix up to arithmetic.
inline AmplitudeMatrix amplitude_matrix_sewn(const MassiveConfig& cfg, const AmplitudeBasis& basis,
                                             const TransportedBasis& tb) {
  const SphereMesh& mesh = *cfg.mesh;
  const int n = cfg.mesh->vertex_count();
  Vector lambda1 = Vector::Ones(n), lambda2 = Vector::Ones(n);
  for (int v = 0; v < n; ++v) {
    if (mesh.t_of(v) <= 0.0)
      lambda1[v] = cfg.lambda[v];
    else
      lambda2[v] = cfg.lambda[v];
  }
  Vector g = ((cfg.lambda.array() - 1.0) * cfg.mu).matrix();
  ReweightedMoments rw(*cfg.model0, g);

  auto scale_factors = [](const WickPolynomial& p, const Vector& lam) {
    return p.map_factors(
        [&lam](const Vector& f) { return Vector((lam.array() * f.array()).matrix()); });
  };

  const int m = static_cast<int>(basis.dictionary.size());
  auto rows = detail::multi_indices(m, static_cast<int>(cfg.out_discs.size()));
  auto cols = detail::multi_indices(m, static_cast<int>(cfg.in_discs.size()));
  std::vector<std::vector<WickPolynomial>> out_scaled, in_scaled;
  for (size_t j = 0; j < cfg.out_discs.size(); ++j) {
    std::vector<WickPolynomial> v;
    for (const auto& p : tb.out_dict[j]) v.push_back(scale_factors(p, lambda2));
    out_scaled.push_back(std::move(v));
  }
  for (size_t i = 0; i < cfg.in_discs.size(); ++i) {
    std::vector<WickPolynomial> v;
    for (const auto& p : tb.in_dict[i]) v.push_back(scale_factors(p, lambda1));
    in_scaled.push_back(std::move(v));
  }
  MatrixC entries(rows.size(), cols.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    WickPolynomial outp = WickPolynomial::scalar({1.0, 0.0});
    for (size_t j = 0; j < cfg.out_discs.size(); ++j) outp = outp * out_scaled[j][rows[r][j]];
    for (size_t c = 0; c < cols.size(); ++c) {
      WickPolynomial full = outp;
      for (size_t i = 0; i < cfg.in_discs.size(); ++i) full = full * in_scaled[i][cols[c][i]];
      entries(r, c) = rw.expectation(full);
    }
  }
  AmplitudeMatrix amp;
  amp.matrix = contract_with_basis(entries, basis, static_cast<int>(cfg.out_discs.size()),
                                   static_cast<int>(cfg.in_discs.size()));
  amp.finalize();
  return amp;
}

struct SewingReport {
  double relative_residual = 0.0;
  double trace_norm = 0.0;
  double hs_norm = 0.0;
  AmplitudeMatrix direct, sewn;
};

/// || A^{I'1} A^{1I} - A^{I'I} || / || A^{I'I} || with the composition
/// evaluated through the one-disc representations.
inline SewingReport sewing_check(const MassiveConfig& cfg, const AmplitudeBasis& basis) {
  auto tb = transport_basis(cfg, basis);
  SewingReport rep;
  rep.direct = amplitude_matrix(cfg, basis, tb);
  rep.sewn = amplitude_matrix_sewn(cfg, basis, tb);
  double denom = rep.direct.matrix.norm();
  rep.relative_residual = (rep.sewn.matrix - rep.direct.matrix).norm() / std::max(denom, 1e-300);
  rep.trace_norm = rep.direct.trace_norm;
  rep.hs_norm = rep.direct.hs_norm;
  return rep;
}

struct ClassIndependenceReport {
  double null_residual = 0.0;       // perturbation by an exact null vector
  double bound = 0.0;               // Cauchy-Schwarz bound for the perturbation
  double value_scale = 0.0;
};

/// The expectation depends on F only through its class: perturb one
/// in-disc argument by (a multiple of) a Gram null vector and measure
/// the change against the norm bound.
inline ClassIndependenceReport class_independence_check(const MassiveConfig& cfg,
                                                        const AmplitudeBasis& basis,
                                                        const WickPolynomial& null_poly,
                                                        double null_norm2) {
  if (cfg.in_discs.empty()) throw std::invalid_argument("class_independence: needs an in-disc");
  auto tb = transport_basis(cfg, basis);
  MomentEngine engine(*cfg.model);
  auto z = sewing_constant(*cfg.model0, cfg.lambda);

  auto combined = [&](const std::vector<WickPolynomial>& dict, int k, bool conj) {
    WickPolynomial out;
    for (int a = 0; a < static_cast<int>(dict.size()); ++a) {
      Complex c = basis.hilbert.representatives(a, k);
      if (conj) c = std::conj(c);
      if (c != Complex{0.0, 0.0}) out += c * dict[a];
    }
    return out;
  };

  // Fixed spectators: first basis vector in every other slot.
  WickPolynomial spectators = WickPolynomial::scalar({1.0, 0.0});
  for (size_t j = 0; j < cfg.out_discs.size(); ++j)
    spectators = spectators * combined(tb.out_dict[j], 0, true);
  for (size_t i = 1; i < cfg.in_discs.size(); ++i)
    spectators = spectators * combined(tb.in_dict[i], 0, false);

  WickPolynomial base = combined(tb.in_dict[0], 0, false);
  Complex with = z.value * engine.moment(spectators * (base + null_poly));
  Complex without = z.value * engine.moment(spectators * base);

  ClassIndependenceReport rep;
  rep.null_residual = std::abs(with - without);
  rep.value_scale = std::abs(without);
  double spect_norm = std::sqrt(std::max(0.0, engine.norm2(spectators)));
  rep.bound = z.value * spect_norm * std::sqrt(std::max(null_norm2, 0.0));
  return rep;
}

/// Raises mu until || e_{D'_{i++}} e_{D_{i+}} || in every per-disc
/// metric is below 1/sqrt(np - 1).
struct MuSelection {
  double mu = 0.0;
  double worst_norm = 0.0;
  double threshold = 0.0;
};

inline MuSelection choose_mu(std::shared_ptr<const SphereMesh> mesh, double d,
                             const std::vector<DiscSpec>& discs, int n_discs, double p,
                             double mu_start = 1.0, int max_doublings = 24) {
  MuSelection sel;
  sel.threshold = 1.0 / std::sqrt(std::max(n_discs * p - 1.0, 1e-9));
  auto gamma0 = ConformalMetric::standard_massive(d);
  double mu = mu_start;
  for (int it = 0; it < max_doublings; ++it) {
    double worst = 0.0;
    for (const auto& disc : discs) {
      auto gamma_i = ConformalMetric::pullback(gamma0, disc.disc_map());
      GaussianFieldModel model(mesh, gamma_i, mu);
      std::vector<int> inner, outer;
      for (int v = 0; v < mesh->vertex_count(); ++v) {
        double s = disc.enlargement_coordinate(mesh->position(v));
        if (s <= 0.5 * d) inner.push_back(v);
        if (s >= d) outer.push_back(v);
      }
      auto rep = cross_projection_norms(model, NodeRegion::of(inner, "D_i+"),
                                        NodeRegion::of(outer, "D'_i++"));
      worst = std::max(worst, rep.op_norm);
    }
    sel.mu = mu;
    sel.worst_norm = worst;
    if (worst <= sel.threshold) return sel;
    mu *= 2.0;
  }
  throw std::runtime_error("choose_mu: criterion not reached");
}

}  // namespace spherefield
