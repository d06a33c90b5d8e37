#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "spherefield/polynomial.hpp"
#include "spherefield/projection.hpp"

namespace spherefield {

using MatrixC = Eigen::MatrixXcd;
using VectorC = Eigen::VectorXcd;

/// exp(-1/2 ||f||^2_{-1}).
inline double characteristic(const GaussianFieldModel& model, const Vector& f) {
  return std::exp(-0.5 * model.norm2_minus1(f));
}

struct CharacteristicMC {
  double analytic = 0.0;
  double sample_mean = 0.0;
  double stderr_3sigma = 0.0;
  bool consistent = false;
};

/// Monte Carlo oracle for the characteristic function: mean of
/// cos(phi(f)) over seeded samples, compared at three sigma.
inline CharacteristicMC characteristic_mc(const GaussianFieldModel& model, const Vector& f,
                                          int samples, std::uint64_t seed) {
  CharacteristicMC out;
  out.analytic = characteristic(model, f);
  std::mt19937_64 rng(seed);
  double sum = 0.0, sum2 = 0.0;
  Vector mf = (model.lumped_mass().array() * f.array()).matrix();
  for (int s = 0; s < samples; ++s) {
    Vector phi = model.sample(rng);
    double v = std::cos(mf.dot(phi));
    sum += v;
    sum2 += v * v;
  }
  out.sample_mean = sum / samples;
  double var = std::max(0.0, sum2 / samples - out.sample_mean * out.sample_mean);
  out.stderr_3sigma = 3.0 * std::sqrt(var / samples);
  out.consistent = std::abs(out.sample_mean - out.analytic) <= out.stderr_3sigma + 1e-12;
  return out;
}

/// Conditional expectation onto the sigma-algebra of a region:
/// Gamma(e_A) acting factorwise in the Wick form.
inline WickPolynomial conditional_expectation(const MomentEngine& engine,
                                              const RegionProjector& projector,
                                              const WickPolynomial& p) {
  return engine.gamma(p, [&projector](const Vector& f) { return projector.apply(f); });
}

/// Gamma(A) P - Gamma(B) P with the difference telescoped factorwise,
/// so the result's factors carry (A - B) applied to single vectors and
/// norms of near-identical projections can be evaluated without
/// catastrophic cancellation. P must be in the Wick normal form.
inline WickPolynomial gamma_difference(const WickPolynomial& wick_form,
                                       const std::function<Vector(const Vector&)>& map_a,
                                       const std::function<Vector(const Vector&)>& map_b) {
  WickPolynomial out;
  std::unordered_map<long, Factor> a_img, b_img, d_img;
  auto image = [](std::unordered_map<long, Factor>& cache, const Factor& f,
                  const std::function<Vector(const Vector&)>& m) -> const Factor& {
    auto it = cache.find(f.id);
    if (it == cache.end()) it = cache.emplace(f.id, Factor::make(m(f.vec()))).first;
    return it->second;
  };
  for (const auto& t : wick_form.terms()) {
    if (t.blocks.empty()) continue;  // scalars cancel exactly
    const auto& fs = t.blocks[0].factors;
    const size_t k = fs.size();
    if (k == 0) continue;
    for (size_t j = 0; j < k; ++j) {
      std::vector<Factor> factors;
      factors.reserve(k);
      for (size_t i = 0; i < j; ++i) factors.push_back(image(b_img, fs[i], map_b));
      {
        auto it = d_img.find(fs[j].id);
        if (it == d_img.end()) {
          Vector d = map_a(fs[j].vec()) - map_b(fs[j].vec());
          it = d_img.emplace(fs[j].id, Factor::make(std::move(d))).first;
        }
        factors.push_back(it->second);
      }
      for (size_t i = j + 1; i < k; ++i) factors.push_back(image(a_img, fs[i], map_a));
      out += WickPolynomial::wick_monomial(t.coeff, std::move(factors));
    }
  }
  return out;
}

/// Conditional expectation of an ordinary product polynomial in the
/// "projected form": E[prod phi(f_i) | A] expanded over subsets, with
/// the complement factors contracted through the model covariance.
/// Returns terms whose factors are e_A-images.
inline WickPolynomial conditional_expectation_ordinary(const MomentEngine& engine,
                                                       const RegionProjector& projector,
                                                       const WickPolynomial& ordinary) {
  WickPolynomial out;
  std::unordered_map<long, Factor> proj_img, rest_img;
  for (const auto& t : ordinary.terms()) {
    std::vector<Factor> fs;
    for (const auto& b : t.blocks)
      for (const auto& f : b.factors) fs.push_back(f);
    const size_t k = fs.size();
    std::vector<Factor> proj(k), rest(k);
    for (size_t i = 0; i < k; ++i) {
      auto it = proj_img.find(fs[i].id);
      if (it == proj_img.end())
        it = proj_img.emplace(fs[i].id, Factor::make(projector.apply(fs[i].vec()))).first;
      proj[i] = it->second;
      auto jt = rest_img.find(fs[i].id);
      if (jt == rest_img.end())
        jt = rest_img.emplace(fs[i].id, Factor::make(fs[i].vec() - it->second.vec())).first;
      rest[i] = jt->second;
    }
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      std::vector<Factor> kept, traced;
      for (size_t i = 0; i < k; ++i) {
        if ((mask >> i) & 1u)
          kept.push_back(proj[i]);
        else
          traced.push_back(rest[i]);
      }
      if (traced.size() % 2 == 1) continue;
      // Isserlis over the traced residuals.
      double scalar = 1.0;
      if (!traced.empty()) {
        Complex m = engine.moment(WickPolynomial::monomial({1.0, 0.0}, traced));
        scalar = std::real(m);
        if (scalar == 0.0) continue;
      }
      out += WickPolynomial::monomial(t.coeff * scalar, kept);
    }
  }
  return out;
}

/// E^{A-model}_{region} Phi(F) - E^{B-model}_{region} Phi(F) for an
/// ordinary polynomial, telescoped so every term carries one small
/// difference (of projected factors or of residual contractions).
inline WickPolynomial conditional_expectation_difference(const MomentEngine& eng_a,
                                                         const RegionProjector& proj_a,
                                                         const MomentEngine& eng_b,
                                                         const RegionProjector& proj_b,
                                                         const WickPolynomial& ordinary) {
  WickPolynomial out;
  std::unordered_map<long, Factor> img_a, img_b, img_d, res_a, res_b;
  auto get = [](std::unordered_map<long, Factor>& cache, long id,
                const std::function<Vector()>& make) -> const Factor& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, Factor::make(make())).first;
    return it->second;
  };
  for (const auto& t : ordinary.terms()) {
    std::vector<Factor> fs;
    for (const auto& b : t.blocks)
      for (const auto& f : b.factors) fs.push_back(f);
    const size_t k = fs.size();
    std::vector<Factor> pa(k), pb(k), pd(k), ra(k), rb(k);
    for (size_t i = 0; i < k; ++i) {
      pa[i] = get(img_a, fs[i].id, [&] { return proj_a.apply(fs[i].vec()); });
      pb[i] = get(img_b, fs[i].id, [&] { return proj_b.apply(fs[i].vec()); });
      pd[i] = get(img_d, fs[i].id, [&] { return Vector(pa[i].vec() - pb[i].vec()); });
      ra[i] = get(res_a, fs[i].id, [&] { return Vector(fs[i].vec() - pa[i].vec()); });
      rb[i] = get(res_b, fs[i].id, [&] { return Vector(fs[i].vec() - pb[i].vec()); });
    }
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      std::vector<size_t> kept;
      std::vector<Factor> traced_a, traced_b;
      for (size_t i = 0; i < k; ++i) {
        if ((mask >> i) & 1u) {
          kept.push_back(i);
        } else {
          traced_a.push_back(ra[i]);
          traced_b.push_back(rb[i]);
        }
      }
      if (traced_a.size() % 2 == 1) continue;
      double wa = 1.0, wb = 1.0;
      if (!traced_a.empty()) {
        wa = std::real(eng_a.moment(WickPolynomial::monomial({1.0, 0.0}, traced_a)));
        wb = std::real(eng_b.moment(WickPolynomial::monomial({1.0, 0.0}, traced_b)));
      }
      // (wa - wb) prod phi(pa) + wb sum_j prod_{<j} phi(pb) phi(pd_j) prod_{>j} phi(pa).
      if (wa != wb) {
        std::vector<Factor> factors;
        for (size_t i : kept) factors.push_back(pa[i]);
        out += WickPolynomial::monomial(t.coeff * (wa - wb), factors);
      }
      if (wb != 0.0) {
        for (size_t j = 0; j < kept.size(); ++j) {
          std::vector<Factor> factors;
          for (size_t i = 0; i < j; ++i) factors.push_back(pb[kept[i]]);
          factors.push_back(pd[kept[j]]);
          for (size_t i = j + 1; i < kept.size(); ++i) factors.push_back(pa[kept[i]]);
          out += WickPolynomial::monomial(t.coeff * wb, factors);
        }
      }
    }
  }
  return out;
}

struct MarkovReport {
  double max_residual = 0.0;
  int polynomials = 0;
};

/// || E_{Omega^c} E_{closure(Omega)} P - E_{boundary} P ||_2 over a
/// polynomial family; exact for the local precision discretization.
inline MarkovReport markov_check(const GaussianFieldModel& model, const NodeRegion& inside,
                                 const NodeRegion& separator,
                                 const std::vector<WickPolynomial>& family) {
  NodeRegion closure = inside;
  closure.indices.insert(closure.indices.end(), separator.indices.begin(),
                         separator.indices.end());
  closure = NodeRegion::of(closure.indices, inside.label + "+sep");
  std::vector<int> comp;
  for (int v = 0; v < model.size(); ++v)
    if (!inside.contains(v)) comp.push_back(v);
  NodeRegion complement = NodeRegion::of(comp, "complement");

  if (!separates(model.mesh(), separator, closure))
    throw std::invalid_argument("markov_check: separator does not separate");

  MomentEngine engine(model);
  RegionProjector p_comp(model, complement);
  RegionProjector p_clo(model, closure);
  RegionProjector p_sep(model, separator);

  auto composite = [&](const Vector& f) { return p_comp.apply(p_clo.apply(f)); };
  auto boundary = [&](const Vector& f) { return p_sep.apply(f); };

  MarkovReport rep;
  for (const auto& poly : family) {
    WickPolynomial diff = gamma_difference(engine.to_wick(poly), composite, boundary);
    double err = std::sqrt(std::max(0.0, engine.norm2(diff)));
    double scale = std::sqrt(std::max(engine.norm2(poly), 1e-300));
    rep.max_residual = std::max(rep.max_residual, err / scale);
    ++rep.polynomials;
  }
  return rep;
}

struct RpGramReport {
  MatrixC gram;
  double min_eigenvalue = 0.0;
  double norm = 0.0;
  double hermiticity_error = 0.0;
  double sing_identity_residual = 0.0;  // <(Theta P) P> vs ||E_{C0} P||^2
};

/// Gram matrix G_ab = <(Theta P_a) P_b> for a reflection-invariant
/// metric, with the L^2-of-the-ring identity checked alongside. When a
/// domain is given, every factor's support must stay inside it.
inline RpGramReport rp_gram(const GaussianFieldModel& model,
                            const std::vector<WickPolynomial>& family,
                            const RegionProjector* ring_projector = nullptr,
                            const NodeRegion* domain = nullptr) {
  auto invariance = check_reflection_invariance(model.metric(), reflection_sample_points());
  if (!invariance.pass(1e-10))
    throw std::invalid_argument("rp_gram: metric is not reflection invariant");
  if (domain) {
    for (const auto& p : family)
      for (const auto& t : p.terms())
        for (const auto& b : t.blocks)
          for (const auto& f : b.factors)
            for (int v = 0; v < f.vec().size(); ++v)
              if (f.vec()[v] != 0.0 && !domain->contains(v))
                throw std::invalid_argument("rp_gram: factor support leaves the domain");
  }

  MomentEngine engine(model);
  const auto& mesh = model.mesh();
  const int n = static_cast<int>(family.size());
  RpGramReport rep;
  rep.gram.resize(n, n);
  std::vector<WickPolynomial> reflected;
  reflected.reserve(n);
  for (const auto& p : family) reflected.push_back(theta(mesh, p));
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) rep.gram(a, b) = engine.moment(reflected[a] * family[b]);

  MatrixC herm = rep.gram - rep.gram.adjoint();
  rep.hermiticity_error = herm.cwiseAbs().maxCoeff();
  MatrixC sym = 0.5 * (rep.gram + rep.gram.adjoint());
  Eigen::SelfAdjointEigenSolver<MatrixC> es(sym);
  rep.min_eigenvalue = es.eigenvalues().minCoeff();
  rep.norm = std::max(std::abs(es.eigenvalues().minCoeff()), std::abs(es.eigenvalues().maxCoeff()));

  if (ring_projector) {
    double worst = 0.0;
    for (int a = 0; a < n; ++a) {
      WickPolynomial pr = conditional_expectation(engine, *ring_projector, family[a]);
      double lhs = std::real(rep.gram(a, a));
      double rhs = engine.norm2(pr);
      worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-30}));
    }
    rep.sing_identity_residual = worst;
  }
  return rep;
}

/// Orthonormal basis of the quotient Hilbert space from a PSD Gram.
struct HilbertBasis {
  Eigen::VectorXd eigenvalues;  // descending, full list
  MatrixC coords;               // row a = coordinates of nu(P_a)
  MatrixC representatives;      // column k = family coefficients of basis vector k
  int dim = 0;

  /// nu of a coefficient vector in family space.
  VectorC project(const VectorC& c) const { return coords.transpose() * c; }
};

inline HilbertBasis hilbert_space(const MatrixC& gram, double rel_tol = 1e-10) {
  if (!(rel_tol > 0.0) || !(rel_tol < 1.0))
    throw std::invalid_argument("hilbert_space: tol must lie in (0,1)");
  MatrixC sym = 0.5 * (gram + gram.adjoint());
  Eigen::SelfAdjointEigenSolver<MatrixC> es(sym);
  const int n = static_cast<int>(gram.rows());
  // Eigen returns ascending order; flip.
  Eigen::VectorXd ev = es.eigenvalues().reverse();
  MatrixC U = es.eigenvectors().rowwise().reverse();
  double cutoff = rel_tol * std::max(ev[0], 0.0);
  int dim = 0;
  while (dim < n && ev[dim] > cutoff) ++dim;

  HilbertBasis basis;
  basis.eigenvalues = ev;
  basis.dim = dim;
  basis.coords.resize(n, dim);
  basis.representatives.resize(n, dim);
  for (int k = 0; k < dim; ++k) {
    double s = std::sqrt(ev[k]);
    basis.coords.col(k) = U.col(k).conjugate() * s;
    basis.representatives.col(k) = U.col(k) / s;
  }
  return basis;
}

struct GammaTraceReport {
  double truncated = 0.0;
  double product_formula = 0.0;
  double tail_bound = 0.0;
};

/// Tr Gamma(T) for T with eigenvalues 0 <= lambda_k < 1: the Fock sum
/// truncated at total degree `cutoff` against prod (1 - lambda_k)^{-1},
/// with a geometric bound on the truncation gap.
inline GammaTraceReport gamma_trace(const std::vector<double>& lambdas, int cutoff) {
  for (double l : lambdas)
    if (!(l >= 0.0 && l < 1.0))
      throw std::invalid_argument("gamma_trace: eigenvalues must lie in [0,1)");
  GammaTraceReport rep;
  rep.product_formula = 1.0;
  for (double l : lambdas) rep.product_formula /= (1.0 - l);

  // Truncated sum over multi-indices with |n| <= cutoff: fold one mode
  // at a time, tracking the total degree.
  std::vector<double> by_degree(cutoff + 1, 0.0);
  by_degree[0] = 1.0;
  for (double l : lambdas) {
    std::vector<double> next(cutoff + 1, 0.0);
    for (int d = 0; d <= cutoff; ++d) {
      if (by_degree[d] == 0.0) continue;
      double p = 1.0;
      for (int k = 0; d + k <= cutoff; ++k) {
        next[d + k] += by_degree[d] * p;
        p *= l;
      }
    }
    by_degree = std::move(next);
  }
  rep.truncated = 0.0;
  for (double v : by_degree) rep.truncated += v;

  // Tail: sum_{m > cutoff} #compositions(m, K) lmax^m.
  double lmax = 0.0;
  for (double l : lambdas) lmax = std::max(lmax, l);
  const int K = static_cast<int>(lambdas.size());
  double tail = 0.0;
  if (lmax > 0.0) {
    double binom = 1.0;  // C(m + K - 1, K - 1) updated incrementally
    for (int m = 1; m <= cutoff; ++m) binom = binom * (m + K - 1) / m;
    double lm = std::pow(lmax, cutoff + 1);
    for (int m = cutoff + 1; m < cutoff + 100000; ++m) {
      binom = binom * (m + K - 1) / m;
      double term = binom * lm;
      tail += term;
      lm *= lmax;
      if (term < 1e-18 * (tail + 1.0)) break;
    }
  }
  rep.tail_bound = tail;
  return rep;
}

namespace detail {

/// Gauss-Hermite rule mapped to N(0,1): E[g] ~ sum w_i g(x_i).
inline void gauss_hermite_rule(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Matrix J = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    double b = std::sqrt(k / 2.0);
    J(k - 1, k) = b;
    J(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = std::sqrt(2.0) * es.eigenvalues()[i];
    double v = es.eigenvectors()(0, i);
    weights[i] = v * v;  // physicists' weights normalized by sqrt(pi)
  }
}

inline double hermite_eval(const std::vector<double>& coeffs, double x) {
  // Probabilists' Hermite: He_0 = 1, He_1 = x, He_{n+1} = x He_n - n He_{n-1}.
  double acc = 0.0, hm = 1.0, h = x;
  if (!coeffs.empty()) acc += coeffs[0] * hm;
  if (coeffs.size() > 1) acc += coeffs[1] * h;
  for (size_t n = 1; n + 1 < coeffs.size(); ++n) {
    double hp = x * h - static_cast<double>(n) * hm;
    hm = h;
    h = hp;
    acc += coeffs[n + 1] * h;
  }
  return acc;
}

}  // namespace detail

struct HypercontractivityReport {
  double lhs = 0.0;  // ||Gamma(c) psi||_4
  double rhs = 0.0;  // ||psi||_2
  bool holds = false;
};

/// Single-mode contraction check: Gamma(c) He_n = c^n He_n, and the
/// L^2 -> L^4 bound requires |c| <= 1/sqrt(3).
inline HypercontractivityReport hypercontractivity_check_1mode(
    double c, const std::vector<double>& hermite_coeffs) {
  int degree = static_cast<int>(hermite_coeffs.size()) - 1;
  int quad = std::max(8, 2 * degree + 6);
  std::vector<double> x, w;
  detail::gauss_hermite_rule(quad, x, w);

  std::vector<double> scaled = hermite_coeffs;
  double cp = 1.0;
  for (size_t n = 0; n < scaled.size(); ++n) {
    scaled[n] *= cp;
    cp *= c;
  }
  double m4 = 0.0, m2 = 0.0;
  for (int i = 0; i < quad; ++i) {
    double g = detail::hermite_eval(scaled, x[i]);
    double f = detail::hermite_eval(hermite_coeffs, x[i]);
    m4 += w[i] * g * g * g * g;
    m2 += w[i] * f * f;
  }
  if (!(m4 >= 0.0) || !(m2 >= 0.0))
    throw std::runtime_error("hypercontractivity: quadrature underflow");
  HypercontractivityReport rep;
  rep.lhs = std::pow(m4, 0.25);
  rep.rhs = std::sqrt(m2);
  rep.holds = rep.lhs <= rep.rhs * (1.0 + 1e-8);
  return rep;
}

/// H^{-1}-orthonormal mode family with the associated trace-basis
/// monomials prod :phi(e_k)^{n_k}: / sqrt(n_k!).
struct FockTruncation {
  std::vector<Factor> modes;
  int max_degree = 0;

  static FockTruncation build(const GaussianFieldModel& model, std::vector<Vector> raw_modes,
                              int max_degree) {
    FockTruncation f;
    f.max_degree = max_degree;
    for (auto& v : raw_modes) {
      for (const auto& e : f.modes) {
        double c = 0.0;
        // Gram-Schmidt in the H^{-1} inner product.
        c = model.pair_minus1(e.vec(), v);
        v -= c * e.vec();
      }
      double n2 = model.norm2_minus1(v);
      if (n2 < 1e-20) continue;
      v /= std::sqrt(n2);
      f.modes.push_back(Factor::make(std::move(v)));
    }
    return f;
  }

  /// Basis monomial for occupation numbers n_k.
  WickPolynomial basis_element(const std::vector<int>& occupation) const {
    std::vector<Factor> factors;
    double norm = 1.0;
    for (size_t k = 0; k < occupation.size(); ++k) {
      for (int c = 0; c < occupation[k]; ++c) factors.push_back(modes[k]);
      for (int c = 2; c <= occupation[k]; ++c) norm *= c;
    }
    return WickPolynomial::wick_monomial(Complex{1.0 / std::sqrt(norm), 0.0}, std::move(factors));
  }
};

/// Random bump-based polynomial supported in |alpha(z)| <= e^{s_max}
/// for a disc region, with degree <= max_degree.
inline WickPolynomial random_polynomial(const GaussianFieldModel& model, std::mt19937_64& rng,
                                        Complex center, double spread, double bump_width,
                                        int max_degree, bool complex_coeffs = true) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss;
  WickPolynomial p = WickPolynomial::scalar({0.3 + unif(rng), 0.0});
  int terms = 1 + static_cast<int>(unif(rng) * 2.0);
  for (int t = 0; t < terms; ++t) {
    int deg = 1 + static_cast<int>(unif(rng) * max_degree);
    deg = std::min(deg, max_degree);
    std::vector<Factor> factors;
    for (int k = 0; k < deg; ++k) {
      Complex c = center + std::polar(spread * std::sqrt(unif(rng)), 2.0 * M_PI * unif(rng));
      factors.push_back(Factor::make(TestFunction::bump(c, bump_width).realize(model)));
    }
    Complex coeff = complex_coeffs ? Complex{gauss(rng), gauss(rng)} : Complex{gauss(rng), 0.0};
    p += WickPolynomial::wick_monomial(coeff, std::move(factors));
  }
  return p;
}

}  // namespace spherefield
