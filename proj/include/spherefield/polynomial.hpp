#pragma once

#include <atomic>
#include <complex>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "spherefield/fem.hpp"
#include "spherefield/testfunction.hpp"

namespace spherefield {

/// A test-function factor inside a polynomial: a shared nodal vector
/// with a unique id (for pairing caches). Factors are real.
struct Factor {
  std::shared_ptr<const Vector> values;
  long id = -1;

  static Factor make(Vector v) {
    static std::atomic<long> next{0};
    Factor f;
    f.values = std::make_shared<Vector>(std::move(v));
    f.id = next.fetch_add(1);
    return f;
  }
  const Vector& vec() const { return *values; }
};

/// One Wick-ordered block :phi(f_1) ... phi(f_k): (k = 0 is the scalar 1).
struct WickBlock {
  std::vector<Factor> factors;
  int degree() const { return static_cast<int>(factors.size()); }
};

/// A product of Wick blocks with a complex coefficient. A term whose
/// blocks all have degree one is an ordinary monomial phi(f_1)...phi(f_n).
struct WickTerm {
  Complex coeff{1.0, 0.0};
  std::vector<WickBlock> blocks;

  int degree() const {
    int d = 0;
    for (const auto& b : blocks) d += b.degree();
    return d;
  }
};

/// Finite complex-linear combination of products of Wick blocks: the
/// polynomial algebra the field functionals live in. Wick ordering is
/// covariance dependent, so conversions between the ordinary and the
/// Wick normal form go through a MomentEngine.
class WickPolynomial {
 public:
  WickPolynomial() = default;

  static WickPolynomial zero() { return WickPolynomial(); }

  static WickPolynomial scalar(Complex c) {
    WickPolynomial p;
    if (c != Complex{0.0, 0.0}) p.terms_.push_back({c, {}});
    return p;
  }

  /// phi(f): degree-1, Wick ordering is trivial.
  static WickPolynomial field(const Factor& f) {
    WickPolynomial p;
    p.terms_.push_back({{1.0, 0.0}, {WickBlock{{f}}}});
    return p;
  }

  /// c * :phi(f_1) ... phi(f_k):
  static WickPolynomial wick_monomial(Complex c, std::vector<Factor> factors) {
    WickPolynomial p;
    p.terms_.push_back({c, {WickBlock{std::move(factors)}}});
    return p;
  }

  /// c * phi(f_1) ... phi(f_k) as an ordinary product.
  static WickPolynomial monomial(Complex c, const std::vector<Factor>& factors) {
    WickTerm t;
    t.coeff = c;
    for (const auto& f : factors) t.blocks.push_back(WickBlock{{f}});
    WickPolynomial p;
    p.terms_.push_back(std::move(t));
    return p;
  }

  const std::vector<WickTerm>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }
  int degree() const {
    int d = 0;
    for (const auto& t : terms_) d = std::max(d, t.degree());
    return d;
  }
  size_t term_count() const { return terms_.size(); }

  void add_term(WickTerm t) {
    if (t.coeff != Complex{0.0, 0.0}) terms_.push_back(std::move(t));
  }

  WickPolynomial& operator+=(const WickPolynomial& o) {
    terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
    return *this;
  }
  friend WickPolynomial operator+(WickPolynomial a, const WickPolynomial& b) { return a += b; }
  friend WickPolynomial operator-(WickPolynomial a, const WickPolynomial& b) {
    return a += (-1.0) * b;
  }
  friend WickPolynomial operator*(Complex c, WickPolynomial p) {
    for (auto& t : p.terms_) t.coeff *= c;
    if (c == Complex{0.0, 0.0}) p.terms_.clear();
    return p;
  }
  friend WickPolynomial operator*(double c, WickPolynomial p) { return Complex(c, 0.0) * p; }

  /// Pointwise product in the algebra of random variables.
  friend WickPolynomial operator*(const WickPolynomial& a, const WickPolynomial& b) {
    WickPolynomial out;
    out.terms_.reserve(a.terms_.size() * b.terms_.size());
    for (const auto& ta : a.terms_)
      for (const auto& tb : b.terms_) {
        WickTerm t;
        t.coeff = ta.coeff * tb.coeff;
        t.blocks = ta.blocks;
        t.blocks.insert(t.blocks.end(), tb.blocks.begin(), tb.blocks.end());
        out.terms_.push_back(std::move(t));
      }
    return out;
  }

  /// Complex conjugation (the field is real).
  WickPolynomial conj() const {
    WickPolynomial out = *this;
    for (auto& t : out.terms_) t.coeff = std::conj(t.coeff);
    return out;
  }

  /// Apply a linear map to every factor (valid on any form for unitary
  /// pullbacks like Theta; for general contractions use
  /// MomentEngine::gamma which first normalizes to the Wick form).
  WickPolynomial map_factors(const std::function<Vector(const Vector&)>& map) const {
    WickPolynomial out;
    out.terms_.reserve(terms_.size());
    std::unordered_map<long, Factor> mapped;
    for (const auto& t : terms_) {
      WickTerm nt;
      nt.coeff = t.coeff;
      for (const auto& b : t.blocks) {
        WickBlock nb;
        for (const auto& f : b.factors) {
          auto it = mapped.find(f.id);
          if (it == mapped.end())
            it = mapped.emplace(f.id, Factor::make(map(f.vec()))).first;
          nb.factors.push_back(it->second);
        }
        nt.blocks.push_back(std::move(nb));
      }
      out.terms_.push_back(std::move(nt));
    }
    return out;
  }

 private:
  std::vector<WickTerm> terms_;
};

/// Reflection on polynomials: conjugate coefficients and pull every
/// factor back through the mesh mirror permutation.
inline WickPolynomial theta(const SphereMesh& mesh, const WickPolynomial& p) {
  WickPolynomial conj = p.conj();
  return conj.map_factors([&mesh](const Vector& f) {
    Vector out(f.size());
    for (int v = 0; v < f.size(); ++v) out[v] = f[mesh.mirror_vertex(v)];
    return out;
  });
}

/// Moment evaluation for a fixed Gaussian model: Isserlis enumeration
/// over cross-block pairings with cached covariance images. The pairing
/// may be overridden (e.g. by a perturbed covariance) while keeping the
/// same enumeration logic.
class MomentEngine {
 public:
  using PairingFn = std::function<double(const Factor&, const Factor&)>;

  explicit MomentEngine(const GaussianFieldModel& model) : model_(&model) {}

  MomentEngine(const GaussianFieldModel& model, PairingFn pairing)
      : model_(&model), pairing_override_(std::move(pairing)) {}

  const GaussianFieldModel& model() const { return *model_; }

  /// (f, C g) with C the model covariance (or the override). Values
  /// are cached per factor-id pair.
  double pairing(const Factor& a, const Factor& b) const {
    long key = a.id <= b.id ? (a.id << 32) + b.id : (b.id << 32) + a.id;
    auto it = pair_cache_.find(key);
    if (it != pair_cache_.end()) return it->second;
    double v;
    if (pairing_override_) {
      v = pairing_override_(a, b);
    } else {
      const Vector& u = cov_image(b);
      v = (model_->lumped_mass().array() * a.vec().array() * u.array()).sum();
    }
    pair_cache_.emplace(key, v);
    return v;
  }

  /// < P >: sum over perfect matchings avoiding intra-block pairs.
  Complex moment(const WickPolynomial& p) const {
    Complex acc{0.0, 0.0};
    for (const auto& t : p.terms()) acc += t.coeff * term_moment(t);
    return acc;
  }

  /// L^2 inner product <conj(P) Q>.
  Complex inner(const WickPolynomial& p, const WickPolynomial& q) const {
    return moment(p.conj() * q);
  }

  double norm2(const WickPolynomial& p) const { return std::real(inner(p, p)); }

  /// Rewrite as a combination of single Wick blocks (the Wick normal
  /// form for this covariance).
  WickPolynomial to_wick(const WickPolynomial& p) const {
    WickPolynomial out;
    for (const auto& t : p.terms()) {
      // Fold blocks together with the Wick product formula.
      WickPolynomial acc = WickPolynomial::wick_monomial(t.coeff, {});
      for (const auto& b : t.blocks) acc = merge_block(acc, b);
      out += acc;
    }
    return out;
  }

  /// Expand single Wick blocks into ordinary monomials.
  WickPolynomial from_wick(const WickPolynomial& p) const {
    WickPolynomial out;
    for (const auto& t : p.terms()) {
      WickPolynomial acc = WickPolynomial::scalar(t.coeff);
      for (const auto& b : t.blocks) {
        WickPolynomial expanded = expand_block(b);
        acc = acc * expanded;
      }
      out += acc;
    }
    return out;
  }

  /// Second quantization Gamma(T): factorwise action inside Wick
  /// blocks. Input is normalized to the Wick form first.
  WickPolynomial gamma(const WickPolynomial& p,
                       const std::function<Vector(const Vector&)>& map) const {
    return to_wick(p).map_factors(map);
  }

 private:
  const Vector& cov_image(const Factor& f) const {
    auto it = cov_cache_.find(f.id);
    if (it != cov_cache_.end()) return it->second;
    Vector u = model_->apply_covariance(f.vec());
    return cov_cache_.emplace(f.id, std::move(u)).first->second;
  }

  Complex term_moment(const WickTerm& t) const {
    // Collect factors with their block indices.
    std::vector<const Factor*> fs;
    std::vector<int> block_of;
    for (size_t b = 0; b < t.blocks.size(); ++b)
      for (const auto& f : t.blocks[b].factors) {
        fs.push_back(&f);
        block_of.push_back(static_cast<int>(b));
      }
    size_t n = fs.size();
    if (n == 0) return {1.0, 0.0};
    if (n % 2 == 1) return {0.0, 0.0};
    std::vector<char> used(n, 0);
    double total = match_rest(fs, block_of, used, 0);
    return {total, 0.0};
  }

  double match_rest(const std::vector<const Factor*>& fs, const std::vector<int>& block_of,
                    std::vector<char>& used, size_t lo) const {
    while (lo < fs.size() && used[lo]) ++lo;
    if (lo == fs.size()) return 1.0;
    used[lo] = 1;
    double acc = 0.0;
    for (size_t j = lo + 1; j < fs.size(); ++j) {
      if (used[j] || block_of[j] == block_of[lo]) continue;
      used[j] = 1;
      double pair = pairing(*fs[lo], *fs[j]);
      if (pair != 0.0) acc += pair * match_rest(fs, block_of, used, lo + 1);
      used[j] = 0;
    }
    used[lo] = 0;
    return acc;
  }

  /// acc (single Wick blocks) times :block: via the product formula
  /// :A: :B: = sum over partial cross matchings, contractions out front.
  WickPolynomial merge_block(const WickPolynomial& acc, const WickBlock& block) const {
    static const std::vector<Factor> kEmpty;
    WickPolynomial out;
    for (const auto& t : acc.terms()) {
      const auto& a = t.blocks.empty() ? kEmpty : t.blocks[0].factors;
      const auto& b = block.factors;
      std::vector<int> match(a.size(), -1);
      std::vector<char> used_b(b.size(), 0);
      merge_rec(t.coeff, a, b, match, used_b, 0, out);
    }
    return out;
  }

  void merge_rec(Complex coeff, const std::vector<Factor>& a, const std::vector<Factor>& b,
                 std::vector<int>& match, std::vector<char>& used_b, size_t i,
                 WickPolynomial& out) const {
    if (i == a.size()) {
      std::vector<Factor> rest;
      for (size_t k = 0; k < a.size(); ++k)
        if (match[k] < 0) rest.push_back(a[k]);
      for (size_t k = 0; k < b.size(); ++k)
        if (!used_b[k]) rest.push_back(b[k]);
      out += WickPolynomial::wick_monomial(coeff, std::move(rest));
      return;
    }
    // a[i] stays unmatched
    merge_rec(coeff, a, b, match, used_b, i + 1, out);
    // or contracts against an unused b factor
    for (size_t k = 0; k < b.size(); ++k) {
      if (used_b[k]) continue;
      double pair = pairing(a[i], b[k]);
      if (pair == 0.0) continue;
      match[i] = static_cast<int>(k);
      used_b[k] = 1;
      merge_rec(coeff * pair, a, b, match, used_b, i + 1, out);
      match[i] = -1;
      used_b[k] = 0;
    }
  }

  /// :phi(f_1)...phi(f_k): = sum over partial self matchings m of
  /// prod_{(a,b) in m} (-C_ab) * prod_unmatched phi, as ordinary
  /// monomials.
  WickPolynomial expand_block(const WickBlock& block) const {
    WickPolynomial out;
    std::vector<char> paired(block.factors.size(), 0);
    std::vector<Factor> kept;
    expand_rec({1.0, 0.0}, block.factors, paired, kept, 0, out);
    return out;
  }

  void expand_rec(Complex coeff, const std::vector<Factor>& f, std::vector<char>& paired,
                  std::vector<Factor>& kept, size_t pos, WickPolynomial& out) const {
    while (pos < f.size() && paired[pos]) ++pos;
    if (pos == f.size()) {
      out += WickPolynomial::monomial(coeff, kept);
      return;
    }
    paired[pos] = 1;
    // f[pos] survives unmatched
    kept.push_back(f[pos]);
    expand_rec(coeff, f, paired, kept, pos + 1, out);
    kept.pop_back();
    // or contracts against a later factor
    for (size_t j = pos + 1; j < f.size(); ++j) {
      if (paired[j]) continue;
      paired[j] = 1;
      expand_rec(coeff * (-pairing(f[pos], f[j])), f, paired, kept, pos + 1, out);
      paired[j] = 0;
    }
    paired[pos] = 0;
  }

  const GaussianFieldModel* model_;
  PairingFn pairing_override_;
  mutable std::unordered_map<long, Vector> cov_cache_;
  mutable std::unordered_map<long, double> pair_cache_;
};

}  // namespace spherefield
