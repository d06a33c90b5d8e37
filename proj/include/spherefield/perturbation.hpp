#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "spherefield/gaussian.hpp"
#include "spherefield/polynomial.hpp"

namespace spherefield {

/// The multiplication form v(f, f') = integral f f' g dmu_gamma on a
/// model, i.e. the matrix G = M diag(g); vC = diag(g) Q^{-1} M on H^{-1}.
class QuadraticForm {
 public:
  QuadraticForm(const GaussianFieldModel& model, Vector g)
      : model_(&model), g_(std::move(g)) {
    if (g_.size() != model.size()) throw std::invalid_argument("QuadraticForm: size mismatch");
    G_ = (model.lumped_mass().array() * g_.array()).matrix();
    for (int i = 0; i < g_.size(); ++i)
      if (g_[i] != 0.0) support_.push_back(i);
  }

  const Vector& g() const { return g_; }
  const Vector& form_diagonal() const { return G_; }  // G = M diag(g)
  const std::vector<int>& support() const { return support_; }
  const GaussianFieldModel& model() const { return *model_; }

  /// V = 1/2 :phi^2:(g) as a Wick polynomial over node deltas.
  WickPolynomial wick_square() const {
    WickPolynomial v;
    for (int i : support_) {
      Vector delta = Vector::Zero(model_->size());
      delta[i] = 1.0 / model_->lumped_mass()[i];
      v += WickPolynomial::wick_monomial({0.5 * G_[i], 0.0},
                                         {Factor::make(delta), Factor::make(delta)});
    }
    return v;
  }

  /// Eigenvalues of vC on H^{-1}: the pencil M diag(g) x = lambda Q x.
  Vector vc_eigenvalues() const {
    const int n = model_->size();
    if (n > 4000)
      throw std::runtime_error("vc_eigenvalues: dense eigensolve too large");
    Matrix A = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) A(i, i) = G_[i];
    Matrix Q = Matrix(model_->precision());
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(A, Q);
    if (ges.info() != Eigen::Success)
      throw std::runtime_error("vc_eigenvalues: eigensolver failed");
    return ges.eigenvalues();
  }

  /// ||vC||_HS^2 = sum_{ij} (gM)_i (gM)_j Sigma_ij^2, via covariance
  /// columns on the support.
  double hs_norm2() const {
    const int k = static_cast<int>(support_.size());
    if (k == 0) return 0.0;
    Matrix rhs = Matrix::Zero(model_->size(), k);
    for (int j = 0; j < k; ++j) rhs(support_[j], j) = 1.0;
    Matrix cols = model_->solve_dense(rhs);
    double acc = 0.0;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        double s = cols(support_[a], b);
        acc += G_[support_[a]] * G_[support_[b]] * s * s;
      }
    return acc;
  }

  /// tr(Sigma G) = sum_i G_ii Sigma_ii over the support.
  double trace_sigma_g() const {
    const int k = static_cast<int>(support_.size());
    if (k == 0) return 0.0;
    Matrix rhs = Matrix::Zero(model_->size(), k);
    for (int j = 0; j < k; ++j) rhs(support_[j], j) = 1.0;
    Matrix cols = model_->solve_dense(rhs);
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += G_[support_[j]] * cols(support_[j], j);
    return acc;
  }

 private:
  const GaussianFieldModel* model_;
  Vector g_;
  Vector G_;
  std::vector<int> support_;
};

struct WickSquareL2Report {
  double l2_norm2_wick = 0.0;  // ||V||_2^2 by Wick pairing
  double half_hs_norm2 = 0.0;  // 1/2 ||vC||_HS^2 by the matrix route
  double residual = 0.0;
};

/// Two independent computations of ||V||_2^2 for V = 1/2 :phi^2:(g).
inline WickSquareL2Report wick_square_l2(const GaussianFieldModel& model, const Vector& g) {
  QuadraticForm form(model, g);
  MomentEngine engine(model);
  WickPolynomial v = form.wick_square();
  WickSquareL2Report rep;
  rep.l2_norm2_wick = std::real(engine.moment(v * v));
  rep.half_hs_norm2 = 0.5 * form.hs_norm2();
  double scale = std::max({rep.l2_norm2_wick, rep.half_hs_norm2, 1e-300});
  rep.residual = std::abs(rep.l2_norm2_wick - rep.half_hs_norm2) / scale;
  return rep;
}

/// ||E_A V - V||_2 / ||V||_2 for supp g inside A; exact by locality.
inline double locality_residual(const GaussianFieldModel& model, const Vector& g,
                                const NodeRegion& region, bool enforce_support = true) {
  QuadraticForm form(model, g);
  if (enforce_support) {
    for (int i : form.support())
      if (!region.contains(i))
        throw std::invalid_argument("locality_residual: g support leaves the region");
  }
  MomentEngine engine(model);
  RegionProjector proj(model, region);
  WickPolynomial v = form.wick_square();
  WickPolynomial diff = gamma_difference(
      v, [&proj](const Vector& f) { return proj.apply(f); },
      [](const Vector& f) { return f; });
  double denom = std::sqrt(std::max(engine.norm2(v), 1e-300));
  return std::sqrt(std::max(0.0, engine.norm2(diff))) / denom;
}

struct Det2Report {
  double log_det2 = 0.0;          // log det_2(1 + vC), eigenvalue route
  double log_integral = 0.0;      // log int e^{-V} dm, determinant route
  double det2 = 0.0;
  double integral = 0.0;
  double identity_residual = 0.0; // between log_integral and -log_det2/2
  double positivity_margin = 0.0; // 1 + min eigenvalue of vC
};

namespace detail {

inline double logdet_ldlt(const SparseMat& A) {
  Eigen::SimplicialLDLT<SparseMat> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw std::runtime_error("logdet: factorization failed");
  Vector d = ldlt.vectorD();
  if ((d.array() <= 0.0).any()) throw std::runtime_error("logdet: matrix not positive definite");
  return d.array().log().sum();
}

}  // namespace detail

/// det_2(1 + vC) against the Gaussian integral of e^{-V}, computed by
/// two routes: the vC eigenvalues, and a ratio of determinants with the
/// trace correction.
inline Det2Report det2_partition(const GaussianFieldModel& model, const Vector& g) {
  QuadraticForm form(model, g);
  Det2Report rep;

  Vector lam = form.vc_eigenvalues();
  rep.positivity_margin = 1.0 + lam.minCoeff();
  if (!(rep.positivity_margin > 0.0))
    throw std::runtime_error("det2_partition: positivity violated, e^{-V} not integrable");
  double acc = 0.0;
  for (int i = 0; i < lam.size(); ++i) acc += std::log1p(lam[i]) - lam[i];
  rep.log_det2 = acc;

  SparseMat G(model.size(), model.size());
  std::vector<Eigen::Triplet<double>> trips;
  for (int i : form.support()) trips.emplace_back(i, i, form.form_diagonal()[i]);
  G.setFromTriplets(trips.begin(), trips.end());
  SparseMat pert = model.precision() + G;
  double logdet_ratio = detail::logdet_ldlt(pert) - detail::logdet_ldlt(model.precision());
  rep.log_integral = 0.5 * form.trace_sigma_g() - 0.5 * logdet_ratio;

  rep.det2 = std::exp(rep.log_det2);
  rep.integral = std::exp(rep.log_integral);
  rep.identity_residual =
      std::abs(rep.log_integral + 0.5 * rep.log_det2) / std::max(1.0, std::abs(rep.log_det2));
  return rep;
}

struct PerturbedCovarianceReport {
  double max_residual = 0.0;
};

/// Characteristic functional of the normalized perturbed measure:
/// exp(-1/2 (h, (1+vC)^{-1} h)_{-1}) computed through (Q+G)^{-1} and
/// through a dense (1+vC) solve in H^{-1} coordinates.
inline PerturbedCovarianceReport perturbed_covariance_check(const GaussianFieldModel& model,
                                                            const Vector& g,
                                                            const std::vector<Vector>& hs) {
  QuadraticForm form(model, g);
  const int n = model.size();
  SparseMat G(n, n);
  std::vector<Eigen::Triplet<double>> trips;
  for (int i : form.support()) trips.emplace_back(i, i, form.form_diagonal()[i]);
  G.setFromTriplets(trips.begin(), trips.end());
  SparseMat pert = model.precision() + G;
  Eigen::SimplicialLDLT<SparseMat> solver(pert);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("perturbed_covariance_check: Q+G not SPD");

  // Dense route through (1 + vC) on H^{-1}.
  Matrix K = model.covariance_dense();  // Q^{-1}
  Matrix one_vc = Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i)
    one_vc.row(i) += form.g()[i] * (K.row(i).array() * model.lumped_mass().transpose().array()).matrix();
  Eigen::PartialPivLU<Matrix> lu(one_vc);

  PerturbedCovarianceReport rep;
  for (const auto& h : hs) {
    Vector mh = (model.lumped_mass().array() * h.array()).matrix();
    double route1 = mh.dot(solver.solve(mh));
    Vector x = lu.solve(h);
    Vector mx = (model.lumped_mass().array() * x.array()).matrix();
    double route2 = mh.dot(model.solve(mx));
    double res = std::abs(route1 - route2) / std::max({std::abs(route1), std::abs(route2), 1e-300});
    rep.max_residual = std::max(rep.max_residual, res);
  }
  return rep;
}

struct MassChangeReport {
  double moment_residual = 0.0;   // reweighted vs direct second moments
  double q_threshold = 0.0;       // largest admissible q (capped)
  double predicted_threshold = 0.0;  // 1/(1 - inf lambda), infinity if >= 1
  double locality = 0.0;          // E_A density-exponent residual
  WickPolynomial exponent;        // -1/2 :phi^2:((lambda-1) mu) up to sign
};

/// Is L + M_mu + q G positive definite?
inline bool mass_change_q_admissible(const GaussianFieldModel& model, const Vector& g, double q) {
  const int n = model.size();
  SparseMat G(n, n);
  std::vector<Eigen::Triplet<double>> trips;
  Vector Gd = (model.lumped_mass().array() * g.array()).matrix();
  for (int i = 0; i < n; ++i)
    if (Gd[i] != 0.0) trips.emplace_back(i, i, q * Gd[i]);
  G.setFromTriplets(trips.begin(), trips.end());
  SparseMat A = model.precision() + G;
  Eigen::SimplicialLDLT<SparseMat> ldlt(A);
  return ldlt.info() == Eigen::Success && !(ldlt.vectorD().array() <= 0.0).any();
}

/// Radon-Nikodym change from mass mu to nodewise mass lambda*mu:
/// reweighting by exp(-1/2 :phi^2:((lambda-1)mu)). Verifies the
/// reweighted second moments against the direct lambda*mu model and
/// scans the L^q integrability threshold.
inline MassChangeReport rn_mass_change(const GaussianFieldModel& model, const Vector& lambda,
                                       const std::vector<Vector>& test_fs, double q_cap = 10.0,
                                       const NodeRegion* support_region = nullptr) {
  if ((lambda.array() <= 0.0).any())
    throw std::invalid_argument("rn_mass_change: lambda must be positive");
  MassChangeReport rep;
  Vector g = ((lambda.array() - 1.0) * model.mass().array()).matrix();
  QuadraticForm form(model, g);
  rep.exponent = (-1.0) * form.wick_square();  // -1/2 :phi^2:((lambda-1) mu)

  // Part 2: reweighted covariance equals the lambda*mu model.
  const int n = model.size();
  SparseMat G(n, n);
  std::vector<Eigen::Triplet<double>> trips;
  for (int i : form.support()) trips.emplace_back(i, i, form.form_diagonal()[i]);
  G.setFromTriplets(trips.begin(), trips.end());
  SparseMat pert = model.precision() + G;
  Eigen::SimplicialLDLT<SparseMat> solver(pert);
  if (solver.info() != Eigen::Success) throw std::runtime_error("rn_mass_change: Q+G not SPD");

  GaussianFieldModel direct = GaussianFieldModel::rescaled(
      model, Vector::Ones(n), (lambda.array() * model.mass().array()).matrix());
  for (const auto& f : test_fs) {
    Vector mf = (model.lumped_mass().array() * f.array()).matrix();
    double reweighted = mf.dot(solver.solve(mf));
    double straight = direct.norm2_minus1(f);
    double res = std::abs(reweighted - straight) /
                 std::max({std::abs(reweighted), std::abs(straight), 1e-300});
    rep.moment_residual = std::max(rep.moment_residual, res);
  }

  // Part 3: q threshold by bisection on the positivity criterion.
  double delta = lambda.minCoeff();
  rep.predicted_threshold =
      delta >= 1.0 ? std::numeric_limits<double>::infinity() : 1.0 / (1.0 - delta);
  if (mass_change_q_admissible(model, g, q_cap)) {
    rep.q_threshold = q_cap;
  } else {
    double lo = 0.0, hi = q_cap;
    while (hi - lo > 1e-3) {
      double mid = 0.5 * (lo + hi);
      (mass_change_q_admissible(model, g, mid) ? lo : hi) = mid;
    }
    rep.q_threshold = 0.5 * (lo + hi);
  }

  // Part 4: the density exponent is measurable on the support region.
  if (support_region && !form.support().empty())
    rep.locality = locality_residual(model, g, *support_region);
  return rep;
}

/// max over the family of || E^{gamma', mu}_{sep} Phi(F) -
/// E^{gamma, mu}_{sep} Phi(F) ||_2 with gamma' = lambda gamma and
/// lambda = 1 on the region the family lives in.
inline double conditional_metric_independence(const GaussianFieldModel& model,
                                              const Vector& lambda, const NodeRegion& omega_bar,
                                              const NodeRegion& separator,
                                              const std::vector<WickPolynomial>& family) {
  for (int v : omega_bar.indices)
    if (std::abs(lambda[v] - 1.0) > 0.0)
      throw std::invalid_argument("conditional_metric_independence: lambda != 1 on the region");
  GaussianFieldModel scaled =
      GaussianFieldModel::rescaled(model, lambda, model.mass());

  MomentEngine base_engine(model);
  MomentEngine scaled_engine(scaled);
  RegionProjector sep_base(model, separator);
  RegionProjector sep_scaled(scaled, separator);

  double worst = 0.0;
  for (const auto& p : family) {
    // Phi(F) is the ordinary-product functional: expand first (Wick
    // ordering is covariance dependent), then take the telescoped
    // difference of the two models' conditional expectations.
    WickPolynomial ordinary = base_engine.from_wick(p);
    WickPolynomial diff = conditional_expectation_difference(scaled_engine, sep_scaled,
                                                             base_engine, sep_base, ordinary);
    double err = std::sqrt(std::max(0.0, base_engine.norm2(diff)));
    double scale = std::sqrt(std::max(base_engine.norm2(ordinary), 1e-300));
    worst = std::max(worst, err / scale);
  }
  return worst;
}

/// Z_{gamma, mu} for gamma = lambda gamma0: the partition integral of
/// the mass-change exponent over the gamma0 model.
struct SewingConstant {
  double log_value = 0.0;
  double value = 1.0;
};

inline SewingConstant sewing_constant(const GaussianFieldModel& gamma0_model,
                                      const Vector& lambda) {
  Vector g = ((lambda.array() - 1.0) * gamma0_model.mass().array()).matrix();
  QuadraticForm form(gamma0_model, g);
  SparseMat G(gamma0_model.size(), gamma0_model.size());
  std::vector<Eigen::Triplet<double>> trips;
  for (int i : form.support()) trips.emplace_back(i, i, form.form_diagonal()[i]);
  G.setFromTriplets(trips.begin(), trips.end());
  SparseMat pert = gamma0_model.precision() + G;
  SewingConstant z;
  z.log_value = 0.5 * form.trace_sigma_g() -
                0.5 * (detail::logdet_ldlt(pert) - detail::logdet_ldlt(gamma0_model.precision()));
  z.value = std::exp(z.log_value);
  return z;
}

/// Unnormalized reweighted expectations < P e^{-1/2 :phi^2:(g)} > over
/// a base model: the engine expands P to ordinary monomials with the
/// base covariance and evaluates them under the perturbed one.
class ReweightedMoments {
 public:
  ReweightedMoments(const GaussianFieldModel& model, const Vector& g)
      : model_(&model), form_(model, g), base_(model) {
    const int n = model.size();
    SparseMat G(n, n);
    std::vector<Eigen::Triplet<double>> trips;
    for (int i : form_.support()) trips.emplace_back(i, i, form_.form_diagonal()[i]);
    G.setFromTriplets(trips.begin(), trips.end());
    pert_ = model.precision() + G;
    solver_ = std::make_shared<Eigen::SimplicialLDLT<SparseMat>>();
    solver_->compute(pert_);
    if (solver_->info() != Eigen::Success || (solver_->vectorD().array() <= 0.0).any())
      throw std::runtime_error("ReweightedMoments: perturbed precision not SPD");
    log_norm_ = 0.5 * form_.trace_sigma_g() -
                0.5 * (solver_->vectorD().array().log().sum() -
                       detail::logdet_ldlt(model.precision()));
    auto cache = std::make_shared<std::unordered_map<long, Vector>>();
    auto solver = solver_;
    const Vector& M = model.lumped_mass();
    pert_engine_ = std::make_shared<MomentEngine>(
        model, [cache, solver, &M](const Factor& a, const Factor& b) {
          auto it = cache->find(b.id);
          if (it == cache->end()) {
            Vector u = solver->solve((M.array() * b.vec().array()).matrix());
            it = cache->emplace(b.id, std::move(u)).first;
          }
          return (a.vec().array() * M.array() * it->second.array()).sum();
        });
  }

  double log_normalization() const { return log_norm_; }

  /// < P e^{-V} > (not normalized).
  Complex expectation(const WickPolynomial& p) const {
    WickPolynomial ordinary = base_.from_wick(p);
    return std::exp(log_norm_) * pert_engine_->moment(ordinary);
  }

 private:
  const GaussianFieldModel* model_;
  QuadraticForm form_;
  MomentEngine base_;
  SparseMat pert_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMat>> solver_;
  std::shared_ptr<MomentEngine> pert_engine_;
  double log_norm_ = 0.0;
};

}  // namespace spherefield
