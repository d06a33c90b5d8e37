#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <vector>

#include "spherefield/mesh.hpp"
#include "spherefield/metric.hpp"

namespace spherefield {

using SparseMat = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Discrete Laplace-Beltrami building blocks on a sphere mesh: the
/// cotangent stiffness matrix (metric independent, by conformal
/// invariance of the Dirichlet form in 2d) and the metric-weighted
/// lumped mass diagonal.
struct FemOperators {
  SparseMat stiffness;        // L >= 0, L 1 = 0
  Vector lumped_mass;         // M_ii > 0, sum ~ total gamma-measure
  double negative_cot_fraction = 0.0;

  double total_mass() const { return lumped_mass.sum(); }
};

/// Cotangent stiffness + lumped mass for a metric on a mesh. Each
/// triangle is measured in its own chart; the stiffness never sees the
/// density.
inline FemOperators assemble(const ConformalMetric& metric, const SphereMesh& mesh) {
  const int nv = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.triangles().size() * 12);
  Vector mass = Vector::Zero(nv);
  long neg = 0, tot = 0;

  for (size_t ti = 0; ti < mesh.triangles().size(); ++ti) {
    const auto& tri = mesh.triangles()[ti];
    auto xy = mesh.tri_coords(ti);
    double l2[3];  // squared length of the edge opposite each corner
    for (int i = 0; i < 3; ++i) l2[i] = std::norm(xy[(i + 1) % 3] - xy[(i + 2) % 3]);
    double a16 = 2.0 * (l2[0] * l2[1] + l2[1] * l2[2] + l2[2] * l2[0]) -
                 l2[0] * l2[0] - l2[1] * l2[1] - l2[2] * l2[2];
    if (a16 <= 0.0) throw std::runtime_error("assemble: degenerate triangle");
    double area = 0.25 * std::sqrt(a16);
    double scale2 = l2[0] + l2[1] + l2[2];
    if (area <= 1e-12 * scale2) throw std::runtime_error("assemble: near-degenerate triangle");

    for (int i = 0; i < 3; ++i) {
      double cot = (l2[(i + 1) % 3] + l2[(i + 2) % 3] - l2[i]) / (4.0 * area);
      ++tot;
      if (cot < 0.0) ++neg;
      double w = 0.5 * cot;
      int a = tri[(i + 1) % 3], b = tri[(i + 2) % 3];
      trips.emplace_back(a, b, -w);
      trips.emplace_back(b, a, -w);
      trips.emplace_back(a, a, w);
      trips.emplace_back(b, b, w);
    }
    for (int i = 0; i < 3; ++i)
      mass[tri[i]] += (area / 3.0) * mesh.chart_density(metric, tri[i], ti);
  }

  FemOperators ops;
  ops.stiffness.resize(nv, nv);
  ops.stiffness.setFromTriplets(trips.begin(), trips.end());
  ops.stiffness.makeCompressed();
  ops.lumped_mass = std::move(mass);
  ops.negative_cot_fraction = static_cast<double>(neg) / static_cast<double>(tot);
  for (int i = 0; i < nv; ++i)
    if (!(ops.lumped_mass[i] > 0.0)) throw std::runtime_error("assemble: nonpositive mass entry");
  return ops;
}

/// Gaussian field with precision Q = L + diag(M_ii mass_i) on a mesh
/// (or on raw matrices for toy models). The pairing convention is
/// phi(f) = f^T M phi with phi ~ N(0, Q^{-1}), so
/// Var phi(f) = f^T M Q^{-1} M f reproduces (f, (-Lap + mu)^{-1} f).
/// Immutable after construction; the dense covariance is cached lazily.
class GaussianFieldModel {
 public:
  GaussianFieldModel(GaussianFieldModel&&) = default;
  GaussianFieldModel& operator=(GaussianFieldModel&&) = default;

  GaussianFieldModel(std::shared_ptr<const SphereMesh> mesh, const ConformalMetric& metric,
                     double mu)
      : GaussianFieldModel(std::move(mesh), metric,
                           Vector::Constant(0, 0.0).eval(), mu) {}

  /// Nodewise mass: mass(v) = mu * lambda(v). An empty vector means
  /// constant mass mu.
  GaussianFieldModel(std::shared_ptr<const SphereMesh> mesh, const ConformalMetric& metric,
                     const Vector& nodewise_mass, double mu)
      : mesh_(std::move(mesh)), metric_(metric) {
    ops_ = assemble(metric, *mesh_);
    const int nv = mesh_->vertex_count();
    mass_ = nodewise_mass.size() == 0 ? Vector::Constant(nv, mu) : nodewise_mass;
    if (mass_.size() != nv) throw std::invalid_argument("model: mass vector size mismatch");
    init();
  }

  /// Toy models from explicit matrices.
  static GaussianFieldModel from_matrices(SparseMat L, Vector lumped_mass, Vector mass) {
    return GaussianFieldModel(std::move(L), std::move(lumped_mass), std::move(mass));
  }

  /// Same mesh and stiffness, lumped mass rescaled nodewise by lambda:
  /// the discrete model of the metric lambda * gamma.
  static GaussianFieldModel rescaled(const GaussianFieldModel& base, const Vector& lambda,
                                     const Vector& mass) {
    GaussianFieldModel m(base.ops_.stiffness,
                         (base.ops_.lumped_mass.array() * lambda.array()).matrix(), mass);
    m.mesh_ = base.mesh_;
    m.metric_ = base.metric_;
    return m;
  }

  const SphereMesh& mesh() const {
    if (!mesh_) throw std::logic_error("model: no mesh attached");
    return *mesh_;
  }
  std::shared_ptr<const SphereMesh> mesh_ptr() const { return mesh_; }
  const ConformalMetric& metric() const { return metric_; }
  const FemOperators& ops() const { return ops_; }
  const SparseMat& precision() const { return Q_; }
  const Vector& lumped_mass() const { return ops_.lumped_mass; }
  const Vector& mass() const { return mass_; }
  int size() const { return static_cast<int>(mass_.size()); }

  Vector solve(const Vector& rhs) const {
    Vector x = solver_->solve(rhs);
    if (solver_->info() != Eigen::Success) throw std::runtime_error("model: solve failed");
    return x;
  }
  Matrix solve_dense(const Matrix& rhs) const { return solver_->solve(rhs); }

  /// C f as a nodal function: (L + M_mass)^{-1} M f.
  Vector apply_covariance(const Vector& f) const {
    return solve(Vector((ops_.lumped_mass.array() * f.array()).matrix()));
  }

  /// (f, C g)_gamma = f^T M Q^{-1} M g; the H^{-1} inner product.
  double pair_minus1(const Vector& f, const Vector& g) const {
    Vector mg = (ops_.lumped_mass.array() * g.array()).matrix();
    Vector x = solve(mg);
    return f.dot((ops_.lumped_mass.array() * x.array()).matrix());
  }

  double norm2_minus1(const Vector& f) const { return pair_minus1(f, f); }

  /// (f, g)_gamma = f^T M g.
  double pair_l2(const Vector& f, const Vector& g) const {
    return f.dot((ops_.lumped_mass.array() * g.array()).matrix());
  }

  /// ||f||^2_{+1} = f^T (L + M_mass) f.
  double norm2_plus1(const Vector& f) const { return f.dot(Q_ * f); }

  double sobolev_norm2(const Vector& f, int s) const {
    switch (s) {
      case -1: return norm2_minus1(f);
      case 0: return pair_l2(f, f);
      case +1: return norm2_plus1(f);
      default: throw std::invalid_argument("sobolev_norm2: only s in {-1,0,+1} is realized");
    }
  }

  /// Dense nodal covariance Q^{-1} (cached; intended for desk-scale
  /// meshes).
  const Matrix& covariance_dense() const {
    std::call_once(*sigma_once_, [this]() {
      const int n = size();
      if (n > 6000) throw std::runtime_error("covariance_dense: model too large, use solves");
      sigma_ = solve_dense(Matrix::Identity(n, n));
    });
    return sigma_;
  }

  /// Sample phi ~ N(0, Q^{-1}) using the sparse Cholesky factor.
  Vector sample(std::mt19937_64& rng) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector z(size());
    for (int i = 0; i < size(); ++i) z[i] = gauss(rng);
    // P Q P^T = L D L^T  =>  phi = P^T L^{-T} D^{-1/2} z.
    Vector y = (z.array() / llt_vectorD_.array().sqrt()).matrix();
    y = llt_matrixU_.template triangularView<Eigen::Upper>().solve(y);
    return llt_perm_.transpose() * y;
  }

 private:
  GaussianFieldModel(SparseMat L, Vector lumped_mass, Vector mass)
      : metric_(ConformalMetric::flat()) {
    ops_.stiffness = std::move(L);
    ops_.lumped_mass = std::move(lumped_mass);
    mass_ = std::move(mass);
    init();
  }

  void init() {
    const int n = static_cast<int>(mass_.size());
    SparseMat massterm(n, n);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(n);
    for (int i = 0; i < n; ++i)
      trips.emplace_back(i, i, ops_.lumped_mass[i] * mass_[i]);
    massterm.setFromTriplets(trips.begin(), trips.end());
    Q_ = ops_.stiffness + massterm;
    Q_.makeCompressed();
    solver_ = std::make_unique<Eigen::SimplicialLDLT<SparseMat>>();
    solver_->compute(Q_);
    if (solver_->info() != Eigen::Success)
      throw std::runtime_error("model: precision factorization failed (indefinite?)");
    if ((solver_->vectorD().array() <= 0.0).any())
      throw std::runtime_error("model: precision not positive definite");
    llt_vectorD_ = solver_->vectorD();
    llt_matrixU_ = solver_->matrixU();
    llt_perm_ = solver_->permutationP();
  }

  std::shared_ptr<const SphereMesh> mesh_;
  ConformalMetric metric_;
  FemOperators ops_;
  Vector mass_;
  SparseMat Q_;
  std::unique_ptr<Eigen::SimplicialLDLT<SparseMat>> solver_;
  Vector llt_vectorD_;
  SparseMat llt_matrixU_;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> llt_perm_;

  mutable std::unique_ptr<std::once_flag> sigma_once_ = std::make_unique<std::once_flag>();
  mutable Matrix sigma_;
};

/// Smallest generalized eigenvalues of (L, M) above the constant mode,
/// by blocked inverse iteration with Rayleigh-Ritz extraction.
inline std::vector<double> low_spectrum(const GaussianFieldModel& model, int count,
                                        int iterations = 80) {
  const auto& L = model.ops().stiffness;
  const Vector& M = model.lumped_mass();
  const int n = model.size();
  const int block = count + 4;

  SparseMat K = L;
  SparseMat massterm(n, n);
  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < n; ++i) trips.emplace_back(i, i, M[i]);
  massterm.setFromTriplets(trips.begin(), trips.end());
  K = K + massterm;  // shift by +1 to make it SPD
  Eigen::SimplicialLDLT<SparseMat> solver(K);
  if (solver.info() != Eigen::Success) throw std::runtime_error("low_spectrum: factorization failed");

  std::mt19937_64 rng(12345);
  std::normal_distribution<double> gauss;
  Matrix X(n, block);
  for (int j = 0; j < block; ++j)
    for (int i = 0; i < n; ++i) X(i, j) = gauss(rng);

  Vector ones = Vector::Ones(n);
  double m_total = M.sum();
  auto deflate = [&](Matrix& Y) {
    for (int j = 0; j < Y.cols(); ++j) {
      double c = (M.array() * Y.col(j).array()).sum() / m_total;
      Y.col(j) -= c * ones;
    }
  };

  for (int it = 0; it < iterations; ++it) {
    Matrix B = M.asDiagonal() * X;
    X = solver.solve(B);
    deflate(X);
    // M-orthonormalize via QR in the M inner product (Gram based).
    Matrix G = X.transpose() * (M.asDiagonal() * X);
    Eigen::LLT<Matrix> llt(G);
    if (llt.info() != Eigen::Success) {
      // Restart directions that collapsed.
      for (int j = 0; j < block; ++j)
        for (int i = 0; i < n; ++i) X(i, j) += 1e-8 * gauss(rng);
      continue;
    }
    X = llt.matrixL().solve(X.transpose()).transpose();
  }
  Matrix A = X.transpose() * (L * X);
  Matrix B = X.transpose() * (M.asDiagonal() * X);
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(A, B);
  std::vector<double> ev(ges.eigenvalues().data(), ges.eigenvalues().data() + block);
  std::sort(ev.begin(), ev.end());
  ev.resize(count);
  return ev;
}

}  // namespace spherefield
