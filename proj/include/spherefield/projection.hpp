#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "spherefield/fem.hpp"

namespace spherefield {

/// H^{-1}-orthogonal projection e_A onto span{delta_x : x in A} for a
/// Gaussian field model. Applying it costs one sparse solve plus a
/// small dense solve against the Gram of the deltas (= Sigma_AA).
class RegionProjector {
 public:
  RegionProjector(const GaussianFieldModel& model, NodeRegion region)
      : model_(&model), region_(std::move(region)) {
    if (region_.indices.empty()) throw std::invalid_argument("RegionProjector: empty region");
    const int n = model.size();
    in_region_.assign(n, 0);
    for (int v : region_.indices) in_region_[v] = 1;
    for (int v = 0; v < n; ++v)
      if (!in_region_[v]) complement_.push_back(v);
    if (complement_.empty()) return;  // e_A is the identity

    // The projection coefficients are Sigma_AA^{-1} (Q^{-1} M f)_A =
    // (Mf)_A - Q_AB Q_BB^{-1} (Mf)_B, so only the complement block of
    // the precision needs factoring.
    const int m = static_cast<int>(complement_.size());
    std::vector<int> pos(n, -1);
    for (int j = 0; j < m; ++j) pos[complement_[j]] = j;
    std::vector<Eigen::Triplet<double>> trips;
    const SparseMat& Q = model.precision();
    for (int k = 0; k < Q.outerSize(); ++k)
      for (SparseMat::InnerIterator it(Q, k); it; ++it) {
        int r = pos[it.row()], c = pos[it.col()];
        if (r >= 0 && c >= 0) trips.emplace_back(r, c, it.value());
      }
    SparseMat QBB(m, m);
    QBB.setFromTriplets(trips.begin(), trips.end());
    solver_ = std::make_shared<Eigen::SimplicialLDLT<SparseMat>>();
    solver_->compute(QBB);
    if (solver_->info() != Eigen::Success || (solver_->vectorD().array() <= 0.0).any())
      throw std::runtime_error("RegionProjector: complement block not SPD");
  }

  const NodeRegion& region() const { return region_; }

  /// e_A f.
  Vector apply(const Vector& f) const {
    const auto& M = model_->lumped_mass();
    Vector b = (M.array() * f.array()).matrix();
    if (complement_.empty()) return f;
    const int m = static_cast<int>(complement_.size());
    Vector bB(m);
    for (int j = 0; j < m; ++j) bB[j] = b[complement_[j]];
    Vector y = solver_->solve(bB);
    Vector ypad = Vector::Zero(model_->size());
    for (int j = 0; j < m; ++j) ypad[complement_[j]] = y[j];
    Vector z = model_->precision() * ypad;
    Vector out = Vector::Zero(model_->size());
    for (int idx : region_.indices) out[idx] = (b[idx] - z[idx]) / M[idx];
    return out;
  }

 private:
  const GaussianFieldModel* model_;
  NodeRegion region_;
  std::vector<char> in_region_;
  std::vector<int> complement_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMat>> solver_;
};

struct CrossProjectionReport {
  double op_norm = 0.0;
  double hs_norm = 0.0;
  std::vector<double> singular_values;
};

/// Operator and Hilbert-Schmidt norms of e_{A} e_{B} in H^{-1} for
/// disjoint regions, via the generalized eigenproblem
/// Sigma_AB Sigma_BB^{-1} Sigma_BA x = s Sigma_AA x on the A block.
inline CrossProjectionReport cross_projection_norms(const GaussianFieldModel& model,
                                                    const NodeRegion& A, const NodeRegion& B) {
  for (int v : A.indices)
    if (B.contains(v))
      throw std::invalid_argument("cross_projection_norms: regions overlap");

  auto block_columns = [&](const NodeRegion& R) {
    Matrix rhs = Matrix::Zero(model.size(), R.indices.size());
    for (size_t j = 0; j < R.indices.size(); ++j) rhs(R.indices[j], j) = 1.0;
    return model.solve_dense(rhs).eval();
  };
  Matrix colsA = block_columns(A);
  Matrix colsB = block_columns(B);
  auto rows = [&](const Matrix& cols, const NodeRegion& R) {
    Matrix out(R.indices.size(), cols.cols());
    for (size_t i = 0; i < R.indices.size(); ++i) out.row(i) = cols.row(R.indices[i]);
    return out;
  };
  Matrix SAA = rows(colsA, A);
  Matrix SBB = rows(colsB, B);
  Matrix SAB = rows(colsB, A);
  SAA = 0.5 * (SAA + SAA.transpose());
  SBB = 0.5 * (SBB + SBB.transpose());

  Eigen::LLT<Matrix> lltB(SBB);
  if (lltB.info() != Eigen::Success)
    throw std::runtime_error("cross_projection_norms: B Gram not SPD");
  Matrix K = SAB * lltB.solve(SAB.transpose());
  K = 0.5 * (K + K.transpose());

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(K, SAA);
  if (ges.info() != Eigen::Success)
    throw std::runtime_error("cross_projection_norms: eigensolver failed");

  CrossProjectionReport rep;
  Vector ev = ges.eigenvalues();
  for (int i = ev.size() - 1; i >= 0; --i) {
    double s = std::max(ev[i], 0.0);
    rep.singular_values.push_back(std::sqrt(s));
  }
  rep.op_norm = rep.singular_values.empty() ? 0.0 : rep.singular_values.front();
  double hs2 = 0.0;
  for (double s : rep.singular_values) hs2 += s * s;
  rep.hs_norm = std::sqrt(hs2);
  return rep;
}

struct MuScanReport {
  std::vector<double> mu_values;
  std::vector<double> op_norms;
  double slope = 0.0;  // least-squares slope of log op-norm vs log mu
};

/// Scaling of ||e_A e_B|| with the mass parameter.
template <typename ModelFactory>
MuScanReport mu_scan(ModelFactory&& make_model, const NodeRegion& A, const NodeRegion& B,
                     const std::vector<double>& mus) {
  MuScanReport rep;
  rep.mu_values = mus;
  for (double mu : mus) {
    auto model = make_model(mu);
    rep.op_norms.push_back(cross_projection_norms(model, A, B).op_norm);
  }
  const int n = static_cast<int>(mus.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = std::log(mus[i]);
    double y = std::log(rep.op_norms[i]);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  rep.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return rep;
}

/// Discrete form of the unitarity between (gamma' = lambda gamma, mu)
/// and (gamma, lambda mu): compares f^T M'(L + mu M')^{-1} M' f against
/// (lambda f)^T M (L + M lambda mu)^{-1} M (lambda f) through two
/// independently assembled models.
inline double slam_identity_residual(const GaussianFieldModel& scaled_metric_model,
                                     const GaussianFieldModel& scaled_mass_model,
                                     const Vector& lambda, const Vector& f) {
  double lhs = scaled_metric_model.norm2_minus1(f);
  Vector lf = (lambda.array() * f.array()).matrix();
  double rhs = scaled_mass_model.norm2_minus1(lf);
  return std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300});
}

struct LogKernelReport {
  double residual = 0.0;         // ||M^{-1} L g - f||_0 / ||f||_0
  double pairing_quadrature = 0.0;  // (h, (-Lap)^{-1} f) via double log-kernel sum
  double pairing_spectral = 0.0;    // same via constrained solve
};

/// Solves -Lap g = f through the plane log kernel quadrature and
/// measures the FEM residual; also compares the (h, (-Lap)^{-1} f)
/// pairing against a constrained sparse solve. Inputs must be mean zero
/// (projected if not) and supported away from the pole caps.
inline LogKernelReport log_kernel_inverse_check(const GaussianFieldModel& model, Vector f,
                                                Vector h = Vector()) {
  const auto& mesh = model.mesh();
  const Vector& M = model.lumped_mass();
  const int n = model.size();

  // Project out the mean.
  double total = M.sum();
  f.array() -= (M.array() * f.array()).sum() / total;
  if (h.size() == 0) h = f;
  h.array() -= (M.array() * h.array()).sum() / total;

  // Quadrature of the log kernel with a disc-equivalent self term. The
  // support threshold drops the mean-projection residue, which would
  // otherwise place quadrature atoms at the pole.
  double fmax = f.cwiseAbs().maxCoeff();
  std::vector<int> support;
  for (int i = 0; i < n; ++i)
    if (std::abs(f[i]) > 1e-13 * fmax && !mesh.position(i).is_infinity()) support.push_back(i);
  Vector g = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    SpherePoint pi = mesh.position(i);
    if (pi.is_infinity()) {
      g[i] = 0.0;  // sum_j f_j M_j = 0 kills the leading log term
      continue;
    }
    Complex zi = pi.as_z();
    double acc = 0.0;
    for (int j : support) {
      SpherePoint pj = mesh.position(j);
      Complex zj = pj.as_z();
      double w = f[j] * M[j];
      if (i == j) {
        // Average of -log|z - z'|/(2 pi) over a disc of equal chart area.
        double chart_area = M[j] / model.metric().density(pj);
        double r_eff = std::sqrt(chart_area / M_PI);
        acc += w * (-1.0 / (2.0 * M_PI)) * (std::log(r_eff) - 0.5);
      } else {
        acc += w * (-1.0 / (2.0 * M_PI)) * std::log(std::abs(zi - zj));
      }
    }
    g[i] = acc;
  }

  // FEM residual of -Lap g = f in the L^2 norm.
  Vector lg = model.ops().stiffness * g;
  Vector res = (lg.array() / M.array()).matrix() - f;
  LogKernelReport rep;
  rep.residual = std::sqrt(model.pair_l2(res, res) / model.pair_l2(f, f));

  // Pairing route 1: double quadrature.
  double quad = 0.0;
  for (int i = 0; i < n; ++i)
    if (h[i] != 0.0) quad += h[i] * M[i] * g[i];
  rep.pairing_quadrature = quad;

  // Pairing route 2: solve L u = M f with the mean constrained to zero,
  // using the augmented system [L m; m^T 0].
  {
    SparseMat L = model.ops().stiffness;
    std::vector<Eigen::Triplet<double>> trips;
    for (int k = 0; k < L.outerSize(); ++k)
      for (SparseMat::InnerIterator it(L, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = 0; i < n; ++i) {
      trips.emplace_back(i, n, M[i]);
      trips.emplace_back(n, i, M[i]);
    }
    SparseMat aug(n + 1, n + 1);
    aug.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<SparseMat> lu(aug);
    if (lu.info() != Eigen::Success)
      throw std::runtime_error("log_kernel_inverse_check: augmented solve failed");
    Vector rhs = Vector::Zero(n + 1);
    rhs.head(n) = (M.array() * f.array()).matrix();
    Vector sol = lu.solve(rhs);
    rep.pairing_spectral = (h.array() * M.array() * sol.head(n).array()).sum();
  }
  return rep;
}

}  // namespace spherefield
