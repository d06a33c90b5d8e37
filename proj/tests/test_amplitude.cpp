#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <random>

#include "spherefield/amplitude.hpp"

using namespace spherefield;

namespace {

std::shared_ptr<const SphereMesh> shared_mesh(int res, double d) {
  return std::make_shared<SphereMesh>(res, d);
}

}  // namespace

TEST_CASE("blended metric pins the per-disc metrics") {
  const double d = 0.25, mu = 2.0;
  auto mesh = shared_mesh(20, d);

  SECTION("unit discs reproduce the standard metric") {
    auto cfg = blend_metric(mesh, d, mu, {DiscSpec::unit_in()}, {DiscSpec::unit_out()});
    CHECK((cfg.lambda.array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(cfg.max_pinning_deviation < 1e-12);
  }

  SECTION("two small discs keep lambda_i = 1 on the enlargements") {
    auto cfg = blend_metric(
        mesh, 0.1, mu,
        {DiscSpec::interior({-0.35, 0.0}, 0.16, DiscSpec::Orientation::In),
         DiscSpec::interior({0.35, 0.1}, 0.16, DiscSpec::Orientation::In)},
        {});
    CHECK(cfg.max_pinning_deviation < 1e-12);
    // lambda really is nonconstant in the blend zone.
    CHECK((cfg.lambda.array() - 1.0).abs().maxCoeff() > 1e-3);
  }

  SECTION("reflection-symmetric pair gives an invariant blend") {
    double r = 0.3;
    auto cfg = blend_metric(
        mesh, d, mu,
        {DiscSpec::interior({0.0, 0.0}, r, DiscSpec::Orientation::In)},
        {DiscSpec::exterior({0.0, 0.0}, 1.0 / r, DiscSpec::Orientation::Out)});
    auto rep = check_reflection_invariance(cfg.gamma, reflection_sample_points());
    CHECK(rep.max_error <= 1e-12);
  }

  SECTION("overlapping blend zones are rejected") {
    CHECK_THROWS_AS(
        blend_metric(mesh, 0.3, mu,
                     {DiscSpec::interior({-0.2, 0.0}, 0.2, DiscSpec::Orientation::In),
                      DiscSpec::interior({0.2, 0.0}, 0.2, DiscSpec::Orientation::In)},
                     {}),
        std::invalid_argument);
  }
}

TEST_CASE("expectation of transported arguments") {
  const double d = 0.25, mu = 3.0;
  auto mesh = shared_mesh(20, d);
  auto cfg = blend_metric(mesh, d, mu,
                          {DiscSpec::interior({0.0, 0.0}, 0.3, DiscSpec::Orientation::In)},
                          {DiscSpec::unit_out()});
  MomentEngine engine(*cfg.model);

  // <1> = 1 so the empty amplitude entry is Z itself.
  auto z = sewing_constant(*cfg.model0, cfg.lambda);
  CHECK(std::abs(engine.moment(WickPolynomial::scalar({1.0, 0.0})) - Complex{1.0, 0.0}) < 1e-14);
  CHECK(z.value > 0.0);

  // Odd arguments vanish.
  DictionaryPolynomial phi{{{Complex{1.0, 0.0}, {TestFunction::bump({0.4, 0.1}, 0.3)}}}};
  auto moved = realize_transported(phi, cfg.in_discs[0], *cfg.model);
  CHECK(std::abs(engine.moment(moved)) < 1e-14);

  // Two discs with degree-1 arguments reduce to the covariance pairing.
  auto moved_out = realize_transported(phi, cfg.out_discs[0], *cfg.model);
  Complex expect = engine.moment(moved * moved_out);
  // Same value from the explicit factor pairing.
  const auto& fin = moved.terms()[0].blocks[0].factors[0];
  const auto& fout = moved_out.terms()[0].blocks[0].factors[0];
  CHECK(std::abs(expect - Complex{engine.pairing(fin, fout), 0.0}) < 1e-12);
}

TEST_CASE("identity configuration gives the identity amplitude") {
  const double d = 0.25, mu = 2.0;
  auto mesh = shared_mesh(24, d);
  auto cfg = blend_metric(mesh, d, mu, {DiscSpec::unit_in()}, {DiscSpec::unit_out()});
  auto basis = build_basis(*cfg.model0, bump_dictionary(2, 3, 0.45, 0.35));
  REQUIRE(basis.dim() >= 5);
  auto tb = transport_basis(cfg, basis);
  auto amp = amplitude_matrix(cfg, basis, tb);
  CHECK(std::abs(amp.z_constant - 1.0) < 1e-10);
  MatrixC eye = MatrixC::Identity(basis.dim(), basis.dim());
  CHECK((amp.matrix - eye).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("amplitude is invariant under twists with the matching basis rotation") {
  const double d = 0.25, mu = 2.0;
  const int res = 24;
  auto mesh = shared_mesh(res, d);
  // Rotation by 2 pi/3 = 8 angular steps permutes the 3-bump dictionary.
  double tau = 2.0 * M_PI / 3.0;

  auto dict = bump_dictionary(2, 3, 0.45, 0.35);
  auto cfg0 = blend_metric(mesh, d, mu, {DiscSpec::unit_in()}, {DiscSpec::unit_out()});
  auto basis = build_basis(*cfg0.model0, dict);
  auto amp0 = amplitude_matrix(cfg0, basis, transport_basis(cfg0, basis));

  auto cfg1 = blend_metric(mesh, d, mu, {DiscSpec::unit_in()},
                           {DiscSpec::exterior({0.0, 0.0}, 1.0, DiscSpec::Orientation::Out, tau)});
  auto amp1 = amplitude_matrix(cfg1, basis, transport_basis(cfg1, basis));

  // Rotation matrix on the quotient basis: R_{k,l} = (Phi_k, nu(rot B_l)).
  MomentEngine engine(*cfg0.model0);
  const auto& mesh_ref = *mesh;
  int steps = static_cast<int>(std::lround(tau / (2.0 * M_PI / res)));
  std::vector<WickPolynomial> realized, rotated;
  for (const auto& p : basis.dictionary) {
    auto r = p.realize(*cfg0.model0);
    realized.push_back(r);
    rotated.push_back(r.map_factors([&](const Vector& f) {
      Vector v(f.size());
      for (int i = 0; i < f.size(); ++i) v[i] = f[mesh_ref.rotate_vertex(i, steps)];
      return v;
    }));
  }
  const int m = static_cast<int>(realized.size());
  MatrixC gram_rot(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      gram_rot(a, b) = engine.moment(theta(mesh_ref, realized[a]) * rotated[b]);
  // Coordinates of nu(rot B_l) against the orthonormal basis.
  const MatrixC& R = basis.hilbert.representatives;
  MatrixC rot_coords = R.adjoint() * gram_rot * R;  // (k, l)
  MatrixC expected = rot_coords.adjoint() * amp0.matrix;
  CHECK((amp1.matrix - expected).cwiseAbs().maxCoeff() < 1e-8 * amp0.matrix.norm());
}

TEST_CASE("massive sewing") {
  const double mu = 2.0;

  SECTION("identity configuration") {
    const double d = 0.25;
    auto mesh = shared_mesh(20, d);
    auto cfg = blend_metric(mesh, d, mu, {DiscSpec::unit_in()}, {DiscSpec::unit_out()});
    auto basis = build_basis(*cfg.model0, bump_dictionary(2, 3, 0.45, 0.35));
    auto rep = sewing_check(cfg, basis);
    CHECK(rep.relative_residual <= 1e-6);
  }

  SECTION("one concentric in-disc, twisted out-disc") {
    const double d = 0.2;
    auto mesh = shared_mesh(24, d);
    auto cfg = blend_metric(
        mesh, d, mu,
        {DiscSpec::interior({0.0, 0.0}, 0.3, DiscSpec::Orientation::In, 0.37)},
        {DiscSpec::exterior({0.0, 0.0}, 1.0, DiscSpec::Orientation::Out, 2.0 * M_PI / 24.0)});
    CHECK((cfg.lambda.array() - 1.0).abs().maxCoeff() > 1e-3);  // nonconstant lambda
    auto basis = build_basis(*cfg.model0, bump_dictionary(2, 3, 0.45, 0.35));
    auto rep = sewing_check(cfg, basis);
    CHECK(rep.relative_residual <= 1e-6);
    CHECK(rep.trace_norm > 0.0);
    CHECK(std::isfinite(rep.trace_norm));
  }

  SECTION("two in-discs and two out-discs at degree two") {
    const double d = 0.1;
    auto mesh = shared_mesh(24, d);
    auto cfg = blend_metric(
        mesh, d, mu,
        {DiscSpec::interior({-0.35, 0.0}, 0.17, DiscSpec::Orientation::In),
         DiscSpec::interior({0.35, 0.1}, 0.17, DiscSpec::Orientation::In, 0.21)},
        {DiscSpec::interior({2.6, 0.4}, 0.45, DiscSpec::Orientation::Out),
         DiscSpec::interior({-2.8, -0.6}, 0.45, DiscSpec::Orientation::Out, 0.4)});
    auto basis = build_basis(*cfg.model0, bump_dictionary(2, 3, 0.45, 0.35));
    auto rep = sewing_check(cfg, basis);
    CHECK(rep.relative_residual <= 1e-6);
  }
}

TEST_CASE("class independence") {
  const double d = 0.25, mu = 2.0;
  auto mesh = shared_mesh(24, d);
  auto cfg = blend_metric(mesh, d, mu,
                          {DiscSpec::unit_in()},
                          {DiscSpec::exterior({0.0, 0.0}, 1.2, DiscSpec::Orientation::Out)});
  auto basis = build_basis(*cfg.model0, bump_dictionary(2, 3, 0.45, 0.35));

  // Exact null vector of the quotient: phi(f) - phi(e_C0 f).
  RegionProjector ring(*cfg.model0,
                       NodeRegion::of(mesh->ring_vertices(mesh->find_ring(0.0)), "C0"));
  Vector f = TestFunction::bump({0.35, 0.2}, 0.3).realize(*cfg.model0);
  Vector ef = ring.apply(f);
  auto null_poly = WickPolynomial::field(Factor::make(f)) - WickPolynomial::field(Factor::make(ef));
  MomentEngine engine0(*cfg.model0);
  double null_norm2 = std::abs(engine0.moment(theta(*mesh, null_poly) * null_poly));
  CHECK(null_norm2 < 1e-12);

  auto rep = class_independence_check(cfg, basis, null_poly, null_norm2);
  CHECK(rep.null_residual <= 1e-8 * std::max(1.0, rep.value_scale));

  // Near-null perturbation: residual bounded by the Cauchy-Schwarz estimate.
  Vector g = TestFunction::bump({-0.3, 0.15}, 0.3).realize(*cfg.model0);
  Vector eg = ring.apply(g);
  double eps = 1e-3;
  auto near_null = WickPolynomial::field(Factor::make(g)) -
                   WickPolynomial::field(Factor::make(eg)) +
                   eps * WickPolynomial::field(Factor::make(ef));
  double near_norm2 = std::abs(engine0.moment(theta(*mesh, near_null) * near_null));
  auto rep2 = class_independence_check(cfg, basis, near_null, near_norm2);
  CHECK(rep2.null_residual <= rep2.bound * (1.0 + 1e-6) + 1e-12);
}

TEST_CASE("mu selection by the cross projection criterion") {
  const double d = 0.3;
  auto mesh = shared_mesh(16, d);
  std::vector<DiscSpec> discs = {DiscSpec::unit_in()};
  auto sel = choose_mu(mesh, d, discs, 2, 1.2, 1.0);
  CHECK(sel.worst_norm <= sel.threshold);
  CHECK(sel.mu >= 1.0);
}

TEST_CASE("trace norm stability under basis enlargement") {
  const double d = 0.2, mu = 2.0;
  auto mesh = shared_mesh(24, d);
  auto cfg = blend_metric(
      mesh, d, mu,
      {DiscSpec::interior({0.0, 0.0}, 0.3, DiscSpec::Orientation::In)},
      {DiscSpec::unit_out()});

  auto basis_small = build_basis(*cfg.model0, bump_dictionary(1, 3, 0.45, 0.35));
  auto basis_large = build_basis(*cfg.model0, bump_dictionary(1, 6, 0.45, 0.3));
  auto amp_small = amplitude_matrix(cfg, basis_small, transport_basis(cfg, basis_small));
  auto amp_large = amplitude_matrix(cfg, basis_large, transport_basis(cfg, basis_large));
  REQUIRE(basis_large.dim() > basis_small.dim());
  CHECK(amp_large.trace_norm == Catch::Approx(amp_small.trace_norm).epsilon(0.05));

  // Singular values decay.
  const auto& sv = amp_large.singular_values;
  CHECK(sv[sv.size() - 1] <= sv[0]);
}
