#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "spherefield/disc.hpp"
#include "spherefield/geodesic.hpp"
#include "spherefield/metric.hpp"
#include "spherefield/mobius.hpp"
#include "spherefield/point.hpp"

using namespace spherefield;

TEST_CASE("radial reflection on sample points") {
  CHECK(std::abs(reflect_z({2.0, 0.0}) - Complex{0.5, 0.0}) < 1e-15);
  CHECK(std::abs(reflect_z({0.0, 1.0}) - Complex{0.0, 1.0}) < 1e-15);

  SpherePoint p = SpherePoint::z({3.0, 4.0});
  SpherePoint back = reflect(reflect(p));
  CHECK(point_gap(p, back) < 1e-14);

  CHECK(reflect(SpherePoint::z({0.0, 0.0})).is_infinity());
  CHECK(reflect(SpherePoint::infinity()).is_origin());
}

TEST_CASE("reflection is an involution on random points") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int k = 0; k < 200; ++k) {
    Complex z{unif(rng), unif(rng)};
    if (std::abs(z) < 1e-3) continue;
    SpherePoint p = SpherePoint::z(z);
    CHECK(point_gap(reflect(reflect(p)), p) < 1e-14);
    // theta fixes the unit circle pointwise
    Complex u = z / std::abs(z);
    CHECK(std::abs(reflect_z(u) - u) < 1e-14);
  }
}

TEST_CASE("reflection invariance of the built-in metrics") {
  auto samples = reflection_sample_points();
  CHECK(check_reflection_invariance(ConformalMetric::round(), samples).max_error <= 1e-13);
  CHECK(check_reflection_invariance(ConformalMetric::cylindrical(), samples).max_error <= 1e-13);
  CHECK(check_reflection_invariance(ConformalMetric::standard_massive(0.3), samples).max_error <=
        1e-12);
  CHECK(check_reflection_invariance(ConformalMetric::standard_flat(0.3), samples).max_error <=
        1e-12);
  // The flat metric is not reflection invariant: error |z|^-4 - 1.
  auto rep = check_reflection_invariance(ConformalMetric::flat(), samples);
  CHECK(rep.max_error > 1.0);
}

TEST_CASE("standard metric profiles") {
  const double d = 0.22;
  auto flat = ConformalMetric::standard_flat(d);
  CHECK(flat.density(Complex{std::exp(-3.0 * d), 0.0}) == Catch::Approx(1.0).margin(1e-15));
  CHECK(flat.density(Complex{1.0, 0.0}) == Catch::Approx(1.0).margin(1e-15));
  CHECK(flat.density(Complex{std::exp(3.0 * d), 0.0}) ==
        Catch::Approx(std::exp(-12.0 * d)).epsilon(1e-13));

  auto massive = ConformalMetric::standard_massive(d);
  for (double r : {0.82, 0.95, 1.0, 1.1, 1.2}) {
    CHECK(massive.density(std::polar(r, 0.4)) == Catch::Approx(1.0 / (r * r)).epsilon(1e-13));
  }
  // Rotation invariance of both flavors.
  for (double r : {0.3, 0.7, 1.4, 3.0}) {
    double ref = massive.density(Complex{r, 0.0});
    double reff = flat.density(Complex{r, 0.0});
    for (int k = 1; k < 7; ++k) {
      double a = 0.9 * k;
      CHECK(massive.density(std::polar(r, a)) == Catch::Approx(ref).epsilon(1e-12));
      CHECK(flat.density(std::polar(r, a)) == Catch::Approx(reff).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(ConformalMetric::standard_massive(0.0), std::invalid_argument);
  CHECK_THROWS_AS(ConformalMetric::standard_flat(-1.0), std::invalid_argument);
}

TEST_CASE("standard metrics are positive and bounded at the poles") {
  for (auto m : {ConformalMetric::standard_massive(0.25), ConformalMetric::standard_flat(0.25),
                 ConformalMetric::round()}) {
    CHECK(m.density(SpherePoint::z({0.0, 0.0})) > 0.0);
    CHECK(m.density(SpherePoint::infinity()) > 0.0);
    // |zeta|^-4 rho(1/zeta) stays bounded and positive along a ray to 0.
    for (double e = 1e-1; e > 1e-9; e *= 0.1) {
      double v = m.density(SpherePoint::zeta({e, 0.5 * e}));
      CHECK(v > 0.0);
      CHECK(v < 1e6);
    }
  }
}

TEST_CASE("mobius group laws") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-1.5, 1.5);
  auto rand_map = [&]() {
    while (true) {
      try {
        return MobiusMap({unif(rng), unif(rng)}, {unif(rng), unif(rng)},
                         {unif(rng), unif(rng)}, {unif(rng), unif(rng)});
      } catch (const std::invalid_argument&) {
      }
    }
  };
  for (int trial = 0; trial < 20; ++trial) {
    MobiusMap a = rand_map(), b = rand_map(), c = rand_map();
    MobiusMap left = compose(compose(a, b), c);
    MobiusMap right = compose(a, compose(b, c));
    MobiusMap ainv = compose(a, a.inverse());
    for (int k = 0; k < 5; ++k) {
      Complex z{unif(rng), unif(rng)};
      CHECK(point_gap(left(SpherePoint::z(z)), right(SpherePoint::z(z))) < 1e-12);
      CHECK(point_gap(ainv(SpherePoint::z(z)), SpherePoint::z(z)) < 1e-12);
    }
  }
}

TEST_CASE("disc maps and parametrizations") {
  auto d1 = DiscSpec::interior({2.0, 0.0}, 0.5, DiscSpec::Orientation::In);
  auto a1 = d1.disc_map();
  CHECK(std::abs(a1(Complex{2.0, 0.0})) < 1e-15);
  CHECK(std::abs(a1(Complex{2.5, 0.0}) - Complex{1.0, 0.0}) < 1e-15);

  auto d2 = DiscSpec::interior({0.0, 0.0}, 1.0, DiscSpec::Orientation::In, 0.0);
  auto j2 = d2.param_map();
  for (double r : {0.2, 0.9}) {
    Complex z = std::polar(r, 1.1);
    CHECK(std::abs(j2(z) - z) < 1e-14);
  }

  auto d3 = DiscSpec::exterior({0.0, 0.0}, 1.0, DiscSpec::Orientation::Out);
  auto a3 = d3.disc_map();
  CHECK(std::abs(std::abs(a3(std::polar(2.0, 0.3))) - 0.5) < 1e-14);

  // Boundary of the disc goes to the unit circle under alpha and under j.
  for (const auto& disc :
       {DiscSpec::interior({0.4, -0.2}, 0.31, DiscSpec::Orientation::In, 0.7),
        DiscSpec::exterior({-1.2, 2.0}, 0.8, DiscSpec::Orientation::Out, 1.2)}) {
    auto alpha = disc.disc_map();
    auto j = disc.param_map();
    for (int k = 0; k < 32; ++k) {
      Complex w = disc.center + std::polar(disc.radius, 2.0 * M_PI * k / 32.0);
      CHECK(std::abs(std::abs(alpha(w)) - 1.0) < 1e-12);
      CHECK(std::abs(std::abs(j(w)) - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS_AS(DiscSpec::interior({0.0, 0.0}, 0.0, DiscSpec::Orientation::In),
                  std::invalid_argument);
}

TEST_CASE("parametrization pullback reproduces the per-disc metric including twist") {
  auto gamma0 = ConformalMetric::standard_massive(0.3);
  auto disc = DiscSpec::interior({0.6, 0.1}, 0.25, DiscSpec::Orientation::In, 2.0 * M_PI / 7.0);
  auto gamma_i = ConformalMetric::pullback(gamma0, disc.disc_map());
  auto gamma_j = ConformalMetric::pullback(gamma0, disc.param_map());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Complex z = disc.center + std::polar(disc.radius * unif(rng), 2.0 * M_PI * unif(rng));
    CHECK(gamma_j.density(z) == Catch::Approx(gamma_i.density(z)).epsilon(1e-12));
  }

  auto out = DiscSpec::exterior({0.0, 0.0}, 1.0, DiscSpec::Orientation::Out, 2.0 * M_PI / 5.0);
  auto gamma_out = ConformalMetric::pullback(gamma0, out.param_map());
  for (int k = 0; k < 50; ++k) {
    Complex z = std::polar(1.0 + 3.0 * unif(rng), 2.0 * M_PI * unif(rng));
    CHECK(gamma_out.density(z) == Catch::Approx(gamma0.density(z)).epsilon(1e-12));
  }
}

TEST_CASE("conformal factor") {
  auto round = ConformalMetric::round();
  auto flat = ConformalMetric::flat();
  auto cyl = ConformalMetric::cylindrical();
  SpherePoint p = SpherePoint::z({0.3, 0.4});
  CHECK(conformal_factor(round, round, p) == Catch::Approx(0.0).margin(1e-15));
  CHECK(conformal_factor(cyl, flat, SpherePoint::z(std::polar(1.0, 0.9))) ==
        Catch::Approx(0.0).margin(1e-14));
  CHECK(conformal_factor(round, flat, SpherePoint::z({0.0, 0.0})) ==
        Catch::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("geodesics: flat, rescaled and round metrics") {
  auto flat = ConformalMetric::flat();
  auto g = geodesic_distance(flat, {0.0, 0.0}, {1.0, 0.0}, 2);
  CHECK(g.converged);
  CHECK(g.distance == Catch::Approx(1.0).margin(1e-6));

  // Constant rescaling multiplies distances by e^{sigma/2} = 3.
  auto scaled = ConformalMetric::scaled(flat, [](const SpherePoint&) { return 2.0 * std::log(3.0); });
  auto gs = geodesic_distance(scaled, {0.1, 0.2}, {0.4, 0.6}, 2);
  CHECK(gs.distance == Catch::Approx(3.0 * 0.5).epsilon(1e-6));

  // Round metric: d(0, z) = 2 atan |z|, approaching pi toward infinity.
  auto round = ConformalMetric::round();
  for (double r : {0.5, 1.0, 2.0}) {
    auto gr = geodesic_distance(round, {0.0, 0.0}, {r, 0.0}, 2);
    CHECK(gr.distance == Catch::Approx(2.0 * std::atan(r)).epsilon(2e-4));
  }
  auto gfar = geodesic_distance(round, {0.0, 0.0}, {50.0, 0.0}, 3);
  CHECK(gfar.distance == Catch::Approx(2.0 * std::atan(50.0)).epsilon(2e-3));
  CHECK(gfar.distance < M_PI + 1e-6);

  CHECK_THROWS_AS(geodesic_distance(flat, {0.3, 0.0}, {0.3, 0.0}, 1), std::invalid_argument);
}

TEST_CASE("distance ratio limit reproduces e^{sigma/2}") {
  auto flat = ConformalMetric::flat();

  // Constant sigma: every ratio equals the limit.
  auto rep0 = distance_ratio_limit(
      flat, [](const SpherePoint&) { return 0.8; }, {0.2, 0.1}, {1.0, 0.7}, 0.05, 3, 1);
  REQUIRE(rep0.converged);
  for (double r : rep0.ratios) CHECK(r == Catch::Approx(std::exp(0.4)).epsilon(1e-6));

  auto sigma = [](const SpherePoint& p) { return p.as_z().real(); };

  auto rep1 = distance_ratio_limit(flat, sigma, {0.0, 0.0}, {0.3, 1.0}, 0.04, 4, 1);
  REQUIRE(rep1.converged);
  CHECK(rep1.expected == Catch::Approx(1.0));
  CHECK(rep1.limit == Catch::Approx(1.0).epsilon(0.01));

  auto rep2 = distance_ratio_limit(flat, sigma, {1.0, 0.0}, {1.0, -0.4}, 0.04, 4, 1);
  REQUIRE(rep2.converged);
  CHECK(rep2.expected == Catch::Approx(std::exp(0.5)).epsilon(1e-12));
  CHECK(rep2.limit == Catch::Approx(std::exp(0.5)).epsilon(0.01));
}

TEST_CASE("enlarged disjointness check") {
  std::vector<DiscSpec> ok = {
      DiscSpec::interior({-0.45, 0.0}, 0.18, DiscSpec::Orientation::In),
      DiscSpec::interior({0.45, 0.0}, 0.18, DiscSpec::Orientation::In)};
  CHECK(enlarged_discs_disjoint(ok, 0.2));
  std::vector<DiscSpec> bad = {
      DiscSpec::interior({-0.2, 0.0}, 0.18, DiscSpec::Orientation::In),
      DiscSpec::interior({0.2, 0.0}, 0.18, DiscSpec::Orientation::In)};
  CHECK_FALSE(enlarged_discs_disjoint(bad, 0.2));
}
