#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ei_oracle.hpp"
#include "lcalsbo/acquisition.hpp"
#include "models.hpp"

using namespace lcalsbo;

namespace {

gp::GpSurrogate peak_gp() {
  Tensor x(5, 2);
  const double pts[5][2] = {{1.0, 1.0}, {-3.0, -3.0}, {3.5, -3.0}, {-3.5, 3.0}, {4.0, 4.0}};
  for (int i = 0; i < 5; ++i) {
    x(i, 0) = pts[i][0];
    x(i, 1) = pts[i][1];
  }
  const std::vector<double> y{5.0, 0.0, 0.0, 0.0, 0.0};
  return gp::GpSurrogate::with_hyperparams(x, y, {1.0, 1.0, 1e-4});
}

acq::AcquisitionSpec small_spec() {
  acq::AcquisitionSpec spec;
  spec.burn_in = 5;
  spec.max_cycles = 10;
  spec.restarts = 6;
  spec.refine_steps = 30;
  return spec;
}

}  // namespace

TEST_CASE("ucb examples") {
  CHECK(acq::ucb(1.5, 0.0, 2.0) == 1.5);
  CHECK(acq::ucb(1.5, 3.0, 0.0) == 1.5);
  CHECK(acq::ucb(1.0, 4.0, 2.0) == 5.0);
}

TEST_CASE("ucb is monotone in mean and variance") {
  Rng rng = make_rng(0, "test/ucb");
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double m = u(rng) - 1.5, v = u(rng), k = u(rng), dm = u(rng), dv = u(rng);
    CHECK(acq::ucb(m + dm, v, k) >= acq::ucb(m, v, k));
    CHECK(acq::ucb(m, v + dv, k) >= acq::ucb(m, v, k));
  }
}

TEST_CASE("ei examples") {
  CHECK(acq::ei(0.5, 0.0, 1.0, 0.01) == 0.0);
  CHECK(acq::ei(2.0, 0.0, 1.0, 0.5) == 0.5);
  CHECK(acq::ei(1.0, 1.0, 1.0, 0.0) == doctest::Approx(0.3989422804014327).epsilon(1e-15));
}

TEST_CASE("ei is non-negative") {
  Rng rng = make_rng(1, "test/ei-sign");
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 2000; ++i) {
    CHECK(acq::ei(u(rng), std::abs(u(rng)), u(rng), std::abs(u(rng)) / 10.0) >= 0.0);
  }
}

TEST_CASE("ei matches Monte Carlo") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    const double mean = 2.0 * u(rng) - 1.0, var = 0.1 + 2.0 * u(rng), best = u(rng) - 0.5,
                 xi = 0.05 * u(rng);
    const auto mc = support::monte_carlo_ei(mean, var, best, xi, 200000, rng);
    CHECK(std::abs(acq::ei(mean, var, best, xi) - mc.mean) <= 3.0 * mc.standard_error);
  }
}

TEST_CASE("lca_af at a fixed point equals the base AF") {
  const auto model = support::identity_vae(2);
  const auto gp = peak_gp();
  auto spec = acq::AcquisitionSpec::for_dim(2);
  Rng rng = make_rng(3, "test/fixed");
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (auto kind : {acq::Kind::Ucb, acq::Kind::Ei}) {
    spec.kind = kind;
    for (int i = 0; i < 20; ++i) {
      const std::vector<double> z{u(rng), u(rng)};
      const auto v = acq::lca_af(model, gp, spec, z);
      CHECK(v.trace.converged);
      CHECK(std::abs(v.value - acq::base_af(gp, spec, z)) <= 1e-9);
    }
  }
}

TEST_CASE("non-converged trace averages the retained points") {
  const auto gp = peak_gp();
  acq::AcquisitionSpec spec;
  cycles::CycleTrace t;
  t.start = {0.0, 0.0};
  t.burn_in = 3;
  t.cycles = 6;
  for (int j = 1; j <= 6; ++j) {
    t.points.push_back({0.3 * j, -0.2 * j});
    t.deltas.push_back(1.0);
  }
  cycles::finalize_trace(t);
  REQUIRE_FALSE(t.converged);
  double sum = 0.0;
  for (int j = 3; j <= 6; ++j) sum += acq::base_af(gp, spec, t.points[j - 1]);
  CHECK(std::abs(acq::lca_af_from_trace(gp, spec, t) - sum / 4.0) <= 1e-12);

  // the same points marked converged use the final point only
  for (auto& d : t.deltas) d = 0.0;
  cycles::finalize_trace(t);
  CHECK(acq::lca_af_from_trace(gp, spec, t) == acq::base_af(gp, spec, t.points.back()));
}

TEST_CASE("single dominant point attracts the maximizer") {
  const auto model = support::identity_vae(2);
  const auto gp = peak_gp();
  auto spec = small_spec();
  spec.kappa = 0.0;
  Rng rng = make_rng(4, "test/peak");
  const auto m = acq::maximize_lca_af(model, gp, spec, rng);
  const auto p = m.trace.trailing_point();
  const double dist = std::hypot(p[0] - 1.0, p[1] - 1.0);
  CHECK(dist <= gp.hyperparams().lengthscale);
}

TEST_CASE("maximizer returns a fresh incumbent") {
  const auto model = support::small_vae(5, vae::Likelihood::Bernoulli);
  const auto gp = peak_gp();
  const auto spec = small_spec();
  Rng rng = make_rng(5, "test/incumbent");
  const auto m = acq::maximize_lca_af(model, gp, spec, rng);
  REQUIRE(m.starts.size() == static_cast<std::size_t>(spec.restarts));
  for (const auto& s : m.starts) {
    CHECK(m.value >= s.value);
    CHECK(m.value >= acq::lca_af(model, gp, spec, s.initial).value);
  }
  CHECK(m.value == acq::lca_af(model, gp, spec, m.z).value);
  CHECK(m.evaluations > m.starts.size());
}

TEST_CASE("maximization is deterministic per seed") {
  const auto model = support::small_vae(6, vae::Likelihood::Bernoulli);
  const auto gp = peak_gp();
  const auto spec = small_spec();
  Rng a = make_rng(9, "test/det"), b = make_rng(9, "test/det");
  const auto ma = acq::maximize_lca_af(model, gp, spec, a);
  const auto mb = acq::maximize_lca_af(model, gp, spec, b);
  CHECK(ma.z == mb.z);
  CHECK(ma.value == mb.value);
  std::ostringstream ca, cb;
  acq::write_maximization_csv(ca, ma);
  acq::write_maximization_csv(cb, mb);
  CHECK(ca.str() == cb.str());
  CHECK(ca.str().rfind("start,z1,z2,value,converged,iterations\n", 0) == 0);
}

TEST_CASE("base AF maximization stays inside the box") {
  const auto gp = peak_gp();
  auto spec = small_spec();
  spec.lower = {-1.0, -1.0};
  spec.upper = {0.5, 0.5};
  Rng rng = make_rng(10, "test/box");
  const auto m = acq::maximize_base_af(gp, spec, rng);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(m.z[j] >= -1.0);
    CHECK(m.z[j] <= 0.5);
  }
}

TEST_CASE("spec validation") {
  acq::AcquisitionSpec spec;
  CHECK_NOTHROW(spec.validate(2));
  spec.kappa = -1.0;
  CHECK_THROWS_AS(spec.validate(2), std::invalid_argument);
  spec = {};
  spec.burn_in = 101;
  CHECK_THROWS_AS(spec.validate(2), std::invalid_argument);
  spec = {};
  spec.box_low = 1.0;
  spec.box_high = 1.0;
  CHECK_THROWS_AS(spec.validate(2), std::invalid_argument);
  CHECK(acq::kind_from_string(acq::to_string(acq::Kind::Ei)) == acq::Kind::Ei);
  CHECK_THROWS(acq::kind_from_string("pi"));
  CHECK(acq::AcquisitionSpec::for_dim(32).burn_in == 80);
}
