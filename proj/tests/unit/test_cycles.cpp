#include <doctest.h>

#include <cmath>
#include <sstream>

#include "lcalsbo/cycles.hpp"
#include "models.hpp"
#include "support.hpp"

using namespace lcalsbo;
using cycles::CycleTrace;

namespace {

// Linear model whose cycle map is z -> a z.
vae::VaeModel scaled_vae(std::size_t dim, double a) {
  vae::VaeModel m = support::identity_vae(dim);
  Tensor dec(dim, dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) dec(i, i) = a;
  m.params()["dec.w0"] = dec;
  return m;
}

CycleTrace hand_trace(const std::vector<double>& deltas, int burn_in) {
  CycleTrace t;
  t.start = {0.0};
  t.cycles = static_cast<int>(deltas.size());
  t.burn_in = burn_in;
  t.deltas = deltas;
  for (int j = 0; j < t.cycles; ++j) t.points.push_back({static_cast<double>(j)});
  cycles::finalize_trace(t);
  return t;
}

}  // namespace

TEST_CASE("defaults follow latent dimension") {
  CHECK(cycles::default_cycles(2).burn_in == 50);
  CHECK(cycles::default_cycles(16).cycles == 100);
  CHECK(cycles::default_cycles(17).burn_in == 80);
  CHECK(cycles::default_cycles(64).cycles == 120);
}

TEST_CASE("fixed point of the identity model") {
  const auto m = support::identity_vae(3);
  const std::vector<double> z{0.3, -1.2, 2.5};
  const auto t = cycles::successive_cycles(m, z, 50, 100);
  CHECK(t.converged);
  CHECK(t.iterations_to_converge() == 0);
  CHECK(t.trailing_point() == z);
  for (double d : t.deltas) CHECK(d == 0.0);
  CHECK(cycles::consistency_score(m, z) == 0.0);
}

TEST_CASE("contracting linear map matches closed form") {
  const double a = 0.5;
  const auto m = scaled_vae(2, a);
  const std::vector<double> z{2.0, -1.0};
  const auto t = cycles::successive_cycles(m, z, 3, 8, 1e-30);
  REQUIRE(t.points.size() == 8);
  for (int j = 1; j <= 8; ++j) {
    const double scale = std::pow(a, j);
    CHECK(t.points[j - 1][0] == doctest::Approx(2.0 * scale).epsilon(1e-12));
    const double prev = std::pow(a, j - 1);
    const double expected = (prev - scale) * (prev - scale) * 5.0;
    CHECK(t.deltas[j - 1] == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK_FALSE(t.converged);
  // not converged: trailing point is the mean of z^3..z^8
  double s = 0.0;
  for (int j = 3; j <= 8; ++j) s += std::pow(a, j);
  s /= 6.0;
  const auto trailing = t.trailing_point();
  CHECK(trailing[0] == doctest::Approx(2.0 * s).epsilon(1e-12));
  CHECK(trailing[1] == doctest::Approx(-1.0 * s).epsilon(1e-12));
  CHECK(t.retained().size() == 6);
}

TEST_CASE("window starts at max(B, 2) and spans at least five deltas") {
  auto t = hand_trace(std::vector<double>(100, 0.0), 50);
  CHECK(t.window_begin() == 50);
  t = hand_trace(std::vector<double>(10, 0.0), 10);
  CHECK(t.window_begin() == 6);
  t = hand_trace(std::vector<double>(3, 0.0), 3);
  CHECK(t.window_begin() == 1);
  t = hand_trace(std::vector<double>(20, 0.0), 1);
  CHECK(t.window_begin() == 2);
}

TEST_CASE("M = B retains one point") {
  const auto m = scaled_vae(2, 0.9);
  const auto t = cycles::successive_cycles(m, std::vector<double>{1.0, 1.0}, 12, 12);
  CHECK(t.retained().size() == 1);
  CHECK(t.retained()[0] == t.final_point());
  CHECK(t.trailing_point() == t.final_point());
}

TEST_CASE("converged flag is sound on hand-built traces") {
  const double tol = cycles::kDefaultTolerance;
  std::vector<double> deltas(100, 0.0);
  for (int j = 0; j < 100; ++j) deltas[j] = j < 49 ? 1.0 : 1e-9;
  CHECK(hand_trace(deltas, 50).converged);
  // one spike inside the window breaks convergence
  deltas[80] = 2.0 * tol;
  CHECK_FALSE(hand_trace(deltas, 50).converged);
  // a spike just before the window does not
  deltas[80] = 1e-9;
  deltas[48] = 1.0;
  CHECK(hand_trace(deltas, 50).converged);
  // delta exactly at the tolerance is not below it
  deltas[99] = tol;
  CHECK_FALSE(hand_trace(deltas, 50).converged);
}

TEST_CASE("converged implies every window delta is below tolerance") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = support::small_vae(seed, vae::Likelihood::Gaussian);
    Rng rng = make_rng(seed, "test/cycles-starts");
    std::normal_distribution<double> n(0.0, 2.0);
    for (int s = 0; s < 5; ++s) {
      const std::vector<double> z{n(rng), n(rng)};
      const auto t = cycles::successive_cycles(m, z, 50, 100);
      bool all_below = true;
      for (int j = t.window_begin(); j <= t.cycles; ++j) all_below &= t.deltas[j - 1] < t.tolerance;
      CHECK(t.converged == all_below);
      if (t.converged) CHECK(t.trailing_point() == t.final_point());
      CHECK(t.iterations_to_converge() >= 0);
      CHECK(t.iterations_to_converge() <= t.cycles);
    }
  }
}

TEST_CASE("iterations to converge counts back from the end") {
  std::vector<double> deltas{1.0, 1.0, 1e-9, 1.0, 1e-9, 1e-9, 1e-9};
  CHECK(hand_trace(deltas, 1).iterations_to_converge() == 4);
  std::vector<double> never(6, 1.0);
  CHECK(hand_trace(never, 1).iterations_to_converge() == 6);
}

TEST_CASE("extending M keeps the shared prefix bitwise") {
  const auto m = support::small_vae(3, vae::Likelihood::Bernoulli);
  const std::vector<double> z{1.5, -0.7};
  const auto short_t = cycles::successive_cycles(m, z, 10, 30);
  const auto long_t = cycles::successive_cycles(m, z, 10, 60);
  for (int j = 0; j < 30; ++j) {
    CHECK(short_t.points[j] == long_t.points[j]);
    CHECK(short_t.deltas[j] == long_t.deltas[j]);
  }
}

TEST_CASE("consistency score agrees with vae::lcl") {
  const auto m = support::small_vae(7, vae::Likelihood::Bernoulli);
  const std::vector<double> z{0.4, -2.2};
  const double score = cycles::consistency_score(m, z);
  CHECK(score == vae::lcl(m, z));
}

TEST_CASE("constant encoder gives the closed-form field") {
  const std::vector<double> c{0.5, -1.0};
  const auto m = support::constant_vae(c);
  const auto field = cycles::consistency_grid(m, {.per_axis = 5, .low = -2.0, .high = 2.0});
  REQUIRE(field.scores.size() == 25);
  for (std::size_t r = 0; r < 25; ++r) {
    const double d0 = field.points(r, 0) - c[0], d1 = field.points(r, 1) - c[1];
    CHECK(field.scores[r] == doctest::Approx(d0 * d0 + d1 * d1).epsilon(1e-14));
  }
}

TEST_CASE("grid layout and edge cases") {
  const auto m = support::small_vae(1, vae::Likelihood::Bernoulli);
  const auto one = cycles::consistency_grid(m, {.per_axis = 1, .low = -3.0, .high = 3.0});
  REQUIRE(one.points.rows() == 1);
  CHECK(one.points(0, 0) == -3.0);
  CHECK(one.points(0, 1) == -3.0);

  const auto full = cycles::consistency_grid(m, {});
  CHECK(full.points.rows() == 2500);
  CHECK(full.points(0, 0) == -4.0);
  CHECK(full.points(2499, 0) == 4.0);
  CHECK(full.points(2499, 1) == 4.0);
  CHECK(full.points(1, 0) == -4.0);
  for (double s : full.scores) CHECK(s >= 0.0);

  std::ostringstream csv;
  cycles::write_field_csv(csv, one);
  CHECK(csv.str().rfind("z1,z2,score\n", 0) == 0);

  const auto m3 = support::identity_vae(3);
  CHECK_THROWS_AS(cycles::consistency_grid(m3, {}), std::invalid_argument);
}

TEST_CASE("sampled field is seeded and has the documented CSV header") {
  const auto m = support::small_vae(2, vae::Likelihood::Bernoulli);
  const cycles::SampleSpec spec{.count = 50, .sigma = 2.0, .seed = 9};
  const auto a = cycles::consistency_samples(m, spec);
  const auto b = cycles::consistency_samples(m, spec);
  CHECK(a.scores == b.scores);
  std::ostringstream csv;
  cycles::write_field_csv(csv, a);
  CHECK(csv.str().rfind("index,z1,z2,score\n", 0) == 0);
  CHECK(a.mean_score() >= 0.0);
}

TEST_CASE("bad burn-in is rejected") {
  const auto m = support::identity_vae(2);
  const std::vector<double> z{0.0, 0.0};
  CHECK_THROWS_AS(cycles::successive_cycles(m, z, 0, 10), std::invalid_argument);
  CHECK_THROWS_AS(cycles::successive_cycles(m, z, 11, 10), std::invalid_argument);
  CHECK_THROWS_AS(cycles::cycle_once(m, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("convergence study on identity models converges immediately") {
  const auto m2 = support::identity_vae(2);
  const auto m8 = support::identity_vae(8);
  const std::vector<cycles::DimensionModel> models{{2, &m2}, {8, &m8}};
  cycles::ConvergenceStudySpec spec;
  spec.starts = 4;
  const auto study = cycles::convergence_vs_dimension(models, spec);
  CHECK(study.rows.size() == 2 * 2 * 4);
  REQUIRE(study.summary.size() == 4);
  for (const auto& s : study.summary) {
    CHECK(s.converged == s.runs);
    CHECK(s.median_iterations == 0.0);
  }
  for (const auto& r : study.rows) {
    CHECK(r.converged);
  }
  std::ostringstream csv;
  cycles::write_convergence_csv(csv, study);
  CHECK(csv.str().rfind("dim,radius,seed,iterations,final_delta,converged\n", 0) == 0);
  const std::vector<cycles::DimensionModel> wrong{{3, &m2}};
  CHECK_THROWS(cycles::convergence_vs_dimension(wrong, spec));
}
