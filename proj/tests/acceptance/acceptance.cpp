// Acceptance suite. One PASS/FAIL line per criterion; exit code 1 if any fails.
// Usage: acceptance [criterion numbers...]  (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ei_oracle.hpp"
#include "gp_oracle.hpp"
#include "lcalsbo/acquisition.hpp"
#include "lcalsbo/cli.hpp"
#include "lcalsbo/cycles.hpp"
#include "lcalsbo/gp.hpp"
#include "lcalsbo/lsbo.hpp"
#include "lcalsbo/stats.hpp"
#include "models.hpp"
#include "random_net.hpp"
#include "support.hpp"
#include "tiny_config.hpp"
#include "toy.hpp"

using namespace lcalsbo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor uniform_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = n(rng);
  return t;
}

const tasks::ClusterTask& toy_task() {
  static const tasks::ClusterTask task = support::make_toy_task(0);
  return task;
}

const vae::VaeModel& vanilla_toy() {
  static const vae::VaeModel m = support::pretrain_toy(toy_task().train, 0.0, 0);
  return m;
}

Outcome autodiff_soundness() {
  std::size_t entries = 0, failures = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto net = support::make_random_net(50000 + seed);
    const auto grads = net.graph.backward(net.loss);
    const auto c = support::finite_difference_check([&](const ad::ParameterSet& p) { return net.evaluate(p); },
                                                    net.params, grads.parameters());
    entries += c.entries;
    failures += c.failures;
    worst = std::max(worst, c.worst_relative);
  }
  return {failures == 0, fmt("100 nets, %zu entries, %zu over 1e-4, worst relative error %.2e", entries, failures, worst)};
}

Outcome lcl_gradient() {
  std::size_t entries = 0, failures = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto lik = seed % 2 ? vae::Likelihood::Gaussian : vae::Likelihood::Bernoulli;
    auto model = support::small_vae(700 + seed, lik);
    Rng rng = make_rng(seed, "acceptance/lcl-gradient");
    const Tensor latents = uniform_tensor(4, 2, rng, -3.0, 3.0);
    ad::Graph g;
    const auto loss = vae::lcl_nodes(g, model, latents);
    const auto grads = g.backward(loss).parameters();
    const auto c = support::finite_difference_check(
        [&](const ad::ParameterSet& p) {
          g.forward(p);
          return g.value(loss).item();
        },
        model.params(), grads);
    entries += c.entries;
    failures += c.failures;
    worst = std::max(worst, c.worst_relative);
  }
  return {failures == 0, fmt("20 models, %zu entries, %zu over 1e-4, worst relative error %.2e", entries, failures, worst)};
}

Outcome gp_oracle() {
  Rng rng = make_rng(0, "acceptance/gp");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int p = 0; p < 50; ++p) {
    const std::size_t n = 1 + p % 5, d = 1 + p % 3;
    Tensor x(n, d);
    support::Dense rows;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row;
      for (std::size_t j = 0; j < d; ++j) row.push_back(x(i, j) = 1.5 * normal(rng));
      rows.push_back(row);
      y.push_back(std::sin(row[0]) + 0.3 * normal(rng));
    }
    const gp::Hyperparams hp{0.3 + 2.0 * u(rng), 0.4 + 1.5 * u(rng), 1e-3 + 0.2 * u(rng)};
    const auto model = gp::GpSurrogate::with_hyperparams(x, y, hp, false);
    const support::NaiveGp naive{rows, y, hp.signal_variance, hp.lengthscale, hp.noise_variance};
    worst = std::max(worst, std::abs(model.log_marginal_likelihood() - naive.lml()));
    for (int q = 0; q < 10; ++q) {
      std::vector<double> z(d);
      for (double& v : z) v = 2.0 * normal(rng);
      const auto pred = model.predict(z);
      worst = std::max({worst, std::abs(pred.mean - naive.mean(z)), std::abs(pred.variance - naive.variance(z))});
    }
  }
  // variance on a fitted surrogate over many queries
  Tensor x(40, 2);
  std::vector<double> y;
  for (std::size_t i = 0; i < 40; ++i) {
    x(i, 0) = normal(rng);
    x(i, 1) = normal(rng);
    y.push_back(std::cos(x(i, 0)) * x(i, 1));
  }
  const auto fitted = gp::GpSurrogate::fit(x, y, {}, {});
  int negative = 0;
  double min_var = INFINITY;
  for (int q = 0; q < 10000; ++q) {
    const std::vector<double> z{4.0 * normal(rng), 4.0 * normal(rng)};
    const double v = fitted.predict(z).variance;
    min_var = std::min(min_var, v);
    negative += v < 0.0;
  }
  return {worst < 1e-8 && negative == 0,
          fmt("max |diff| vs naive %.2e over 50 problems; %d negative variances in 1e4 queries (min %.3e)", worst,
              negative, min_var)};
}

Outcome kl_quadrature() {
  Rng rng = make_rng(0, "acceptance/kl");
  std::uniform_real_distribution<double> um(-3.0, 3.0), us(0.1, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double m = um(rng), s = us(rng);
    const auto integrand = [&](double z) {
      const double lq = -0.5 * std::log(2 * std::numbers::pi * s * s) - 0.5 * (z - m) * (z - m) / (s * s);
      const double lp = -0.5 * std::log(2 * std::numbers::pi) - 0.5 * z * z;
      return std::exp(lq) * (lq - lp);
    };
    const double numeric = support::simpson(integrand, m - 14 * s, m + 14 * s, 8000);
    const double closed = vae::kl_to_standard_normal(std::vector<double>{m}, std::vector<double>{s});
    worst = std::max(worst, std::abs(numeric - closed));
  }
  return {worst < 1e-6, fmt("50 (mu, sigma) pairs, max abs error %.2e", worst)};
}

Outcome ei_monte_carlo() {
  Rng rng = make_rng(0, "acceptance/ei");
  std::uniform_real_distribution<double> um(-2.0, 2.0), uv(0.05, 4.0), ux(0.0, 0.1);
  int outside = 0;
  double worst_z = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double mean = um(rng), var = uv(rng), best = um(rng), xi = ux(rng);
    const auto mc = support::monte_carlo_ei(mean, var, best, xi, 1000000, rng);
    const double z = std::abs(acq::ei(mean, var, best, xi) - mc.mean) / mc.standard_error;
    worst_z = std::max(worst_z, z);
    outside += z > 3.0;
  }
  return {outside == 0, fmt("20 configurations, %d outside 3 SE, worst %.2f SE", outside, worst_z)};
}

Outcome density_vs_inconsistency() {
  const auto& model = vanilla_toy();
  Rng rng = make_rng(0, "acceptance/density");
  const Tensor z = vae::sample_reference(vae::ReferenceDistribution::centered(2, 2.0), 500, rng);
  std::vector<double> density, score;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    density.push_back(std::exp(-0.5 * (z(r, 0) * z(r, 0) + z(r, 1) * z(r, 1))) / (2 * std::numbers::pi));
    score.push_back(cycles::consistency_score(model, z.row_span(r)));
  }
  const double rho = stats::spearman(density, score);
  return {rho < -0.3, fmt("Spearman rho %.3f over 500 draws", rho)};
}

Outcome lca_reduces_lcl() {
  const auto lca = support::pretrain_toy(toy_task().train, 0.01, 0);
  Rng rng = make_rng(0, "acceptance/lcl-reduction");
  const Tensor z = vae::sample_reference(vae::ReferenceDistribution::centered(2, 2.0), 1000, rng);
  const double v = vae::mean_lcl(vanilla_toy(), z);
  const double l = vae::mean_lcl(lca, z);
  const double reduction = 1.0 - l / v;
  return {reduction >= 0.5, fmt("mean LCL vanilla %.4f, gamma 0.01 %.4f, reduction %.1f%%", v, l, 100 * reduction)};
}

// Horizontal centre of mass of an 8×8 image: a smooth property along the toy's line of blobs.
double column_centroid(std::span<const double> img) {
  double m = 0.0, w = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    m += img[i] * static_cast<double>(i % 8);
    w += img[i];
  }
  return m / std::max(w, 1e-9);
}

Outcome ucb_gap_vs_lcl() {
  const auto& model = vanilla_toy();
  const auto& data = toy_task().train;
  // the labeled set a search holds after 30 queries: 10 encoded seed instances
  // plus decoded prior draws, scored by a smooth property
  Rng rng = make_rng(0, "acceptance/ucb-gap");
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t seeds = 10, queries = 30;
  Tensor x(seeds, data.dim());
  for (std::size_t r = 0; r < seeds; ++r) {
    for (std::size_t c = 0; c < data.dim(); ++c) x(r, c) = data.inputs(idx[r], c);
  }
  const Tensor enc = vae::encode_mean(model, x);
  const Tensor q = vae::sample_reference(vae::ReferenceDistribution::centered(2, 2.0), queries, rng);
  const Tensor dq = vae::decode(model, q);
  Tensor lat(seeds + queries, 2);
  std::vector<double> y;
  for (std::size_t r = 0; r < seeds; ++r) {
    lat(r, 0) = enc(r, 0);
    lat(r, 1) = enc(r, 1);
    y.push_back(column_centroid(x.row_span(r)));
  }
  for (std::size_t r = 0; r < queries; ++r) {
    lat(seeds + r, 0) = q(r, 0);
    lat(seeds + r, 1) = q(r, 1);
    y.push_back(column_centroid(dq.row_span(r)));
  }
  gp::FitOptions fo;
  fo.seed = 1;
  const auto surrogate = gp::GpSurrogate::fit(lat, y, {}, fo);

  const Tensor z = vae::sample_reference(vae::ReferenceDistribution::centered(2, 2.0), 500, rng);
  const Tensor z1 = cycles::cycle_batch(model, z);
  std::vector<double> gap, lcl;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto a = surrogate.predict(z.row_span(r));
    const auto b = surrogate.predict(z1.row_span(r));
    gap.push_back(std::abs(acq::ucb(a.mean, a.variance, 2.0) - acq::ucb(b.mean, b.variance, 2.0)));
    lcl.push_back(cycles::consistency_score(model, z.row_span(r)));
  }
  const double r = stats::pearson(gap, lcl);
  return {r > 0.3, fmt("Pearson r %.3f over 500 draws (GP lengthscale %.2f)", r, surrogate.hyperparams().lengthscale)};
}

Outcome convergence_vs_dimension() {
  // the blob task has two or three degrees of freedom, so larger latent spaces
  // would just collapse; these data have as many causes as the largest model
  const Tensor data = support::factor_images(800, 16);
  std::vector<vae::VaeModel> models;
  for (std::size_t d : {2, 8, 16}) models.push_back(support::pretrain_vanilla(data, 0, d));
  std::vector<cycles::DimensionModel> dm;
  for (const auto& m : models) dm.push_back({m.latent_dim(), &m});
  cycles::ConvergenceStudySpec spec;
  spec.radii = {3.0};
  spec.starts = 20;
  const auto study = cycles::convergence_vs_dimension(dm, spec);
  bool monotone = true;
  double worst = 0.0;
  std::string medians;
  for (std::size_t i = 0; i < study.summary.size(); ++i) {
    const auto& s = study.summary[i];
    if (i > 0 && s.median_iterations < study.summary[i - 1].median_iterations) monotone = false;
    medians += fmt("%sd=%zu: %.1f (%d/%d converged)", i ? ", " : "", s.dim, s.median_iterations, s.converged, s.runs);
  }
  for (const auto& r : study.rows) worst = std::max(worst, r.window_delta);
  return {monotone && worst < 1e-3, fmt("median cycles %s; max trailing delta %.2e", medians.c_str(), worst)};
}

constexpr int kSeeds = 10;
constexpr int kBudget = 50;

lsbo::LsboConfig search_config(lsbo::Method method, std::uint64_t seed) {
  lsbo::LsboConfig c;
  c.method = method;
  c.seed = seed;
  c.iterations = kBudget;
  c.stop_at = 0.9;
  c.acquisition = acq::AcquisitionSpec::for_dim(2);
  c.acquisition.restarts = 16;
  c.acquisition.refine_steps = 30;
  c.train = support::toy_train(seed);
  return c;
}

Outcome sample_efficiency() {
  const auto& task = toy_task();
  std::vector<double> lca_evals, vanilla_evals;
  std::string per_seed;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const auto lca_model = support::pretrain_toy(task.train, support::kSearchGamma, s);
    const auto vanilla_model = support::pretrain_toy(task.train, 0.0, s);
    const auto h_lca = lsbo::run_lca_lsbo(search_config(lsbo::Method::LcaLsbo, s), lca_model, task.train, task.black_box);
    const auto h_van =
        lsbo::run_vanilla_lsbo(search_config(lsbo::Method::VanillaRt, s), vanilla_model, task.train, task.black_box);
    const auto a = h_lca.evaluations_to(0.9), b = h_van.evaluations_to(0.9);
    lca_evals.push_back(a ? *a : kBudget + 1);
    vanilla_evals.push_back(b ? *b : kBudget + 1);
    per_seed += fmt("%s%d/%d", s ? " " : "", static_cast<int>(lca_evals.back()), static_cast<int>(vanilla_evals.back()));
    std::fflush(stdout);
  }
  const double ml = stats::median(lca_evals), mv = stats::median(vanilla_evals);
  return {ml <= 20 && ml < mv,
          fmt("median evaluations to BB >= 0.9: lca-lsbo %.1f, vanilla-rt %.1f (51 = not reached in 50); per seed "
              "lca/vanilla %s",
              ml, mv, per_seed.c_str())};
}

Outcome reductions() {
  const auto& task = toy_task();
  auto c = search_config(lsbo::Method::LcaAfRt, 4);
  c.iterations = 6;
  c.stop_at.reset();
  const auto a = lsbo::run_lsbo_lca_af(c, vanilla_toy(), task.train, task.black_box);
  c.method = lsbo::Method::LcaLsbo;
  c.augmentation_size = 0;
  auto model = vanilla_toy();
  model.set_gamma(0.0);
  const auto b = lsbo::run_lca_lsbo(c, model, task.train, task.black_box);
  std::ostringstream sa, sb;
  lsbo::write_history_csv(sa, a, false);
  lsbo::write_history_csv(sb, b, false);
  bool same_models = a.records.size() == b.records.size();
  for (std::size_t i = 0; same_models && i < a.records.size(); ++i) {
    same_models = a.records[i].model_hash == b.records[i].model_hash && a.records[i].queried == b.records[i].queried;
  }
  const bool replay = sa.str() == sb.str() && same_models;

  // fixed points: every point of the identity model, and the origin of a contraction
  Rng rng = make_rng(0, "acceptance/fixed-point");
  const Tensor lat = normal_tensor(12, 2, rng);
  std::vector<double> y;
  for (std::size_t r = 0; r < 12; ++r) y.push_back(std::sin(lat(r, 0)) + lat(r, 1));
  const auto surrogate = gp::GpSurrogate::fit(lat, y, {}, {});
  double worst = 0.0;
  for (auto kind : {acq::Kind::Ucb, acq::Kind::Ei}) {
    acq::AcquisitionSpec spec = acq::AcquisitionSpec::for_dim(2);
    spec.kind = kind;
    const auto id = support::identity_vae(2);
    for (int i = 0; i < 100; ++i) {
      const std::vector<double> z{3.0 * std::normal_distribution<double>()(rng), 3.0 * std::normal_distribution<double>()(rng)};
      worst = std::max(worst, std::abs(acq::lca_af(id, surrogate, spec, z).value - acq::base_af(surrogate, spec, z)));
    }
    auto shrink = support::identity_vae(2);
    for (auto& [name, t] : shrink.params()) {
      if (name == "dec.w0") {
        for (std::size_t k = 0; k < t.size(); ++k) t.values()[k] *= 0.5;
      }
    }
    const std::vector<double> origin{0.0, 0.0};
    worst = std::max(worst, std::abs(acq::lca_af(shrink, surrogate, spec, origin).value - acq::base_af(surrogate, spec, origin)));
  }
  return {replay && worst <= 1e-9,
          fmt("gamma=0, N*=0 replay %s over %zu iterations; max |lca_af - af| at fixed points %.2e",
              replay ? "bit-identical" : "DIFFERS", a.records.size(), worst)};
}

std::vector<std::string> strip_wall_columns(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  std::set<std::size_t> drop;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') {
      out.push_back(line);
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].find("wall") != std::string::npos) drop.insert(i);
      }
      header = false;
    }
    std::string kept;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!drop.count(i)) kept += cells[i] + ",";
    }
    out.push_back(kept);
  }
  return out;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "lcalsbo_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> commands{"pretrain", "consistency-map", "run", "convergence-study", "diversity"};
  std::vector<fs::path> runs;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = root / ("rep-" + std::to_string(rep));
    fs::create_directories(dir);
    const fs::path cfg = dir / "config.json";
    std::ofstream(cfg) << support::tiny_config_json((dir / "out").string());
    const cli::CommandOptions opts{cfg.string(), 1};
    std::ostringstream log;
    for (const auto& cmd : commands) {
      if (cli::run_command(cmd, opts, log) != 0) return {false, "subcommand " + cmd + " failed: " + log.str()};
    }
    runs.push_back(cli::run_directory(cli::load_config(cfg.string()), opts));
  }
  std::size_t files = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(runs[0])) {
    if (e.path().extension() != ".csv") continue;
    ++files;
    const fs::path other = runs[1] / fs::relative(e.path(), runs[0]);
    if (!fs::exists(other) || strip_wall_columns(e.path()) != strip_wall_columns(other)) {
      ++differing;
      if (first_diff.empty()) first_diff = fs::relative(e.path(), runs[0]).string();
    }
  }
  fs::remove_all(root);
  return {files > 0 && differing == 0,
          fmt("%zu CSV files across %zu subcommands, %zu differ%s%s", files, commands.size(), differing,
              first_diff.empty() ? "" : ", first: ", first_diff.c_str())};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "autodiff soundness", 60, autodiff_soundness},
      {2, "LCL gradient", 0, lcl_gradient},
      {3, "GP oracle equivalence", 0, gp_oracle},
      {4, "KL closed form vs quadrature", 0, kl_quadrature},
      {5, "EI closed form vs Monte Carlo", 0, ei_monte_carlo},
      {6, "density vs inconsistency", 300, density_vs_inconsistency},
      {7, "LCA training reduces LCL", 600, lca_reduces_lcl},
      {8, "UCB gap tracks LCL", 0, ucb_gap_vs_lcl},
      {9, "cycle convergence vs dimension", 900, convergence_vs_dimension},
      {10, "end-to-end sample efficiency", 2700, sample_efficiency},
      {11, "reduction identities", 0, reductions},
      {12, "subcommand determinism", 0, determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += fmt("; runtime over %.0f s", c.limit_s);
    }
    std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
