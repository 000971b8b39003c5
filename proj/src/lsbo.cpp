#include "lcalsbo/lsbo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace lcalsbo::lsbo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Vanilla: return "vanilla";
    case Method::VanillaRt: return "vanilla-rt";
    case Method::LcaAf: return "lca-af";
    case Method::LcaAfRt: return "lca-af-rt";
    case Method::LcaLsbo: return "lca-lsbo";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::Vanilla, Method::VanillaRt, Method::LcaAf, Method::LcaAfRt, Method::LcaLsbo}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected vanilla, vanilla-rt, lca-af, lca-af-rt or lca-lsbo)");
}

bool retrains(Method m) {
  return m == Method::VanillaRt || m == Method::LcaAfRt || m == Method::LcaLsbo;
}

bool uses_lca_af(Method m) {
  return m == Method::LcaAf || m == Method::LcaAfRt || m == Method::LcaLsbo;
}

std::size_t LabeledSet::generated() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const LabeledEntry& e) {
    return e.provenance == Provenance::Generated;
  }));
}

Tensor LabeledSet::latents(const vae::VaeModel& model) const {
  const std::size_t d = model.latent_dim();
  Tensor z(entries.size(), d);
  std::vector<std::size_t> seeds;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].provenance == Provenance::Seed) {
      seeds.push_back(i);
    } else {
      if (entries[i].latent.size() != d) throw ShapeError("labeled latent has the wrong dimension");
      std::copy(entries[i].latent.begin(), entries[i].latent.end(), z.row_span(i).begin());
    }
  }
  if (!seeds.empty()) {
    Tensor x(seeds.size(), model.input_dim());
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      std::copy(entries[seeds[k]].x.begin(), entries[seeds[k]].x.end(), x.row_span(k).begin());
    }
    const Tensor mu = vae::encode_mean(model, x);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      std::copy(mu.row_span(k).begin(), mu.row_span(k).end(), z.row_span(seeds[k]).begin());
    }
  }
  return z;
}

std::vector<double> LabeledSet::targets() const {
  std::vector<double> y;
  y.reserve(entries.size());
  for (const auto& e : entries) y.push_back(e.y);
  return y;
}

void LsboConfig::validate(std::size_t latent_dim) const {
  if (iterations < 1) throw std::invalid_argument("lsbo: J must be >= 1");
  if (retrain_epochs < 0) throw std::invalid_argument("lsbo: retrain epochs must be >= 0");
  if (augmentation_size < 0) throw std::invalid_argument("lsbo: N* must be >= 0");
  if (!(reference_sigma > 0.0)) throw std::invalid_argument("lsbo: sigma_ref must be > 0");
  if (seed_instances < 1) throw std::invalid_argument("lsbo: need at least one seed instance");
  if (lcl_probe_size < 1) throw std::invalid_argument("lsbo: LCL probe size must be >= 1");
  acquisition.validate(latent_dim);
}

std::optional<int> LsboHistory::evaluations_to(double threshold) const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].failed && records[i].y_star >= threshold) return static_cast<int>(i + 1);
  }
  return std::nullopt;
}

double LsboHistory::best() const {
  double b = -std::numeric_limits<double>::infinity();
  for (const auto& r : records) {
    if (!r.failed) b = std::max(b, r.y_star);
  }
  return b;
}

LsboState initial_state(const LsboConfig& config, vae::VaeModel model, const tasks::Dataset& unlabeled,
                        const tasks::BlackBoxTask& black_box) {
  config.validate(model.latent_dim());
  if (unlabeled.dim() != model.input_dim()) {
    throw ShapeError("unlabeled data dimension does not match the VAE input dimension");
  }
  if (unlabeled.size() < static_cast<std::size_t>(config.seed_instances)) {
    throw std::invalid_argument("not enough unlabeled instances for the seed labeled set");
  }
  LsboState state{std::move(model)};
  state.history.method = config.method;
  state.history.seed = config.seed;

  std::vector<std::size_t> order(unlabeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(config.seed, "lsbo/seed-set");
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < config.seed_instances; ++i) {
    LabeledEntry e;
    e.x = unlabeled.inputs.row_vector(order[i]);
    e.y = black_box(e.x);
    if (!std::isfinite(e.y)) throw std::runtime_error("black box returned a non-finite seed label");
    e.provenance = Provenance::Seed;
    state.labeled.entries.push_back(std::move(e));
  }
  return state;
}

vae::TrainReport retrain_step(vae::VaeModel& model, const tasks::Dataset& unlabeled,
                              const LabeledSet& labeled, const vae::Augmentation& augmentation,
                              int epochs, const vae::TrainConfig& train) {
  if (epochs <= 0) return {};
  // U ∪ L: seed entries already live in U.
  Tensor data = unlabeled.inputs;
  const std::size_t extra = labeled.generated();
  if (extra > 0) {
    Tensor gen(extra, unlabeled.dim());
    std::size_t r = 0;
    for (const auto& e : labeled.entries) {
      if (e.provenance != Provenance::Generated) continue;
      std::copy(e.x.begin(), e.x.end(), gen.row_span(r++).begin());
    }
    data = kernels::vstack(data, gen);
  }
  vae::TrainConfig tc = train;
  tc.epochs = epochs;
  return vae::train(model, data, augmentation, tc);
}

std::string to_string(DecodeFrom d) { return d == DecodeFrom::Trailing ? "trailing" : "query"; }

DecodeFrom decode_from_string(const std::string& s) {
  if (s == "trailing") return DecodeFrom::Trailing;
  if (s == "query") return DecodeFrom::Query;
  throw std::invalid_argument("unknown decode source: " + s);
}

void step(LsboState& state, const LsboConfig& config, const tasks::Dataset& unlabeled,
          const tasks::BlackBoxTask& black_box) {
  if (state.finished) return;
  const auto t0 = std::chrono::steady_clock::now();
  const int j = state.next_iteration;
  const auto jj = static_cast<std::uint64_t>(j);
  auto& model = state.model;

  IterationRecord rec;
  rec.iteration = j;
  rec.retrain_elbo = kNaN;
  const auto& past = state.history.records;
  double best = kNaN;
  for (const auto& r : past) {
    if (!r.failed) best = std::isnan(best) ? r.y_star : std::max(best, r.y_star);
  }

  auto finish = [&] {
    rec.model_hash = model.fingerprint();
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const bool hit = !rec.failed && config.stop_at && rec.y_star >= *config.stop_at;
    state.history.records.push_back(std::move(rec));
    ++state.next_iteration;
    if (j >= config.iterations || hit) state.finished = true;
  };

  try {
    const Tensor z = state.labeled.latents(model);
    gp::FitOptions fo = config.gp;
    fo.seed = derive_seed(config.seed, "lsbo/gp", jj);
    const auto surrogate = gp::GpSurrogate::fit(z, state.labeled.targets(), config.gp_init, fo);

    Rng acq_rng = make_rng(config.seed, "lsbo/acq", jj);
    if (uses_lca_af(config.method)) {
      const acq::Maximum m = acq::maximize_lca_af(model, surrogate, config.acquisition, acq_rng);
      rec.queried = m.z;
      rec.trailing = m.trace.trailing_point();
      rec.converged = m.trace.converged;
      rec.af_value = m.value;
    } else {
      const acq::Maximum m = acq::maximize_base_af(surrogate, config.acquisition, acq_rng);
      rec.queried = m.z;
      rec.trailing = m.z;
      rec.converged = true;
      rec.af_value = m.value;
    }
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.failure = std::string("acquisition: ") + e.what();
    rec.y_star = kNaN;
    rec.best_so_far = best;
    rec.lcl_before = rec.lcl_after = kNaN;
    finish();
    return;
  }

  const auto& source = config.decode_from == DecodeFrom::Query ? rec.queried : rec.trailing;
  rec.decoded = vae::decode(model, Tensor::row(source)).row_vector(0);
  try {
    rec.y_star = black_box(rec.decoded);
    if (!std::isfinite(rec.y_star)) throw std::runtime_error("non-finite output");
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.failure = std::string("black box: ") + e.what();
    rec.y_star = kNaN;
    rec.best_so_far = best;
    rec.lcl_before = rec.lcl_after = kNaN;
    finish();
    return;
  }
  rec.best_so_far = std::isnan(best) ? rec.y_star : std::max(best, rec.y_star);
  state.labeled.entries.push_back({rec.decoded, rec.trailing, rec.y_star, Provenance::Generated});

  const vae::ReferenceDistribution p_ref{rec.trailing, config.reference_sigma};
  Rng probe_rng = make_rng(config.seed, "lsbo/lcl-probe", jj);
  const Tensor probe = vae::sample_reference(p_ref, static_cast<std::size_t>(config.lcl_probe_size), probe_rng);
  rec.lcl_before = vae::mean_lcl(model, probe);
  rec.lcl_after = rec.lcl_before;

  if (retrains(config.method)) {
    const bool augment = config.method == Method::LcaLsbo && config.augmentation_size > 0;
    const auto augmentation = augment ? vae::Augmentation::from(p_ref) : vae::Augmentation::none();
    vae::TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "lsbo/retrain", jj);
    tc.augmentation_size = config.augmentation_size;
    const vae::VaeModel last_good = model;
    try {
      const auto report = retrain_step(model, unlabeled, state.labeled, augmentation, config.retrain_epochs, tc);
      if (!report.epochs.empty()) rec.retrain_elbo = report.epochs.back().elbo;
      rec.lcl_after = vae::mean_lcl(model, probe);
    } catch (const vae::TrainingDiverged& e) {
      model = last_good;
      rec.failure = std::string("retrain: ") + e.what();
      state.aborted = true;
      state.finished = true;
    }
  }
  finish();
}

LsboHistory run(LsboState& state, const LsboConfig& config, const tasks::Dataset& unlabeled,
                const tasks::BlackBoxTask& black_box, const IterationHook& hook) {
  config.validate(state.model.latent_dim());
  while (!state.finished) {
    step(state, config, unlabeled, black_box);
    if (hook) hook(state);
  }
  return state.history;
}

namespace {

LsboHistory run_checked(const LsboConfig& config, vae::VaeModel model, const tasks::Dataset& unlabeled,
                        const tasks::BlackBoxTask& black_box, std::initializer_list<Method> allowed,
                        const char* who) {
  if (std::find(allowed.begin(), allowed.end(), config.method) == allowed.end()) {
    throw std::invalid_argument(std::string(who) + " does not handle method " + to_string(config.method));
  }
  LsboState state = initial_state(config, std::move(model), unlabeled, black_box);
  return run(state, config, unlabeled, black_box);
}

}  // namespace

LsboHistory run_vanilla_lsbo(const LsboConfig& config, vae::VaeModel model,
                             const tasks::Dataset& unlabeled, const tasks::BlackBoxTask& black_box) {
  return run_checked(config, std::move(model), unlabeled, black_box,
                     {Method::Vanilla, Method::VanillaRt}, "run_vanilla_lsbo");
}

LsboHistory run_lsbo_lca_af(const LsboConfig& config, vae::VaeModel model,
                            const tasks::Dataset& unlabeled, const tasks::BlackBoxTask& black_box) {
  return run_checked(config, std::move(model), unlabeled, black_box, {Method::LcaAf, Method::LcaAfRt},
                     "run_lsbo_lca_af");
}

LsboHistory run_lca_lsbo(const LsboConfig& config, vae::VaeModel model,
                         const tasks::Dataset& unlabeled, const tasks::BlackBoxTask& black_box) {
  return run_checked(config, std::move(model), unlabeled, black_box, {Method::LcaLsbo}, "run_lca_lsbo");
}

void write_history_csv(std::ostream& out, const LsboHistory& history, bool wall_time) {
  out << "iteration,y_star,best_so_far,af_value,converged,lcl_at_muref,retrain_elbo";
  out << (wall_time ? ",wall_ms\n" : "\n");
  char buf[512];
  for (const auto& r : history.records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d,%.17g,%.17g", r.iteration, r.y_star,
                  r.best_so_far, r.af_value, r.converged ? 1 : 0, r.lcl_after, r.retrain_elbo);
    out << buf;
    if (wall_time) {
      std::snprintf(buf, sizeof buf, ",%.3f", r.wall_ms);
      out << buf;
    }
    out << "\n";
  }
}

namespace {

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

void write_vec(std::ostream& out, const std::vector<double>& v) {
  out << v.size();
  for (double x : v) out << " " << hex(x);
  out << "\n";
}

double read_double(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw std::runtime_error("lsbo state: truncated");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw std::runtime_error("lsbo state: bad number '" + tok + "'");
  return v;
}

std::vector<double> read_vec(std::istream& in) {
  std::size_t n = 0;
  if (!(in >> n)) throw std::runtime_error("lsbo state: truncated vector");
  std::vector<double> v(n);
  for (double& x : v) x = read_double(in);
  return v;
}

void expect(std::istream& in, const char* key) {
  std::string tok;
  if (!(in >> tok) || tok != key) throw std::runtime_error(std::string("lsbo state: expected ") + key);
}

}  // namespace

void save_state(std::ostream& out, const LsboState& state) {
  out << "lcalsbo-lsbo-state 1\n";
  out << "method " << to_string(state.history.method) << "\n";
  out << "seed " << state.history.seed << "\n";
  out << "next_iteration " << state.next_iteration << "\n";
  out << "finished " << (state.finished ? 1 : 0) << " aborted " << (state.aborted ? 1 : 0) << "\n";
  out << "labeled " << state.labeled.size() << "\n";
  for (const auto& e : state.labeled.entries) {
    out << "entry " << (e.provenance == Provenance::Seed ? "seed" : "generated") << " " << hex(e.y) << "\n";
    write_vec(out, e.x);
    write_vec(out, e.latent);
  }
  out << "records " << state.history.records.size() << "\n";
  for (const auto& r : state.history.records) {
    out << "record " << r.iteration << " " << (r.failed ? 1 : 0) << " " << (r.converged ? 1 : 0) << " "
        << hex(r.y_star) << " " << hex(r.best_so_far) << " " << hex(r.af_value) << " " << hex(r.lcl_before)
        << " " << hex(r.lcl_after) << " " << hex(r.retrain_elbo) << " " << r.model_hash << " "
        << hex(r.wall_ms) << " " << std::quoted(r.failure) << "\n";
    write_vec(out, r.queried);
    write_vec(out, r.trailing);
    write_vec(out, r.decoded);
  }
  out << "model\n";
  vae::save_model(out, state.model);
}

LsboState load_state(std::istream& in) {
  std::string tok;
  int version = 0;
  if (!(in >> tok >> version) || tok != "lcalsbo-lsbo-state" || version != 1) {
    throw std::runtime_error("not an lcalsbo LSBO state file");
  }
  LsboState state;
  expect(in, "method");
  in >> tok;
  state.history.method = method_from_string(tok);
  expect(in, "seed");
  in >> state.history.seed;
  expect(in, "next_iteration");
  in >> state.next_iteration;
  int flag = 0;
  expect(in, "finished");
  in >> flag;
  state.finished = flag != 0;
  expect(in, "aborted");
  in >> flag;
  state.aborted = flag != 0;
  std::size_t n = 0;
  expect(in, "labeled");
  in >> n;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledEntry e;
    expect(in, "entry");
    in >> tok;
    e.provenance = tok == "seed" ? Provenance::Seed : Provenance::Generated;
    e.y = read_double(in);
    e.x = read_vec(in);
    e.latent = read_vec(in);
    state.labeled.entries.push_back(std::move(e));
  }
  expect(in, "records");
  in >> n;
  for (std::size_t i = 0; i < n; ++i) {
    IterationRecord r;
    expect(in, "record");
    int failed = 0, converged = 0;
    in >> r.iteration >> failed >> converged;
    r.failed = failed != 0;
    r.converged = converged != 0;
    r.y_star = read_double(in);
    r.best_so_far = read_double(in);
    r.af_value = read_double(in);
    r.lcl_before = read_double(in);
    r.lcl_after = read_double(in);
    r.retrain_elbo = read_double(in);
    in >> r.model_hash;
    r.wall_ms = read_double(in);
    in >> std::quoted(r.failure);
    r.queried = read_vec(in);
    r.trailing = read_vec(in);
    r.decoded = read_vec(in);
    state.history.records.push_back(std::move(r));
  }
  expect(in, "model");
  if (!in) throw std::runtime_error("lsbo state: truncated");
  state.model = vae::load_model(in);
  return state;
}

}  // namespace lcalsbo::lsbo
