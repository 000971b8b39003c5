#include "lcalsbo/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lcalsbo/stats.hpp"

namespace lcalsbo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// One JSON object; every key must be consumed before `finish`.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  Section sub(const char* key) {
    if (!j_.contains(key)) return Section(empty(), where(key));
    seen_.insert(key);
    return Section(j_.at(key), where(key));
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key '" + where(item.key().c_str()) + "'");
    }
  }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class T>
T parse_enum(Section& s, const char* key, T current, T (*from)(const std::string&), std::string (*to)(T)) {
  std::string text = to(current);
  s.get(key, text);
  try {
    return from(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(s.where(key) + ": " + e.what());
  }
}

std::string activation_name(ad::Activation a) { return vae::to_string(a); }
std::string likelihood_name(vae::Likelihood l) { return vae::to_string(l); }
std::string kind_name(acq::Kind k) { return acq::to_string(k); }
std::string layout_name(tasks::Layout l) { return tasks::to_string(l); }
std::string decode_name(lsbo::DecodeFrom d) { return lsbo::to_string(d); }

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section top(root, "");
  top.get("output_dir", c.output_dir);
  top.get("seeds", c.seeds);
  top.get("gamma_sweep", c.gamma_sweep);
  top.get("success_threshold", c.success_threshold);
  if (top.has("methods")) {
    std::vector<std::string> names;
    top.get("methods", names);
    c.methods.clear();
    for (const auto& n : names) {
      try {
        c.methods.push_back(lsbo::method_from_string(n));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("methods: ") + e.what());
      }
    }
  }

  {
    Section t = top.sub("task");
    t.get("kind", c.task.kind);
    t.get("seed", c.task.seed);
    t.get("side", c.task.clusters.side);
    t.get("clusters", c.task.clusters.clusters);
    t.get("excluded", c.task.clusters.excluded);
    t.get("per_cluster", c.task.clusters.per_cluster);
    c.task.clusters.layout =
        parse_enum(t, "layout", c.task.clusters.layout, tasks::layout_from_string, layout_name);
    t.get("spread", c.task.clusters.spread);
    t.get("blob_width", c.task.clusters.blob_width);
    t.get("position_jitter", c.task.clusters.position_jitter);
    t.get("pixel_noise", c.task.clusters.pixel_noise);
    t.get("idx_images", c.task.idx_images);
    t.get("idx_labels", c.task.idx_labels);
    t.get("target_class", c.task.target_class);
    Section k = t.sub("classifier");
    k.get("hidden", c.task.clusters.classifier.hidden);
    k.get("epochs", c.task.clusters.classifier.epochs);
    k.get("batch_size", c.task.clusters.classifier.batch_size);
    k.get("learning_rate", c.task.clusters.classifier.learning_rate);
    k.finish();
    t.finish();
  }
  {
    Section v = top.sub("vae");
    v.get("latent_dim", c.vae.shape.latent_dim);
    v.get("hidden", c.vae.shape.hidden);
    c.vae.shape.activation = parse_enum(v, "activation", c.vae.shape.activation, vae::activation_from_string,
                                        activation_name);
    c.vae.shape.likelihood = parse_enum(v, "likelihood", c.vae.shape.likelihood, vae::likelihood_from_string,
                                        likelihood_name);
    v.get("observation_sigma", c.vae.shape.observation_sigma);
    v.get("beta", c.vae.beta);
    v.get("gamma", c.vae.gamma);
    v.get("reference_sigma", c.vae.reference_sigma);
    v.finish();
  }
  {
    Section t = top.sub("train");
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    t.get("learning_rate", c.train.learning_rate);
    t.get("augmentation_size", c.train.augmentation_size);
    t.finish();
  }
  {
    Section l = top.sub("lsbo");
    l.get("iterations", c.lsbo.iterations);
    l.get("retrain_epochs", c.lsbo.retrain_epochs);
    l.get("augmentation_size", c.lsbo.augmentation_size);
    l.get("reference_sigma", c.lsbo.reference_sigma);
    l.get("seed_instances", c.lsbo.seed_instances);
    l.get("lcl_probe_size", c.lsbo.lcl_probe_size);
    c.lsbo.decode_from = parse_enum(l, "decode_from", c.lsbo.decode_from, lsbo::decode_from_string, decode_name);
    if (l.has("stop_at")) {
      const json& v = l.raw("stop_at");
      if (v.is_null()) {
        c.lsbo.stop_at.reset();
      } else if (v.is_number()) {
        c.lsbo.stop_at = v.get<double>();
      } else {
        throw ConfigError("lsbo.stop_at must be a number or null");
      }
    }
    Section g = l.sub("gp");
    g.get("restarts", c.lsbo.gp.restarts);
    g.get("steps", c.lsbo.gp.steps);
    g.get("learning_rate", c.lsbo.gp.learning_rate);
    g.get("noise_floor", c.lsbo.gp.noise_floor);
    g.get("standardize", c.lsbo.gp.standardize);
    g.get("signal_variance", c.lsbo.gp_init.signal_variance);
    g.get("lengthscale", c.lsbo.gp_init.lengthscale);
    g.get("noise_variance", c.lsbo.gp_init.noise_variance);
    g.finish();
    l.finish();
  }
  {
    Section a = top.sub("acquisition");
    c.acquisition.kind = parse_enum(a, "kind", c.acquisition.kind, acq::kind_from_string, kind_name);
    a.get("kappa", c.acquisition.kappa);
    a.get("xi", c.acquisition.xi);
    a.get("burn_in", c.acquisition.burn_in);
    a.get("max_cycles", c.acquisition.max_cycles);
    a.get("tolerance", c.acquisition.tolerance);
    a.get("box_low", c.acquisition.box_low);
    a.get("box_high", c.acquisition.box_high);
    a.get("restarts", c.acquisition.restarts);
    a.get("refine_steps", c.acquisition.refine_steps);
    a.get("initial_step", c.acquisition.initial_step);
    a.get("min_step", c.acquisition.min_step);
    a.finish();
  }
  {
    Section s = top.sub("consistency");
    s.get("grid_per_axis", c.consistency.grid.per_axis);
    s.get("grid_low", c.consistency.grid.low);
    s.get("grid_high", c.consistency.grid.high);
    s.get("samples", c.consistency.samples);
    s.get("sample_sigma", c.consistency.sample_sigma);
    s.get("trajectories", c.consistency.trajectories);
    s.finish();
  }
  {
    Section s = top.sub("convergence");
    s.get("dims", c.convergence.dims);
    s.get("radii", c.convergence.radii);
    s.get("starts", c.convergence.starts);
    s.finish();
  }
  {
    Section s = top.sub("diversity");
    s.get("samples", c.diversity.samples);
    s.get("tolerance", c.diversity.tolerance);
    s.finish();
  }
  top.finish();

  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (c.methods.empty()) throw ConfigError("methods must not be empty");
  for (double g : c.gamma_sweep) {
    if (!(g >= 0.0)) throw ConfigError("gamma_sweep values must be >= 0");
  }
  if (c.task.kind != "clusters" && c.task.kind != "idx") {
    throw ConfigError("task.kind must be 'clusters' or 'idx'");
  }
  if (c.task.kind == "idx") {
    for (const auto& p : {c.task.idx_images, c.task.idx_labels}) {
      if (p.empty() || !fs::exists(p)) throw ConfigError("IDX file not found: '" + p + "'");
    }
  }
  if (c.train.epochs < 0 || c.train.batch_size < 1) throw ConfigError("train: bad epochs or batch size");
  if (c.convergence.starts < 1) throw ConfigError("convergence.starts must be >= 1");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

json to_json(const ExperimentConfig& c, bool with_output) {
  json j;
  if (with_output) j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  j["gamma_sweep"] = c.gamma_sweep;
  j["success_threshold"] = c.success_threshold;
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.push_back(lsbo::to_string(m));
  j["methods"] = methods;
  const auto& k = c.task.clusters;
  j["task"] = {{"kind", c.task.kind},
               {"seed", c.task.seed},
               {"side", k.side},
               {"clusters", k.clusters},
               {"excluded", k.excluded},
               {"per_cluster", k.per_cluster},
               {"layout", tasks::to_string(k.layout)},
               {"spread", k.spread},
               {"blob_width", k.blob_width},
               {"position_jitter", k.position_jitter},
               {"pixel_noise", k.pixel_noise},
               {"idx_images", c.task.idx_images},
               {"idx_labels", c.task.idx_labels},
               {"target_class", c.task.target_class},
               {"classifier",
                {{"hidden", k.classifier.hidden},
                 {"epochs", k.classifier.epochs},
                 {"batch_size", k.classifier.batch_size},
                 {"learning_rate", k.classifier.learning_rate}}}};
  j["vae"] = {{"latent_dim", c.vae.shape.latent_dim},
              {"hidden", c.vae.shape.hidden},
              {"activation", vae::to_string(c.vae.shape.activation)},
              {"likelihood", vae::to_string(c.vae.shape.likelihood)},
              {"observation_sigma", c.vae.shape.observation_sigma},
              {"beta", c.vae.beta},
              {"gamma", c.vae.gamma},
              {"reference_sigma", c.vae.reference_sigma}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"augmentation_size", c.train.augmentation_size}};
  j["lsbo"] = {{"iterations", c.lsbo.iterations},
               {"retrain_epochs", c.lsbo.retrain_epochs},
               {"augmentation_size", c.lsbo.augmentation_size},
               {"reference_sigma", c.lsbo.reference_sigma},
               {"seed_instances", c.lsbo.seed_instances},
               {"lcl_probe_size", c.lsbo.lcl_probe_size},
               {"decode_from", lsbo::to_string(c.lsbo.decode_from)},
               {"stop_at", c.lsbo.stop_at ? json(*c.lsbo.stop_at) : json(nullptr)},
               {"gp",
                {{"restarts", c.lsbo.gp.restarts},
                 {"steps", c.lsbo.gp.steps},
                 {"learning_rate", c.lsbo.gp.learning_rate},
                 {"noise_floor", c.lsbo.gp.noise_floor},
                 {"standardize", c.lsbo.gp.standardize},
                 {"signal_variance", c.lsbo.gp_init.signal_variance},
                 {"lengthscale", c.lsbo.gp_init.lengthscale},
                 {"noise_variance", c.lsbo.gp_init.noise_variance}}}};
  const auto& a = c.acquisition;
  j["acquisition"] = {{"kind", acq::to_string(a.kind)},
                      {"kappa", a.kappa},
                      {"xi", a.xi},
                      {"burn_in", a.burn_in},
                      {"max_cycles", a.max_cycles},
                      {"tolerance", a.tolerance},
                      {"box_low", a.box_low},
                      {"box_high", a.box_high},
                      {"restarts", a.restarts},
                      {"refine_steps", a.refine_steps},
                      {"initial_step", a.initial_step},
                      {"min_step", a.min_step}};
  j["consistency"] = {{"grid_per_axis", c.consistency.grid.per_axis},
                      {"grid_low", c.consistency.grid.low},
                      {"grid_high", c.consistency.grid.high},
                      {"samples", c.consistency.samples},
                      {"sample_sigma", c.consistency.sample_sigma},
                      {"trajectories", c.consistency.trajectories}};
  j["convergence"] = {{"dims", c.convergence.dims},
                      {"radii", c.convergence.radii},
                      {"starts", c.convergence.starts}};
  j["diversity"] = {{"samples", c.diversity.samples}, {"tolerance", c.diversity.tolerance}};
  return j;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& config) { return to_json(config, true).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& config) {
  const std::string canon = to_json(config, false).dump();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a(canon.data(), canon.size()));
  return buf;
}

std::string run_directory(const ExperimentConfig& config, const CommandOptions& options) {
  std::string root = config.output_dir;
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') root = env;
  if (options.out) root = *options.out;
  return (fs::path(root) / "runs" / config_hash(config)).string();
}

std::string gamma_tag(double gamma) {
  if (gamma == 0.0) return "vanilla";
  char buf[64];
  std::snprintf(buf, sizeof buf, "lca-g%g", gamma);
  return buf;
}

namespace {

struct Context {
  const ExperimentConfig& config;
  const CommandOptions& options;
  std::ostream& log;
  std::string command;
  std::string dir;
  std::string hash;
};

std::vector<std::uint64_t> seeds_for(const Context& ctx) {
  if (ctx.options.seed) return {*ctx.options.seed};
  return ctx.config.seeds;
}

/// Writes `body` (header + rows) under a provenance comment line.
void write_csv(const Context& ctx, const fs::path& path, std::uint64_t seed, const std::string& body) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# lcalsbo " << kVersion << " config=" << ctx.hash << " seed=" << seed << " command=" << ctx.command
      << "\n";
  out << body;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct LoadedTask {
  tasks::Dataset train;
  tasks::BlackBoxTask black_box;
  double held_out_accuracy = 0.0;
};

LoadedTask build_task(const TaskConfig& t) {
  LoadedTask out;
  if (t.kind == "clusters") {
    Rng rng = make_rng(t.seed, "task");
    auto task = tasks::make_excluded_cluster_task(t.clusters, rng);
    out.train = std::move(task.train);
    out.black_box = std::move(task.black_box);
    out.held_out_accuracy = task.held_out_accuracy;
  } else {
    const tasks::Dataset full = tasks::load_idx(t.idx_images, t.idx_labels);
    out.train = tasks::load_idx(t.idx_images, t.idx_labels, t.target_class);
    tasks::ClassifierConfig cc = t.clusters.classifier;
    cc.seed = derive_seed(t.seed, "oracle");
    const auto clf = tasks::fit_classifier(full, t.target_class, cc);
    out.held_out_accuracy = tasks::accuracy(clf, full, t.target_class);
    out.black_box = tasks::as_black_box(clf, t.target_class);
  }
  return out;
}

vae::VaeShape shape_for(const ExperimentConfig& c, std::size_t input_dim, std::size_t latent_dim) {
  vae::VaeShape s = c.vae.shape;
  s.input_dim = input_dim;
  s.latent_dim = latent_dim;
  return s;
}

fs::path pretrain_dir(const Context& ctx, std::uint64_t seed) {
  return fs::path(ctx.dir) / "pretrain" / ("seed-" + std::to_string(seed));
}

vae::VaeModel load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) {
    throw std::runtime_error("missing checkpoint " + path.string() + " (run `lcalsbo pretrain` first)");
  }
  return vae::load_model(path.string());
}

acq::AcquisitionSpec resolved_acquisition(const ExperimentConfig& c, std::size_t dim) {
  acq::AcquisitionSpec a = c.acquisition;
  const auto d = cycles::default_cycles(dim);
  if (a.burn_in <= 0) a.burn_in = d.burn_in;
  if (a.max_cycles <= 0) a.max_cycles = d.cycles;
  return a;
}

double box_diversity(const vae::VaeModel& model, const ExperimentConfig& c, std::uint64_t seed) {
  Rng rng = make_rng(seed, "diversity/box");
  std::uniform_real_distribution<double> u(c.acquisition.box_low, c.acquisition.box_high);
  Tensor z(c.diversity.samples, model.latent_dim());
  for (double& v : z.values()) v = u(rng);
  const Tensor x = vae::decode(model, z);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < x.rows(); ++i) rows.push_back(x.row_vector(i));
  return tasks::diversity(rows, c.diversity.tolerance);
}

vae::VaeModel pretrain_one(const Context& ctx, const LoadedTask& task, std::uint64_t seed,
                           std::size_t latent_dim, double gamma, const fs::path& dir) {
  const auto& c = ctx.config;
  // Same initialization and data order for every γ, so the sweep is paired.
  vae::VaeModel model(shape_for(c, task.train.dim(), latent_dim), c.vae.beta, gamma,
                      derive_seed(seed, "pretrain/init", latent_dim));
  vae::TrainConfig tc = c.train;
  tc.seed = derive_seed(seed, "pretrain/train", latent_dim);
  const auto aug = gamma > 0.0 ? vae::Augmentation::from(
                                     vae::ReferenceDistribution::centered(latent_dim, c.vae.reference_sigma))
                               : vae::Augmentation::none();
  const auto report = vae::train(model, task.train.inputs, aug, tc);
  fs::create_directories(dir);
  vae::save_model((dir / "model.ckpt").string(), model);
  std::ostringstream loss;
  vae::write_loss_csv(loss, report);
  write_csv(ctx, dir / "loss.csv", seed, loss.str());
  return model;
}

}  // namespace

int cmd_pretrain(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  Context ctx{config, options, log, "pretrain", run_directory(config, options), config_hash(config)};
  const LoadedTask task = build_task(config.task);
  log << "task: " << task.train.size() << " training rows, oracle held-out accuracy "
      << fmt(task.held_out_accuracy) << "\n";
  for (std::uint64_t seed : seeds_for(ctx)) {
    const fs::path base = pretrain_dir(ctx, seed);
    std::ostringstream sweep;
    sweep << "gamma,tag,final_elbo,mean_lcl,box_diversity\n";
    for (double gamma : config.gamma_sweep) {
      const std::string tag = gamma_tag(gamma);
      log << "seed " << seed << ": training " << tag << "\n";
      const auto model = pretrain_one(ctx, task, seed, config.vae.shape.latent_dim, gamma, base / tag);
      const auto field = cycles::consistency_samples(
          model, {config.consistency.samples, config.consistency.sample_sigma, seed});
      const auto elbo_rng_seed = derive_seed(seed, "pretrain/elbo-eval");
      Rng erng(elbo_rng_seed);
      const double elbo = vae::elbo_loss(model, task.train.inputs, model.beta(), erng);
      sweep << fmt(gamma) << "," << tag << "," << fmt(elbo) << "," << fmt(field.mean_score()) << ","
            << fmt(box_diversity(model, config, seed)) << "\n";
    }
    write_csv(ctx, base / "sweep.csv", seed, sweep.str());
    for (std::size_t d : config.convergence.dims) {
      log << "seed " << seed << ": training dim-" << d << "\n";
      pretrain_one(ctx, task, seed, d, config.vae.gamma, base / ("dim-" + std::to_string(d)));
    }
  }
  log << "wrote " << ctx.dir << "\n";
  return 0;
}

int cmd_consistency_map(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  Context ctx{config, options, log, "consistency-map", run_directory(config, options), config_hash(config)};
  for (std::uint64_t seed : seeds_for(ctx)) {
    const fs::path out = fs::path(ctx.dir) / "consistency" / ("seed-" + std::to_string(seed));
    std::ostringstream summary;
    summary << "gamma,tag,grid_mean,sample_mean\n";
    for (double gamma : config.gamma_sweep) {
      const std::string tag = gamma_tag(gamma);
      const auto model = load_checkpoint(pretrain_dir(ctx, seed) / tag / "model.ckpt");
      const std::size_t d = model.latent_dim();
      double grid_mean = std::numeric_limits<double>::quiet_NaN();
      if (d == 2) {
        const auto grid = cycles::consistency_grid(model, config.consistency.grid);
        std::ostringstream body;
        cycles::write_field_csv(body, grid);
        write_csv(ctx, out / tag / "grid.csv", seed, body.str());
        grid_mean = grid.mean_score();
      }
      const auto samples = cycles::consistency_samples(
          model, {config.consistency.samples, config.consistency.sample_sigma, seed});
      {
        std::ostringstream body;
        cycles::write_field_csv(body, samples);
        write_csv(ctx, out / tag / "samples.csv", seed, body.str());
      }
      // Polylines from a start through its cycles to the trailing point.
      const auto spec = resolved_acquisition(config, d);
      Rng rng = make_rng(seed, "consistency/trajectories");
      std::uniform_real_distribution<double> u(config.consistency.grid.low, config.consistency.grid.high);
      std::ostringstream traj;
      traj << "trajectory,step,kind";
      for (std::size_t j = 0; j < d; ++j) traj << ",z" << (j + 1);
      traj << "\n";
      auto row = [&](int t, int step, const char* kind, const std::vector<double>& z) {
        traj << t << "," << step << "," << kind;
        for (double v : z) traj << "," << fmt(v);
        traj << "\n";
      };
      for (int t = 0; t < config.consistency.trajectories; ++t) {
        cycles::Latent z0(d);
        for (double& v : z0) v = u(rng);
        const auto trace = cycles::successive_cycles(model, z0, spec.burn_in, spec.max_cycles, spec.tolerance);
        row(t, 0, "start", z0);
        const int shown = std::min(trace.cycles, trace.iterations_to_converge() + 1);
        for (int s = 1; s <= shown; ++s) row(t, s, "cycle", trace.points[s - 1]);
        row(t, shown + 1, "trailing", trace.trailing_point());
      }
      write_csv(ctx, out / tag / "trajectories.csv", seed, traj.str());
      summary << fmt(gamma) << "," << tag << "," << fmt(grid_mean) << "," << fmt(samples.mean_score()) << "\n";
      log << "seed " << seed << " " << tag << ": mean score " << fmt(samples.mean_score()) << "\n";
    }
    write_csv(ctx, out / "consistency.csv", seed, summary.str());
  }
  return 0;
}

namespace {

std::string checkpoint_tag(const ExperimentConfig& c, lsbo::Method m) {
  return m == lsbo::Method::LcaLsbo ? gamma_tag(c.vae.gamma) : gamma_tag(0.0);
}

void save_state_file(const fs::path& path, const lsbo::LsboState& state) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    lsbo::save_state(out, state);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

int cmd_run(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  Context ctx{config, options, log, "run", run_directory(config, options), config_hash(config)};
  const LoadedTask task = build_task(config.task);
  const auto seeds = seeds_for(ctx);

  struct Cell {
    lsbo::Method method;
    std::uint64_t seed;
    std::string status = "ok";
    lsbo::LsboHistory history;
  };
  std::vector<Cell> cells;
  int failures = 0;

  for (lsbo::Method method : config.methods) {
    for (std::uint64_t seed : seeds) {
      Cell cell{method, seed};
      const fs::path dir = fs::path(ctx.dir) / (lsbo::to_string(method) + "-" + std::to_string(seed));
      try {
        fs::create_directories(dir);
        const auto model = load_checkpoint(pretrain_dir(ctx, seed) / checkpoint_tag(config, method) / "model.ckpt");
        lsbo::LsboConfig lc = config.lsbo;
        lc.method = method;
        lc.seed = seed;
        lc.train = config.train;
        lc.acquisition = resolved_acquisition(config, model.latent_dim());

        const fs::path state_path = dir / "state.txt";
        lsbo::LsboState state;
        if (fs::exists(state_path)) {
          std::ifstream in(state_path);
          state = lsbo::load_state(in);
          if (state.history.method != method || state.history.seed != seed) {
            throw std::runtime_error("state file " + state_path.string() + " belongs to another cell");
          }
          log << lsbo::to_string(method) << " seed " << seed << ": resuming at iteration "
              << state.next_iteration << "\n";
        } else {
          state = lsbo::initial_state(lc, model, task.train, task.black_box);
          save_state_file(state_path, state);
        }
        auto write_history = [&](const lsbo::LsboState& s) {
          std::ostringstream body;
          lsbo::write_history_csv(body, s.history);
          write_csv(ctx, dir / "history.csv", seed, body.str());
        };
        cell.history = lsbo::run(state, lc, task.train, task.black_box, [&](const lsbo::LsboState& s) {
          save_state_file(state_path, s);
          write_history(s);
        });
        write_history(state);
        {
          std::ostringstream body;
          body << "iteration";
          for (std::size_t j = 0; j < task.train.dim(); ++j) body << ",x" << (j + 1);
          body << "\n";
          for (const auto& r : state.history.records) {
            if (r.failed) continue;
            body << r.iteration;
            for (double v : r.decoded) body << "," << fmt(v);
            body << "\n";
          }
          write_csv(ctx, dir / "instances.csv", seed, body.str());
        }
        if (state.aborted) cell.status = "aborted";
        for (const auto& r : state.history.records) {
          if (r.failed && cell.status == "ok") cell.status = "partial";
        }
        log << lsbo::to_string(method) << " seed " << seed << ": best " << fmt(cell.history.best()) << " in "
            << cell.history.records.size() << " evaluations\n";
      } catch (const std::exception& e) {
        cell.status = std::string("failed: ") + e.what();
        log << lsbo::to_string(method) << " seed " << seed << ": " << cell.status << "\n";
      }
      if (cell.status != "ok") ++failures;
      cells.push_back(std::move(cell));
    }
  }

  // Median best-so-far per iteration; a run that stopped early carries its last value forward.
  std::ostringstream summary;
  summary << "method,iteration,median_best_so_far,cells\n";
  for (lsbo::Method method : config.methods) {
    for (int j = 1; j <= config.lsbo.iterations; ++j) {
      std::vector<double> values;
      for (const auto& cell : cells) {
        if (cell.method != method || cell.history.records.empty()) continue;
        const auto& recs = cell.history.records;
        const auto& r = recs[std::min<std::size_t>(j, recs.size()) - 1];
        if (!std::isnan(r.best_so_far)) values.push_back(r.best_so_far);
      }
      const double med = values.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::median(values);
      summary << lsbo::to_string(method) << "," << j << "," << fmt(med) << "," << values.size() << "\n";
    }
  }
  write_csv(ctx, fs::path(ctx.dir) / "summary.csv", seeds.front(), summary.str());

  std::ostringstream table;
  table << "method,seed,status,evaluations,best,evaluations_to_threshold\n";
  for (const auto& cell : cells) {
    const auto hit = cell.history.evaluations_to(config.success_threshold);
    std::string status = cell.status;
    for (char& ch : status) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    table << lsbo::to_string(cell.method) << "," << cell.seed << "," << status << ","
          << cell.history.records.size() << "," << fmt(cell.history.records.empty() ? 0.0 : cell.history.best())
          << "," << (hit ? std::to_string(*hit) : "") << "\n";
  }
  write_csv(ctx, fs::path(ctx.dir) / "cells.csv", seeds.front(), table.str());
  log << cells.size() << " cells, " << failures << " failed\n";
  return failures == 0 ? 0 : 1;
}

int cmd_convergence_study(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  Context ctx{config, options, log, "convergence-study", run_directory(config, options), config_hash(config)};
  for (std::uint64_t seed : seeds_for(ctx)) {
    std::vector<vae::VaeModel> models;
    for (std::size_t d : config.convergence.dims) {
      models.push_back(load_checkpoint(pretrain_dir(ctx, seed) / ("dim-" + std::to_string(d)) / "model.ckpt"));
    }
    std::vector<cycles::DimensionModel> dm;
    for (std::size_t i = 0; i < models.size(); ++i) dm.push_back({config.convergence.dims[i], &models[i]});
    cycles::ConvergenceStudySpec spec;
    spec.radii = config.convergence.radii;
    spec.starts = config.convergence.starts;
    spec.tolerance = config.acquisition.tolerance;
    spec.seed = seed;
    const auto study = cycles::convergence_vs_dimension(dm, spec);

    const fs::path out = fs::path(ctx.dir) / "convergence" / ("seed-" + std::to_string(seed));
    std::ostringstream rows;
    cycles::write_convergence_csv(rows, study);
    write_csv(ctx, out / "convergence.csv", seed, rows.str());
    std::ostringstream sum;
    sum << "dim,radius,median_iterations,median_final_delta,max_window_delta,converged,runs\n";
    for (const auto& s : study.summary) {
      sum << s.dim << "," << fmt(s.radius) << "," << fmt(s.median_iterations) << "," << fmt(s.median_final_delta)
          << "," << fmt(s.max_window_delta) << "," << s.converged << "," << s.runs << "\n";
    }
    write_csv(ctx, out / "summary.csv", seed, sum.str());
    for (double radius : config.convergence.radii) {
      bool monotone = true;
      double prev = -1.0;
      for (const auto& s : study.summary) {
        if (s.radius != radius) continue;
        if (s.median_iterations < prev) monotone = false;
        prev = s.median_iterations;
      }
      log << "seed " << seed << " radius " << fmt(radius) << ": median iterations "
          << (monotone ? "non-decreasing" : "NOT monotone") << " across dims\n";
    }
  }
  return 0;
}

int cmd_diversity(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  Context ctx{config, options, log, "diversity", run_directory(config, options), config_hash(config)};
  for (std::uint64_t seed : seeds_for(ctx)) {
    std::ostringstream body;
    body << "source,gamma,count,tolerance,diversity\n";
    for (double gamma : config.gamma_sweep) {
      const std::string tag = gamma_tag(gamma);
      const auto model = load_checkpoint(pretrain_dir(ctx, seed) / tag / "model.ckpt");
      const double div = box_diversity(model, config, seed);
      body << "box/" << tag << "," << fmt(gamma) << "," << config.diversity.samples << ","
           << fmt(config.diversity.tolerance) << "," << fmt(div) << "\n";
      log << "seed " << seed << " " << tag << ": diversity " << fmt(div) << "\n";
    }
    // Generated instances of finished BO runs, when present.
    for (lsbo::Method method : config.methods) {
      const fs::path state_path =
          fs::path(ctx.dir) / (lsbo::to_string(method) + "-" + std::to_string(seed)) / "state.txt";
      if (!fs::exists(state_path)) continue;
      std::ifstream in(state_path);
      const auto state = lsbo::load_state(in);
      std::vector<std::vector<double>> xs;
      for (const auto& r : state.history.records) {
        if (!r.failed) xs.push_back(r.decoded);
      }
      if (xs.empty()) continue;
      body << "run/" << lsbo::to_string(method) << ",," << xs.size() << "," << fmt(config.diversity.tolerance)
           << "," << fmt(tasks::diversity(xs, config.diversity.tolerance)) << "\n";
    }
    write_csv(ctx, fs::path(ctx.dir) / "diversity" / ("seed-" + std::to_string(seed)) / "diversity.csv", seed,
              body.str());
  }
  return 0;
}

int run_command(const std::string& name, const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = load_config(options.config_path);
  if (name == "pretrain") return cmd_pretrain(config, options, log);
  if (name == "consistency-map") return cmd_consistency_map(config, options, log);
  if (name == "run") return cmd_run(config, options, log);
  if (name == "convergence-study") return cmd_convergence_study(config, options, log);
  if (name == "diversity") return cmd_diversity(config, options, log);
  throw std::invalid_argument("unknown subcommand '" + name + "'");
}

}  // namespace lcalsbo::cli
