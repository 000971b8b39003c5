#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lcalsbo/acquisition.hpp"
#include "lcalsbo/gp.hpp"
#include "lcalsbo/tasks.hpp"
#include "lcalsbo/vae.hpp"

/// Latent-space BO loops: the vanilla baseline, LCA-AF with optional plain
/// retraining, and LCA-LSBO with latent augmentation around each query.
namespace lcalsbo::lsbo {

enum class Method { Vanilla, VanillaRt, LcaAf, LcaAfRt, LcaLsbo };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
bool retrains(Method m);
bool uses_lca_af(Method m);

enum class Provenance { Seed, Generated };

/// Which latent an LCA method decodes: the raw argmax z (default) or the
/// trailing consistent point μ_ref. The stored latent is μ_ref either way.
enum class DecodeFrom { Trailing, Query };

std::string to_string(DecodeFrom d);
DecodeFrom decode_from_string(const std::string& s);

struct LabeledEntry {
  std::vector<double> x;
  /// Latent stored at query time; seed entries are re-encoded every iteration.
  std::vector<double> latent;
  double y = 0.0;
  Provenance provenance = Provenance::Seed;
};

struct LabeledSet {
  std::vector<LabeledEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t generated() const;
  /// Latents for the surrogate: seeds encoded with `model`, generated entries as stored.
  Tensor latents(const vae::VaeModel& model) const;
  std::vector<double> targets() const;
};

struct LsboConfig {
  Method method = Method::LcaLsbo;
  /// J
  int iterations = 50;
  int retrain_epochs = 3;
  /// N* per retraining batch; 0 disables the augmentation.
  int augmentation_size = 32;
  double reference_sigma = vae::kSearchReferenceSigma;
  int seed_instances = 10;
  int lcl_probe_size = 256;
  acq::AcquisitionSpec acquisition;
  gp::FitOptions gp;
  gp::Hyperparams gp_init;
  vae::TrainConfig train;
  std::uint64_t seed = 0;
  DecodeFrom decode_from = DecodeFrom::Query;
  /// Stop as soon as y* reaches this value.
  std::optional<double> stop_at;

  void validate(std::size_t latent_dim) const;
};

struct IterationRecord {
  int iteration = 0;
  std::vector<double> queried;
  /// Consistent point decoded and stored (equals `queried` for vanilla).
  std::vector<double> trailing;
  std::vector<double> decoded;
  double y_star = 0.0;
  double best_so_far = 0.0;
  double af_value = 0.0;
  bool converged = true;
  bool failed = false;
  std::string failure;
  /// Mean LCL over draws from N(trailing, σ_ref² I) before and after retraining.
  double lcl_before = 0.0;
  double lcl_after = 0.0;
  /// Last-epoch ELBO loss of the retrain, NaN without retraining.
  double retrain_elbo = 0.0;
  std::uint64_t model_hash = 0;
  double wall_ms = 0.0;
};

struct LsboHistory {
  Method method = Method::Vanilla;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> records;

  /// Number of evaluations until y* >= threshold, or nullopt if never reached.
  std::optional<int> evaluations_to(double threshold) const;
  double best() const;
};

/// Everything needed to continue a run after an interruption.
struct LsboState {
  vae::VaeModel model;
  LabeledSet labeled;
  LsboHistory history;
  int next_iteration = 1;
  bool finished = false;
  bool aborted = false;
};

/// Seed labeled set drawn from the unlabeled data and scored by the black box.
LsboState initial_state(const LsboConfig& config, vae::VaeModel model, const tasks::Dataset& unlabeled,
                        const tasks::BlackBoxTask& black_box);

/// Runs one BO iteration; marks the state finished at J or at `stop_at`.
void step(LsboState& state, const LsboConfig& config, const tasks::Dataset& unlabeled,
          const tasks::BlackBoxTask& black_box);

using IterationHook = std::function<void(const LsboState&)>;

/// Steps until finished; `hook` sees the state after every iteration.
LsboHistory run(LsboState& state, const LsboConfig& config, const tasks::Dataset& unlabeled,
                const tasks::BlackBoxTask& black_box, const IterationHook& hook = {});

/// vanilla or vanilla-RT: base AF maximized directly, no cycling.
LsboHistory run_vanilla_lsbo(const LsboConfig& config, vae::VaeModel model,
                             const tasks::Dataset& unlabeled, const tasks::BlackBoxTask& black_box);
/// lca-af or lca-af-RT: LCA-AF maximization, plain retraining when tagged RT.
LsboHistory run_lsbo_lca_af(const LsboConfig& config, vae::VaeModel model,
                            const tasks::Dataset& unlabeled, const tasks::BlackBoxTask& black_box);
/// lca-lsbo: LCA-AF plus retraining with latents drawn around each query.
LsboHistory run_lca_lsbo(const LsboConfig& config, vae::VaeModel model,
                         const tasks::Dataset& unlabeled, const tasks::BlackBoxTask& black_box);

/// Warm-started training on U ∪ L; `augmentation` feeds the consistency term.
vae::TrainReport retrain_step(vae::VaeModel& model, const tasks::Dataset& unlabeled,
                              const LabeledSet& labeled, const vae::Augmentation& augmentation,
                              int epochs, const vae::TrainConfig& train);

/// iteration,y_star,best_so_far,af_value,converged,lcl_at_muref,retrain_elbo,wall_ms
void write_history_csv(std::ostream& out, const LsboHistory& history, bool wall_time = true);

void save_state(std::ostream& out, const LsboState& state);
LsboState load_state(std::istream& in);

}  // namespace lcalsbo::lsbo
