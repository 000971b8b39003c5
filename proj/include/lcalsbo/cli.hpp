#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lcalsbo/acquisition.hpp"
#include "lcalsbo/cycles.hpp"
#include "lcalsbo/lsbo.hpp"
#include "lcalsbo/tasks.hpp"
#include "lcalsbo/vae.hpp"

/// Config-driven entry points behind the `lcalsbo` binary.
namespace lcalsbo::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "LCALSBO_OUTPUT_ROOT";

struct TaskConfig {
  /// "clusters" (synthetic blobs) or "idx" (image + label files).
  std::string kind = "clusters";
  tasks::ClusterTaskSpec clusters;
  std::uint64_t seed = 0;
  std::string idx_images;
  std::string idx_labels;
  int target_class = 0;
};

struct VaeConfig {
  vae::VaeShape shape;
  double beta = 1.0;
  /// γ used by lca-lsbo and the per-dimension models.
  double gamma = 0.01;
  double reference_sigma = vae::kPretrainReferenceSigma;
};

struct ConsistencyConfig {
  cycles::GridSpec grid;
  std::size_t samples = 1000;
  double sample_sigma = 2.0;
  int trajectories = 20;
};

struct ConvergenceConfig {
  std::vector<std::size_t> dims{2, 8, 16};
  std::vector<double> radii{3.0, 4.0};
  int starts = 20;
};

struct DiversityConfig {
  std::size_t samples = 1000;
  double tolerance = 0.02;
};

struct ExperimentConfig {
  TaskConfig task;
  VaeConfig vae;
  vae::TrainConfig train;
  /// Method list for `run`; method/seed fields of `lsbo` are filled per cell.
  std::vector<lsbo::Method> methods{lsbo::Method::VanillaRt, lsbo::Method::LcaLsbo};
  lsbo::LsboConfig lsbo;
  /// B = M = 0 picks the dimension defaults.
  acq::AcquisitionSpec acquisition{.burn_in = 0, .max_cycles = 0};
  double success_threshold = 0.9;
  ConsistencyConfig consistency;
  ConvergenceConfig convergence;
  DiversityConfig diversity;
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> gamma_sweep{0.0, 0.01, 0.1, 1.0, 10.0};
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// JSON text -> config. Unknown keys and missing referenced files raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Canonical JSON with every field spelled out.
std::string serialize_config(const ExperimentConfig& config);
/// Hex FNV-1a of the canonical JSON, excluding the output directory.
std::string config_hash(const ExperimentConfig& config);

struct CommandOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

/// Each returns the process exit code and reports progress to `log`.
int cmd_pretrain(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);
int cmd_consistency_map(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);
int cmd_run(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);
int cmd_convergence_study(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);
int cmd_diversity(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);

/// Dispatches by subcommand name; loads the config first.
int run_command(const std::string& name, const CommandOptions& options, std::ostream& log);

/// <root>/runs/<config-hash>, root from --out, then the environment, then the config.
std::string run_directory(const ExperimentConfig& config, const CommandOptions& options);

/// Label for a pretraining γ: "vanilla" for 0, else "lca-g<γ>".
std::string gamma_tag(double gamma);

}  // namespace lcalsbo::cli
