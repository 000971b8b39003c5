#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcalsbo/autodiff.hpp"
#include "lcalsbo/rng.hpp"
#include "lcalsbo/tensor.hpp"

namespace lcalsbo::vae {

enum class Likelihood { Bernoulli, Gaussian };

struct VaeShape {
  std::size_t input_dim = 64;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> hidden{256, 256};
  Likelihood likelihood = Likelihood::Bernoulli;
  ad::Activation activation = ad::Activation::Tanh;
  /// Fixed per-pixel standard deviation of the Gaussian likelihood.
  double observation_sigma = 1.0;
};

/// β-VAE with a diagonal-Gaussian encoder. The encoder emits 2d columns:
/// the mean followed by the log-variance, so σ = exp(½·logvar) > 0.
class VaeModel {
 public:
  VaeModel() = default;
  VaeModel(VaeShape shape, double beta, double gamma, std::uint64_t seed);
  VaeModel(VaeShape shape, double beta, double gamma, ad::ParameterSet params);

  const VaeShape& shape() const { return shape_; }
  std::size_t input_dim() const { return shape_.input_dim; }
  std::size_t latent_dim() const { return shape_.latent_dim; }
  std::size_t layers() const { return shape_.hidden.size() + 1; }
  double beta() const { return beta_; }
  double gamma() const { return gamma_; }
  void set_gamma(double gamma);

  const ad::ParameterSet& params() const { return params_; }
  ad::ParameterSet& params() { return params_; }
  std::uint64_t fingerprint() const { return ad::parameter_hash(params_); }

 private:
  VaeShape shape_;
  double beta_ = 1.0;
  double gamma_ = 0.0;
  ad::ParameterSet params_;
};

struct Encoding {
  Tensor mean;
  Tensor sigma;
};

/// Spherical N(μ_ref, σ_ref² I) used to draw augmented latents.
struct ReferenceDistribution {
  std::vector<double> mean;
  double sigma = 2.0;

  static ReferenceDistribution centered(std::size_t dim, double sigma) {
    return {std::vector<double>(dim, 0.0), sigma};
  }
};

inline constexpr double kPretrainReferenceSigma = 2.0;
inline constexpr double kSearchReferenceSigma = 0.3;

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  /// N*: augmented latents per batch; 0 disables the consistency term.
  int augmentation_size = 32;
  std::uint64_t seed = 0;
};

/// Source of the latents fed to the consistency term during training.
struct Augmentation {
  /// Fresh N* draws per batch from this distribution.
  std::optional<ReferenceDistribution> reference;
  /// Or a fixed set reused in every batch.
  Tensor fixed;

  static Augmentation none() { return {}; }
  static Augmentation from(ReferenceDistribution p) { return {std::move(p), {}}; }
  static Augmentation from(Tensor latents) { return {std::nullopt, std::move(latents)}; }
  bool active() const { return reference.has_value() || !fixed.empty(); }
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // elbo loss + γ·lcl, minimized
  double elbo = 0.0;  // recon + β·kl, i.e. -J_VAE
  double kl = 0.0;
  double recon = 0.0;
  double lcl_mean = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rows of x -> (μ, σ).
Encoding encode(const VaeModel& model, const Tensor& x);
Tensor encode_mean(const VaeModel& model, const Tensor& x);
/// Deterministic decoder mean; in (0,1) under the Bernoulli likelihood.
Tensor decode(const VaeModel& model, const Tensor& z);

Tensor reparameterize(const Tensor& mean, const Tensor& sigma, Rng& rng);
Tensor sample_reference(const ReferenceDistribution& p_ref, std::size_t n, Rng& rng);

/// KL(N(μ, σ²) ‖ N(0, 1)) summed over dimensions.
double kl_to_standard_normal(std::span<const double> mean, std::span<const double> sigma);

// Taped pieces of the objective, exposed so gradient checks can reach them.
struct ElboNodes {
  ad::NodeId loss;
  ad::NodeId recon;
  ad::NodeId kl;
};
ad::NodeId encoder_output(ad::Graph& g, const VaeModel& model, ad::NodeId x);
ad::NodeId decoder_mean(ad::Graph& g, const VaeModel& model, ad::NodeId z);
/// `noise` holds the standard-normal ε used by the reparameterized sample.
ElboNodes elbo_nodes(ad::Graph& g, const VaeModel& model, const Tensor& batch, const Tensor& noise,
                     double beta);
/// Mean over rows of ‖ẑ − μ_enc(dec(ẑ))‖².
ad::NodeId lcl_nodes(ad::Graph& g, const VaeModel& model, const Tensor& latents);
ad::NodeId lca_objective_nodes(ad::Graph& g, const VaeModel& model, const Tensor& batch,
                               const Tensor& noise, const Tensor& latents, double beta,
                               double gamma);

/// Negated J_VAE, averaged over the batch, single reparameterized sample.
double elbo_loss(const VaeModel& model, const Tensor& batch, double beta, Rng& rng);
double elbo_loss(const VaeModel& model, const Tensor& batch, const Tensor& noise, double beta);
/// ‖ẑ − ẑ¹‖² for a single latent, where ẑ¹ is the encoder mean of dec(ẑ).
double lcl(const VaeModel& model, std::span<const double> latent);
double mean_lcl(const VaeModel& model, const Tensor& latents);
double lca_objective(const VaeModel& model, const Tensor& batch, const Tensor& noise,
                     const Tensor& latents, double beta, double gamma);

struct TrainReport {
  std::vector<EpochRecord> epochs;
};

/// Minibatch Adam on the consistency-aware objective. Updates `model` in place.
TrainReport train(VaeModel& model, const Tensor& data, const Augmentation& augmentation,
                  const TrainConfig& config);

void write_loss_csv(std::ostream& out, const TrainReport& report);

/// Checkpoint = small header + the autodiff parameter container.
void save_model(std::ostream& out, const VaeModel& model);
VaeModel load_model(std::istream& in);
void save_model(const std::string& path, const VaeModel& model);
VaeModel load_model(const std::string& path);

std::string to_string(Likelihood l);
Likelihood likelihood_from_string(const std::string& s);
std::string to_string(ad::Activation a);
ad::Activation activation_from_string(const std::string& s);

}  // namespace lcalsbo::vae
