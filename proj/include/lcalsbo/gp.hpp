#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lcalsbo/tensor.hpp"

/// Exact GP regression with an isotropic squared-exponential kernel
///   k(z, z') = s² · exp(−‖z − z'‖² / (2ℓ²)),   y = f(z) + N(0, σ_n²).
namespace lcalsbo::gp {

inline constexpr double kNoiseFloor = 1e-6;
inline constexpr double kMaxJitter = 1e-2;

struct Hyperparams {
  double signal_variance = 1.0;
  double lengthscale = 1.0;
  double noise_variance = 1e-4;

  std::array<double, 3> to_log() const;
  static Hyperparams from_log(const std::array<double, 3>& log_values);
};

struct FitOptions {
  int restarts = 8;
  int steps = 200;
  double learning_rate = 0.05;
  double noise_floor = kNoiseFloor;
  bool standardize = true;
  std::uint64_t seed = 0;
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

class CholeskyFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double kernel(std::span<const double> a, std::span<const double> b, const Hyperparams& hp);

struct LmlGradient {
  double value = 0.0;
  /// d LML / d (log s², log ℓ, log σ_n²)
  std::array<double, 3> grad{};
};

/// Exact LML and its log-space gradient for the given targets (used as-is).
LmlGradient lml_with_gradient(const Tensor& inputs, std::span<const double> targets,
                              const Hyperparams& hp);

class GpSurrogate {
 public:
  /// Multi-start gradient ascent on the LML in log-hyperparameter space.
  static GpSurrogate fit(const Tensor& inputs, std::span<const double> targets,
                         const Hyperparams& init, const FitOptions& options = {});
  /// Exact inference at fixed hyperparameters.
  static GpSurrogate with_hyperparams(const Tensor& inputs, std::span<const double> targets,
                                      const Hyperparams& hp, bool standardize = true,
                                      double noise_floor = kNoiseFloor);

  /// Posterior mean and variance of an observation at z, in target units.
  Prediction predict(std::span<const double> z) const;
  std::vector<Prediction> predict(const Tensor& queries) const;
  /// LML of the internal (standardized) targets.
  double log_marginal_likelihood() const { return lml_; }

  const Hyperparams& hyperparams() const { return hp_; }
  double jitter() const { return jitter_; }
  double target_mean() const { return y_mean_; }
  double target_scale() const { return y_scale_; }
  double best_target() const { return best_; }
  const Tensor& inputs() const { return inputs_; }
  std::size_t size() const { return inputs_.rows(); }
  std::size_t dim() const { return inputs_.cols(); }

 private:
  GpSurrogate() = default;
  void factorize();

  Tensor inputs_;
  std::vector<double> targets_;  // standardized
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double best_ = 0.0;
  double noise_floor_ = kNoiseFloor;
  Hyperparams hp_;
  double jitter_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;
  double lml_ = 0.0;
};

}  // namespace lcalsbo::gp
