#include "lcalsbo/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lcalsbo/rng.hpp"

namespace lcalsbo::gp {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

struct Bounds {
  double lo, hi;
};

// log s², log ℓ, log σ_n²; the noise lower bound comes from the floor.
constexpr Bounds kSignalBounds{-6.907755278982137, 6.907755278982137};  // 1e-3 .. 1e3
constexpr Bounds kLengthBounds{-4.605170185988091, 4.605170185988091};  // 1e-2 .. 1e2
constexpr double kNoiseUpper = 0.0;                                     // σ_n² <= 1

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

void check_data(const Tensor& inputs, std::span<const double> targets) {
  if (inputs.rows() == 0) throw std::invalid_argument("GP needs at least one training point");
  if (inputs.rows() != targets.size()) {
    throw ShapeError("GP: " + std::to_string(inputs.rows()) + " inputs but " +
                     std::to_string(targets.size()) + " targets");
  }
  for (double y : targets) {
    if (!std::isfinite(y)) throw std::invalid_argument("GP targets must be finite");
  }
}

Eigen::MatrixXd signal_gram(const Tensor& inputs, const Hyperparams& hp) {
  const auto n = static_cast<Eigen::Index>(inputs.rows());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel(inputs.row_span(i), inputs.row_span(j), hp);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

// Cholesky of K + (σ_n² + jitter) I, escalating jitter ×10 from 1e-8 to 1e-2.
Eigen::LLT<Eigen::MatrixXd> factor_with_jitter(const Eigen::MatrixXd& gram, double noise,
                                               double& jitter) {
  const auto n = gram.rows();
  Eigen::MatrixXd k = gram;
  k.diagonal().array() += noise;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  jitter = 0.0;
  if (llt.info() == Eigen::Success) return llt;
  for (double j = 1e-8; j <= kMaxJitter * (1 + 1e-12); j *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += j;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) {
      jitter = j;
      return llt;
    }
  }
  (void)n;
  throw CholeskyFailure("Cholesky failed even with jitter " + std::to_string(kMaxJitter) +
                        " (noise " + std::to_string(noise) + ")");
}

}  // namespace

std::array<double, 3> Hyperparams::to_log() const {
  return {std::log(signal_variance), std::log(lengthscale), std::log(noise_variance)};
}

Hyperparams Hyperparams::from_log(const std::array<double, 3>& v) {
  return {std::exp(v[0]), std::exp(v[1]), std::exp(v[2])};
}

double kernel(std::span<const double> a, std::span<const double> b, const Hyperparams& hp) {
  return hp.signal_variance *
         std::exp(-0.5 * squared_distance(a, b) / (hp.lengthscale * hp.lengthscale));
}

LmlGradient lml_with_gradient(const Tensor& inputs, std::span<const double> targets,
                              const Hyperparams& hp) {
  check_data(inputs, targets);
  const auto n = static_cast<Eigen::Index>(inputs.rows());
  const Eigen::MatrixXd kf = signal_gram(inputs, hp);
  double jitter = 0.0;
  const auto llt = factor_with_jitter(kf, hp.noise_variance, jitter);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(targets.data(), n);
  const Eigen::VectorXd alpha = llt.solve(y);

  LmlGradient out;
  const Eigen::MatrixXd l = llt.matrixL();
  out.value = -0.5 * y.dot(alpha) - l.diagonal().array().log().sum() - 0.5 * static_cast<double>(n) * kLogTwoPi;

  const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd w = alpha * alpha.transpose() - kinv;
  const double inv_l2 = 1.0 / (hp.lengthscale * hp.lengthscale);
  double g_signal = 0.0, g_length = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r2 = squared_distance(inputs.row_span(i), inputs.row_span(j));
      g_signal += w(i, j) * kf(i, j);
      g_length += w(i, j) * kf(i, j) * r2 * inv_l2;
    }
  }
  out.grad[0] = 0.5 * g_signal;
  out.grad[1] = 0.5 * g_length;
  out.grad[2] = 0.5 * hp.noise_variance * w.trace();
  return out;
}

GpSurrogate GpSurrogate::with_hyperparams(const Tensor& inputs, std::span<const double> targets,
                                          const Hyperparams& hp, bool standardize,
                                          double noise_floor) {
  check_data(inputs, targets);
  if (!(hp.signal_variance > 0.0) || !(hp.lengthscale > 0.0)) {
    throw std::invalid_argument("GP hyperparameters must be positive");
  }
  GpSurrogate gp;
  gp.inputs_ = inputs;
  gp.noise_floor_ = noise_floor;
  gp.best_ = *std::max_element(targets.begin(), targets.end());
  const auto n = static_cast<double>(targets.size());
  if (standardize) {
    double mean = 0.0;
    for (double y : targets) mean += y;
    mean /= n;
    double var = 0.0;
    for (double y : targets) var += (y - mean) * (y - mean);
    var /= n;
    gp.y_mean_ = mean;
    gp.y_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  gp.targets_.reserve(targets.size());
  for (double y : targets) gp.targets_.push_back((y - gp.y_mean_) / gp.y_scale_);
  gp.hp_ = hp;
  gp.hp_.noise_variance = std::max(hp.noise_variance, noise_floor);
  gp.factorize();
  return gp;
}

void GpSurrogate::factorize() {
  const auto n = static_cast<Eigen::Index>(inputs_.rows());
  const Eigen::MatrixXd kf = signal_gram(inputs_, hp_);
  chol_ = factor_with_jitter(kf, hp_.noise_variance, jitter_);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(targets_.data(), n);
  alpha_ = chol_.solve(y);
  const Eigen::MatrixXd l = chol_.matrixL();
  lml_ = -0.5 * y.dot(alpha_) - l.diagonal().array().log().sum() - 0.5 * static_cast<double>(n) * kLogTwoPi;
}

GpSurrogate GpSurrogate::fit(const Tensor& inputs, std::span<const double> targets,
                             const Hyperparams& init, const FitOptions& options) {
  // Standardization happens once; the search runs on the standardized targets.
  GpSurrogate base = with_hyperparams(inputs, targets, init, options.standardize, options.noise_floor);
  const std::vector<double>& ys = base.targets_;
  const double noise_lo = std::log(options.noise_floor);

  auto clamp_log = [&](std::array<double, 3>& v) {
    v[0] = std::clamp(v[0], kSignalBounds.lo, kSignalBounds.hi);
    v[1] = std::clamp(v[1], kLengthBounds.lo, kLengthBounds.hi);
    v[2] = std::clamp(v[2], noise_lo, kNoiseUpper);
  };

  Rng rng = make_rng(options.seed, "gp/restarts");
  std::normal_distribution<double> normal(0.0, 1.0);

  bool found = false;
  double best_lml = -std::numeric_limits<double>::infinity();
  Hyperparams best_hp = base.hp_;
  std::string last_error;

  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    std::array<double, 3> theta = init.to_log();
    if (r > 0) {
      for (double& v : theta) v += normal(rng);
    }
    clamp_log(theta);
    std::array<double, 3> m{}, s{};
    const double b1 = 0.9, b2 = 0.999;
    bool ok = true;
    double value = -std::numeric_limits<double>::infinity();
    try {
      for (int step = 1; step <= options.steps; ++step) {
        const LmlGradient lg = lml_with_gradient(inputs, ys, Hyperparams::from_log(theta));
        for (int k = 0; k < 3; ++k) {
          m[k] = b1 * m[k] + (1 - b1) * lg.grad[k];
          s[k] = b2 * s[k] + (1 - b2) * lg.grad[k] * lg.grad[k];
          const double mhat = m[k] / (1 - std::pow(b1, step));
          const double shat = s[k] / (1 - std::pow(b2, step));
          theta[k] += options.learning_rate * mhat / (std::sqrt(shat) + 1e-8);
        }
        clamp_log(theta);
      }
      value = lml_with_gradient(inputs, ys, Hyperparams::from_log(theta)).value;
    } catch (const CholeskyFailure& e) {
      ok = false;
      last_error = e.what();
    }
    if (ok && std::isfinite(value) && value > best_lml) {
      best_lml = value;
      best_hp = Hyperparams::from_log(theta);
      found = true;
    }
  }
  if (!found) {
    throw CholeskyFailure("GP fit: every restart failed; last error: " + last_error);
  }
  base.hp_ = best_hp;
  base.hp_.noise_variance = std::max(best_hp.noise_variance, options.noise_floor);
  base.factorize();
  return base;
}

Prediction GpSurrogate::predict(std::span<const double> z) const {
  if (z.size() != inputs_.cols()) {
    throw ShapeError("GP predict expects dimension " + std::to_string(inputs_.cols()));
  }
  const auto n = static_cast<Eigen::Index>(inputs_.rows());
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks(i) = kernel(inputs_.row_span(i), z, hp_);
  const double mean = ks.dot(alpha_);
  const Eigen::VectorXd v = chol_.matrixL().solve(ks);
  double var = hp_.signal_variance + hp_.noise_variance + jitter_ - v.squaredNorm();
  var = std::max(var, 0.0);
  return {y_mean_ + y_scale_ * mean, y_scale_ * y_scale_ * var};
}

std::vector<Prediction> GpSurrogate::predict(const Tensor& queries) const {
  std::vector<Prediction> out;
  out.reserve(queries.rows());
  for (std::size_t r = 0; r < queries.rows(); ++r) out.push_back(predict(queries.row_span(r)));
  return out;
}

}  // namespace lcalsbo::gp
