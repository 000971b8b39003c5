#include "lcalsbo/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

namespace lcalsbo::vae {

namespace {

constexpr const char* kEncoder = "enc";
constexpr const char* kDecoder = "dec";

std::vector<std::size_t> encoder_widths(const VaeShape& s) {
  std::vector<std::size_t> w{s.input_dim};
  w.insert(w.end(), s.hidden.begin(), s.hidden.end());
  w.push_back(2 * s.latent_dim);
  return w;
}

std::vector<std::size_t> decoder_widths(const VaeShape& s) {
  std::vector<std::size_t> w{s.latent_dim};
  w.insert(w.end(), s.hidden.rbegin(), s.hidden.rend());
  w.push_back(s.input_dim);
  return w;
}

void validate(const VaeShape& shape, double beta, double gamma) {
  if (shape.latent_dim < 1) throw std::invalid_argument("latent dimension must be >= 1");
  if (shape.input_dim < 1) throw std::invalid_argument("input dimension must be >= 1");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  if (!(shape.observation_sigma > 0.0)) throw std::invalid_argument("observation sigma must be > 0");
}

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& token) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') throw std::runtime_error("bad number '" + token + "'");
  return v;
}

}  // namespace

std::string to_string(Likelihood l) { return l == Likelihood::Bernoulli ? "bernoulli" : "gaussian"; }

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "bernoulli") return Likelihood::Bernoulli;
  if (s == "gaussian") return Likelihood::Gaussian;
  throw std::invalid_argument("unknown likelihood '" + s + "'");
}

std::string to_string(ad::Activation a) { return a == ad::Activation::Tanh ? "tanh" : "relu"; }

ad::Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return ad::Activation::Tanh;
  if (s == "relu") return ad::Activation::Relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

VaeModel::VaeModel(VaeShape shape, double beta, double gamma, std::uint64_t seed)
    : shape_(std::move(shape)), beta_(beta), gamma_(gamma) {
  validate(shape_, beta_, gamma_);
  Rng rng = make_rng(seed, "vae/init");
  ad::init_mlp(params_, kEncoder, encoder_widths(shape_), rng);
  ad::init_mlp(params_, kDecoder, decoder_widths(shape_), rng);
}

VaeModel::VaeModel(VaeShape shape, double beta, double gamma, ad::ParameterSet params)
    : shape_(std::move(shape)), beta_(beta), gamma_(gamma), params_(std::move(params)) {
  validate(shape_, beta_, gamma_);
  const auto check = [&](const char* prefix, const std::vector<std::size_t>& widths) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const auto& w = params_.at(std::string(prefix) + ".w" + std::to_string(i));
      const auto& b = params_.at(std::string(prefix) + ".b" + std::to_string(i));
      if (w.rows() != widths[i] || w.cols() != widths[i + 1] || b.rows() != 1 ||
          b.cols() != widths[i + 1]) {
        throw ShapeError(std::string("parameter shapes do not match the model layout in ") + prefix);
      }
    }
  };
  check(kEncoder, encoder_widths(shape_));
  check(kDecoder, decoder_widths(shape_));
}

void VaeModel::set_gamma(double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  gamma_ = gamma;
}

Encoding encode(const VaeModel& model, const Tensor& x) {
  if (x.cols() != model.input_dim()) {
    throw ShapeError("encode expects " + std::to_string(model.input_dim()) + " columns, got " +
                     x.shape_string());
  }
  const std::size_t d = model.latent_dim();
  const Tensor out = ad::mlp_forward(model.params(), kEncoder, model.layers(), x, model.shape().activation);
  Encoding e{Tensor(x.rows(), d), Tensor(x.rows(), d)};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      e.mean(i, j) = out(i, j);
      e.sigma(i, j) = std::exp(0.5 * out(i, d + j));
    }
  }
  if (!e.sigma.all_finite()) throw NonFiniteError("non-finite encoder scale");
  return e;
}

Tensor encode_mean(const VaeModel& model, const Tensor& x) {
  if (x.cols() != model.input_dim()) {
    throw ShapeError("encode expects " + std::to_string(model.input_dim()) + " columns, got " +
                     x.shape_string());
  }
  const std::size_t d = model.latent_dim();
  const Tensor out = ad::mlp_forward(model.params(), kEncoder, model.layers(), x, model.shape().activation);
  Tensor mean(x.rows(), d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) mean(i, j) = out(i, j);
  }
  return mean;
}

Tensor decode(const VaeModel& model, const Tensor& z) {
  if (z.cols() != model.latent_dim()) {
    throw ShapeError("decode expects " + std::to_string(model.latent_dim()) + " columns, got " +
                     z.shape_string());
  }
  Tensor out = ad::mlp_forward(model.params(), kDecoder, model.layers(), z, model.shape().activation);
  if (model.shape().likelihood == Likelihood::Bernoulli) kernels::apply_sigmoid(out);
  return out;
}

Tensor reparameterize(const Tensor& mean, const Tensor& sigma, Rng& rng) {
  if (!mean.same_shape(sigma)) {
    throw ShapeError("reparameterize " + mean.shape_string() + " vs " + sigma.shape_string());
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z(mean.rows(), mean.cols());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.values()[i] = mean.values()[i] + sigma.values()[i] * normal(rng);
  }
  return z;
}

Tensor sample_reference(const ReferenceDistribution& p_ref, std::size_t n, Rng& rng) {
  if (!(p_ref.sigma > 0.0)) throw std::invalid_argument("reference sigma must be > 0");
  if (p_ref.mean.empty()) throw std::invalid_argument("reference mean is empty");
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(n, p_ref.mean.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p_ref.mean.size(); ++j) {
      out(i, j) = p_ref.mean[j] + p_ref.sigma * normal(rng);
    }
  }
  return out;
}

double kl_to_standard_normal(std::span<const double> mean, std::span<const double> sigma) {
  if (mean.size() != sigma.size()) throw ShapeError("kl: mean/sigma size mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < mean.size(); ++j) {
    const double s2 = sigma[j] * sigma[j];
    kl += 0.5 * (mean[j] * mean[j] + s2 - 1.0 - std::log(s2));
  }
  return kl;
}

ad::NodeId encoder_output(ad::Graph& g, const VaeModel& model, ad::NodeId x) {
  return ad::mlp(g, model.params(), kEncoder, model.layers(), x, model.shape().activation);
}

ad::NodeId decoder_mean(ad::Graph& g, const VaeModel& model, ad::NodeId z) {
  ad::NodeId out = ad::mlp(g, model.params(), kDecoder, model.layers(), z, model.shape().activation);
  return model.shape().likelihood == Likelihood::Bernoulli ? g.sigmoid(out) : out;
}

ElboNodes elbo_nodes(ad::Graph& g, const VaeModel& model, const Tensor& batch, const Tensor& noise,
                     double beta) {
  if (batch.rows() == 0) throw std::invalid_argument("elbo on empty batch");
  const std::size_t d = model.latent_dim();
  if (noise.rows() != batch.rows() || noise.cols() != d) {
    throw ShapeError("noise " + noise.shape_string() + " for batch " + batch.shape_string());
  }
  const double inv_n = 1.0 / static_cast<double>(batch.rows());

  const auto x = g.input("x", batch);
  const auto enc = encoder_output(g, model, x);
  const auto mu = g.slice(enc, 0, d);
  const auto logvar = g.slice(enc, d, 2 * d);
  const auto sigma = g.exp(g.scale(logvar, 0.5));
  const auto z = g.add(mu, g.mul(sigma, g.constant(noise)));
  const auto logits = ad::mlp(g, model.params(), kDecoder, model.layers(), z, model.shape().activation);

  ad::NodeId recon;
  if (model.shape().likelihood == Likelihood::Bernoulli) {
    // -log p(x|z) = softplus(l) - x·l per pixel
    recon = g.sum(g.sub(g.softplus(logits), g.mul(x, logits)));
  } else {
    const double s = model.shape().observation_sigma;
    recon = g.scale(g.sum(g.square(g.sub(logits, x))), 0.5 / (s * s));
  }
  recon = g.scale(recon, inv_n);

  const auto kl_terms = g.sub(g.add(g.square(mu), g.exp(logvar)), logvar);
  const auto kl = g.add(g.scale(g.sum(kl_terms), 0.5 * inv_n),
                        g.constant(Tensor::scalar(-0.5 * static_cast<double>(d))));
  const auto loss = g.add(recon, g.scale(kl, beta));
  return {loss, recon, kl};
}

ad::NodeId lcl_nodes(ad::Graph& g, const VaeModel& model, const Tensor& latents) {
  const std::size_t d = model.latent_dim();
  if (latents.cols() != d || latents.rows() == 0) {
    throw ShapeError("lcl expects n x " + std::to_string(d) + " latents, got " + latents.shape_string());
  }
  const auto zhat = g.input("zhat", latents);
  const auto xhat = decoder_mean(g, model, zhat);
  const auto z1 = g.slice(encoder_output(g, model, xhat), 0, d);
  const auto sq = g.sum(g.square(g.sub(zhat, z1)));
  return g.scale(sq, 1.0 / static_cast<double>(latents.rows()));
}

ad::NodeId lca_objective_nodes(ad::Graph& g, const VaeModel& model, const Tensor& batch,
                               const Tensor& noise, const Tensor& latents, double beta,
                               double gamma) {
  const ElboNodes elbo = elbo_nodes(g, model, batch, noise, beta);
  // N* = 0 or γ = 0 degenerates to the plain objective.
  if (gamma == 0.0 || latents.rows() == 0) return elbo.loss;
  return g.add(elbo.loss, g.scale(lcl_nodes(g, model, latents), gamma));
}

double elbo_loss(const VaeModel& model, const Tensor& batch, const Tensor& noise, double beta) {
  ad::Graph g;
  return g.value(elbo_nodes(g, model, batch, noise, beta).loss).item();
}

double elbo_loss(const VaeModel& model, const Tensor& batch, double beta, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor noise(batch.rows(), model.latent_dim());
  for (double& v : noise.values()) v = normal(rng);
  return elbo_loss(model, batch, noise, beta);
}

double lcl(const VaeModel& model, std::span<const double> latent) {
  ad::Graph g;
  return g.value(lcl_nodes(g, model, Tensor::row(latent))).item();
}

double mean_lcl(const VaeModel& model, const Tensor& latents) {
  ad::Graph g;
  return g.value(lcl_nodes(g, model, latents)).item();
}

double lca_objective(const VaeModel& model, const Tensor& batch, const Tensor& noise,
                     const Tensor& latents, double beta, double gamma) {
  ad::Graph g;
  return g.value(lca_objective_nodes(g, model, batch, noise, latents, beta, gamma)).item();
}

TrainReport train(VaeModel& model, const Tensor& data, const Augmentation& augmentation,
                  const TrainConfig& config) {
  if (data.rows() == 0) throw std::invalid_argument("training data is empty");
  if (data.cols() != model.input_dim()) {
    throw ShapeError("training data " + data.shape_string() + " for input dim " +
                     std::to_string(model.input_dim()));
  }
  if (config.epochs < 0 || config.batch_size < 1 || config.augmentation_size < 0) {
    throw std::invalid_argument("invalid training configuration");
  }
  if (augmentation.reference && augmentation.reference->mean.size() != model.latent_dim()) {
    throw ShapeError("reference distribution dimension does not match the latent dimension");
  }
  if (!augmentation.fixed.empty() && augmentation.fixed.cols() != model.latent_dim()) {
    throw ShapeError("augmented latents " + augmentation.fixed.shape_string() +
                     " do not match the latent dimension");
  }

  Rng shuffle_rng = make_rng(config.seed, "vae/shuffle");
  Rng noise_rng = make_rng(config.seed, "vae/noise");
  Rng aug_rng = make_rng(config.seed, "vae/augment");
  std::normal_distribution<double> normal(0.0, 1.0);

  ad::AdamState adam;
  adam.learning_rate = config.learning_rate;

  const bool use_lcl = model.gamma() > 0.0 && augmentation.active() &&
                       (augmentation.reference ? config.augmentation_size > 0 : true);

  std::vector<std::size_t> order(data.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainReport report;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Tensor batch = kernels::select_rows(data, idx);
      Tensor noise(batch.rows(), model.latent_dim());
      for (double& v : noise.values()) v = normal(noise_rng);

      Tensor latents;
      if (use_lcl) {
        latents = augmentation.reference
                      ? sample_reference(*augmentation.reference,
                                         static_cast<std::size_t>(config.augmentation_size), aug_rng)
                      : augmentation.fixed;
      }

      ad::Graph g;
      double loss_value = 0.0;
      try {
        const ElboNodes elbo = elbo_nodes(g, model, batch, noise, model.beta());
        ad::NodeId loss = elbo.loss;
        double lcl_value = 0.0;
        if (use_lcl) {
          const auto l = lcl_nodes(g, model, latents);
          loss = g.add(elbo.loss, g.scale(l, model.gamma()));
          lcl_value = g.value(l).item();
        }
        loss_value = g.value(loss).item();
        const ad::Gradients grads = g.backward(loss);
        for (const auto& [name, grad] : grads.parameters()) {
          if (!grad.all_finite()) throw NonFiniteError("non-finite gradient for " + name);
        }
        ad::adam_step(model.params(), grads.parameters(), adam);
        rec.elbo += g.value(elbo.loss).item();
        rec.recon += g.value(elbo.recon).item();
        rec.kl += g.value(elbo.kl).item();
        rec.lcl_mean += lcl_value;
      } catch (const NonFiniteError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batches + 1) + ": " + e.what());
      }
      rec.loss += loss_value;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    rec.loss *= inv;
    rec.elbo *= inv;
    rec.recon *= inv;
    rec.kl *= inv;
    rec.lcl_mean *= inv;
    report.epochs.push_back(rec);
  }
  return report;
}

void write_loss_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,elbo,kl,recon,lcl_mean\n";
  char buf[256];
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.elbo, e.kl, e.recon,
                  e.lcl_mean);
    out << buf;
  }
}

void save_model(std::ostream& out, const VaeModel& model) {
  const auto& s = model.shape();
  out << "lcalsbo-vae 1\n";
  out << "input_dim " << s.input_dim << "\n";
  out << "latent_dim " << s.latent_dim << "\n";
  out << "hidden " << s.hidden.size();
  for (auto h : s.hidden) out << " " << h;
  out << "\n";
  out << "likelihood " << to_string(s.likelihood) << "\n";
  out << "activation " << to_string(s.activation) << "\n";
  out << "observation_sigma " << hex(s.observation_sigma) << "\n";
  out << "beta " << hex(model.beta()) << "\n";
  out << "gamma " << hex(model.gamma()) << "\n";
  ad::save_parameters(out, model.params());
}

VaeModel load_model(std::istream& in) {
  std::string key, value;
  int version = 0;
  if (!(in >> key >> version) || key != "lcalsbo-vae" || version != 1) {
    throw std::runtime_error("not an lcalsbo VAE checkpoint");
  }
  VaeShape shape;
  auto expect = [&](const char* name) {
    if (!(in >> key) || key != name) throw std::runtime_error(std::string("checkpoint: expected ") + name);
  };
  expect("input_dim");
  in >> shape.input_dim;
  expect("latent_dim");
  in >> shape.latent_dim;
  expect("hidden");
  std::size_t n = 0;
  in >> n;
  shape.hidden.resize(n);
  for (auto& h : shape.hidden) in >> h;
  expect("likelihood");
  in >> value;
  shape.likelihood = likelihood_from_string(value);
  expect("activation");
  in >> value;
  shape.activation = activation_from_string(value);
  expect("observation_sigma");
  in >> value;
  shape.observation_sigma = parse_double(value);
  expect("beta");
  in >> value;
  const double beta = parse_double(value);
  expect("gamma");
  in >> value;
  const double gamma = parse_double(value);
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  return VaeModel(std::move(shape), beta, gamma, ad::load_parameters(in));
}

void save_model(const std::string& path, const VaeModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  save_model(out, model);
}

VaeModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  return load_model(in);
}

}  // namespace lcalsbo::vae
