#include "lcalsbo/acquisition.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace lcalsbo::acq {

std::string to_string(Kind kind) { return kind == Kind::Ucb ? "ucb" : "ei"; }

Kind kind_from_string(const std::string& s) {
  if (s == "ucb") return Kind::Ucb;
  if (s == "ei") return Kind::Ei;
  throw std::invalid_argument("unknown acquisition kind '" + s + "' (expected ucb or ei)");
}

AcquisitionSpec AcquisitionSpec::for_dim(std::size_t dim) {
  AcquisitionSpec spec;
  const auto d = cycles::default_cycles(dim);
  spec.burn_in = d.burn_in;
  spec.max_cycles = d.cycles;
  return spec;
}

void AcquisitionSpec::validate(std::size_t dim) const {
  if (!(kappa >= 0.0)) throw std::invalid_argument("acquisition: kappa must be >= 0");
  if (!(xi >= 0.0)) throw std::invalid_argument("acquisition: xi must be >= 0");
  if (burn_in < 1 || burn_in > max_cycles) {
    throw std::invalid_argument("acquisition: burn-in must satisfy 1 <= B <= M");
  }
  if (!lower.empty() && lower.size() != dim) throw ShapeError("acquisition: lower bound dimension");
  if (!upper.empty() && upper.size() != dim) throw ShapeError("acquisition: upper bound dimension");
  for (std::size_t j = 0; j < dim; ++j) {
    if (!(lower_bound(j) < upper_bound(j))) {
      throw std::invalid_argument("acquisition: box lower bound must be below upper bound");
    }
  }
  if (restarts < 1 || refine_steps < 0) throw std::invalid_argument("acquisition: bad search budget");
  if (!(initial_step > 0.0) || !(min_step > 0.0)) {
    throw std::invalid_argument("acquisition: pattern steps must be positive");
  }
}

double ucb(double mean, double variance, double kappa) {
  return mean + kappa * std::sqrt(std::max(variance, 0.0));
}

double ei(double mean, double variance, double y_best, double xi) {
  const double gap = mean - y_best - xi;
  const double sd = std::sqrt(std::max(variance, 0.0));
  if (sd == 0.0) return std::max(0.0, gap);
  const double u = gap / sd;
  const double cdf = 0.5 * std::erfc(-u / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, gap * cdf + sd * pdf);
}

double base_af(const gp::GpSurrogate& gp, const AcquisitionSpec& spec, std::span<const double> z) {
  const gp::Prediction p = gp.predict(z);
  return spec.kind == Kind::Ucb ? ucb(p.mean, p.variance, spec.kappa)
                                : ei(p.mean, p.variance, gp.best_target(), spec.xi);
}

double lca_af_from_trace(const gp::GpSurrogate& gp, const AcquisitionSpec& spec,
                         const cycles::CycleTrace& trace) {
  if (trace.converged) return base_af(gp, spec, trace.final_point());
  const auto kept = trace.retained();
  double sum = 0.0;
  for (const auto& z : kept) sum += base_af(gp, spec, z);
  return sum / static_cast<double>(kept.size());
}

LcaValue lca_af(const vae::VaeModel& model, const gp::GpSurrogate& gp,
                const AcquisitionSpec& spec, std::span<const double> z) {
  LcaValue out;
  out.trace = cycles::successive_cycles(model, z, spec.burn_in, spec.max_cycles, spec.tolerance);
  out.value = lca_af_from_trace(gp, spec, out.trace);
  return out;
}

namespace {

struct Evaluation {
  double value = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

using Objective = std::function<Evaluation(const cycles::Latent&)>;

Maximum pattern_search(std::size_t dim, const AcquisitionSpec& spec, Rng& rng,
                       const Objective& objective) {
  spec.validate(dim);
  Maximum best;
  best.value = -std::numeric_limits<double>::infinity();
  bool any_finite = false;

  auto evaluate = [&](const cycles::Latent& z) {
    ++best.evaluations;
    Evaluation e;
    try {
      e = objective(z);
    } catch (const NonFiniteError&) {
      e = Evaluation{};
    }
    if (!std::isfinite(e.value)) {
      e.value = -std::numeric_limits<double>::infinity();
    } else {
      any_finite = true;
    }
    return e;
  };

  // Starts are drawn up front so the stream does not depend on search outcomes.
  std::vector<cycles::Latent> starts(spec.restarts, cycles::Latent(dim));
  for (auto& s : starts) {
    for (std::size_t j = 0; j < dim; ++j) {
      std::uniform_real_distribution<double> u(spec.lower_bound(j), spec.upper_bound(j));
      s[j] = u(rng);
    }
  }

  for (std::size_t s = 0; s < starts.size(); ++s) {
    cycles::Latent x = starts[s];
    Evaluation fx = evaluate(x);
    std::vector<double> step(dim), floor(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const double width = spec.upper_bound(j) - spec.lower_bound(j);
      step[j] = spec.initial_step * width;
      floor[j] = spec.min_step * width;
    }
    for (int t = 0; t < spec.refine_steps; ++t) {
      bool improved = false;
      for (std::size_t j = 0; j < dim; ++j) {
        for (double sign : {1.0, -1.0}) {
          cycles::Latent c = x;
          c[j] = std::clamp(x[j] + sign * step[j], spec.lower_bound(j), spec.upper_bound(j));
          if (c[j] == x[j]) continue;
          const Evaluation fc = evaluate(c);
          if (fc.value > fx.value) {
            x = std::move(c);
            fx = fc;
            improved = true;
            break;
          }
        }
      }
      if (!improved) {
        bool done = true;
        for (std::size_t j = 0; j < dim; ++j) {
          step[j] *= 0.5;
          if (step[j] >= floor[j]) done = false;
        }
        if (done) break;
      }
    }
    best.starts.push_back({s, starts[s], x, fx.value, fx.converged, fx.iterations});
    if (fx.value > best.value) {
      best.value = fx.value;
      best.z = x;
    }
  }
  if (!any_finite) {
    throw NonFiniteError("acquisition maximization: all " + std::to_string(best.evaluations) +
                         " evaluations were non-finite");
  }
  return best;
}

}  // namespace

Maximum maximize_lca_af(const vae::VaeModel& model, const gp::GpSurrogate& gp,
                        const AcquisitionSpec& spec, Rng& rng) {
  Maximum m = pattern_search(model.latent_dim(), spec, rng, [&](const cycles::Latent& z) {
    const LcaValue v = lca_af(model, gp, spec, z);
    return Evaluation{v.value, v.trace.converged, v.trace.iterations_to_converge()};
  });
  m.trace = cycles::successive_cycles(model, m.z, spec.burn_in, spec.max_cycles, spec.tolerance);
  return m;
}

Maximum maximize_base_af(const gp::GpSurrogate& gp, const AcquisitionSpec& spec, Rng& rng) {
  return pattern_search(gp.dim(), spec, rng, [&](const cycles::Latent& z) {
    return Evaluation{base_af(gp, spec, z), true, 0};
  });
}

void write_maximization_csv(std::ostream& out, const Maximum& max) {
  const std::size_t d = max.z.size();
  out << "start";
  for (std::size_t j = 0; j < d; ++j) out << ",z" << (j + 1);
  out << ",value,converged,iterations\n";
  char buf[64];
  for (const auto& s : max.starts) {
    out << s.start;
    for (double v : s.best) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g,%d,%d\n", s.value, s.converged ? 1 : 0, s.iterations);
    out << buf;
  }
}

}  // namespace lcalsbo::acq
