#include "lcalsbo/cycles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>

#include "lcalsbo/stats.hpp"

namespace lcalsbo::cycles {

CycleDefaults default_cycles(std::size_t latent_dim) {
  return latent_dim <= 16 ? CycleDefaults{50, 100} : CycleDefaults{80, 120};
}

int CycleTrace::window_begin() const {
  return std::max(1, std::min(std::max(burn_in, 2), cycles - 4));
}

std::vector<Latent> CycleTrace::retained() const {
  return {points.begin() + (burn_in - 1), points.end()};
}

Latent CycleTrace::trailing_point() const {
  if (converged) return final_point();
  const auto kept = retained();
  Latent mean(start.size(), 0.0);
  for (const auto& p : kept) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += p[j];
  }
  for (double& v : mean) v /= static_cast<double>(kept.size());
  return mean;
}

double CycleTrace::max_window_delta() const {
  double m = 0.0;
  for (int j = window_begin(); j <= cycles; ++j) m = std::max(m, deltas[j - 1]);
  return m;
}

int CycleTrace::iterations_to_converge() const {
  int settled = cycles + 1;
  for (int j = cycles; j >= 1; --j) {
    if (deltas[j - 1] < tolerance) {
      settled = j;
    } else {
      break;
    }
  }
  return settled - 1;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace

Tensor cycle_batch(const vae::VaeModel& model, const Tensor& z) {
  return vae::encode_mean(model, vae::decode(model, z));
}

Latent cycle_once(const vae::VaeModel& model, std::span<const double> z) {
  if (z.size() != model.latent_dim()) {
    throw ShapeError("cycle_once expects a latent of dimension " + std::to_string(model.latent_dim()));
  }
  return cycle_batch(model, Tensor::row(z)).row_vector(0);
}

void finalize_trace(CycleTrace& trace) {
  if (trace.burn_in < 1 || trace.burn_in > trace.cycles) {
    throw std::invalid_argument("burn-in must satisfy 1 <= B <= M");
  }
  if (static_cast<int>(trace.points.size()) != trace.cycles ||
      static_cast<int>(trace.deltas.size()) != trace.cycles) {
    throw std::invalid_argument("trace must hold M points and M deltas");
  }
  trace.converged = trace.max_window_delta() < trace.tolerance;
}

CycleTrace successive_cycles(const vae::VaeModel& model, std::span<const double> z, int burn_in,
                             int cycles, double tolerance) {
  if (burn_in < 1 || burn_in > cycles) throw std::invalid_argument("burn-in must satisfy 1 <= B <= M");
  CycleTrace trace;
  trace.start.assign(z.begin(), z.end());
  trace.burn_in = burn_in;
  trace.cycles = cycles;
  trace.tolerance = tolerance;
  trace.points.reserve(cycles);
  trace.deltas.reserve(cycles);

  Latent current = trace.start;
  for (int j = 1; j <= cycles; ++j) {
    Latent next = cycle_once(model, current);
    if (next == current) {
      // exact fixed point of a deterministic map: the rest of the trace repeats it
      for (; j <= cycles; ++j) {
        trace.points.push_back(current);
        trace.deltas.push_back(0.0);
      }
      break;
    }
    trace.deltas.push_back(squared_distance(next, current));
    trace.points.push_back(next);
    current = std::move(next);
  }
  finalize_trace(trace);
  return trace;
}

double consistency_score(const vae::VaeModel& model, std::span<const double> z) {
  const Latent z1 = cycle_once(model, z);
  return squared_distance(z, z1);
}

double ConsistencyField::mean_score() const { return stats::mean(scores); }

ConsistencyField consistency_grid(const vae::VaeModel& model, const GridSpec& spec) {
  if (model.latent_dim() != 2) {
    throw std::invalid_argument("grid consistency maps need a two-dimensional latent space");
  }
  if (spec.per_axis < 1 || !(spec.low <= spec.high)) throw std::invalid_argument("bad grid spec");
  ConsistencyField field;
  field.grid = true;
  const std::size_t n = spec.per_axis;
  field.points = Tensor(n * n, 2);
  const double span = spec.high - spec.low;
  const auto coord = [&](std::size_t i) {
    return n > 1 ? spec.low + span * static_cast<double>(i) / static_cast<double>(n - 1) : spec.low;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t r = i * n + k;
      field.points(r, 0) = coord(i);
      field.points(r, 1) = coord(k);
    }
  }
  field.scores.reserve(n * n);
  for (std::size_t r = 0; r < field.points.rows(); ++r) {
    field.scores.push_back(consistency_score(model, field.points.row_span(r)));
  }
  return field;
}

ConsistencyField consistency_samples(const vae::VaeModel& model, const SampleSpec& spec) {
  Rng rng = make_rng(spec.seed, "cycles/field-samples");
  ConsistencyField field;
  field.points = vae::sample_reference(vae::ReferenceDistribution::centered(model.latent_dim(), spec.sigma),
                                       spec.count, rng);
  field.scores.reserve(spec.count);
  for (std::size_t r = 0; r < field.points.rows(); ++r) {
    field.scores.push_back(consistency_score(model, field.points.row_span(r)));
  }
  return field;
}

void write_field_csv(std::ostream& out, const ConsistencyField& field) {
  const std::size_t d = field.points.cols();
  char buf[64];
  if (field.grid) {
    out << "z1,z2,score\n";
  } else {
    out << "index";
    for (std::size_t j = 0; j < d; ++j) out << ",z" << (j + 1);
    out << ",score\n";
  }
  for (std::size_t r = 0; r < field.points.rows(); ++r) {
    if (!field.grid) out << r << ",";
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", field.points(r, j));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof buf, "%.17g", field.scores[r]);
    out << buf << "\n";
  }
}

ConvergenceStudy convergence_vs_dimension(std::span<const DimensionModel> models,
                                          const ConvergenceStudySpec& spec) {
  ConvergenceStudy study;
  for (const auto& dm : models) {
    if (dm.model == nullptr || dm.model->latent_dim() != dm.dim) {
      throw std::invalid_argument("convergence study: model does not match dimension " +
                                  std::to_string(dm.dim));
    }
    const CycleDefaults defaults = default_cycles(dm.dim);
    const int burn_in = spec.burn_in > 0 ? spec.burn_in : defaults.burn_in;
    const int cycles = spec.cycles > 0 ? spec.cycles : defaults.cycles;
    for (double radius : spec.radii) {
      ConvergenceSummary summary{dm.dim, radius};
      std::vector<double> iterations, finals;
      for (int s = 0; s < spec.starts; ++s) {
        const std::uint64_t seed = static_cast<std::uint64_t>(s);
        Rng rng = make_rng(spec.seed, "cycles/convergence-start",
                           (static_cast<std::uint64_t>(dm.dim) << 32) ^ seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        Latent z(dm.dim);
        double norm = 0.0;
        do {
          norm = 0.0;
          for (double& v : z) {
            v = normal(rng);
            norm += v * v;
          }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (double& v : z) v *= radius / norm;

        const CycleTrace trace = successive_cycles(*dm.model, z, burn_in, cycles, spec.tolerance);
        ConvergenceRow row{dm.dim, radius, seed, trace.iterations_to_converge(), trace.deltas.back(),
                           trace.max_window_delta(), trace.converged};
        study.rows.push_back(row);
        iterations.push_back(row.iterations);
        finals.push_back(row.final_delta);
        summary.max_window_delta = std::max(summary.max_window_delta, row.window_delta);
        summary.converged += row.converged ? 1 : 0;
        ++summary.runs;
      }
      if (!iterations.empty()) {
        summary.median_iterations = stats::median(iterations);
        summary.median_final_delta = stats::median(finals);
      }
      study.summary.push_back(summary);
    }
  }
  return study;
}

void write_convergence_csv(std::ostream& out, const ConvergenceStudy& study) {
  out << "dim,radius,seed,iterations,final_delta,converged\n";
  char buf[256];
  for (const auto& r : study.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%llu,%d,%.17g,%d\n", r.dim, r.radius,
                  static_cast<unsigned long long>(r.seed), r.iterations, r.final_delta,
                  r.converged ? 1 : 0);
    out << buf;
  }
}

}  // namespace lcalsbo::cycles
