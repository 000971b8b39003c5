#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "lcalsbo/rng.hpp"
#include "lcalsbo/vae.hpp"

namespace lcalsbo::cycles {

using Latent = std::vector<double>;

inline constexpr double kDefaultTolerance = 1e-6;

struct CycleDefaults {
  int burn_in;
  int cycles;
};

/// B = 50, M = 100 up to 16 latent dimensions; B = 80, M = 120 beyond.
CycleDefaults default_cycles(std::size_t latent_dim);

/// Result of repeatedly applying z -> μ_enc(dec(z)).
struct CycleTrace {
  Latent start;
  std::vector<Latent> points;  // z¹ … z^M
  std::vector<double> deltas;  // ‖z^j − z^{j−1}‖², delta₁ against the start
  int burn_in = 1;
  int cycles = 1;
  double tolerance = kDefaultTolerance;
  bool converged = false;

  /// 1-based index of the first delta in the convergence window [max(B, 2), M],
  /// widened to the last five deltas when that is shorter.
  int window_begin() const;
  /// z^j for j in [B, M].
  std::vector<Latent> retained() const;
  const Latent& final_point() const { return points.back(); }
  /// Final point when converged, otherwise the mean of the retained set.
  Latent trailing_point() const;
  double max_window_delta() const;
  /// Cycles until the delta sequence stays below tolerance for good (0 for a fixed point).
  int iterations_to_converge() const;
};

Latent cycle_once(const vae::VaeModel& model, std::span<const double> z);
/// Row-wise cycle of a batch of latents.
Tensor cycle_batch(const vae::VaeModel& model, const Tensor& z);

CycleTrace successive_cycles(const vae::VaeModel& model, std::span<const double> z, int burn_in,
                             int cycles, double tolerance = kDefaultTolerance);

/// Fills in window bookkeeping for a trace assembled by hand.
void finalize_trace(CycleTrace& trace);

/// ‖z − z¹‖²; same value as vae::lcl.
double consistency_score(const vae::VaeModel& model, std::span<const double> z);

struct GridSpec {
  std::size_t per_axis = 50;
  double low = -4.0;
  double high = 4.0;
};

struct SampleSpec {
  std::size_t count = 1000;
  double sigma = 2.0;
  std::uint64_t seed = 0;
};

struct ConsistencyField {
  Tensor points;  // one latent per row
  std::vector<double> scores;
  bool grid = false;

  double mean_score() const;
};

/// Regular per_axis² grid; only for two-dimensional latent spaces.
ConsistencyField consistency_grid(const vae::VaeModel& model, const GridSpec& spec);
/// Scores at draws from N(0, σ² I).
ConsistencyField consistency_samples(const vae::VaeModel& model, const SampleSpec& spec);

/// Grid CSV: z1,z2,score. Sampled CSV: index,z1..zd,score.
void write_field_csv(std::ostream& out, const ConsistencyField& field);

struct ConvergenceRow {
  std::size_t dim = 0;
  double radius = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
  double final_delta = 0.0;
  double window_delta = 0.0;
  bool converged = false;
};

struct ConvergenceSummary {
  std::size_t dim = 0;
  double radius = 0.0;
  double median_iterations = 0.0;
  double median_final_delta = 0.0;
  double max_window_delta = 0.0;
  int converged = 0;
  int runs = 0;
};

struct DimensionModel {
  std::size_t dim;
  const vae::VaeModel* model;
};

struct ConvergenceStudySpec {
  std::vector<double> radii{3.0, 4.0};
  int starts = 20;
  /// <= 0 picks default_cycles(dim).
  int burn_in = 0;
  int cycles = 0;
  double tolerance = kDefaultTolerance;
  std::uint64_t seed = 0;
};

struct ConvergenceStudy {
  std::vector<ConvergenceRow> rows;
  std::vector<ConvergenceSummary> summary;
};

/// Starts are radius·u for seeded uniform unit directions u.
ConvergenceStudy convergence_vs_dimension(std::span<const DimensionModel> models,
                                          const ConvergenceStudySpec& spec);

void write_convergence_csv(std::ostream& out, const ConvergenceStudy& study);

}  // namespace lcalsbo::cycles
