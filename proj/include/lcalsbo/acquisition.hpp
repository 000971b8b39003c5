#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lcalsbo/cycles.hpp"
#include "lcalsbo/gp.hpp"
#include "lcalsbo/rng.hpp"
#include "lcalsbo/vae.hpp"

namespace lcalsbo::acq {

enum class Kind { Ucb, Ei };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

struct AcquisitionSpec {
  Kind kind = Kind::Ucb;
  double kappa = 2.0;
  double xi = 0.01;
  int burn_in = 50;
  int max_cycles = 100;
  double tolerance = cycles::kDefaultTolerance;
  /// Search box; empty vectors mean [box_low, box_high] in every dimension.
  std::vector<double> lower;
  std::vector<double> upper;
  double box_low = -6.0;
  double box_high = 6.0;
  int restarts = 64;
  int refine_steps = 100;
  /// Initial pattern step as a fraction of the box width.
  double initial_step = 0.1;
  /// Search from a start stops once the step falls below this fraction.
  double min_step = 1e-4;

  /// Defaults with B and M picked for the latent dimension.
  static AcquisitionSpec for_dim(std::size_t dim);
  double lower_bound(std::size_t j) const { return lower.empty() ? box_low : lower[j]; }
  double upper_bound(std::size_t j) const { return upper.empty() ? box_high : upper[j]; }
  /// Throws std::invalid_argument on κ < 0, ξ < 0, B > M, or an empty box.
  void validate(std::size_t dim) const;
};

double ucb(double mean, double variance, double kappa);
double ei(double mean, double variance, double y_best, double xi);

/// f^AF at z under the spec's base kind; EI uses the best observed target.
double base_af(const gp::GpSurrogate& gp, const AcquisitionSpec& spec, std::span<const double> z);

struct LcaValue {
  double value = 0.0;
  cycles::CycleTrace trace;
};

/// Base AF at the final point of a converged trace, otherwise the mean of the
/// base AF over the retained points z^B … z^M.
double lca_af_from_trace(const gp::GpSurrogate& gp, const AcquisitionSpec& spec,
                         const cycles::CycleTrace& trace);
LcaValue lca_af(const vae::VaeModel& model, const gp::GpSurrogate& gp,
                const AcquisitionSpec& spec, std::span<const double> z);

struct StartRecord {
  std::size_t start = 0;
  cycles::Latent initial;
  cycles::Latent best;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct Maximum {
  cycles::Latent z;
  double value = 0.0;
  /// Trace at z; empty when the base AF was maximized directly.
  cycles::CycleTrace trace;
  std::vector<StartRecord> starts;
  std::size_t evaluations = 0;
};

/// Multi-start compass search on lca_af over the box. Ties keep the lowest start index.
Maximum maximize_lca_af(const vae::VaeModel& model, const gp::GpSurrogate& gp,
                        const AcquisitionSpec& spec, Rng& rng);
/// Same search on the base AF, no cycling.
Maximum maximize_base_af(const gp::GpSurrogate& gp, const AcquisitionSpec& spec, Rng& rng);

/// start,z1..zd,value,converged,iterations per start.
void write_maximization_csv(std::ostream& out, const Maximum& max);

}  // namespace lcalsbo::acq
