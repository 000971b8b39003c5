#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lcalsbo/autodiff.hpp"
#include "lcalsbo/tensor.hpp"

namespace support {

using lcalsbo::Tensor;

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

struct GradientCheck {
  double worst_relative = 0.0;
  std::size_t entries = 0;
  std::size_t failures = 0;
  std::string worst_entry;
};

/// Compares `grads` to central differences of `loss` over every parameter entry.
/// An entry passes at relative error < rel_tol, or when both values are below abs_tol.
inline GradientCheck finite_difference_check(const std::function<double(const lcalsbo::ad::ParameterSet&)>& loss,
                                             lcalsbo::ad::ParameterSet params,
                                             const lcalsbo::ad::NamedTensors& grads, double h = 1e-5,
                                             double rel_tol = 1e-4, double abs_tol = 1e-6) {
  GradientCheck out;
  for (auto& [name, tensor] : params) {
    const auto it = grads.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor.values()[i];
      tensor.values()[i] = saved + h;
      const double up = loss(params);
      tensor.values()[i] = saved - h;
      const double down = loss(params);
      tensor.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = it == grads.end() ? 0.0 : it->second.values()[i];
      const double rel = relative_error(analytic, numeric);
      const bool tiny = std::abs(analytic) < abs_tol && std::abs(numeric) < abs_tol;
      ++out.entries;
      if (!tiny) {
        if (rel > out.worst_relative) {
          out.worst_relative = rel;
          out.worst_entry = name + "[" + std::to_string(i) + "]";
        }
        if (rel >= rel_tol) ++out.failures;
      }
    }
  }
  return out;
}

using Dense = std::vector<std::vector<double>>;

/// Gauss-Jordan inverse with partial pivoting.
inline Dense invert(Dense a) {
  const std::size_t n = a.size();
  Dense inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    }
    std::swap(a[c], a[p]);
    std::swap(inv[c], inv[p]);
    const double d = a[c][c];
    for (std::size_t k = 0; k < n; ++k) {
      a[c][k] /= d;
      inv[c][k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c];
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= f * a[c][k];
        inv[r][k] -= f * inv[c][k];
      }
    }
  }
  return inv;
}

/// Determinant by Gaussian elimination with partial pivoting.
inline double determinant(Dense a) {
  const std::size_t n = a.size();
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    }
    if (p != c) {
      std::swap(a[c], a[p]);
      det = -det;
    }
    det *= a[c][c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return det;
}

inline std::vector<double> mat_vec(const Dense& a, const std::vector<double>& v) {
  std::vector<double> out(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) out[i] += a[i][j] * v[j];
  }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Composite Simpson rule on [a, b] with an even number of intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int intervals) {
  const double h = (b - a) / intervals;
  double s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

}  // namespace support
