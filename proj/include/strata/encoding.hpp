#pragma once

// Frequency encodings of positions, Gaussian ray segments and level labels.
//
// Layout of every encoding of a d-vector with L octaves: octave-major, then
// dimension, then the (sin, cos) pair:
//
//   [sin(2^0 x_0), cos(2^0 x_0), ..., sin(2^0 x_{d-1}), cos(2^0 x_{d-1}),
//    sin(2^1 x_0), cos(2^1 x_0), ...]
//
// The integrated variant multiplies both members of a pair by
// exp(-2^(2l-1) * var_i).

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "strata/autodiff.hpp"
#include "strata/geometry.hpp"

namespace strata {

struct FrequencyBands {
  int count = 1;

  explicit FrequencyBands(int l = 1) : count(l) {
    if (l < 1) throw std::invalid_argument("FrequencyBands: need at least one octave");
  }
  std::size_t output_dim(std::size_t input_dim) const {
    return 2 * input_dim * static_cast<std::size_t>(count);
  }
};

/// Gaussian approximation of a ray interval: mean and per-axis variance.
struct GaussianSegment {
  Vec3 mu = Vec3::Zero();
  Vec3 sigma_diag = Vec3::Zero();
};

namespace detail {

inline void require_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
  }
}

/// [d x dL] matrix with 2^l * scale at (i, l*d + i); for the variance
/// attenuation `power` is 2 and `scale` is -0.5.
inline Tensor frequency_matrix(std::size_t d, int bands, double power, double scale) {
  Tensor m(Shape{d, d * static_cast<std::size_t>(bands)});
  for (int l = 0; l < bands; ++l) {
    const double f = scale * std::pow(2.0, power * l);
    for (std::size_t i = 0; i < d; ++i) m.at(i, static_cast<std::size_t>(l) * d + i) = f;
  }
  return m;
}

/// Selection matrices that interleave sin/cos blocks into (sin, cos) pairs.
inline std::pair<Tensor, Tensor> interleave_matrices(std::size_t n) {
  Tensor s(Shape{n, 2 * n}), c(Shape{n, 2 * n});
  for (std::size_t k = 0; k < n; ++k) {
    s.at(k, 2 * k) = 1.0;
    c.at(k, 2 * k + 1) = 1.0;
  }
  return {std::move(s), std::move(c)};
}

inline ad::Var interleave(const ad::Var& s, const ad::Var& c) {
  auto& g = s.graph();
  auto [ps, pc] = interleave_matrices(s.shape()[1]);
  return ad::matmul(s, g.constant(std::move(ps))) + ad::matmul(c, g.constant(std::move(pc)));
}

}  // namespace detail

/// Frequency encoding of a batch of row vectors [P x d] -> [P x 2dL].
inline ad::Var positional_encode(const ad::Var& x, FrequencyBands bands) {
  ad::detail::require_rank2(x.value(), "positional_encode");
  detail::require_finite(x.value().data(), "positional_encode");
  auto& g = x.graph();
  const std::size_t d = x.shape()[1];
  ad::Var scaled = ad::matmul(x, g.constant(detail::frequency_matrix(d, bands.count, 1.0, 1.0)));
  return detail::interleave(ad::sin(scaled), ad::cos(scaled));
}

inline std::vector<double> positional_encode(std::span<const double> x, FrequencyBands bands) {
  detail::require_finite(x, "positional_encode");
  std::vector<double> out;
  out.reserve(bands.output_dim(x.size()));
  for (int l = 0; l < bands.count; ++l) {
    const double f = std::pow(2.0, l);
    for (double v : x) {
      out.push_back(std::sin(f * v));
      out.push_back(std::cos(f * v));
    }
  }
  return out;
}

/// Integrated encoding of Gaussians with means [P x d] and per-axis
/// variances [P x d].
inline ad::Var integrated_positional_encode(const ad::Var& mu, const ad::Var& var,
                                            FrequencyBands bands) {
  ad::detail::require_rank2(mu.value(), "integrated_positional_encode");
  if (mu.shape() != var.shape()) {
    throw ShapeError("integrated_positional_encode: mean " + shape_string(mu.shape()) +
                     " vs variance " + shape_string(var.shape()));
  }
  detail::require_finite(mu.value().data(), "integrated_positional_encode");
  for (double v : var.value().data()) {
    if (!(v >= 0)) throw std::invalid_argument("integrated_positional_encode: negative variance");
  }
  auto& g = mu.graph();
  const std::size_t d = mu.shape()[1];
  ad::Var scaled = ad::matmul(mu, g.constant(detail::frequency_matrix(d, bands.count, 1.0, 1.0)));
  ad::Var atten =
      ad::exp(ad::matmul(var, g.constant(detail::frequency_matrix(d, bands.count, 2.0, -0.5))));
  return detail::interleave(ad::sin(scaled) * atten, ad::cos(scaled) * atten);
}

inline std::vector<double> integrated_positional_encode(const GaussianSegment& seg,
                                                        FrequencyBands bands) {
  for (int i = 0; i < 3; ++i) {
    if (!(seg.sigma_diag[i] >= 0)) {
      throw std::invalid_argument("integrated_positional_encode: negative variance");
    }
  }
  std::vector<double> out;
  out.reserve(bands.output_dim(3));
  for (int l = 0; l < bands.count; ++l) {
    const double f = std::pow(2.0, l);
    const double vf = 0.5 * std::pow(4.0, l);
    for (int i = 0; i < 3; ++i) {
      const double a = std::exp(-vf * seg.sigma_diag[i]);
      out.push_back(std::sin(f * seg.mu[i]) * a);
      out.push_back(std::cos(f * seg.mu[i]) * a);
    }
  }
  return out;
}

/// Gaussian for the ray interval [t0, t1): the mean is the midpoint and the
/// isotropic variance is the uniform-interval variance plus the squared pixel
/// footprint at the midpoint distance.
inline GaussianSegment segment_gaussian(const Ray& ray, double t0, double t1, double base_radius) {
  if (!(t1 > t0)) throw std::invalid_argument("segment_gaussian: require t1 > t0");
  if (t0 < 0) throw std::invalid_argument("segment_gaussian: require t0 >= 0");
  if (base_radius < 0) throw std::invalid_argument("segment_gaussian: negative base radius");
  const double tm = 0.5 * (t0 + t1);
  const double width = t1 - t0;
  const double v = width * width / 12.0 + (base_radius * tm) * (base_radius * tm);
  return GaussianSegment{ray.at(tm), Vec3::Constant(v)};
}

/// Identity inside the unit ball; (2 - 1/|x|) x/|x| outside.
inline Vec3 contract(const Vec3& x) {
  const double n = x.norm();
  if (n <= 1.0) return x;
  return (2.0 - 1.0 / n) * (x / n);
}

/// Batched contract on the graph. Rows inside the unit ball get scale 1 and
/// no gradient through the norm.
inline ad::Var contract(const ad::Var& x) {
  ad::detail::require_rank2(x.value(), "contract");
  if (x.shape()[1] != 3) throw ShapeError("contract: expected [P x 3], got " + shape_string(x.shape()));
  auto& g = x.graph();
  const std::size_t p = x.shape()[0];
  Tensor outside(Shape{p, 1}), inside(Shape{p, 1});
  for (std::size_t i = 0; i < p; ++i) {
    double r2 = 0;
    for (std::size_t k = 0; k < 3; ++k) r2 += x.value().at(i, k) * x.value().at(i, k);
    (r2 > 1.0 ? outside : inside)[i] = 1.0;
  }
  ad::Var norm2 = ad::sum_axis(ad::square(x), 1) * g.constant(std::move(outside)) +
                  g.constant(std::move(inside));
  ad::Var norm = ad::sqrt(norm2);
  ad::Var factor = (2.0 * norm - 1.0) / norm2;
  return x * factor;
}

/// Frequency encoding of level / max(1, num_levels - 1).
inline std::vector<double> level_encode(int level, int num_levels, FrequencyBands bands) {
  if (level < 0) throw std::invalid_argument("level_encode: negative level");
  const double denom = std::max(1, num_levels - 1);
  const double v = static_cast<double>(level) / denom;
  return positional_encode(std::span<const double>(&v, 1), bands);
}

}  // namespace strata
