#pragma once

// Ray generation, interval sampling and differentiable volume rendering.
//
// For K intervals with densities sigma_i and widths delta_i:
//   alpha_i = 1 - exp(-sigma_i delta_i)
//   T_i     = exp(-sum_{j<i} sigma_j delta_j)
//   w_i     = T_i alpha_i
//   color   = sum_i w_i c_i + (1 - sum_i w_i) background
//   depth   = sum_i w_i tmid_i / max(sum_i w_i, 1e-10)

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata/autodiff.hpp"
#include "strata/encoding.hpp"
#include "strata/field.hpp"
#include "strata/geometry.hpp"
#include "strata/image.hpp"

namespace strata {

/// Interval boundaries along one ray, the rendering weights of each interval
/// and the boundaries normalized to [0, 1].
struct SampleSet {
  std::vector<double> t_edges;
  std::vector<double> weights;
  std::vector<double> s;

  std::size_t intervals() const { return t_edges.empty() ? 0 : t_edges.size() - 1; }
};

inline std::vector<double> normalized_edges(const std::vector<double>& edges, double t_near, double t_far) {
  std::vector<double> s(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) s[i] = (edges[i] - t_near) / (t_far - t_near);
  return s;
}

/// Ray through pixel (px, py). Without jitter the ray passes through the pixel
/// center; jitter in [0,1)^2 replaces the 0.5 offsets.
inline Ray generate_ray(const Camera& cam, int px, int py, std::optional<Eigen::Vector2d> jitter = std::nullopt) {
  if (px < 0 || py < 0 || px >= cam.width || py >= cam.height) {
    throw std::out_of_range("generate_ray: pixel (" + std::to_string(px) + ", " + std::to_string(py) +
                            ") outside " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
  }
  const Eigen::Vector2d j = jitter.value_or(Eigen::Vector2d(0.5, 0.5));
  const double u = px + j.x(), v = py + j.y();
  const Vec3 d_cam((u - 0.5 * cam.width) / cam.focal, -(v - 0.5 * cam.height) / cam.focal, -1.0);
  Ray ray;
  ray.origin = cam.position();
  ray.direction = (cam.rotation() * d_cam).normalized();
  ray.t_near = cam.t_near;
  ray.t_far = cam.t_far;
  ray.pixel_footprint = 1.0 / (cam.focal * std::sqrt(12.0));
  ray.level = cam.level;
  return ray;
}

/// K intervals partitioning [t_near, t_far]. With jitter each interior edge
/// is drawn uniformly within half a bin of its regular position.
inline SampleSet stratified_sample(const Ray& ray, int k, std::mt19937_64& rng, bool jittered) {
  if (k < 1) throw std::invalid_argument("stratified_sample: need at least one interval");
  const double range = ray.t_far - ray.t_near;
  SampleSet out;
  out.t_edges.resize(static_cast<std::size_t>(k) + 1);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  for (int i = 0; i <= k; ++i) {
    double pos = i;
    if (jittered && i > 0 && i < k) pos += 0.999 * unit(rng);
    out.t_edges[static_cast<std::size_t>(i)] = ray.t_near + range * pos / k;
  }
  out.t_edges.front() = ray.t_near;
  out.t_edges.back() = ray.t_far;
  out.weights.assign(static_cast<std::size_t>(k), 0.0);
  out.s = normalized_edges(out.t_edges, ray.t_near, ray.t_far);
  return out;
}

/// Draws k_fine extra edges from the piecewise-constant density whose mass on
/// interval i is w_i + floor * width_i / (t_far - t_near), and merges them
/// with the coarse edges.
inline SampleSet hierarchical_resample(const SampleSet& coarse, int k_fine, std::mt19937_64& rng,
                                       bool jittered = true, double floor = 0.01) {
  if (k_fine < 0) throw std::invalid_argument("hierarchical_resample: negative sample count");
  if (k_fine == 0) return coarse;
  const std::size_t k = coarse.intervals();
  if (k == 0 || coarse.weights.size() != k) {
    throw std::invalid_argument("hierarchical_resample: coarse weights not populated");
  }
  const double t0 = coarse.t_edges.front(), t1 = coarse.t_edges.back();
  std::vector<double> cdf(k + 1, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double width = coarse.t_edges[i + 1] - coarse.t_edges[i];
    const double mass = std::max(coarse.weights[i], 0.0) + floor * width / (t1 - t0);
    cdf[i + 1] = cdf[i] + mass;
  }
  const double total = cdf.back();
  if (!(total > 0)) throw std::invalid_argument("hierarchical_resample: all weights are zero");
  for (double& c : cdf) c /= total;

  std::vector<double> edges = coarse.t_edges;
  edges.reserve(k + 1 + static_cast<std::size_t>(k_fine));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int j = 0; j < k_fine; ++j) {
    const double u = (j + (jittered ? unit(rng) : 0.5)) / k_fine;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t i = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(it - cdf.begin() - 1, 0,
                                                                         static_cast<std::ptrdiff_t>(k) - 1));
    while (i + 1 < k && cdf[i + 1] <= u) ++i;  // skip zero-mass intervals
    const double span = cdf[i + 1] - cdf[i];
    const double frac = span > 0 ? std::clamp((u - cdf[i]) / span, 0.0, 1.0) : 0.5;
    edges.push_back(coarse.t_edges[i] + frac * (coarse.t_edges[i + 1] - coarse.t_edges[i]));
  }
  std::sort(edges.begin(), edges.end());
  const double eps = 1e-9 * (t1 - t0);
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] <= edges[i - 1]) edges[i] = edges[i - 1] + eps;
  }
  edges.back() = std::max(edges.back(), t1);
  SampleSet out;
  out.t_edges = std::move(edges);
  out.weights.assign(out.t_edges.size() - 1, 0.0);
  out.s = normalized_edges(out.t_edges, t0, t1);
  return out;
}

/// Evaluates the field on a batch of points. The closure must bind its
/// parameters to the graph it is given.
using FieldFn = std::function<FieldOutput(ad::Graph&, const PointBatch&)>;

struct RenderResult {
  ad::Var rgb;      // [R x 3]
  ad::Var weights;  // [R x K]
  std::vector<double> depth;
  FieldOutput field;
};

/// Segment Gaussians, view directions and levels for every interval of every
/// ray. All sample sets must have the same interval count.
inline PointBatch make_points(std::span<const Ray> rays, std::span<const SampleSet> samples) {
  if (rays.size() != samples.size()) throw std::invalid_argument("make_points: one sample set per ray");
  const std::size_t k = rays.empty() ? 0 : samples[0].intervals();
  const std::size_t p = rays.size() * k;
  PointBatch b{Tensor(Shape{p, 3}), Tensor(Shape{p, 3}), Tensor(Shape{p, 3}), std::vector<int>(p)};
  for (std::size_t r = 0; r < rays.size(); ++r) {
    if (samples[r].intervals() != k) throw std::invalid_argument("make_points: ragged sample sets");
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t row = r * k + i;
      GaussianSegment seg =
          segment_gaussian(rays[r], samples[r].t_edges[i], samples[r].t_edges[i + 1], rays[r].pixel_footprint);
      for (int a = 0; a < 3; ++a) {
        b.mu.at(row, a) = seg.mu[a];
        b.var.at(row, a) = seg.sigma_diag[a];
        b.dirs.at(row, a) = rays[r].direction[a];
      }
      b.levels[row] = rays[r].level;
    }
  }
  return b;
}

/// Volume rendering of a batch of rays on the graph. `backgrounds` holds one
/// color per ray, or a single color for all rays.
inline RenderResult render_rays(ad::Graph& g, std::span<const Ray> rays, std::span<const SampleSet> samples,
                                const FieldFn& field, std::span<const Vec3> backgrounds) {
  if (rays.empty()) throw std::invalid_argument("render_rays: no rays");
  if (backgrounds.size() != 1 && backgrounds.size() != rays.size()) {
    throw std::invalid_argument("render_rays: need one background or one per ray");
  }
  const std::size_t nr = rays.size();
  const std::size_t k = samples[0].intervals();
  PointBatch points = make_points(rays, samples);
  RenderResult res;
  res.field = field(g, points);
  const Tensor& sv = res.field.sigma.value();
  const Tensor& cv = res.field.rgb.value();
  if (sv.shape() != Shape{nr * k, 1} || cv.shape() != Shape{nr * k, 3}) {
    throw ShapeError("render_rays: field returned sigma " + shape_string(sv.shape()) + " and rgb " +
                     shape_string(cv.shape()) + " for " + std::to_string(nr * k) + " points");
  }
  for (std::size_t p = 0; p < nr * k; ++p) {
    bool ok = std::isfinite(sv[p]);
    for (int c = 0; c < 3; ++c) ok = ok && std::isfinite(cv.at(p, c));
    if (!ok) {
      throw std::runtime_error("render_rays: non-finite field output at ray " + std::to_string(p / k) +
                               ", segment " + std::to_string(p % k));
    }
  }

  Tensor deltas(Shape{nr, k}), tmid(Shape{nr, k}), bg(Shape{nr, 3});
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      deltas.at(r, i) = samples[r].t_edges[i + 1] - samples[r].t_edges[i];
      tmid.at(r, i) = 0.5 * (samples[r].t_edges[i + 1] + samples[r].t_edges[i]);
    }
    const Vec3& b = backgrounds.size() == 1 ? backgrounds[0] : backgrounds[r];
    for (int c = 0; c < 3; ++c) bg.at(r, c) = b[c];
  }
  Tensor upper(Shape{k, k});
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = j + 1; i < k; ++i) upper.at(j, i) = 1.0;
  }

  ad::Var optical = ad::reshape(res.field.sigma, Shape{nr, k}) * g.constant(std::move(deltas));
  ad::Var transmittance = ad::exp(-ad::matmul(optical, g.constant(std::move(upper))));
  ad::Var alpha = 1.0 - ad::exp(-optical);
  res.weights = transmittance * alpha;
  ad::Var acc = ad::sum_axis(res.weights, 1);

  std::vector<ad::Var> channels;
  for (std::size_t c = 0; c < 3; ++c) {
    ad::Var ch = ad::reshape(ad::slice_cols(res.field.rgb, c, c + 1), Shape{nr, k});
    channels.push_back(ad::sum_axis(res.weights * ch, 1));
  }
  ad::Var bgv = g.constant(std::move(bg));
  res.rgb = ad::concat(channels) + (1.0 - acc) * bgv;

  const Tensor& wv = res.weights.value();
  res.depth.resize(nr);
  for (std::size_t r = 0; r < nr; ++r) {
    double ws = 0, wt = 0;
    for (std::size_t i = 0; i < k; ++i) {
      ws += wv.at(r, i);
      wt += wv.at(r, i) * tmid.at(r, i);
    }
    res.depth[r] = wt / std::max(ws, 1e-10);
  }
  return res;
}

struct RenderedRay {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  SampleSet samples;
};

/// Renders one ray on a private graph.
inline RenderedRay render_ray(const Ray& ray, const SampleSet& samples, const FieldFn& field, const Vec3& background) {
  ad::Graph g;
  RenderResult r = render_rays(g, std::span<const Ray>(&ray, 1), std::span<const SampleSet>(&samples, 1), field,
                               std::span<const Vec3>(&background, 1));
  RenderedRay out;
  for (int c = 0; c < 3; ++c) out.color[c] = r.rgb.value()[static_cast<std::size_t>(c)];
  out.depth = r.depth[0];
  out.samples = samples;
  out.samples.weights.assign(r.weights.value().data().begin(), r.weights.value().data().end());
  return out;
}

namespace detail {

inline Tensor midpoints(std::span<const double> s) {
  Tensor m(Shape{s.size() - 1});
  for (std::size_t i = 0; i + 1 < s.size(); ++i) m[i] = 0.5 * (s[i] + s[i + 1]);
  return m;
}

}  // namespace detail

/// Mean over rays of
///   sum_ij w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 (s_{i+1} - s_i)
/// with m the interval midpoints in normalized distance s.
inline ad::Var distortion(const ad::Var& weights, std::span<const SampleSet> samples) {
  const Tensor& wv = weights.value();
  ad::detail::require_rank2(wv, "distortion");
  const std::size_t nr = wv.shape()[0], k = wv.shape()[1];
  if (samples.size() != nr) throw std::invalid_argument("distortion: one sample set per ray");
  std::vector<Tensor> mids;
  std::vector<std::vector<double>> widths(nr, std::vector<double>(k));
  double total = 0;
  for (std::size_t r = 0; r < nr; ++r) {
    if (samples[r].s.size() != k + 1) throw ShapeError("distortion: sample set does not match weights");
    mids.push_back(detail::midpoints(samples[r].s));
    for (std::size_t i = 0; i < k; ++i) widths[r][i] = samples[r].s[i + 1] - samples[r].s[i];
    const double* w = wv.data().data() + r * k;
    double l = 0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) l += w[i] * w[j] * std::abs(mids[r][i] - mids[r][j]);
      l += w[i] * w[i] * widths[r][i] / 3.0;
    }
    total += l;
  }
  const double inv = 1.0 / static_cast<double>(nr);
  return weights.graph().record(
      ad::OpKind::kCustom, Tensor::scalar(total * inv), {weights.id()},
      [mids = std::move(mids), widths = std::move(widths), nr, k, inv](
          const ad::Graph& g, ad::NodeId self, const Tensor& grad, std::span<Tensor* const> in) {
        const Tensor& wv = g.value(g.inputs(self)[0]);
        const double gs = grad.item() * inv;
        for (std::size_t r = 0; r < nr; ++r) {
          const double* w = wv.data().data() + r * k;
          double* gw = in[0]->data().data() + r * k;
          for (std::size_t i = 0; i < k; ++i) {
            double d = 0;
            for (std::size_t j = 0; j < k; ++j) d += w[j] * std::abs(mids[r][i] - mids[r][j]);
            gw[i] += gs * (2.0 * d + 2.0 * w[i] * widths[r][i] / 3.0);
          }
        }
      });
}

/// lambda1 times the distortion of a single ray; zero when lambda1 is zero.
inline double distortion_loss(const SampleSet& samples, double lambda1) {
  if (lambda1 == 0.0) return 0.0;
  ad::Graph g;
  const std::size_t k = samples.intervals();
  ad::Var w = g.constant(Tensor(Shape{1, k}, samples.weights));
  return lambda1 * distortion(w, std::span<const SampleSet>(&samples, 1)).value().item();
}

}  // namespace strata
