#pragma once

// Coarse + fine rendering of ray batches through a RadianceField, and whole
// image rendering with frozen parameters.

#include <random>
#include <span>
#include <vector>

#include "strata/field.hpp"
#include "strata/image.hpp"
#include "strata/parallel.hpp"
#include "strata/rendering.hpp"

namespace strata {

struct SamplingConfig {
  int coarse = 64;
  int fine = 128;
};

struct TwoPass {
  RenderResult coarse;
  RenderResult fine;
  std::vector<SampleSet> coarse_samples;
  std::vector<SampleSet> fine_samples;
};

/// Renders a ray batch twice on one graph: stratified coarse intervals, then
/// the coarse edges merged with importance samples drawn from the coarse
/// weights. Sampling is jittered when `rng` is given and regular otherwise.
inline TwoPass render_two_pass(ad::Graph& g, const RadianceField& field, const BoundParameters& bound,
                               std::span<const Ray> rays, std::span<const Vec3> backgrounds,
                               const SamplingConfig& sampling, std::mt19937_64* rng) {
  std::mt19937_64 fixed(0);
  std::mt19937_64& r = rng ? *rng : fixed;
  const bool jitter = rng != nullptr;
  FieldFn fn = [&](ad::Graph& graph, const PointBatch& batch) { return field.forward(graph, bound, batch, rng); };
  TwoPass out;
  out.coarse_samples.reserve(rays.size());
  for (const Ray& ray : rays) out.coarse_samples.push_back(stratified_sample(ray, sampling.coarse, r, jitter));
  out.coarse = render_rays(g, rays, out.coarse_samples, fn, backgrounds);
  if (sampling.fine <= 0) {
    out.fine = out.coarse;
    out.fine_samples = out.coarse_samples;
    return out;
  }
  const Tensor& w = out.coarse.weights.value();
  const std::size_t k = static_cast<std::size_t>(sampling.coarse);
  out.fine_samples.reserve(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    SampleSet& c = out.coarse_samples[i];
    c.weights.assign(w.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                     w.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    out.fine_samples.push_back(hierarchical_resample(c, sampling.fine, r, jitter));
  }
  out.fine = render_rays(g, rays, out.fine_samples, fn, backgrounds);
  return out;
}

struct RenderedImage {
  Image image;
  ScalarMap depth;
};

/// Renders every pixel center of `cam` with frozen parameters.
inline RenderedImage render_image(const RadianceField& field, const Camera& cam, const Vec3& background,
                                  const SamplingConfig& sampling, std::size_t chunk = 1024) {
  cam.validate();
  const std::size_t n = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  RenderedImage out{Image(cam.width, cam.height), ScalarMap(cam.width, cam.height)};
  const std::size_t chunks = (n + chunk - 1) / chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * chunk, end = std::min(n, begin + chunk);
    std::vector<Ray> rays;
    for (std::size_t i = begin; i < end; ++i) {
      rays.push_back(generate_ray(cam, static_cast<int>(i % cam.width), static_cast<int>(i / cam.width)));
    }
    ad::Graph g;
    BoundParameters bound(field.parameters(), g, false);
    TwoPass tp = render_two_pass(g, field, bound, rays, std::span<const Vec3>(&background, 1), sampling, nullptr);
    const Tensor& rgb = tp.fine.rgb.value();
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t row = i - begin;
      out.image.set(i, Vec3(rgb.at(row, 0), rgb.at(row, 1), rgb.at(row, 2)));
      out.depth.values[i] = tp.fine.depth[row];
    }
  });
  return out;
}

}  // namespace strata
