#pragma once

// Radiance field conditioned on vector-quantized latents.
//
// Per sample point:
//   ipe   = IPE(mu, var)                                   [P x E]
//   z     = encoder(ipe (+ level code))                    [P x D]
//   z_e   = nearest codebook row of z                      [P x D]
//   zq    = z + sg(z_e - z)         (straight-through)
//   y     = decoder(zq)                                    [P x E]
//   cond1 = router0(zq), cond2 = router1(zq)               [P x W]
//   h1    = relu(trunk0(ipe)) + cond1, h2 = relu(trunk1(h1)) + cond2, ...
//   sigma = softplus(density(h)), rgb = sigmoid(color(feature(h), dir code))
//
// Variants switch parts of the latent path off (see Variant).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "strata/autodiff.hpp"
#include "strata/encoding.hpp"
#include "strata/kv.hpp"
#include "strata/parameters.hpp"

namespace strata {

enum class Variant {
  kFull,      // both routers
  kD1,        // first router only
  kD2,        // second router only
  kD3,        // no router; z_e concatenated to the trunk input
  kD4Vae,     // Gaussian latent instead of the codebook
  kBaseline,  // no latent path
};

inline constexpr std::pair<Variant, std::string_view> kVariantNames[] = {
    {Variant::kFull, "full"}, {Variant::kD1, "D1"},         {Variant::kD2, "D2"},
    {Variant::kD3, "D3"},     {Variant::kD4Vae, "D4_vae"}, {Variant::kBaseline, "baseline"},
};

inline std::string_view variant_name(Variant v) {
  for (const auto& [k, n] : kVariantNames) {
    if (k == v) return n;
  }
  throw std::invalid_argument("unknown variant");
}

inline Variant parse_variant(std::string_view name) {
  for (const auto& [k, n] : kVariantNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected full, D1, D2, D3, D4_vae or baseline)");
}

struct ModelConfig {
  Variant variant = Variant::kFull;
  int codebook_size = 1024;
  int latent_dim = 48;
  /// One codebook for all levels; otherwise one per level, stacked.
  bool shared_codebook = true;
  /// Feed the encoded camera level to the latent encoder.
  bool use_level_encoding = true;
  double beta = 1.0;
  int num_levels = 1;
  int trunk_depth = 8;
  int trunk_width = 256;
  int position_bands = 10;
  int direction_bands = 4;
  int level_bands = 4;
  int encoder_hidden = 48;
  int decoder_hidden = 96;
  int decoder_layers = 1;
  int color_hidden = 128;
  /// Contract positions into the radius-2 ball before encoding.
  bool unbounded = false;

  bool has_latent() const { return variant != Variant::kBaseline; }
  bool has_codebook() const { return has_latent() && variant != Variant::kD4Vae; }
  bool has_router(int which) const {
    switch (variant) {
      case Variant::kFull: return true;
      case Variant::kD1: return which == 0;
      case Variant::kD2: return which == 1;
      default: return false;
    }
  }
  std::size_t ipe_dim() const { return FrequencyBands(position_bands).output_dim(3); }
  std::size_t direction_dim() const { return FrequencyBands(direction_bands).output_dim(3); }
  std::size_t level_dim() const { return FrequencyBands(level_bands).output_dim(1); }
  std::size_t encoder_input_dim() const { return ipe_dim() + (use_level_encoding ? level_dim() : 0); }
  std::size_t codebook_rows() const {
    return static_cast<std::size_t>(codebook_size) * (shared_codebook ? 1 : num_levels);
  }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v < 1) throw std::invalid_argument(std::string("ModelConfig: ") + what + " must be >= 1");
    };
    positive(codebook_size, "codebook_size");
    positive(latent_dim, "latent_dim");
    positive(num_levels, "num_levels");
    positive(trunk_width, "trunk_width");
    positive(position_bands, "position_bands");
    positive(direction_bands, "direction_bands");
    positive(level_bands, "level_bands");
    positive(encoder_hidden, "encoder_hidden");
    positive(decoder_hidden, "decoder_hidden");
    positive(decoder_layers, "decoder_layers");
    positive(color_hidden, "color_hidden");
    if (trunk_depth < 2) throw std::invalid_argument("ModelConfig: trunk_depth must be >= 2");
    if (beta < 0) throw std::invalid_argument("ModelConfig: beta must be >= 0");
  }

  kv::Entries to_entries() const {
    return {
        {"variant", std::string(variant_name(variant))},
        {"codebook_size", kv::number(codebook_size)},
        {"latent_dim", kv::number(latent_dim)},
        {"shared_codebook", kv::boolean(shared_codebook)},
        {"use_level_encoding", kv::boolean(use_level_encoding)},
        {"beta", kv::number(beta)},
        {"num_levels", kv::number(num_levels)},
        {"trunk_depth", kv::number(trunk_depth)},
        {"trunk_width", kv::number(trunk_width)},
        {"position_bands", kv::number(position_bands)},
        {"direction_bands", kv::number(direction_bands)},
        {"level_bands", kv::number(level_bands)},
        {"encoder_hidden", kv::number(encoder_hidden)},
        {"decoder_hidden", kv::number(decoder_hidden)},
        {"decoder_layers", kv::number(decoder_layers)},
        {"color_hidden", kv::number(color_hidden)},
        {"unbounded", kv::boolean(unbounded)},
    };
  }

  /// Applies one entry; returns false when the key is not a model key.
  bool set(const std::string& key, const std::string& v) {
    auto as_int = [&] { return static_cast<int>(kv::to_int(key, v)); };
    if (key == "variant") variant = parse_variant(v);
    else if (key == "codebook_size") codebook_size = as_int();
    else if (key == "latent_dim") latent_dim = as_int();
    else if (key == "shared_codebook") shared_codebook = kv::to_bool(key, v);
    else if (key == "use_level_encoding") use_level_encoding = kv::to_bool(key, v);
    else if (key == "beta") beta = kv::to_double(key, v);
    else if (key == "num_levels") num_levels = as_int();
    else if (key == "trunk_depth") trunk_depth = as_int();
    else if (key == "trunk_width") trunk_width = as_int();
    else if (key == "position_bands") position_bands = as_int();
    else if (key == "direction_bands") direction_bands = as_int();
    else if (key == "level_bands") level_bands = as_int();
    else if (key == "encoder_hidden") encoder_hidden = as_int();
    else if (key == "decoder_hidden") decoder_hidden = as_int();
    else if (key == "decoder_layers") decoder_layers = as_int();
    else if (key == "color_hidden") color_hidden = as_int();
    else if (key == "unbounded") unbounded = kv::to_bool(key, v);
    else return false;
    return true;
  }

  static ModelConfig from_entries(const kv::Entries& entries) {
    ModelConfig c;
    for (const auto& [k, v] : entries) {
      if (!c.set(k, v)) throw std::invalid_argument("ModelConfig: unknown key '" + k + "'");
    }
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Sample points fed to the field: Gaussian means and variances, unit view
/// directions and the level label of the ray each point belongs to.
struct PointBatch {
  Tensor mu;    // [P x 3]
  Tensor var;   // [P x 3]
  Tensor dirs;  // [P x 3]
  std::vector<int> levels;

  std::size_t size() const { return levels.size(); }
};

struct Quantized {
  ad::Var straight_through;  // z + sg(z_e - z)
  ad::Var codes;             // z_e, differentiable w.r.t. the codebook only
  std::vector<std::size_t> indices;
};

struct RouterOutput {
  std::optional<ad::Var> cond1;
  std::optional<ad::Var> cond2;
};

struct FieldOutput {
  ad::Var rgb;    // [P x 3]
  ad::Var sigma;  // [P x 1]
  /// Mean latent loss over the batch; absent for the baseline.
  std::optional<ad::Var> latent_loss;
  std::optional<ad::Var> z;
  std::optional<ad::Var> z_e;
  std::optional<ad::Var> y;
  std::vector<std::size_t> indices;
};

struct NearestResult {
  std::size_t index = 0;
  std::vector<double> row;
};

namespace detail {

inline double exact_sq_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

}  // namespace detail

/// For every row of z [P x D], the index of the nearest row of `table`
/// within the block [offsets[i], offsets[i] + block) by squared Euclidean
/// distance, lowest index on ties. Candidates are screened with a matrix
/// product and confirmed with the exact per-row distance.
inline std::vector<std::size_t> nearest_rows(const Tensor& z, const Tensor& table,
                                             std::span<const std::size_t> offsets, std::size_t block) {
  if (table.rank() != 2 || table.shape()[0] == 0) throw std::invalid_argument("quantize: empty codebook");
  const std::size_t d = table.shape()[1];
  const std::size_t p = z.size() / std::max<std::size_t>(d, 1);
  if (z.size() != p * d) {
    throw ShapeError("quantize: latent " + shape_string(z.shape()) + " vs codebook " +
                     shape_string(table.shape()));
  }
  if (offsets.size() != p) throw std::invalid_argument("quantize: one offset per row required");
  for (std::size_t o : offsets) {
    if (o + block > table.shape()[0]) throw std::out_of_range("quantize: codebook block out of range");
  }
  const std::size_t rows = table.shape()[0];
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* e = table.data().data() + r * d;
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += e[k] * e[k];
    norms[r] = s;
  }
  double max_norm = *std::max_element(norms.begin(), norms.end());

  std::vector<std::size_t> out(p);
  constexpr std::size_t kChunk = 512;
  ad::detail::RowMat dots;
  for (std::size_t start = 0; start < p; start += kChunk) {
    const std::size_t n = std::min(kChunk, p - start);
    // Group the chunk by block offset so each group is one matrix product.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = start + i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return offsets[a] < offsets[b]; });
    std::size_t g0 = 0;
    while (g0 < n) {
      std::size_t g1 = g0;
      const std::size_t off = offsets[order[g0]];
      while (g1 < n && offsets[order[g1]] == off) ++g1;
      const std::size_t m = g1 - g0;
      ad::detail::RowMat zs(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(z.data().data() + order[g0 + i] * d, d, zs.data() + i * d);
      }
      auto eb = ad::detail::ConstMapMat(table.data().data() + off * d,
                                        static_cast<Eigen::Index>(block), static_cast<Eigen::Index>(d));
      dots.noalias() = zs * eb.transpose();
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t row = order[g0 + i];
        const double* zr = z.data().data() + row * d;
        double zn = 0;
        for (std::size_t k = 0; k < d; ++k) zn += zr[k] * zr[k];
        double best_approx = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < block; ++j) {
          best_approx = std::min(best_approx, norms[off + j] - 2.0 * dots(static_cast<Eigen::Index>(i),
                                                                          static_cast<Eigen::Index>(j)));
        }
        const double tol = 1e-9 * (zn + max_norm + 1.0);
        std::size_t best = off;
        double best_exact = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < block; ++j) {
          const double approx = norms[off + j] - 2.0 * dots(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          if (approx > best_approx + tol) continue;
          const double exact = detail::exact_sq_distance(zr, table.data().data() + (off + j) * d, d);
          if (exact < best_exact) {
            best_exact = exact;
            best = off + j;
          }
        }
        out[row] = best;
      }
      g0 = g1;
    }
  }
  return out;
}

/// Nearest codebook row to a single latent vector.
inline NearestResult quantize(std::span<const double> z, const Tensor& codebook) {
  if (codebook.rank() != 2 || codebook.shape()[0] == 0) throw std::invalid_argument("quantize: empty codebook");
  const std::size_t d = codebook.shape()[1];
  if (z.size() != d) {
    throw ShapeError("quantize: latent of size " + std::to_string(z.size()) + " vs codebook " +
                     shape_string(codebook.shape()));
  }
  Tensor zt(Shape{1, d}, std::vector<double>(z.begin(), z.end()));
  const std::size_t off = 0;
  const std::size_t idx = nearest_rows(zt, codebook, std::span<const std::size_t>(&off, 1), codebook.shape()[0])[0];
  NearestResult r;
  r.index = idx;
  r.row.assign(codebook.data().begin() + static_cast<std::ptrdiff_t>(idx * d),
               codebook.data().begin() + static_cast<std::ptrdiff_t>((idx + 1) * d));
  return r;
}

/// Batched quantization on the graph with the straight-through estimator.
inline Quantized quantize(const ad::Var& z, const ad::Var& codebook,
                          std::span<const std::size_t> offsets, std::size_t block) {
  if (z.shape().size() != 2 || codebook.shape().size() != 2 || z.shape()[1] != codebook.shape()[1]) {
    throw ShapeError("quantize: latent " + shape_string(z.shape()) + " vs codebook " +
                     shape_string(codebook.shape()));
  }
  Quantized q;
  q.indices = nearest_rows(z.value(), codebook.value(), offsets, block);
  q.codes = ad::gather_rows(codebook, q.indices);
  q.straight_through = z + ad::stop_gradient(q.codes - z);
  return q;
}

/// ||gamma - y||^2 + ||sg(z_e) - z||^2 + beta ||z_e - sg(z)||^2, summed per
/// row and averaged over rows.
inline ad::Var vq_loss(const ad::Var& gamma, const ad::Var& y, const ad::Var& z, const ad::Var& z_e,
                       double beta) {
  if (gamma.shape() != y.shape()) {
    throw ShapeError("vq_loss: target " + shape_string(gamma.shape()) + " vs reconstruction " +
                     shape_string(y.shape()));
  }
  if (z.shape() != z_e.shape()) {
    throw ShapeError("vq_loss: latent " + shape_string(z.shape()) + " vs code " + shape_string(z_e.shape()));
  }
  if (beta < 0) throw std::invalid_argument("vq_loss: beta must be >= 0");
  const double rows = static_cast<double>(gamma.value().rows());
  ad::Var recon = ad::sum(ad::square(gamma - y));
  ad::Var commit = ad::sum(ad::square(ad::stop_gradient(z_e) - z));
  ad::Var codebook = ad::sum(ad::square(z_e - ad::stop_gradient(z)));
  return (recon + commit + beta * codebook) * (1.0 / rows);
}

class RadianceField {
 public:
  explicit RadianceField(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
    config_.validate();
    init(seed);
  }

  RadianceField(ModelConfig config, Parameters params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    RadianceField reference(config_, 0);
    check_shapes_against(reference.params_);
  }

  const ModelConfig& config() const { return config_; }
  const Parameters& parameters() const { return params_; }
  Parameters& parameters() { return params_; }

  /// Encoder output z for a batch of encodings [P x E] and optional level
  /// codes [P x 2L]. The Gaussian-latent variant returns [P x 2D]
  /// (mean, log-variance).
  ad::Var encode_latent(const BoundParameters& p, const ad::Var& ipe,
                        const std::optional<ad::Var>& level_code) const {
    if (ipe.shape().size() != 2 || ipe.shape()[1] != config_.ipe_dim()) {
      throw ShapeError("encode_latent: expected [P x " + std::to_string(config_.ipe_dim()) + "], got " +
                       shape_string(ipe.shape()));
    }
    if (level_code.has_value() != config_.use_level_encoding) {
      throw std::invalid_argument("encode_latent: level code must be given iff use_level_encoding");
    }
    ad::Var in = ipe;
    if (level_code) {
      if (level_code->shape().size() != 2 || level_code->shape()[1] != config_.level_dim() ||
          level_code->shape()[0] != ipe.shape()[0]) {
        throw ShapeError("encode_latent: level code " + shape_string(level_code->shape()));
      }
      in = ad::concat({ipe, *level_code});
    }
    ad::Var h = ad::relu(ad::affine(in, p["encoder.0.weight"], p["encoder.0.bias"]));
    return ad::affine(h, p["encoder.1.weight"], p["encoder.1.bias"]);
  }

  ad::Var decode_latent(const BoundParameters& p, const ad::Var& code) const {
    if (code.shape().size() != 2 || code.shape()[1] != static_cast<std::size_t>(config_.latent_dim)) {
      throw ShapeError("decode_latent: expected [P x " + std::to_string(config_.latent_dim) + "], got " +
                       shape_string(code.shape()));
    }
    ad::Var h = code;
    for (int i = 0; i < config_.decoder_layers; ++i) {
      const std::string n = "decoder." + std::to_string(i);
      h = ad::relu(ad::affine(h, p[n + ".weight"], p[n + ".bias"]));
    }
    return ad::affine(h, p["decoder.out.weight"], p["decoder.out.bias"]);
  }

  RouterOutput route_latent(const BoundParameters& p, const ad::Var& code) const {
    if (!config_.has_latent()) throw std::invalid_argument("route_latent: variant has no latent path");
    RouterOutput r;
    if (config_.has_router(0)) r.cond1 = ad::affine(code, p["router.0.weight"], p["router.0.bias"]);
    if (config_.has_router(1)) r.cond2 = ad::affine(code, p["router.1.weight"], p["router.1.bias"]);
    return r;
  }

  /// Evaluates the field on a batch of points. `noise` drives the Gaussian
  /// latent sample; when null the mean is used.
  FieldOutput forward(ad::Graph& g, const BoundParameters& p, const PointBatch& batch,
                      std::mt19937_64* noise = nullptr) const {
    const std::size_t n = batch.size();
    if (batch.mu.shape() != Shape{n, 3} || batch.var.shape() != Shape{n, 3} || batch.dirs.shape() != Shape{n, 3}) {
      throw ShapeError("RadianceField::forward: point batch shapes " + shape_string(batch.mu.shape()) + ", " +
                       shape_string(batch.var.shape()) + ", " + shape_string(batch.dirs.shape()) +
                       " for " + std::to_string(n) + " points");
    }
    for (int l : batch.levels) {
      if (l < 0 || l >= config_.num_levels) {
        throw std::invalid_argument("RadianceField::forward: level " + std::to_string(l) + " outside [0, " +
                                    std::to_string(config_.num_levels) + ")");
      }
    }
    ad::Var mu = g.constant(batch.mu);
    if (config_.unbounded) mu = contract(mu);
    ad::Var ipe = integrated_positional_encode(mu, g.constant(batch.var), FrequencyBands(config_.position_bands));

    FieldOutput out;
    RouterOutput cond;
    ad::Var trunk_in = ipe;
    if (config_.has_latent()) {
      std::optional<ad::Var> level_code;
      if (config_.use_level_encoding) level_code = g.constant(level_codes(batch.levels));
      ad::Var enc = encode_latent(p, ipe, level_code);
      ad::Var code;
      if (config_.variant == Variant::kD4Vae) {
        const std::size_t d = static_cast<std::size_t>(config_.latent_dim);
        ad::Var mean = ad::slice_cols(enc, 0, d);
        ad::Var logvar = ad::slice_cols(enc, d, 2 * d);
        Tensor eps(Shape{n, d});
        if (noise) {
          std::normal_distribution<double> dist(0.0, 1.0);
          for (double& v : eps.data()) v = dist(*noise);
        }
        code = mean + ad::exp(0.5 * logvar) * g.constant(std::move(eps));
        ad::Var y = decode_latent(p, code);
        // KL(N(mean, exp(logvar)) || N(0, I)) per point, plus reconstruction.
        ad::Var kl = -0.5 * ad::sum(1.0 + logvar - ad::square(mean) - ad::exp(logvar));
        ad::Var recon = ad::sum(ad::square(ipe - y));
        out.latent_loss = (recon + kl) * (1.0 / static_cast<double>(n));
        out.z = mean;
        out.z_e = code;
        out.y = y;
      } else {
        std::vector<std::size_t> offsets(n, 0);
        if (!config_.shared_codebook) {
          for (std::size_t i = 0; i < n; ++i) {
            offsets[i] = static_cast<std::size_t>(batch.levels[i]) * static_cast<std::size_t>(config_.codebook_size);
          }
        }
        Quantized q = quantize(enc, p["codebook"], offsets, static_cast<std::size_t>(config_.codebook_size));
        code = q.straight_through;
        ad::Var y = decode_latent(p, code);
        out.latent_loss = vq_loss(ipe, y, enc, q.codes, config_.beta);
        out.z = enc;
        out.z_e = q.codes;
        out.y = y;
        out.indices = std::move(q.indices);
      }
      if (config_.variant == Variant::kD3) {
        trunk_in = ad::concat({ipe, code});
      } else {
        cond = route_latent(p, code);
      }
    }

    ad::Var h = trunk_in;
    for (int i = 0; i < config_.trunk_depth; ++i) {
      const std::string name = "trunk." + std::to_string(i);
      h = ad::relu(ad::affine(h, p[name + ".weight"], p[name + ".bias"]));
      if (i == 0 && cond.cond1) h = h + *cond.cond1;
      if (i == 1 && cond.cond2) h = h + *cond.cond2;
    }
    out.sigma = ad::softplus(ad::affine(h, p["density.weight"], p["density.bias"]));
    ad::Var feature = ad::affine(h, p["feature.weight"], p["feature.bias"]);
    ad::Var dir_code = positional_encode(g.constant(batch.dirs), FrequencyBands(config_.direction_bands));
    ad::Var ch = ad::relu(ad::affine(ad::concat({feature, dir_code}), p["color.hidden.weight"], p["color.hidden.bias"]));
    out.rgb = ad::sigmoid(ad::affine(ch, p["color.out.weight"], p["color.out.bias"]));
    return out;
  }

  Tensor level_codes(std::span<const int> levels) const {
    const std::size_t w = config_.level_dim();
    Tensor t(Shape{levels.size(), w});
    std::vector<std::vector<double>> cache(static_cast<std::size_t>(config_.num_levels));
    for (std::size_t i = 0; i < levels.size(); ++i) {
      auto& c = cache.at(static_cast<std::size_t>(levels[i]));
      if (c.empty()) c = level_encode(levels[i], config_.num_levels, FrequencyBands(config_.level_bands));
      std::copy(c.begin(), c.end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * w));
    }
    return t;
  }

  /// Scalar count of the latent generator (encoder and decoder).
  std::size_t latent_generator_count() const {
    return params_.count_with_prefix("encoder.") + params_.count_with_prefix("decoder.");
  }
  std::size_t router_count() const { return params_.count_with_prefix("router."); }
  std::size_t codebook_count() const { return params_.count_with_prefix("codebook"); }

 private:
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto w = static_cast<std::size_t>(config_.trunk_width);
    const auto d = static_cast<std::size_t>(config_.latent_dim);
    enum Init { kHe, kGlorot };  // fan-in for relu layers, fan-avg otherwise
    auto layer = [&](const std::string& name, std::size_t in, std::size_t out, Init init) {
      const double fan = static_cast<double>(init == kHe ? in : in + out);
      params_.add(name + ".weight", uniform_tensor(Shape{in, out}, std::sqrt(6.0 / fan), rng));
      params_.add(name + ".bias", Tensor(Shape{out}, 0.0));
    };

    std::size_t trunk_in = config_.ipe_dim();
    if (config_.variant == Variant::kD3) trunk_in += d;
    for (int i = 0; i < config_.trunk_depth; ++i) {
      layer("trunk." + std::to_string(i), i == 0 ? trunk_in : w, w, kHe);
    }
    layer("density", w, 1, kGlorot);
    layer("feature", w, w, kGlorot);
    layer("color.hidden", w + config_.direction_dim(), static_cast<std::size_t>(config_.color_hidden), kHe);
    layer("color.out", static_cast<std::size_t>(config_.color_hidden), 3, kGlorot);

    if (!config_.has_latent()) return;
    const std::size_t eh = static_cast<std::size_t>(config_.encoder_hidden);
    layer("encoder.0", config_.encoder_input_dim(), eh, kHe);
    layer("encoder.1", eh, config_.variant == Variant::kD4Vae ? 2 * d : d, kGlorot);
    std::size_t in = d;
    for (int i = 0; i < config_.decoder_layers; ++i) {
      layer("decoder." + std::to_string(i), in, static_cast<std::size_t>(config_.decoder_hidden), kHe);
      in = static_cast<std::size_t>(config_.decoder_hidden);
    }
    layer("decoder.out", in, config_.ipe_dim(), kGlorot);
    if (config_.has_codebook()) {
      params_.add("codebook", normal_tensor(Shape{config_.codebook_rows(), d}, 0.2, rng));
    }
    for (int r = 0; r < 2; ++r) {
      if (!config_.has_router(r)) continue;
      const std::string n = "router." + std::to_string(r);
      params_.add(n + ".weight", Tensor(Shape{d, w}, 0.0));
      params_.add(n + ".bias", Tensor(Shape{w}, 0.0));
    }
  }

  void check_shapes_against(const Parameters& expected) const {
    if (expected.size() != params_.size()) {
      throw ShapeError("parameter set has " + std::to_string(params_.size()) + " tensors, model expects " +
                       std::to_string(expected.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const std::string& n = expected.name(i);
      if (!params_.contains(n)) throw ShapeError("missing parameter '" + n + "'");
      if (params_[n].shape() != expected[i].shape()) {
        throw ShapeError("parameter '" + n + "' has shape " + shape_string(params_[n].shape()) + ", model expects " +
                         shape_string(expected[i].shape()));
      }
    }
  }

  ModelConfig config_;
  Parameters params_;
};

}  // namespace strata
