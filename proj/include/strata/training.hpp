#pragma once

// Loss assembly, Adam and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata/checkpoint.hpp"
#include "strata/dataset.hpp"
#include "strata/field.hpp"
#include "strata/kv.hpp"
#include "strata/renderer.hpp"

namespace strata {

struct TrainConfig {
  ModelConfig model;
  long iterations = 150000;
  int rays_per_batch = 1024;
  SamplingConfig sampling;
  double lr_init = 0.002;
  double lr_final = 0.00002;
  long warmup_steps = 512;
  double lambda1 = 0.0;
  double lambda2 = 0.1;
  /// Weight of the coarse pass relative to the fine pass.
  double coarse_weight = 0.1;
  std::uint64_t seed = 0;
  long log_every = 100;
  long checkpoint_every = 5000;

  void validate() const {
    model.validate();
    if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
    if (rays_per_batch < 1) throw std::invalid_argument("TrainConfig: rays_per_batch must be >= 1");
    if (sampling.coarse < 1 || sampling.fine < 0) throw std::invalid_argument("TrainConfig: bad sample counts");
    if (!(lr_final > 0) || lr_init < lr_final) {
      throw std::invalid_argument("TrainConfig: require lr_init >= lr_final > 0");
    }
    if (warmup_steps < 0) throw std::invalid_argument("TrainConfig: warmup_steps must be >= 0");
    if (lambda1 < 0 || lambda2 < 0 || coarse_weight < 0) {
      throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
    }
    if (log_every < 1 || checkpoint_every < 1) throw std::invalid_argument("TrainConfig: intervals must be >= 1");
  }

  kv::Entries to_entries() const {
    return {
        {"iterations", kv::number(static_cast<long long>(iterations))},
        {"rays_per_batch", kv::number(rays_per_batch)},
        {"coarse_samples", kv::number(sampling.coarse)},
        {"fine_samples", kv::number(sampling.fine)},
        {"lr_init", kv::number(lr_init)},
        {"lr_final", kv::number(lr_final)},
        {"warmup_steps", kv::number(static_cast<long long>(warmup_steps))},
        {"lambda1", kv::number(lambda1)},
        {"lambda2", kv::number(lambda2)},
        {"coarse_weight", kv::number(coarse_weight)},
        {"seed", kv::number(static_cast<long long>(seed))},
        {"log_every", kv::number(static_cast<long long>(log_every))},
        {"checkpoint_every", kv::number(static_cast<long long>(checkpoint_every))},
    };
  }

  /// Applies one training entry; returns false when the key is not a
  /// training key.
  bool set(const std::string& key, const std::string& v) {
    if (key == "iterations") iterations = kv::to_int(key, v);
    else if (key == "rays_per_batch") rays_per_batch = static_cast<int>(kv::to_int(key, v));
    else if (key == "coarse_samples") sampling.coarse = static_cast<int>(kv::to_int(key, v));
    else if (key == "fine_samples") sampling.fine = static_cast<int>(kv::to_int(key, v));
    else if (key == "lr_init") lr_init = kv::to_double(key, v);
    else if (key == "lr_final") lr_final = kv::to_double(key, v);
    else if (key == "warmup_steps") warmup_steps = kv::to_int(key, v);
    else if (key == "lambda1") lambda1 = kv::to_double(key, v);
    else if (key == "lambda2") lambda2 = kv::to_double(key, v);
    else if (key == "coarse_weight") coarse_weight = kv::to_double(key, v);
    else if (key == "seed") seed = static_cast<std::uint64_t>(kv::to_int(key, v));
    else if (key == "log_every") log_every = kv::to_int(key, v);
    else if (key == "checkpoint_every") checkpoint_every = kv::to_int(key, v);
    else return false;
    return true;
  }
};

/// Log-linear interpolation from lr_init to lr_final over the run, times a
/// linear warmup multiplier min(1, step / warmup_steps).
inline double lr_schedule(long step, const TrainConfig& c) {
  const double progress = c.iterations > 0 ? std::clamp(double(step) / double(c.iterations), 0.0, 1.0) : 1.0;
  const double base = std::exp((1.0 - progress) * std::log(c.lr_init) + progress * std::log(c.lr_final));
  const double warm = c.warmup_steps > 0 ? std::min(1.0, double(step) / double(c.warmup_steps)) : 1.0;
  return base * warm;
}

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update of every parameter.
inline void adam_step(Parameters& params, const std::vector<Tensor>& grads, OptimizerState& s, double lr) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: one gradient per parameter");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("adam_step: gradient of '" + params.name(i) + "' has shape " + shape_string(grads[i].shape()));
    }
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient for '" + params.name(i) + "'");
    }
  }
  if (s.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      s.m.emplace_back(params[i].shape(), 0.0);
      s.v.emplace_back(params[i].shape(), 0.0);
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data().data();
    double* m = s.m[i].data().data();
    double* v = s.v[i].data().data();
    const double* g = grads[i].data().data();
    for (std::size_t k = 0, n = params[i].size(); k < n; ++k) {
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s.eps);
    }
  }
}

struct LossTerms {
  ad::Var total;
  double recon = 0.0;
  double vq = 0.0;
  double dist = 0.0;
};

/// mse(pred, target) + lambda1 * dist + lambda2 * vq. Absent terms count as
/// zero.
inline LossTerms total_loss(const ad::Var& pred, const Tensor& target, const std::optional<ad::Var>& dist,
                            const std::optional<ad::Var>& vq, const TrainConfig& c) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("total_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  LossTerms t;
  ad::Graph& g = pred.graph();
  t.total = ad::mse(pred, g.constant(target));
  t.recon = t.total.value().item();
  if (dist && c.lambda1 != 0.0) {
    t.dist = dist->value().item();
    t.total = t.total + c.lambda1 * *dist;
  }
  if (vq) {
    t.vq = vq->value().item();
    if (c.lambda2 != 0.0) t.total = t.total + c.lambda2 * *vq;
  }
  return t;
}

inline double psnr_from_mse(double mse) { return mse > 0 ? std::min(99.0, -10.0 * std::log10(mse)) : 99.0; }

struct LogRecord {
  long step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_recon = 0.0;
  double loss_vq = 0.0;
  double loss_dist = 0.0;
  double psnr_train_batch = 0.0;
  /// Quantized points per codebook row since the previous record.
  std::vector<std::size_t> codebook_usage;
};

inline constexpr const char* kLogHeader = "step,lr,loss_total,loss_recon,loss_vq,loss_dist,psnr_train_batch";

inline std::string format_log_row(const LogRecord& r) {
  std::ostringstream os;
  os << r.step << ',' << kv::number(r.lr) << ',' << kv::number(r.loss_total) << ',' << kv::number(r.loss_recon)
     << ',' << kv::number(r.loss_vq) << ',' << kv::number(r.loss_dist) << ',' << kv::number(r.psnr_train_batch);
  return os.str();
}

struct TrainResult {
  RadianceField field;
  std::vector<LogRecord> log;
};

/// Pixels of all training frames, flattened for uniform sampling.
struct TrainingPixels {
  std::vector<Camera> cameras;
  std::vector<Vec3> backgrounds;  // per camera
  std::vector<Image> images;
  std::size_t pixels_per_frame = 0;

  std::size_t size() const { return images.size() * pixels_per_frame; }
};

inline TrainingPixels load_training_pixels(const DatasetManifest& m) {
  TrainingPixels px;
  for (const FrameRecord* f : m.select("train")) {
    px.cameras.push_back(m.camera(*f));
    px.backgrounds.push_back(m.backgrounds.at(static_cast<std::size_t>(f->level)));
    px.images.push_back(load_frame(m, *f));
  }
  if (px.images.empty()) throw std::runtime_error("dataset has no training frames");
  px.pixels_per_frame = static_cast<std::size_t>(m.width) * static_cast<std::size_t>(m.height);
  return px;
}

namespace detail {

inline void dump_batch(const std::filesystem::path& path, long step, const std::vector<Ray>& rays,
                       const Tensor& target, const Tensor& pred) {
  std::ofstream f(path);
  f << "# non-finite loss at step " << step << "\n";
  f << "ray,ox,oy,oz,dx,dy,dz,near,far,level,target_r,target_g,target_b,pred_r,pred_g,pred_b\n";
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Ray& r = rays[i];
    f << i << ',' << r.origin.x() << ',' << r.origin.y() << ',' << r.origin.z() << ',' << r.direction.x() << ','
      << r.direction.y() << ',' << r.direction.z() << ',' << r.t_near << ',' << r.t_far << ',' << r.level;
    for (int c = 0; c < 3; ++c) f << ',' << target.at(i, c);
    for (int c = 0; c < 3; ++c) f << ',' << pred.at(i, c);
    f << '\n';
  }
}

}  // namespace detail

/// Optional observer called after every logged record.
using TrainCallback = std::function<void(const LogRecord&)>;

/// Trains a field on the training split. When `out_dir` is non-empty, the
/// log (train_log.csv, codebook_usage.csv) and checkpoint.bin are written
/// there; a non-finite loss writes nan_batch.csv before aborting.
inline TrainResult train(const DatasetManifest& dataset, const TrainConfig& config,
                         const std::filesystem::path& out_dir = {}, const TrainCallback& on_log = nullptr) {
  config.validate();
  ModelConfig mc = config.model;
  mc.num_levels = std::max(mc.num_levels, dataset.num_levels());
  TrainResult result{RadianceField(mc, config.seed), {}};
  RadianceField& field = result.field;
  const TrainingPixels px = load_training_pixels(dataset);

  std::ofstream log_csv, usage_csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_csv.open(out_dir / "train_log.csv");
    log_csv << kLogHeader << '\n';
    usage_csv.open(out_dir / "codebook_usage.csv");
    usage_csv << "step,code,count\n";
  }
  auto save = [&] {
    if (!out_dir.empty()) save_checkpoint(field, out_dir / "checkpoint.bin");
  };

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<std::size_t> pick(0, px.size() - 1);
  OptimizerState opt;
  const std::size_t rows = mc.has_codebook() ? mc.codebook_rows() : 0;
  std::vector<std::size_t> usage(rows, 0);
  const std::size_t n = static_cast<std::size_t>(config.rays_per_batch);

  for (long step = 1; step <= config.iterations; ++step) {
    std::vector<Ray> rays(n);
    std::vector<Vec3> bgs(n);
    Tensor target(Shape{n, 3});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = pick(rng);
      const std::size_t f = k / px.pixels_per_frame, p = k % px.pixels_per_frame;
      const Camera& cam = px.cameras[f];
      rays[i] = generate_ray(cam, static_cast<int>(p % cam.width), static_cast<int>(p / cam.width));
      bgs[i] = px.backgrounds[f];
      const Vec3 c = px.images[f].get(p);
      for (int ch = 0; ch < 3; ++ch) target.at(i, ch) = c[ch];
    }

    ad::Graph g;
    BoundParameters bound(field.parameters(), g, true);
    TwoPass tp = render_two_pass(g, field, bound, rays, bgs, config.sampling, &rng);

    std::optional<ad::Var> vq;
    if (tp.coarse.field.latent_loss && tp.fine.field.latent_loss) {
      // Mean over all coarse and fine points.
      const double pc = static_cast<double>(tp.coarse.field.rgb.shape()[0]);
      const double pf = static_cast<double>(tp.fine.field.rgb.shape()[0]);
      vq = (pc * *tp.coarse.field.latent_loss + pf * *tp.fine.field.latent_loss) * (1.0 / (pc + pf));
    }
    std::optional<ad::Var> dist_f, dist_c;
    if (config.lambda1 != 0.0) {
      dist_f = distortion(tp.fine.weights, tp.fine_samples);
      dist_c = distortion(tp.coarse.weights, tp.coarse_samples);
    }
    LossTerms fine = total_loss(tp.fine.rgb, target, dist_f, vq, config);
    LossTerms coarse = total_loss(tp.coarse.rgb, target, dist_c, std::nullopt, config);
    ad::Var loss = fine.total + config.coarse_weight * coarse.total;
    const double loss_value = loss.value().item();
    if (!std::isfinite(loss_value)) {
      if (!out_dir.empty()) detail::dump_batch(out_dir / "nan_batch.csv", step, rays, target, tp.fine.rgb.value());
      throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                               (out_dir.empty() ? "" : "; batch written to " + (out_dir / "nan_batch.csv").string()));
    }

    for (std::size_t idx : tp.coarse.field.indices) ++usage.at(idx);
    for (std::size_t idx : tp.fine.field.indices) ++usage.at(idx);

    ad::Gradients grads = g.backward(loss, ad::Retain::kLeaves);
    std::vector<Tensor> gvec;
    gvec.reserve(bound.size());
    for (std::size_t i = 0; i < bound.size(); ++i) gvec.push_back(grads.take(bound.at(i)));
    const double lr = lr_schedule(step, config);
    adam_step(field.parameters(), gvec, opt, lr);

    if (step % config.log_every == 0 || step == config.iterations) {
      LogRecord rec;
      rec.step = step;
      rec.lr = lr;
      rec.loss_total = loss_value;
      rec.loss_recon = fine.recon + config.coarse_weight * coarse.recon;
      rec.loss_vq = fine.vq;
      rec.loss_dist = fine.dist + config.coarse_weight * coarse.dist;
      rec.psnr_train_batch = psnr_from_mse(fine.recon);
      rec.codebook_usage = std::exchange(usage, std::vector<std::size_t>(rows, 0));
      if (log_csv.is_open()) {
        log_csv << format_log_row(rec) << '\n' << std::flush;
        for (std::size_t c = 0; c < rec.codebook_usage.size(); ++c) {
          if (rec.codebook_usage[c]) usage_csv << step << ',' << c << ',' << rec.codebook_usage[c] << '\n';
        }
        usage_csv.flush();
      }
      if (on_log) on_log(rec);
      result.log.push_back(std::move(rec));
    }
    if (step % config.checkpoint_every == 0) save();
  }
  save();
  return result;
}

}  // namespace strata
