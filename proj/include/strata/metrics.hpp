#pragma once

// PSNR, SSIM and level-wise evaluation reports.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata/dataset.hpp"
#include "strata/image.hpp"
#include "strata/renderer.hpp"

namespace strata {

inline constexpr double kPsnrCap = 99.0;

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": image shapes differ (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  }
}

/// -10 log10(MSE) over all channels with peak 1; identical images give 99 dB.
inline double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  double se = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.rgb.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

inline std::vector<double> grayscale(const Image& img) {
  std::vector<double> g(img.pixel_count());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (img.rgb[3 * i] + img.rgb[3 * i + 1] + img.rgb[3 * i + 2]) / 3.0;
  return g;
}

/// SSIM of the channel-mean images: Gaussian-weighted local statistics over
/// every fully contained window, averaged. Images smaller than the window use
/// one set of global (unweighted) statistics.
inline double ssim(const Image& a, const Image& b, const SsimOptions& o = {}) {
  require_same_shape(a, b, "ssim");
  const std::vector<double> x = grayscale(a), y = grayscale(b);
  const double c1 = (o.k1 * 1.0) * (o.k1 * 1.0), c2 = (o.k2 * 1.0) * (o.k2 * 1.0);
  auto formula = [&](double mx, double my, double vx, double vy, double cxy) {
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  };
  const int w = a.width, h = a.height, win = o.window;
  if (w < win || h < win) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      vx += (x[i] - mx) * (x[i] - mx);
      vy += (y[i] - my) * (y[i] - my);
      cxy += (x[i] - mx) * (y[i] - my);
    }
    return formula(mx, my, vx / n, vy / n, cxy / n);
  }
  // Separable Gaussian kernel.
  std::vector<double> k(static_cast<std::size_t>(win));
  double ks = 0;
  for (int i = 0; i < win; ++i) {
    const double d = i - (win - 1) / 2.0;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * o.sigma * o.sigma));
    ks += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= ks;
  const int ow = w - win + 1, oh = h - win + 1;
  // Horizontal pass of x, y, x^2, y^2, xy into [h x ow] buffers.
  std::vector<std::vector<double>> hp(5, std::vector<double>(static_cast<std::size_t>(h) * ow));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int t = 0; t < win; ++t) {
        const std::size_t i = static_cast<std::size_t>(r) * w + c + t;
        const double kv = k[static_cast<std::size_t>(t)];
        s[0] += kv * x[i];
        s[1] += kv * y[i];
        s[2] += kv * x[i] * x[i];
        s[3] += kv * y[i] * y[i];
        s[4] += kv * x[i] * y[i];
      }
      for (int q = 0; q < 5; ++q) hp[static_cast<std::size_t>(q)][static_cast<std::size_t>(r) * ow + c] = s[q];
    }
  }
  double total = 0;
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int t = 0; t < win; ++t) {
        const double kv = k[static_cast<std::size_t>(t)];
        for (int q = 0; q < 5; ++q) s[q] += kv * hp[static_cast<std::size_t>(q)][static_cast<std::size_t>(r + t) * ow + c];
      }
      const double mx = s[0], my = s[1];
      total += formula(mx, my, s[2] - mx * mx, s[3] - my * my, s[4] - mx * my);
    }
  }
  return total / (static_cast<double>(ow) * oh);
}

struct FrameMetrics {
  std::string id;
  int level = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

/// Uniform bins over [min, max] of the values; the maximum falls in the last
/// bin. A constant sample puts everything in the first bin.
inline Histogram histogram(const std::vector<double>& values, int bins = 16) {
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  if (values.empty()) return h;
  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());
  const double width = (h.hi - h.lo) / bins;
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0) b = static_cast<std::size_t>(std::min<double>(bins - 1, std::floor((v - h.lo) / width)));
    ++h.counts[b];
  }
  return h;
}

struct LevelSummary {
  int level = -1;  // -1 for the total row
  std::size_t frames = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  Histogram psnr_hist;
  Histogram ssim_hist;
};

struct EvalReport {
  std::string split;
  std::vector<FrameMetrics> frames;
  std::vector<LevelSummary> levels;
  LevelSummary total;
};

inline LevelSummary summarize(const std::vector<const FrameMetrics*>& frames, int level) {
  LevelSummary s;
  s.level = level;
  s.frames = frames.size();
  std::vector<double> p, q;
  for (const FrameMetrics* f : frames) {
    p.push_back(f->psnr);
    q.push_back(f->ssim);
  }
  if (!frames.empty()) {
    for (double v : p) s.psnr += v;
    for (double v : q) s.ssim += v;
    s.psnr /= static_cast<double>(frames.size());
    s.ssim /= static_cast<double>(frames.size());
  }
  s.psnr_hist = histogram(p);
  s.ssim_hist = histogram(q);
  return s;
}

/// Builds per-level and total rows from per-frame records.
inline EvalReport make_report(std::string split, std::vector<FrameMetrics> frames) {
  EvalReport r;
  r.split = std::move(split);
  r.frames = std::move(frames);
  std::map<int, std::vector<const FrameMetrics*>> by_level;
  std::vector<const FrameMetrics*> all;
  for (const auto& f : r.frames) {
    by_level[f.level].push_back(&f);
    all.push_back(&f);
  }
  for (const auto& [level, fs] : by_level) r.levels.push_back(summarize(fs, level));
  r.total = summarize(all, -1);
  return r;
}

/// Evaluates rendered images against ground truth. `render` returns the image
/// for a frame; frames are optionally restricted to one level.
template <class RenderFn>
EvalReport evaluate_frames(const DatasetManifest& m, const std::string& split, RenderFn&& render, int level = -1) {
  std::vector<const FrameRecord*> sel = m.select(split, level);
  std::vector<FrameMetrics> out(sel.size());
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const Image gt = load_frame(m, *sel[i]);
    const Image img = render(*sel[i]);
    out[i] = {sel[i]->id, sel[i]->level, psnr(img, gt), ssim(img, gt)};
  }
  return make_report(split, std::move(out));
}

/// Renders every frame of the split with the field and scores it.
inline EvalReport evaluate(const RadianceField& field, const DatasetManifest& m, const std::string& split,
                           const SamplingConfig& sampling, int level = -1) {
  if (field.config().num_levels < m.num_levels()) {
    throw std::invalid_argument("evaluate: checkpoint knows " + std::to_string(field.config().num_levels) +
                                " levels, dataset has " + std::to_string(m.num_levels()));
  }
  return evaluate_frames(
      m, split,
      [&](const FrameRecord& f) {
        return render_image(field, m.camera(f), m.backgrounds.at(static_cast<std::size_t>(f.level)), sampling).image;
      },
      level);
}

inline std::string level_label(int level) { return level < 0 ? "total" : "level " + std::to_string(level); }

inline std::string format_summary(const EvalReport& r) {
  std::ostringstream os;
  os << "split: " << r.split << "\n";
  os << std::left << std::setw(10) << "level" << std::right << std::setw(8) << "frames" << std::setw(10) << "psnr"
     << std::setw(10) << "ssim" << "\n";
  os << std::fixed;
  auto row = [&](const LevelSummary& s) {
    os << std::left << std::setw(10) << level_label(s.level) << std::right << std::setw(8) << s.frames
       << std::setw(10) << std::setprecision(3) << s.psnr << std::setw(10) << std::setprecision(4) << s.ssim << "\n";
  };
  for (const auto& s : r.levels) row(s);
  row(r.total);
  return os.str();
}

inline std::string format_frames_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "id,level,psnr,ssim\n";
  for (const auto& f : r.frames) os << f.id << ',' << f.level << ',' << kv::number(f.psnr) << ',' << kv::number(f.ssim) << '\n';
  return os.str();
}

inline std::string format_histogram_csv(const Histogram& h) {
  std::ostringstream os;
  os << "bin,lo,hi,count\n";
  const double width = h.counts.empty() ? 0.0 : (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    os << b << ',' << kv::number(h.lo + b * width) << ',' << kv::number(h.lo + (b + 1) * width) << ',' << h.counts[b]
       << '\n';
  }
  return os.str();
}

/// Writes frames.csv, summary.txt and hist_<metric>_<level>.csv into dir.
inline void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "frames.csv", format_frames_csv(r));
  write_file(dir / "summary.txt", format_summary(r));
  auto tag = [](int level) { return level < 0 ? std::string("total") : "L" + std::to_string(level); };
  for (const auto& s : r.levels) {
    write_file(dir / ("hist_psnr_" + tag(s.level) + ".csv"), format_histogram_csv(s.psnr_hist));
    write_file(dir / ("hist_ssim_" + tag(s.level) + ".csv"), format_histogram_csv(s.ssim_hist));
  }
}

}  // namespace strata
