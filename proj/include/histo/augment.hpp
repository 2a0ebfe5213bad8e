#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "histo/error.hpp"
#include "histo/patching.hpp"
#include "histo/raster.hpp"
#include "histo/seed.hpp"

namespace histo {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/**
 * Parameter ranges for the per-epoch stochastic augmentation.
 *
 * Brightness is applied as g = (1 + alpha_delta) * v + beta * 255, so the
 * alpha range is a gain offset around 1 and beta is a fraction of the
 * 8-bit dynamic range.
 */
struct AugmentConfig {
  double scale_min = 0.7;
  double scale_max = 1.3;
  double alpha_delta_min = -0.2;
  double alpha_delta_max = 0.2;
  double beta_min = -0.2;
  double beta_max = 0.2;
  double sigma_min = 0.3;
  double sigma_max = 0.6;
  double noise_fraction = 0.01;
  double resample_min = 0.80;
  double resample_max = 0.99;
  bool enable_elastic = true;
  bool enable_brightness = true;
  bool enable_blur = true;
  bool enable_noise = true;
  bool enable_resample = true;

  static AugmentConfig disabled() {
    AugmentConfig c;
    c.enable_elastic = c.enable_brightness = c.enable_blur = c.enable_noise =
        c.enable_resample = false;
    return c;
  }

  void validate() const {
    auto range = [](const char* name, double lo, double hi) {
      if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
        throw Error(ErrorKind::ConfigError, std::string(name) + " range is empty or not finite");
      }
    };
    range("scale", scale_min, scale_max);
    range("alpha_delta", alpha_delta_min, alpha_delta_max);
    range("beta", beta_min, beta_max);
    range("sigma", sigma_min, sigma_max);
    range("resample", resample_min, resample_max);
    if (scale_min <= 0.0) throw Error(ErrorKind::ConfigError, "scale bounds must be positive");
    if (sigma_min <= 0.0) throw Error(ErrorKind::ConfigError, "sigma bounds must be positive");
    if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0)) {
      throw Error(ErrorKind::ConfigError, "noise_fraction must lie in [0,1]");
    }
    if (resample_min <= 0.0 || resample_max > 1.0) {
      throw Error(ErrorKind::ConfigError, "resample bounds must lie in (0,1]");
    }
  }

  /// Field name -> value text, in declaration order. Used for config files
  /// and run metadata.
  std::vector<std::pair<std::string, std::string>> to_pairs() const {
    auto num = [](double v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      return os.str();
    };
    auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
    return {{"scale_min", num(scale_min)},
            {"scale_max", num(scale_max)},
            {"alpha_delta_min", num(alpha_delta_min)},
            {"alpha_delta_max", num(alpha_delta_max)},
            {"beta_min", num(beta_min)},
            {"beta_max", num(beta_max)},
            {"sigma_min", num(sigma_min)},
            {"sigma_max", num(sigma_max)},
            {"noise_fraction", num(noise_fraction)},
            {"resample_min", num(resample_min)},
            {"resample_max", num(resample_max)},
            {"enable_elastic", flag(enable_elastic)},
            {"enable_brightness", flag(enable_brightness)},
            {"enable_blur", flag(enable_blur)},
            {"enable_noise", flag(enable_noise)},
            {"enable_resample", flag(enable_resample)}};
  }
};

/**
 * Parses flat `key = value` text. Blank lines and `#` comments are ignored;
 * keys not given keep their defaults. Errors name the line number.
 */
inline AugmentConfig parse_augment_config(std::istream& in) {
  AugmentConfig cfg;
  const std::map<std::string, double*> numbers = {
      {"scale_min", &cfg.scale_min},         {"scale_max", &cfg.scale_max},
      {"alpha_delta_min", &cfg.alpha_delta_min}, {"alpha_delta_max", &cfg.alpha_delta_max},
      {"beta_min", &cfg.beta_min},           {"beta_max", &cfg.beta_max},
      {"sigma_min", &cfg.sigma_min},         {"sigma_max", &cfg.sigma_max},
      {"noise_fraction", &cfg.noise_fraction}, {"resample_min", &cfg.resample_min},
      {"resample_max", &cfg.resample_max}};
  const std::map<std::string, bool*> flags = {
      {"enable_elastic", &cfg.enable_elastic}, {"enable_brightness", &cfg.enable_brightness},
      {"enable_blur", &cfg.enable_blur},       {"enable_noise", &cfg.enable_noise},
      {"enable_resample", &cfg.enable_resample}};

  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (auto it = numbers.find(key); it != numbers.end()) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) {
        throw Error(ErrorKind::ConfigError, where + "invalid number '" + value + "' for " + key);
      }
      *it->second = v;
    } else if (auto ft = flags.find(key); ft != flags.end()) {
      if (value == "true" || value == "1") {
        *ft->second = true;
      } else if (value == "false" || value == "0") {
        *ft->second = false;
      } else {
        throw Error(ErrorKind::ConfigError, where + "invalid boolean '" + value + "' for " + key);
      }
    } else {
      throw Error(ErrorKind::ConfigError, where + "unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline AugmentConfig load_augment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open config " + path);
  try {
    return parse_augment_config(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Basic 8-fold expansion
// ---------------------------------------------------------------------------

/// The D4 orbit of a patch: four CCW rotations, then the same rotations
/// followed by a vertical flip. Output i carries variant = i.
inline std::vector<Patch> expand_eight(const Patch& p) {
  std::vector<Patch> out;
  out.reserve(kDihedralElements.size());
  for (std::size_t i = 0; i < kDihedralElements.size(); ++i) {
    Patch q = p;
    q.pixels = apply(p.pixels, kDihedralElements[i]);
    q.variant = static_cast<int>(i);
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stochastic stages
// ---------------------------------------------------------------------------

/// Mirror index into [0, n) without repeating the edge sample
/// (-1 -> 1, n -> n-2).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

namespace detail {

// Maps each output coordinate of a `target`-long axis to a source coordinate
// in a `source`-long axis: center crop when longer, reflect pad when shorter.
inline std::vector<int> fit_axis(int source, int target) {
  std::vector<int> map(static_cast<std::size_t>(target));
  if (source >= target) {
    const int offset = (source - target) / 2;
    for (int i = 0; i < target; ++i) map[i] = i + offset;
  } else {
    const int left = (target - source) / 2;
    for (int i = 0; i < target; ++i) map[i] = reflect_index(i - left, source);
  }
  return map;
}

inline int scaled_extent(int n, double factor) {
  return std::max(1, static_cast<int>(std::lround(n * factor)));
}

}  // namespace detail

/// Independent x/y stretch (bicubic), then center-crop or reflect-pad back
/// to the original size.
inline Patch elastic_scale(const Patch& p, double sx, double sy) {
  if (!(sx > 0.0) || !(sy > 0.0) || !std::isfinite(sx) || !std::isfinite(sy)) {
    throw Error(ErrorKind::InvalidArgument, "scale factors must be positive and finite");
  }
  const int w = p.pixels.width();
  const int h = p.pixels.height();
  const int nw = detail::scaled_extent(w, sx);
  const int nh = detail::scaled_extent(h, sy);
  Patch out = p;
  if (nw == w && nh == h) return out;
  const RasterImage scaled = bicubic_resize(p.pixels, nw, nh);
  const auto xs = detail::fit_axis(nw, w);
  const auto ys = detail::fit_axis(nh, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.pixels.set_pixel(x, y, scaled.pixel(xs[x], ys[y]));
  }
  return out;
}

inline Patch brightness_contrast(const Patch& p, double alpha_delta, double beta) {
  Patch out = p;
  const double gain = 1.0 + alpha_delta;
  const double offset = beta * 255.0;
  for (auto& v : out.pixels.bytes()) v = quantize(gain * v + offset);
  return out;
}

/// Normalized Gaussian taps for offsets -r..r, r = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    taps[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += taps[i + r];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

/// Separable blur, horizontal then vertical, reflected borders; quantized
/// once after the second pass.
inline Patch gaussian_blur(const Patch& p, double sigma) {
  const auto taps = gaussian_kernel(sigma);
  const int r = static_cast<int>(taps.size() / 2);
  const int w = p.pixels.width();
  const int h = p.pixels.height();
  const auto src = p.pixels.bytes();
  std::vector<double> horiz(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int sx = reflect_index(x + i, w);
          acc += taps[i + r] * src[(static_cast<std::size_t>(y) * w + sx) * 3 + c];
        }
        horiz[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  Patch out = p;
  auto dst = out.pixels.bytes();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int sy = reflect_index(y + i, h);
          acc += taps[i + r] * horiz[(static_cast<std::size_t>(sy) * w + x) * 3 + c];
        }
        dst[(static_cast<std::size_t>(y) * w + x) * 3 + c] = quantize(acc);
      }
    }
  }
  return out;
}

/// round(fraction * pixel_count), the exact number of noise targets.
inline std::size_t noise_target_count(std::size_t pixel_count, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pixel_count)));
}

/// Distinct target pixel indices, drawn uniformly without replacement
/// (partial Fisher-Yates).
inline std::vector<std::size_t> select_noise_targets(std::size_t pixel_count, std::size_t n,
                                                     SplitMix64& rng) {
  std::vector<std::size_t> idx(pixel_count);
  for (std::size_t i = 0; i < pixel_count; ++i) idx[i] = i;
  n = std::min(n, pixel_count);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pixel_count - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

/**
 * Replaces round(fraction * w * h) distinct pixels with the colour of another
 * uniformly chosen pixel of the original patch. A single-pixel patch has no
 * donor and is returned unchanged.
 */
inline Patch uniform_noise(const Patch& p, double fraction, const SeedContext& seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "noise fraction must lie in [0,1]");
  }
  Patch out = p;
  const std::size_t count = p.pixels.pixel_count();
  if (count < 2) return out;
  SplitMix64 rng = seed.stream();
  const auto targets = select_noise_targets(count, noise_target_count(count, fraction), rng);
  const auto src = p.pixels.bytes();
  auto dst = out.pixels.bytes();
  for (std::size_t t : targets) {
    std::size_t s = static_cast<std::size_t>(rng.below(count - 1));
    if (s >= t) ++s;
    dst[t * 3] = src[s * 3];
    dst[t * 3 + 1] = src[s * 3 + 1];
    dst[t * 3 + 2] = src[s * 3 + 2];
  }
  return out;
}

/// Bicubic shrink by `factor`, then bicubic back to the original size.
inline Patch resample_jitter(const Patch& p, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "resample factor must lie in (0,1]");
  }
  const int w = p.pixels.width();
  const int h = p.pixels.height();
  Patch out = p;
  const RasterImage small =
      bicubic_resize(p.pixels, detail::scaled_extent(w, factor), detail::scaled_extent(h, factor));
  out.pixels = bicubic_resize(small, w, h);
  return out;
}

// ---------------------------------------------------------------------------
// Per-epoch batch augmentation
// ---------------------------------------------------------------------------

enum class Stage : int { Elastic = 0, Brightness = 1, Blur = 2, Noise = 3, Resample = 4 };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Elastic: return "elastic";
    case Stage::Brightness: return "brightness";
    case Stage::Blur: return "blur";
    case Stage::Noise: return "noise";
    case Stage::Resample: return "resample";
  }
  return "?";
}

/// One parameter draw, for range audits.
struct DrawRecord {
  ItemKey key;
  Stage stage = Stage::Elastic;
  std::vector<std::pair<std::string, double>> params;

  /// `image_id,grid_index,variant,epoch,stage,k=v;k=v`
  std::string to_line() const {
    std::ostringstream os;
    os << key.image_id << ',' << key.grid_index << ',' << key.variant << ',' << key.epoch << ','
       << stage_name(stage) << ',';
    os << std::setprecision(17);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (i) os << ';';
      os << params[i].first << '=' << params[i].second;
    }
    return os.str();
  }
};

/// Runs the enabled stages on one patch, recording draws into `log` when
/// non-null.
inline Patch augment_one(const Patch& p, const AugmentConfig& cfg, std::uint64_t master_seed,
                         std::int64_t epoch, std::vector<DrawRecord>* log = nullptr) {
  auto context = [&](Stage s) {
    return SeedContext{master_seed,
                       ItemKey{p.image_id, p.grid_index, epoch, static_cast<int>(s), p.variant}};
  };
  auto record = [&](Stage s, std::vector<std::pair<std::string, double>> params) {
    if (log) log->push_back(DrawRecord{context(s).item_key, s, std::move(params)});
  };

  Patch cur = p;
  if (cfg.enable_elastic) {
    auto rng = context(Stage::Elastic).stream();
    const double sx = rng.uniform(cfg.scale_min, cfg.scale_max);
    const double sy = rng.uniform(cfg.scale_min, cfg.scale_max);
    record(Stage::Elastic, {{"sx", sx}, {"sy", sy}});
    cur = elastic_scale(cur, sx, sy);
  }
  if (cfg.enable_brightness) {
    auto rng = context(Stage::Brightness).stream();
    const double alpha = rng.uniform(cfg.alpha_delta_min, cfg.alpha_delta_max);
    const double beta = rng.uniform(cfg.beta_min, cfg.beta_max);
    record(Stage::Brightness, {{"alpha_delta", alpha}, {"beta", beta}});
    cur = brightness_contrast(cur, alpha, beta);
  }
  if (cfg.enable_blur) {
    auto rng = context(Stage::Blur).stream();
    const double sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max);
    record(Stage::Blur, {{"sigma", sigma}});
    cur = gaussian_blur(cur, sigma);
  }
  if (cfg.enable_noise) {
    const std::size_t n = cur.pixels.pixel_count() < 2
                              ? 0
                              : noise_target_count(cur.pixels.pixel_count(), cfg.noise_fraction);
    record(Stage::Noise,
           {{"fraction", cfg.noise_fraction}, {"targets", static_cast<double>(n)}});
    cur = uniform_noise(cur, cfg.noise_fraction, context(Stage::Noise));
  }
  if (cfg.enable_resample) {
    auto rng = context(Stage::Resample).stream();
    const double factor = rng.uniform(cfg.resample_min, cfg.resample_max);
    record(Stage::Resample, {{"factor", factor}});
    cur = resample_jitter(cur, factor);
  }
  return cur;
}

/**
 * Augments every patch independently. Each draw comes from the patch's own
 * SeedContext stream, so the result is identical for any `workers` count.
 * Draw records, when requested, are appended in input order.
 */
inline std::vector<Patch> augment_batch(const std::vector<Patch>& patches, const AugmentConfig& cfg,
                                        std::uint64_t master_seed, std::int64_t epoch,
                                        unsigned workers = 1,
                                        std::vector<DrawRecord>* draw_log = nullptr) {
  cfg.validate();
  std::vector<Patch> out(patches.size());
  std::vector<std::vector<DrawRecord>> logs(draw_log ? patches.size() : 0);
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < patches.size(); i += stride) {
      out[i] = augment_one(patches[i], cfg, master_seed, epoch, draw_log ? &logs[i] : nullptr);
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1 || patches.size() < 2) {
    run(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
          try {
            run(t, workers);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  if (draw_log) {
    for (auto& l : logs) draw_log->insert(draw_log->end(), l.begin(), l.end());
  }
  return out;
}

}  // namespace histo
