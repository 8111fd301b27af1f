#pragma once

// Procedural segmentation scenes. Five in-distribution classes plus a void
// class appear in both splits; test scenes additionally receive exactly one
// anomaly object (star or cross with a checkerboard texture) labelled 255.
//
// The generator uses only integer draws, uniforms and arithmetic (no libm
// transcendental calls outside the star outline), and quantizes intensities to
// k/255 so a scene survives a PPM round trip exactly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "obsnet/array4.hpp"
#include "obsnet/fsutil.hpp"
#include "obsnet/netpbm.hpp"
#include "obsnet/plane.hpp"
#include "obsnet/rng.hpp"

namespace obsnet::data {

inline constexpr std::uint8_t kBackground = 0, kRoad = 1, kRectangle = 2, kDisk = 3, kTriangle = 4;
inline constexpr std::uint8_t kVoid = 5;
inline constexpr std::uint8_t kPadding = 254;  // crop margin after augmentation; never supervised
inline constexpr std::uint8_t kAnomaly = 255;
inline constexpr std::size_t kSize = 64;
inline constexpr const char* kGeneratorVersion = "synthdata-1";

// Anomaly parameter grid; tests enumerate it exhaustively.
inline constexpr int kStarMinRadius = 5, kStarMaxRadius = 15;
inline constexpr double kStarInnerRatio = 0.5;
inline constexpr int kStarRotations = 72;  // degrees; five-fold symmetry repeats after 72
inline constexpr int kCrossMinArm = 4, kCrossMaxArm = 12;
inline constexpr int kCrossMinThick = 3, kCrossMaxThick = 6;
inline constexpr std::size_t kMinAnomalyPixels = 30, kMaxAnomalyPixels = 400;

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

// Three planes (R, G, B), each H x W, values in [0,1].
struct Image {
  std::size_t height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), data(3 * h * w, 0.0f) {}
  float& at(std::size_t c, std::size_t y, std::size_t x) noexcept { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const noexcept { return data[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

struct Scene {
  Image image;
  LabelMap labels;
  AttackMask ood_mask;  // 1 where labels == kAnomaly
  bool operator==(const Scene&) const = default;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t n_train = 400;
  std::size_t n_test = 200;
  std::size_t classes = 5;
  std::string version = kGeneratorVersion;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Scene> train;
  std::vector<Scene> test;
};

inline nd::Array4<float> to_batch(std::span<const Image> images) {
  if (images.empty()) return {};
  const auto& f = images.front();
  nd::Array4<float> out({images.size(), 3, f.height, f.width});
  float* dst = out.data();
  for (const auto& im : images) {
    if (im.height != f.height || im.width != f.width) throw ShapeError("to_batch: images differ in size");
    dst = std::copy(im.data.begin(), im.data.end(), dst);
  }
  return out;
}

inline nd::Array4<float> to_batch(const Image& image) { return to_batch(std::span<const Image>(&image, 1)); }

inline Image from_batch(const nd::Array4<float>& batch, std::size_t n) {
  Image im(batch.shape().h, batch.shape().w);
  std::copy(batch.sample_ptr(n), batch.sample_ptr(n) + batch.shape().sample(), im.data.begin());
  return im;
}

inline float quantize(double v) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<float>(q / 255.0);
}

namespace detail {

using Rgb = std::array<double, 3>;

inline Rgb random_color(SeededRng& rng, const Rgb& lo, const Rgb& hi) {
  return {rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]), rng.uniform(lo[2], hi[2])};
}

// Approximately Gaussian (Irwin-Hall, 3 terms) with standard deviation sd.
inline double soft_noise(SeededRng& rng, double sd) {
  return (rng.uniform() + rng.uniform() + rng.uniform() - 1.5) * 2.0 * sd;
}

struct Canvas {
  std::array<std::vector<double>, 3> rgb;
  LabelMap labels{kSize, kSize, kBackground};

  Canvas() { rgb.fill(std::vector<double>(kSize * kSize, 0.0)); }

  void paint(std::size_t y, std::size_t x, const Rgb& c, std::uint8_t label) {
    for (std::size_t k = 0; k < 3; ++k) rgb[k][y * kSize + x] = c[k];
    labels(y, x) = label;
  }
};

inline void draw_background(Canvas& cv, SeededRng& rng) {
  const Rgb base = random_color(rng, {0.25, 0.42, 0.22}, {0.42, 0.60, 0.38});
  // Value noise: bilinear interpolation of a 5x5 grid of random offsets.
  constexpr std::size_t G = 5;
  std::array<double, G * G> grid{};
  for (auto& g : grid) g = rng.uniform(-1.0, 1.0);
  const double amp = rng.uniform(0.05, 0.10);
  for (std::size_t y = 0; y < kSize; ++y) {
    for (std::size_t x = 0; x < kSize; ++x) {
      const double gy = static_cast<double>(y) * (G - 1) / (kSize - 1);
      const double gx = static_cast<double>(x) * (G - 1) / (kSize - 1);
      const std::size_t iy = std::min<std::size_t>(static_cast<std::size_t>(gy), G - 2);
      const std::size_t ix = std::min<std::size_t>(static_cast<std::size_t>(gx), G - 2);
      const double fy = gy - static_cast<double>(iy), fx = gx - static_cast<double>(ix);
      const double v = (1 - fy) * ((1 - fx) * grid[iy * G + ix] + fx * grid[iy * G + ix + 1]) +
                       fy * ((1 - fx) * grid[(iy + 1) * G + ix] + fx * grid[(iy + 1) * G + ix + 1]);
      cv.paint(y, x, {base[0] + amp * v, base[1] + amp * v, base[2] + 0.5 * amp * v}, kBackground);
    }
  }
}

inline void draw_road(Canvas& cv, SeededRng& rng) {
  const int h = rng.uniform_int(10, 20);
  const int y0 = rng.uniform_int(16, static_cast<int>(kSize) - h);
  const double g0 = rng.uniform(0.30, 0.48);
  const double tint = rng.uniform(-0.03, 0.03);
  for (int y = y0; y < y0 + h; ++y) {
    const double v = g0 + 0.25 * static_cast<double>(y - y0) / h;
    for (std::size_t x = 0; x < kSize; ++x) cv.paint(static_cast<std::size_t>(y), x, {v + tint, v, v - tint}, kRoad);
  }
}

inline void draw_rectangle(Canvas& cv, SeededRng& rng) {
  const Rgb c = random_color(rng, {0.60, 0.10, 0.10}, {0.90, 0.40, 0.35});
  const int w = rng.uniform_int(8, 22), h = rng.uniform_int(8, 22);
  const int x0 = rng.uniform_int(-w / 2, static_cast<int>(kSize) - w / 2);
  const int y0 = rng.uniform_int(-h / 2, static_cast<int>(kSize) - h / 2);
  for (int y = std::max(0, y0); y < std::min<int>(kSize, y0 + h); ++y)
    for (int x = std::max(0, x0); x < std::min<int>(kSize, x0 + w); ++x)
      cv.paint(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c, kRectangle);
}

inline void draw_disk(Canvas& cv, SeededRng& rng) {
  const Rgb c = random_color(rng, {0.10, 0.20, 0.60}, {0.35, 0.50, 0.95});
  const int r = rng.uniform_int(4, 11);
  const int cx = rng.uniform_int(0, kSize - 1), cy = rng.uniform_int(0, kSize - 1);
  for (int y = std::max(0, cy - r); y <= std::min<int>(kSize - 1, cy + r); ++y)
    for (int x = std::max(0, cx - r); x <= std::min<int>(kSize - 1, cx + r); ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
        cv.paint(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c, kDisk);
}

inline void draw_triangle(Canvas& cv, SeededRng& rng) {
  const Rgb c = random_color(rng, {0.70, 0.65, 0.05}, {0.95, 0.90, 0.30});
  const int b = rng.uniform_int(10, 24), h = rng.uniform_int(8, 20);
  const int cx = rng.uniform_int(0, kSize - 1), top = rng.uniform_int(-h / 2, static_cast<int>(kSize) - h / 2);
  const bool apex_up = rng.bernoulli(0.5);
  for (int dy = 0; dy < h; ++dy) {
    const int y = top + dy;
    if (y < 0 || y >= static_cast<int>(kSize)) continue;
    const int depth = apex_up ? dy : h - 1 - dy;
    for (int x = std::max(0, cx - b / 2); x <= std::min<int>(kSize - 1, cx + b / 2); ++x)
      if (2 * std::abs(x - cx) * h <= depth * b)
        cv.paint(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c, kTriangle);
  }
}

inline void draw_scribbles(Canvas& cv, SeededRng& rng) {
  const int count = rng.uniform_int(1, 2);
  for (int s = 0; s < count; ++s) {
    const double v = rng.uniform(0.04, 0.14);
    int x = rng.uniform_int(0, kSize - 1), y = rng.uniform_int(0, kSize - 1);
    const int len = rng.uniform_int(8, 15);
    for (int i = 0; i < len; ++i) {
      cv.paint(static_cast<std::size_t>(y), static_cast<std::size_t>(x), {v, v, v}, kVoid);
      x = std::clamp(x + rng.uniform_int(-1, 1), 0, static_cast<int>(kSize) - 1);
      y = std::clamp(y + rng.uniform_int(-1, 1), 0, static_cast<int>(kSize) - 1);
    }
  }
}

}  // namespace detail

// Pixel offsets (dy, dx) relative to the integer anchor of a five-pointed star
// whose centre sits at anchor + (half_y, half_x) / 2.
inline std::vector<std::pair<int, int>> star_raster(int radius, int rotation_deg, int half_y, int half_x) {
  std::array<double, 10> vx{}, vy{};
  for (int k = 0; k < 10; ++k) {
    const double r = (k % 2 == 0) ? radius : radius * kStarInnerRatio;
    const double a = (rotation_deg + 36.0 * k) * std::numbers::pi / 180.0;
    vx[static_cast<std::size_t>(k)] = r * std::sin(a);
    vy[static_cast<std::size_t>(k)] = -r * std::cos(a);
  }
  std::vector<std::pair<int, int>> out;
  const double oy = 0.5 * half_y, ox = 0.5 * half_x;
  for (int dy = -radius - 1; dy <= radius + 1; ++dy) {
    for (int dx = -radius - 1; dx <= radius + 1; ++dx) {
      const double py = dy - oy, px = dx - ox;
      bool inside = false;
      for (std::size_t i = 0, j = 9; i < 10; j = i++) {
        if ((vy[i] > py) != (vy[j] > py) &&
            px < (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i])
          inside = !inside;
      }
      if (inside) out.emplace_back(dy, dx);
    }
  }
  return out;
}

inline std::vector<std::pair<int, int>> cross_raster(int arm, int thickness) {
  std::vector<std::pair<int, int>> out;
  const int lo = -(thickness / 2), hi = lo + thickness - 1;
  for (int dy = -arm; dy <= arm; ++dy)
    for (int dx = -arm; dx <= arm; ++dx)
      if ((dy >= lo && dy <= hi) || (dx >= lo && dx <= hi)) out.emplace_back(dy, dx);
  return out;
}

namespace detail {

inline void draw_anomaly(Canvas& cv, SeededRng& rng) {
  std::vector<std::pair<int, int>> pix;
  int extent = 0;
  if (rng.bernoulli(0.5)) {
    const int r = rng.uniform_int(kStarMinRadius, kStarMaxRadius);
    pix = star_raster(r, rng.uniform_int(0, kStarRotations - 1), rng.uniform_int(0, 1), rng.uniform_int(0, 1));
    extent = r + 1;
  } else {
    const int arm = rng.uniform_int(kCrossMinArm, kCrossMaxArm);
    pix = cross_raster(arm, rng.uniform_int(kCrossMinThick, kCrossMaxThick));
    extent = arm;
  }
  // Anchor chosen so the whole raster lies inside the image.
  const int cy = rng.uniform_int(extent, static_cast<int>(kSize) - 1 - extent);
  const int cx = rng.uniform_int(extent, static_cast<int>(kSize) - 1 - extent);
  Rgb a = random_color(rng, {0, 0, 0}, {1, 1, 1}), b{};
  do {
    b = random_color(rng, {0, 0, 0}, {1, 1, 1});
  } while (std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]) < 0.6);
  for (auto [dy, dx] : pix) {
    const int y = cy + dy, x = cx + dx;
    const bool odd = (((y >> 1) + (x >> 1)) & 1) != 0;  // 2x2 checker cells
    cv.paint(static_cast<std::size_t>(y), static_cast<std::size_t>(x), odd ? a : b, kAnomaly);
  }
}

}  // namespace detail

inline Scene generate_scene(SeededRng& rng, Split split) {
  using namespace detail;
  Canvas cv;
  draw_background(cv, rng);
  if (rng.bernoulli(0.85)) draw_road(cv, rng);
  const int objects = rng.uniform_int(2, 5);
  for (int i = 0; i < objects; ++i) {
    switch (rng.uniform_int(0, 2)) {
      case 0: draw_rectangle(cv, rng); break;
      case 1: draw_disk(cv, rng); break;
      default: draw_triangle(cv, rng); break;
    }
  }
  draw_scribbles(cv, rng);
  if (split == Split::test) draw_anomaly(cv, rng);

  Scene s;
  s.image = Image(kSize, kSize);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < kSize * kSize; ++i)
      s.image.data[c * kSize * kSize + i] = quantize(cv.rgb[c][i] + soft_noise(rng, 0.03));
  s.labels = std::move(cv.labels);
  s.ood_mask = AttackMask(kSize, kSize, 0);
  for (std::size_t i = 0; i < s.labels.size(); ++i) s.ood_mask.data[i] = s.labels.data[i] == kAnomaly ? 1 : 0;
  return s;
}

inline SeededRng scene_rng(std::uint64_t seed, Split split, std::size_t index) {
  const std::uint64_t stream = (split == Split::train ? 0ULL : 1ULL) << 40;
  return SeededRng::derive(seed, stream | index);
}

inline Dataset generate_dataset(const DatasetManifest& m) {
  Dataset ds;
  ds.manifest = m;
  ds.train.reserve(m.n_train);
  ds.test.reserve(m.n_test);
  for (std::size_t i = 0; i < m.n_train; ++i) {
    auto rng = scene_rng(m.seed, Split::train, i);
    ds.train.push_back(generate_scene(rng, Split::train));
  }
  for (std::size_t i = 0; i < m.n_test; ++i) {
    auto rng = scene_rng(m.seed, Split::test, i);
    ds.test.push_back(generate_scene(rng, Split::test));
  }
  return ds;
}

// --- augmentation -------------------------------------------------------

inline constexpr std::size_t kCropSize = 56;

// Optional horizontal flip, then the kCropSize window at (oy, ox) is moved to
// the top-left corner; the margin is zero in the image and kPadding in the labels.
inline Scene augment_with(const Scene& in, bool flip, std::size_t oy, std::size_t ox) {
  const std::size_t H = in.labels.height, W = in.labels.width;
  if (oy + kCropSize > H || ox + kCropSize > W) throw ConfigError("augment: crop offset out of range");
  Scene out;
  out.image = Image(H, W);
  out.labels = LabelMap(H, W, kPadding);
  out.ood_mask = AttackMask(H, W, 0);
  for (std::size_t y = 0; y < kCropSize; ++y) {
    for (std::size_t x = 0; x < kCropSize; ++x) {
      const std::size_t sy = y + oy;
      const std::size_t sx0 = x + ox;
      const std::size_t sx = flip ? W - 1 - sx0 : sx0;
      for (std::size_t c = 0; c < 3; ++c) out.image.at(c, y, x) = in.image.at(c, sy, sx);
      out.labels(y, x) = in.labels(sy, sx);
      out.ood_mask(y, x) = in.ood_mask(sy, sx);
    }
  }
  return out;
}

inline Scene flip_horizontal(const Scene& in) {
  Scene out = in;
  const std::size_t H = in.labels.height, W = in.labels.width;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.image.at(c, y, x) = in.image.at(c, y, W - 1 - x);
      out.labels(y, x) = in.labels(y, W - 1 - x);
      out.ood_mask(y, x) = in.ood_mask(y, W - 1 - x);
    }
  }
  return out;
}

inline Scene augment(const Scene& in, SeededRng& rng) {
  const bool flip = rng.bernoulli(0.5);
  const auto max_off = static_cast<int>(in.labels.height - kCropSize);
  const auto oy = static_cast<std::size_t>(rng.uniform_int(0, max_off));
  const auto ox = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(in.labels.width - kCropSize)));
  return augment_with(in, flip, oy, ox);
}

// --- file I/O -----------------------------------------------------------

inline pnm::Rgb8 to_rgb8(const Image& im) {
  pnm::Rgb8 out{im.width, im.height, std::vector<std::uint8_t>(3 * im.width * im.height)};
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double q = std::floor(std::clamp(static_cast<double>(im.at(c, y, x)), 0.0, 1.0) * 255.0 + 0.5);
        out.pixels[(y * im.width + x) * 3 + c] = static_cast<std::uint8_t>(q);
      }
  return out;
}

inline Image from_rgb8(const pnm::Rgb8& px) {
  Image im(px.height, px.width);
  for (std::size_t y = 0; y < px.height; ++y)
    for (std::size_t x = 0; x < px.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        im.at(c, y, x) = static_cast<float>(px.pixels[(y * px.width + x) * 3 + c] / 255.0);
  return im;
}

inline pnm::Gray8 to_gray8(const Plane<std::uint8_t>& p, std::uint8_t one = 1) {
  pnm::Gray8 g{p.width, p.height, p.data};
  if (one != 1)
    for (auto& v : g.pixels) v = v ? one : 0;
  return g;
}

struct ScenePaths {
  std::filesystem::path image, labels, ood;
};

inline ScenePaths scene_paths(const std::filesystem::path& root, Split split, std::size_t index) {
  char buf[32];
  const auto dir = root / to_string(split);
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return {dir / ("img_" + std::string(buf) + ".ppm"), dir / ("lab_" + std::string(buf) + ".pgm"),
          dir / ("ood_" + std::string(buf) + ".pgm")};
}

struct EncodedScene {
  std::string image, labels, ood;
};

inline EncodedScene encode_scene(const Scene& s) {
  return {pnm::encode_ppm(to_rgb8(s.image)), pnm::encode_pgm(to_gray8(s.labels)),
          pnm::encode_pgm(to_gray8(s.ood_mask, 255))};
}

inline void write_scene(const ScenePaths& p, const Scene& s) {
  const auto e = encode_scene(s);
  write_file_atomic(p.image, e.image);
  write_file_atomic(p.labels, e.labels);
  write_file_atomic(p.ood, e.ood);
}

inline Scene read_scene(const ScenePaths& p) {
  const auto rgb = pnm::read_ppm(p.image);
  const auto lab = pnm::read_pgm(p.labels);
  const auto ood = pnm::read_pgm(p.ood);
  if (rgb.width != lab.width || rgb.height != lab.height || ood.width != lab.width || ood.height != lab.height)
    throw ShapeError("scene '" + p.image.string() + "': image, label and ood files differ in dimensions");
  Scene s;
  s.image = from_rgb8(rgb);
  s.labels = LabelMap(lab.height, lab.width);
  s.labels.data = lab.pixels;
  s.ood_mask = AttackMask(ood.height, ood.width);
  for (std::size_t i = 0; i < ood.pixels.size(); ++i) s.ood_mask.data[i] = ood.pixels[i] ? 1 : 0;
  return s;
}

inline std::string manifest_text(const DatasetManifest& m) {
  std::ostringstream ss;
  ss << "version=" << m.version << "\nseed=" << m.seed << "\nn_train=" << m.n_train << "\nn_test=" << m.n_test
     << "\nclasses=" << m.classes << "\n";
  return ss.str();
}

inline std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline DatasetManifest parse_manifest(const std::string& text) {
  const auto kv = parse_key_values(text, "manifest.txt");
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ParseError(std::string("manifest.txt: missing key '") + k + "'");
    return it->second;
  };
  DatasetManifest m;
  try {
    m.version = get("version");
    m.seed = std::stoull(get("seed"));
    m.n_train = std::stoul(get("n_train"));
    m.n_test = std::stoul(get("n_test"));
    m.classes = std::stoul(get("classes"));
  } catch (const std::logic_error&) {
    throw ParseError("manifest.txt: malformed numeric value");
  }
  return m;
}

// SHA-256 over the encoded split files in layout order (train then test; image,
// labels, ood per index).
inline std::string dataset_hash(const Dataset& ds) {
  Sha256 h;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& s : *split) {
      const auto e = encode_scene(s);
      h.update(e.image).update(e.labels).update(e.ood);
    }
  return h.hex();
}

inline void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  for (std::size_t i = 0; i < ds.train.size(); ++i) write_scene(scene_paths(root, Split::train, i), ds.train[i]);
  for (std::size_t i = 0; i < ds.test.size(); ++i) write_scene(scene_paths(root, Split::test, i), ds.test[i]);
  write_file_atomic(root / "manifest.txt", manifest_text(ds.manifest));
}

inline Dataset read_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.manifest = parse_manifest(read_file(root / "manifest.txt"));
  for (std::size_t i = 0; i < ds.manifest.n_train; ++i) ds.train.push_back(read_scene(scene_paths(root, Split::train, i)));
  for (std::size_t i = 0; i < ds.manifest.n_test; ++i) ds.test.push_back(read_scene(scene_paths(root, Split::test, i)));
  return ds;
}

}  // namespace obsnet::data
