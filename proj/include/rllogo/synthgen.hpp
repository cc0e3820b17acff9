#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rllogo/image.hpp"
#include "rllogo/locenv.hpp"
#include "rllogo/rng.hpp"

// Deterministic synthetic logo scenes: glyph-style logos composited onto
// cluttered noise backgrounds at random position/scale/rotation, with a
// JSON-lines manifest recording class and ground-truth box.
namespace rllogo::synthgen {

using locenv::BBox;

inline constexpr int kGlyphSide = 8;
inline constexpr int kDefaultCanvas = 64;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Saturated foreground palette. Colors repeat across classes on purpose:
// class identity lives in the glyph mask, so a classifier cannot shortcut
// through color alone.
inline const std::array<Rgb, 6>& palette() {
  static const std::array<Rgb, 6> p = {{{230, 60, 50},
                                        {60, 120, 230},
                                        {50, 190, 90},
                                        {240, 200, 60},
                                        {170, 80, 220},
                                        {240, 130, 50}}};
  return p;
}

struct LogoTemplate {
  int class_id = 0;
  std::array<std::uint8_t, kGlyphSide * kGlyphSide> mask{};  // binary
  Rgb color;
  int pattern_id = 0;
};

inline std::string class_name_for(int class_id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "brand_%02d", class_id);
  return buf;
}

namespace detail {

using GlyphMask = std::array<std::uint8_t, kGlyphSide * kGlyphSide>;

inline GlyphMask rotate_mask(const GlyphMask& m, int k) {
  GlyphMask out{};
  const int n = kGlyphSide;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int sx, sy;
      switch (((k % 4) + 4) % 4) {
        case 0: sx = x; sy = y; break;
        case 1: sx = n - 1 - y; sy = x; break;
        case 2: sx = n - 1 - x; sy = n - 1 - y; break;
        default: sx = y; sy = n - 1 - x; break;
      }
      out[y * n + x] = m[sy * n + sx];
    }
  return out;
}

inline int hamming(const GlyphMask& a, const GlyphMask& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

// Minimum Hamming distance over all relative rotations of the two masks.
inline int rotation_distance(const GlyphMask& a, const GlyphMask& b) {
  int best = kGlyphSide * kGlyphSide;
  for (int k = 0; k < 4; ++k) best = std::min(best, hamming(a, rotate_mask(b, k)));
  return best;
}

inline int popcount(const GlyphMask& m) {
  int n = 0;
  for (auto v : m) n += v;
  return n;
}

// Random blobby candidate: random bits, one 3x3 majority smoothing pass,
// then the first/last row and column are forced non-empty so the rendered
// glyph spans its placement box exactly.
inline GlyphMask glyph_candidate(Rng& rng) {
  const int n = kGlyphSide;
  GlyphMask raw{}, mask{};
  for (auto& v : raw) v = rng.uniform() < 0.5 ? 1 : 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int sum = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int cx = std::clamp(x + dx, 0, n - 1);
          int cy = std::clamp(y + dy, 0, n - 1);
          sum += raw[cy * n + cx];
        }
      mask[y * n + x] = sum >= 5 ? 1 : 0;
    }
  auto touch_edge = [&](bool horizontal, int fixed) {
    bool any = false;
    for (int i = 0; i < n; ++i)
      any |= horizontal ? mask[fixed * n + i] : mask[i * n + fixed];
    if (any) return;
    int at = 1 + static_cast<int>(rng.uniform_int(n - 3));
    for (int i = at - 1; i <= at + 1; ++i) {
      if (horizontal)
        mask[fixed * n + i] = 1;
      else
        mask[i * n + fixed] = 1;
    }
  };
  touch_edge(true, 0);
  touch_edge(true, n - 1);
  touch_edge(false, 0);
  touch_edge(false, n - 1);
  return mask;
}

// Shapes reserved for background distractors; glyphs must stay far from
// these so the background can never spell out a class.
inline std::vector<GlyphMask> reserved_masks() {
  GlyphMask solid{};
  solid.fill(1);
  GlyphMask disc{};
  const double c = (kGlyphSide - 1) / 2.0, r = kGlyphSide / 2.0;
  for (int y = 0; y < kGlyphSide; ++y)
    for (int x = 0; x < kGlyphSide; ++x)
      disc[y * kGlyphSide + x] = ((x - c) * (x - c) + (y - c) * (y - c) <= r * r) ? 1 : 0;
  return {solid, disc};
}

}  // namespace detail

// Deterministic pairwise-distinct templates. Distinctness is enforced under
// all relative 90-degree rotations (scene placement and training augmentation
// both rotate), with a minimum mask distance of 14 cells.
inline std::vector<LogoTemplate> make_templates(int num_classes, std::uint64_t seed) {
  if (num_classes < 2 || num_classes > 64)
    throw std::invalid_argument("make_templates: num_classes must be in [2, 64]");
  Rng rng = Rng::stream(seed, 0xF00D);
  const auto reserved = detail::reserved_masks();
  std::vector<LogoTemplate> out;
  out.reserve(num_classes);
  constexpr int kMinDistance = 20;
  for (int c = 0; c < num_classes; ++c) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 20000)
        throw std::runtime_error("make_templates: rejection sampling stalled");
      int min_distance = kMinDistance - 2 * (attempt / 2000);  // relax if crowded
      min_distance = std::max(min_distance, 10);
      auto mask = detail::glyph_candidate(rng);
      int on = detail::popcount(mask);
      if (on < 22 || on > 42) continue;
      bool ok = true;
      for (const auto& r : reserved)
        if (detail::rotation_distance(mask, r) < 10) ok = false;
      for (const auto& t : out)
        if (detail::rotation_distance(mask, t.mask) < min_distance) ok = false;
      if (!ok) continue;
      LogoTemplate t;
      t.class_id = c;
      t.mask = mask;
      t.color = palette()[c % palette().size()];
      t.pattern_id = c % 4;
      out.push_back(t);
      break;
    }
  }
  return out;
}

struct Placement {
  double scale = 0.5;      // logo side as a fraction of the canvas side
  int rotation_k = 0;      // multiples of 90 degrees
  double center_x = 0.5;   // normalized
  double center_y = 0.5;
};

struct BackgroundParams {
  int canvas = kDefaultCanvas;
  int min_distractors = 1;
  int max_distractors = 3;
};

struct Scene {
  Image image;
  int class_id = 0;
  BBox gt_box;
  Placement placement;
  std::uint64_t seed = 0;
};

struct PlacementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Two-octave value noise blended between two muted colors.
inline void paint_background(Image& img, Rng& rng) {
  const int n0 = 5, n1 = 9;
  std::vector<double> lat0(n0 * n0), lat1(n1 * n1);
  for (auto& v : lat0) v = rng.uniform();
  for (auto& v : lat1) v = rng.uniform();
  Rgb a{static_cast<std::uint8_t>(40 + rng.uniform_int(120)),
        static_cast<std::uint8_t>(40 + rng.uniform_int(120)),
        static_cast<std::uint8_t>(40 + rng.uniform_int(120))};
  Rgb b{static_cast<std::uint8_t>(40 + rng.uniform_int(120)),
        static_cast<std::uint8_t>(40 + rng.uniform_int(120)),
        static_cast<std::uint8_t>(40 + rng.uniform_int(120))};
  auto sample = [](const std::vector<double>& lat, int n, double u, double v) {
    double x = u * (n - 1), y = v * (n - 1);
    int x0 = std::min(static_cast<int>(x), n - 2);
    int y0 = std::min(static_cast<int>(y), n - 2);
    double fx = x - x0, fy = y - y0;
    fx = fx * fx * (3 - 2 * fx);  // smoothstep
    fy = fy * fy * (3 - 2 * fy);
    double top = lat[y0 * n + x0] * (1 - fx) + lat[y0 * n + x0 + 1] * fx;
    double bot = lat[(y0 + 1) * n + x0] * (1 - fx) + lat[(y0 + 1) * n + x0 + 1] * fx;
    return top * (1 - fy) + bot * fy;
  };
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double u = (x + 0.5) / img.width, v = (y + 0.5) / img.height;
      double t = 0.65 * sample(lat0, n0, u, v) + 0.35 * sample(lat1, n1, u, v);
      img.set(x, y, static_cast<std::uint8_t>(a.r + t * (b.r - a.r)),
              static_cast<std::uint8_t>(a.g + t * (b.g - a.g)),
              static_cast<std::uint8_t>(a.b + t * (b.b - a.b)));
    }
}

// Rectangles and ellipses in palette colors. These are the only distractor
// shapes, so the background never reproduces a class glyph.
inline void paint_distractors(Image& img, Rng& rng, const BackgroundParams& bg) {
  int count = bg.min_distractors +
              static_cast<int>(rng.uniform_int(bg.max_distractors - bg.min_distractors + 1));
  for (int d = 0; d < count; ++d) {
    const Rgb base = palette()[rng.uniform_int(palette().size())];
    const Rgb c{static_cast<std::uint8_t>(base.r * 0.8),
                static_cast<std::uint8_t>(base.g * 0.8),
                static_cast<std::uint8_t>(base.b * 0.8)};
    int w = 6 + static_cast<int>(rng.uniform_int(img.width / 4));
    int h = 6 + static_cast<int>(rng.uniform_int(img.height / 4));
    int x0 = static_cast<int>(rng.uniform_int(std::max(1, img.width - w)));
    int y0 = static_cast<int>(rng.uniform_int(std::max(1, img.height - h)));
    bool ellipse = rng.uniform() < 0.5;
    double ecx = x0 + w / 2.0, ecy = y0 + h / 2.0;
    for (int y = y0; y < std::min(img.height, y0 + h); ++y)
      for (int x = x0; x < std::min(img.width, x0 + w); ++x) {
        if (ellipse) {
          double dx = (x + 0.5 - ecx) / (w / 2.0), dy = (y + 0.5 - ecy) / (h / 2.0);
          if (dx * dx + dy * dy > 1.0) continue;
        }
        img.set(x, y, c.r, c.g, c.b);
      }
  }
}

}  // namespace detail

// Composites one logo onto a fresh cluttered background. The ground-truth
// box is re-extracted from the composited mask, so it is tight by
// construction. Placements that would clip the logo are rejected.
inline Scene render_scene(const LogoTemplate& tmpl, const BackgroundParams& bg,
                          const Placement& placement, std::uint64_t seed) {
  const int canvas = bg.canvas;
  int side = static_cast<int>(std::lround(placement.scale * canvas));
  side = std::max(side, kGlyphSide);
  int x0 = static_cast<int>(std::lround(placement.center_x * canvas - side / 2.0));
  int y0 = static_cast<int>(std::lround(placement.center_y * canvas - side / 2.0));
  if (x0 < 0 || y0 < 0 || x0 + side > canvas || y0 + side > canvas)
    throw PlacementError("render_scene: placement clips the logo");

  Scene scene;
  scene.class_id = tmpl.class_id;
  scene.placement = placement;
  scene.seed = seed;
  scene.image = Image(canvas, canvas);

  Rng rng(seed);
  detail::paint_background(scene.image, rng);
  detail::paint_distractors(scene.image, rng, bg);

  const auto mask = detail::rotate_mask(tmpl.mask, placement.rotation_k);
  int minx = canvas, miny = canvas, maxx = -1, maxy = -1;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      int gx = x * kGlyphSide / side, gy = y * kGlyphSide / side;
      if (!mask[gy * kGlyphSide + gx]) continue;
      int px = x0 + x, py = y0 + y;
      double dim = 1.0;
      int qs = std::max(1, side / kGlyphSide);
      switch (tmpl.pattern_id) {
        case 1: if ((y / qs) % 2 == 1) dim = 0.72; break;
        case 2: if ((x / qs) % 2 == 1) dim = 0.72; break;
        case 3: if (((x / qs) + (y / qs)) % 2 == 1) dim = 0.72; break;
        default: break;
      }
      scene.image.set(px, py, static_cast<std::uint8_t>(tmpl.color.r * dim),
                      static_cast<std::uint8_t>(tmpl.color.g * dim),
                      static_cast<std::uint8_t>(tmpl.color.b * dim));
      minx = std::min(minx, px);
      miny = std::min(miny, py);
      maxx = std::max(maxx, px);
      maxy = std::max(maxy, py);
    }
  if (maxx < 0) throw std::logic_error("render_scene: empty glyph mask");
  scene.gt_box = BBox{static_cast<double>(minx) / canvas,
                      static_cast<double>(miny) / canvas,
                      static_cast<double>(maxx + 1) / canvas,
                      static_cast<double>(maxy + 1) / canvas};
  return scene;
}

struct ManifestRecord {
  int id = 0;
  std::string image_path;  // relative to the manifest's directory
  int class_id = 0;
  std::string class_name;
  BBox gt_box;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::string split;  // "train" or "eval"
  int num_classes = 0;
  std::filesystem::path base_dir;  // directory image paths resolve against

  std::filesystem::path resolve(const ManifestRecord& rec) const {
    return base_dir / rec.image_path;
  }
};

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_manifest: cannot open " + path.string());
  for (const auto& r : m.records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["image_path"] = r.image_path;
    j["class_id"] = r.class_id;
    j["class_name"] = r.class_name;
    j["gt_box"] = {r.gt_box.x1, r.gt_box.y1, r.gt_box.x2, r.gt_box.y2};
    j["seed"] = r.seed;
    f << j.dump() << "\n";
  }
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string stem = path.stem().string();
  m.split = stem.find("train") != std::string::npos ? "train" : "eval";
  std::string line;
  int max_class = -1;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<int>();
    r.image_path = j.at("image_path").get<std::string>();
    r.class_id = j.at("class_id").get<int>();
    r.class_name = j.at("class_name").get<std::string>();
    auto box = j.at("gt_box");
    r.gt_box = BBox{box.at(0).get<double>(), box.at(1).get<double>(),
                    box.at(2).get<double>(), box.at(3).get<double>()};
    r.seed = j.at("seed").get<std::uint64_t>();
    m.records.push_back(std::move(r));
    max_class = std::max(max_class, m.records.back().class_id);
  }
  m.num_classes = max_class + 1;
  for (const auto& r : m.records)
    if (!std::filesystem::exists(m.resolve(r)))
      throw std::runtime_error("load_manifest: missing image " + m.resolve(r).string());
  return m;
}

struct DatasetOptions {
  int num_classes = 10;
  int n_train = 2000;
  int n_eval = 500;
  double scale_min = 0.15;
  double scale_max = 0.9;
  std::uint64_t seed = 42;
  int canvas = kDefaultCanvas;
};

namespace detail {

// Train and eval records come from disjoint seed streams: per-record tags
// differ by parity, so the two splits can never share a scene.
inline std::uint64_t record_seed(std::uint64_t master, bool train, int index) {
  return Rng::stream(master, static_cast<std::uint64_t>(index) * 2 + (train ? 0 : 1))
      .next_u64();
}

}  // namespace detail

// Writes PPM images plus one JSON-lines manifest per split into out_dir.
// Class assignment is round-robin, so per-class counts are balanced within
// one. The whole dataset is a pure function of its options.
inline std::pair<DatasetManifest, DatasetManifest> generate_dataset(
    const DatasetOptions& opt, const std::filesystem::path& out_dir) {
  if (opt.scale_min < 0.05 || opt.scale_max > 1.0 || opt.scale_min > opt.scale_max)
    throw std::invalid_argument("generate_dataset: bad scale range");
  std::filesystem::create_directories(out_dir);
  auto templates = make_templates(opt.num_classes, opt.seed);
  BackgroundParams bg;
  bg.canvas = opt.canvas;

  auto make_split = [&](bool train, int count) {
    DatasetManifest m;
    m.split = train ? "train" : "eval";
    m.num_classes = opt.num_classes;
    m.base_dir = out_dir;
    for (int i = 0; i < count; ++i) {
      std::uint64_t seed = detail::record_seed(opt.seed, train, i);
      Rng rng(seed);
      const auto& tmpl = templates[i % opt.num_classes];
      Placement pl;
      pl.scale = rng.uniform(opt.scale_min, opt.scale_max);
      pl.rotation_k = static_cast<int>(rng.uniform_int(4));
      int side = std::max(static_cast<int>(std::lround(pl.scale * opt.canvas)), kGlyphSide);
      // Sample a pixel origin that keeps the logo fully inside the canvas.
      int x0 = static_cast<int>(rng.uniform_int(opt.canvas - side + 1));
      int y0 = static_cast<int>(rng.uniform_int(opt.canvas - side + 1));
      pl.center_x = (x0 + side / 2.0) / opt.canvas;
      pl.center_y = (y0 + side / 2.0) / opt.canvas;
      Scene scene = render_scene(tmpl, bg, pl, rng.next_u64());

      char name[64];
      std::snprintf(name, sizeof(name), "%s_%06d.ppm", m.split.c_str(), i);
      write_ppm(scene.image, (out_dir / name).string());

      ManifestRecord rec;
      rec.id = i;
      rec.image_path = name;
      rec.class_id = tmpl.class_id;
      rec.class_name = class_name_for(tmpl.class_id);
      rec.gt_box = scene.gt_box;
      rec.seed = scene.seed;
      m.records.push_back(std::move(rec));
    }
    write_manifest(m, out_dir / (m.split + ".jsonl"));
    return m;
  };

  DatasetManifest train = make_split(true, opt.n_train);
  DatasetManifest eval = make_split(false, opt.n_eval);
  return {std::move(train), std::move(eval)};
}

}  // namespace rllogo::synthgen
