#include "hvq/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>

#include "hvq/png_io.hpp"

namespace fs = std::filesystem;

namespace hvq {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

inline uint8_t quant8(double v) {
  const double x = v * 255.0 + 0.5;
  return static_cast<uint8_t>(x < 0.0 ? 0.0 : (x > 255.0 ? 255.0 : x));
}
}  // namespace

Image LabeledSample::image() const {
  Image img(height, width);
  const uint8_t* p = rgb.data();
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      img.chan[0](r, c) = p[0] / 255.0;
      img.chan[1](r, c) = p[1] / 255.0;
      img.chan[2](r, c) = p[2] / 255.0;
      p += 3;
    }
  return img;
}

void LabeledSample::set_image(const Image& img) {
  height = img.height;
  width = img.width;
  rgb.resize(static_cast<size_t>(height) * width * 3);
  uint8_t* p = rgb.data();
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      *p++ = quant8(img.chan[0](r, c));
      *p++ = quant8(img.chan[1](r, c));
      *p++ = quant8(img.chan[2](r, c));
    }
}

Mat LabeledSample::mask() const {
  if (mask_bits.empty()) return Mat();
  Mat m(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      m(r, c) = mask_bits[static_cast<size_t>(r) * width + c] ? 1.0 : 0.0;
  return m;
}

void LabeledSample::set_mask(const Mat& m) {
  mask_bits.assign(static_cast<size_t>(height) * width, 0);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      mask_bits[static_cast<size_t>(r) * width + c] = m(r, c) > 0.5 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// synthetic textures
// ---------------------------------------------------------------------------

namespace {

struct ClassStyle {
  double freq1, freq2, angle;
  double c0[3], c1[3];
};

void hsv_to_rgb(double h, double s, double v, double* rgb) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

ClassStyle class_style(uint64_t corpus_seed, int class_id) {
  Rng rng(Rng::derive(corpus_seed, {0xC1A55ULL, static_cast<uint64_t>(class_id)}));
  ClassStyle s;
  s.freq1 = 3.0 + 3.5 * (class_id % 3) + rng.uniform(-0.4, 0.4);
  s.freq2 = 2.0 + 2.5 * ((class_id + 1) % 3) + rng.uniform(-0.3, 0.3);
  s.angle = (0.25 + 0.85 * class_id) + rng.uniform(-0.05, 0.05);
  const double hue = 0.381966011 * class_id + rng.uniform(0.0, 0.03);
  hsv_to_rgb(hue, 0.75, 0.80, s.c0);
  hsv_to_rgb(hue + 0.13, 0.30, 0.97, s.c1);
  return s;
}

Image render_texture(const ClassStyle& st, int h, int w, Rng& rng) {
  Image img(h, w);
  const double p1 = rng.uniform(0.0, kTwoPi);
  const double p2 = rng.uniform(0.0, kTwoPi);
  const double f1 = st.freq1 * (1.0 + rng.uniform(-0.03, 0.03));
  const double f2 = st.freq2 * (1.0 + rng.uniform(-0.03, 0.03));
  const double bright = rng.uniform(-0.03, 0.03);
  const double ca = std::cos(st.angle), sa = std::sin(st.angle);
  const double scale = static_cast<double>(std::max(h, w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double u = (c * ca + r * sa) / scale;
      const double v = (-c * sa + r * ca) / scale;
      const double wave =
          std::sin(kTwoPi * f1 * u + p1) * std::cos(kTwoPi * f2 * v + p2);
      const double t = 0.5 * (wave + 1.0);
      for (int ch = 0; ch < 3; ++ch) {
        const double base = (1.0 - t) * st.c0[ch] + t * st.c1[ch];
        img.chan[ch](r, c) =
            std::clamp(base + bright + rng.normal(0.0, 0.02), 0.0, 1.0);
      }
    }
  }
  return img;
}

struct RectSpec {
  int r0, c0, rh, cw;
};

// picks a rectangle whose area lands in [1%, 10%] of the image
RectSpec pick_rect(int h, int w, Rng& rng) {
  const double area_frac = rng.uniform(0.015, 0.09);
  const double aspect = std::exp(rng.uniform(-0.6, 0.6));
  double target = area_frac * h * w;
  int rh = std::max(2, static_cast<int>(std::lround(std::sqrt(target * aspect))));
  rh = std::min(rh, h - 2);
  int cw = std::max(2, static_cast<int>(std::lround(target / rh)));
  cw = std::min(cw, w - 2);
  // nudge until the rounded area respects the bounds
  auto frac = [&]() { return static_cast<double>(rh) * cw / (h * w); };
  while (frac() < 0.01 && (rh < h - 2 || cw < w - 2)) {
    if (rh <= cw && rh < h - 2) ++rh; else ++cw;
  }
  while (frac() > 0.10 && (rh > 2 || cw > 2)) {
    if (rh >= cw && rh > 2) --rh; else --cw;
  }
  RectSpec rect;
  rect.rh = rh;
  rect.cw = cw;
  rect.r0 = rng.uniform_int(1, h - rh - 1);
  rect.c0 = rng.uniform_int(1, w - cw - 1);
  return rect;
}

void apply_transplant(Image& img, Mat& mask, const ClassStyle& donor, Rng& rng) {
  RectSpec rect = pick_rect(img.height, img.width, rng);
  Image patch_src = render_texture(donor, img.height, img.width, rng);
  for (int r = rect.r0; r < rect.r0 + rect.rh; ++r)
    for (int c = rect.c0; c < rect.c0 + rect.cw; ++c) {
      for (int ch = 0; ch < 3; ++ch)
        img.chan[ch](r, c) = patch_src.chan[ch](r, c);
      mask(r, c) = 1.0;
    }
}

void apply_blob(Image& img, Mat& mask, const ClassStyle& st, Rng& rng) {
  const double area_frac = rng.uniform(0.015, 0.09);
  int radius = static_cast<int>(
      std::lround(std::sqrt(area_frac * img.height * img.width / M_PI)));
  radius = std::max(2, std::min({radius, img.height / 2 - 2, img.width / 2 - 2}));
  const int cy = rng.uniform_int(radius + 1, img.height - radius - 2);
  const int cx = rng.uniform_int(radius + 1, img.width - radius - 2);
  // out-of-palette color: complement of the palette midpoint, jittered
  double blob[3];
  for (int ch = 0; ch < 3; ++ch) {
    blob[ch] = std::clamp(1.0 - 0.5 * (st.c0[ch] + st.c1[ch]) +
                              rng.uniform(-0.05, 0.05),
                          0.0, 1.0);
  }
  const double sig = radius / 2.0;
  for (int r = cy - radius; r <= cy + radius; ++r)
    for (int c = cx - radius; c <= cx + radius; ++c) {
      const double d2 = static_cast<double>(r - cy) * (r - cy) +
                        static_cast<double>(c - cx) * (c - cx);
      if (d2 > static_cast<double>(radius) * radius) continue;
      const double alpha = std::exp(-0.5 * d2 / (sig * sig));
      for (int ch = 0; ch < 3; ++ch)
        img.chan[ch](r, c) = (1.0 - alpha) * img.chan[ch](r, c) + alpha * blob[ch];
      mask(r, c) = 1.0;
    }
}

void apply_scramble(Image& img, Mat& mask, Rng& rng) {
  RectSpec rect = pick_rect(img.height, img.width, rng);
  std::vector<std::pair<int, int>> coords;
  coords.reserve(static_cast<size_t>(rect.rh) * rect.cw);
  for (int r = rect.r0; r < rect.r0 + rect.rh; ++r)
    for (int c = rect.c0; c < rect.c0 + rect.cw; ++c) coords.emplace_back(r, c);
  std::vector<std::pair<int, int>> shuffled = coords;
  rng.shuffle(shuffled);
  Image copy = img;
  for (size_t i = 0; i < coords.size(); ++i) {
    const auto [dr, dc] = coords[i];
    const auto [sr, sc] = shuffled[i];
    for (int ch = 0; ch < 3; ++ch) img.chan[ch](dr, dc) = copy.chan[ch](sr, sc);
    mask(dr, dc) = 1.0;
  }
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec) {
  require_config(spec.classes >= 2, "gen_synthetic: need at least 2 classes");
  require_config(spec.per_class >= 1 && spec.height >= 32 && spec.width >= 32,
                 "gen_synthetic: corpus too small");
  require_config(!spec.anomaly_kinds.empty(),
                 "gen_synthetic: need at least one anomaly kind");
  for (const auto& k : spec.anomaly_kinds)
    require_config(k == "transplant" || k == "blob" || k == "scramble",
                   "gen_synthetic: unknown anomaly kind '" + k + "'");

  Dataset ds;
  char buf[16];
  for (int c = 0; c < spec.classes; ++c) {
    std::snprintf(buf, sizeof(buf), "class%02d", c);
    ds.class_names.emplace_back(buf);
  }

  std::vector<ClassStyle> styles;
  for (int c = 0; c < spec.classes; ++c) styles.push_back(class_style(spec.seed, c));

  for (int c = 0; c < spec.classes; ++c) {
    for (int i = 0; i < spec.per_class; ++i) {
      Rng rng(Rng::derive(spec.seed, {1, static_cast<uint64_t>(c),
                                      static_cast<uint64_t>(i)}));
      LabeledSample s;
      s.class_id = c;
      s.set_image(render_texture(styles[c], spec.height, spec.width, rng));
      ds.train.push_back(std::move(s));
    }
    for (int i = 0; i < spec.test_normal; ++i) {
      Rng rng(Rng::derive(spec.seed, {2, static_cast<uint64_t>(c),
                                      static_cast<uint64_t>(i)}));
      LabeledSample s;
      s.class_id = c;
      s.set_image(render_texture(styles[c], spec.height, spec.width, rng));
      ds.test.push_back(std::move(s));
    }
    for (int i = 0; i < spec.test_anomalous; ++i) {
      Rng rng(Rng::derive(spec.seed, {3, static_cast<uint64_t>(c),
                                      static_cast<uint64_t>(i)}));
      Image img = render_texture(styles[c], spec.height, spec.width, rng);
      Mat mask = Mat::Zero(spec.height, spec.width);
      const std::string& kind =
          spec.anomaly_kinds[i % spec.anomaly_kinds.size()];
      if (kind == "transplant") {
        int donor = (c + 1 + rng.uniform_int(0, spec.classes - 2)) % spec.classes;
        apply_transplant(img, mask, styles[donor], rng);
      } else if (kind == "blob") {
        apply_blob(img, mask, styles[c], rng);
      } else {
        apply_scramble(img, mask, rng);
      }
      LabeledSample s;
      s.class_id = c;
      s.is_anomalous = 1;
      s.defect_kind = kind;
      s.set_image(img);
      s.set_mask(mask);
      ds.test.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// backbone stub
// ---------------------------------------------------------------------------

BackboneStub BackboneStub::make(int channels, int patch, uint64_t seed) {
  require_config(channels > 0 && patch > 0, "BackboneStub: bad dims");
  BackboneStub stub;
  stub.patch = patch;
  stub.channels = channels;
  stub.seed = seed;
  const int in_dim = patch * patch * 3;
  Rng rng(Rng::derive(seed, {0xBACB0FEULL}));
  stub.weight = Mat(channels, in_dim);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int i = 0; i < channels; ++i)
    for (int j = 0; j < in_dim; ++j) stub.weight(i, j) = rng.normal(0.0, sigma);
  stub.bias = Vec(channels);
  for (int i = 0; i < channels; ++i) stub.bias(i) = rng.uniform(-0.5, 0.5);
  return stub;
}

Mat BackboneStub::extract(const Image& img) const {
  require_input(img.height % patch == 0 && img.width % patch == 0,
                "extract: image dims must be divisible by the patch size");
  const int gh = img.height / patch;
  const int gw = img.width / patch;
  const int n = gh * gw;
  const int in_dim = patch * patch * 3;
  Mat patches(n, in_dim);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      double* dst = patches.row(gy * gw + gx).data();
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int ch = 0; ch < 3; ++ch)
            *dst++ = img.chan[ch](gy * patch + py, gx * patch + px);
    }
  }
  Mat tokens = patches * weight.transpose();
  tokens.rowwise() += bias.transpose();
  return tokens.array().tanh().matrix();
}

Vec BackboneStub::zero_response() const { return bias.array().tanh().matrix(); }

// ---------------------------------------------------------------------------
// MVTec-style disk layout
// ---------------------------------------------------------------------------

void write_mvtec_style(const Dataset& ds, const std::string& root) {
  char name[32];
  std::vector<int> train_counter(ds.class_names.size(), 0);
  std::vector<std::map<std::string, int>> test_counter(ds.class_names.size());
  for (const auto& s : ds.train) {
    const fs::path dir = fs::path(root) / ds.class_names[s.class_id] / "train" / "good";
    fs::create_directories(dir);
    std::snprintf(name, sizeof(name), "%03d.png", train_counter[s.class_id]++);
    save_png((dir / name).string(), s.image());
  }
  for (const auto& s : ds.test) {
    const std::string kind = s.is_anomalous ? s.defect_kind : "good";
    const fs::path cls = fs::path(root) / ds.class_names[s.class_id];
    const fs::path dir = cls / "test" / kind;
    fs::create_directories(dir);
    const int idx = test_counter[s.class_id][kind]++;
    std::snprintf(name, sizeof(name), "%03d.png", idx);
    save_png((dir / name).string(), s.image());
    if (s.is_anomalous && s.has_mask()) {
      const fs::path gt = cls / "ground_truth" / kind;
      fs::create_directories(gt);
      std::snprintf(name, sizeof(name), "%03d_mask.png", idx);
      save_png_gray((gt / name).string(), s.mask());
    }
  }
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs_only) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs_only ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

LabeledSample load_sample(const fs::path& png, int class_id, int resize_hw) {
  Image img = load_png(png.string());
  if (img.height != resize_hw || img.width != resize_hw)
    img = resize_bilinear(img, resize_hw, resize_hw);
  LabeledSample s;
  s.class_id = class_id;
  s.set_image(img);
  return s;
}

}  // namespace

Dataset load_mvtec_style(const std::string& root, int resize_hw) {
  require_input(fs::exists(root), "load_mvtec_style: no such directory: " + root);
  Dataset ds;
  const auto class_dirs = sorted_entries(root, true);
  require_input(!class_dirs.empty(), "load_mvtec_style: no class directories in " + root);

  for (const auto& cdir : class_dirs) ds.class_names.push_back(cdir.filename().string());

  for (size_t ci = 0; ci < class_dirs.size(); ++ci) {
    const fs::path& cdir = class_dirs[ci];
    for (const auto& png : sorted_entries(cdir / "train" / "good", false)) {
      ds.train.push_back(load_sample(png, static_cast<int>(ci), resize_hw));
    }
    for (const auto& defect_dir : sorted_entries(cdir / "test", true)) {
      const std::string kind = defect_dir.filename().string();
      const bool anomalous = kind != "good";
      for (const auto& png : sorted_entries(defect_dir, false)) {
        LabeledSample s = load_sample(png, static_cast<int>(ci), resize_hw);
        s.is_anomalous = anomalous ? 1 : 0;
        s.defect_kind = kind;
        if (anomalous) {
          const fs::path mask_path = cdir / "ground_truth" / kind /
                                     (png.stem().string() + "_mask.png");
          if (fs::exists(mask_path)) {
            Mat m = load_png_gray(mask_path.string());
            if (m.rows() != resize_hw || m.cols() != resize_hw)
              m = resize_bilinear(m, resize_hw, resize_hw);
            s.set_mask((m.array() > 0.5).cast<double>().matrix());
          } else {
            s.mask_missing = true;
            std::cerr << "warning: missing ground truth for " << png.string()
                      << "; sample excluded from pixel metrics\n";
          }
        }
        ds.test.push_back(std::move(s));
      }
    }
  }
  for (const auto& s : ds.train)
    require_input(s.is_anomalous == 0,
                  "load_mvtec_style: anomalous sample in training split");
  return ds;
}

}  // namespace hvq
