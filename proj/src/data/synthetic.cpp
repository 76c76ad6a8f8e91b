#include "cirl/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cirl/digest.hpp"
#include "cirl/error.hpp"
#include "cirl/rng.hpp"

namespace cirl::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

enum class Glyph { circle, cross, ring, square, triangle };

Glyph parse_glyph(const std::string& name) {
  if (name == "circle") return Glyph::circle;
  if (name == "cross") return Glyph::cross;
  if (name == "ring") return Glyph::ring;
  if (name == "square") return Glyph::square;
  if (name == "triangle") return Glyph::triangle;
  throw ConfigError("synthetic: unknown glyph class '" + name +
                    "' (known: circle, cross, ring, square, triangle)");
}

// Geometry of one glyph instance, in unit image coordinates.
struct Content {
  double cx, cy, radius, rot;
  double grating_phase;  // carried with the sample so style pairs line up
  double fg_jitter;      // brightness wobble, also shared across domains
};

Content draw_content(std::uint64_t seed, const std::string& class_name,
                     std::size_t index) {
  Rng rng(seed, "content:" + class_name, index);
  Content c;
  c.cx = rng.uniform(0.38, 0.62);
  c.cy = rng.uniform(0.38, 0.62);
  c.radius = rng.uniform(0.22, 0.32);
  c.rot = rng.uniform(0.0, 2.0 * kPi);
  c.grating_phase = rng.uniform(0.0, 2.0 * kPi);
  c.fg_jitter = rng.uniform(-0.05, 0.05);
  return c;
}

bool inside_glyph(Glyph g, double px, double py) {
  // px/py are rotated, radius-normalized offsets from the glyph center.
  const double d = std::sqrt(px * px + py * py);
  switch (g) {
    case Glyph::circle:
      return d <= 1.0;
    case Glyph::ring:
      return d >= 0.55 && d <= 1.0;
    case Glyph::square:
      return std::abs(px) <= 0.78 && std::abs(py) <= 0.78;
    case Glyph::cross:
      return (std::abs(px) <= 0.3 && std::abs(py) <= 1.0) ||
             (std::abs(py) <= 0.3 && std::abs(px) <= 1.0);
    case Glyph::triangle: {
      static const double vx[3] = {0.0, -0.8660254037844386,
                                   0.8660254037844386};
      static const double vy[3] = {1.0, -0.5, -0.5};
      for (int k = 0; k < 3; ++k) {
        const int j = (k + 1) % 3;
        const double ex = vx[j] - vx[k], ey = vy[j] - vy[k];
        if (ex * (py - vy[k]) - ey * (px - vx[k]) < 0.0) return false;
      }
      return true;
    }
  }
  return false;
}

Tensor<float> render_coverage(Glyph g, const Content& c, std::size_t s) {
  Tensor<float> cov({s, s});
  const double inv = 1.0 / static_cast<double>(s);
  const double cos_r = std::cos(-c.rot), sin_r = std::sin(-c.rot);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
          const double u = (x + (sx + 0.5) / 4.0) * inv - c.cx;
          const double v = (y + (sy + 0.5) / 4.0) * inv - c.cy;
          const double px = (u * cos_r - v * sin_r) / c.radius;
          const double py = (u * sin_r + v * cos_r) / c.radius;
          hits += inside_glyph(g, px, py) ? 1 : 0;
        }
      }
      cov(y, x) = static_cast<float>(hits / 16.0);
    }
  }
  return cov;
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c, g = x;
  } else if (hp < 2) {
    r = x, g = c;
  } else if (hp < 3) {
    g = c, b = x;
  } else if (hp < 4) {
    g = x, b = c;
  } else if (hp < 5) {
    r = x, b = c;
  } else {
    r = c, b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

DomainStyle derive_style(std::uint64_t seed, std::size_t domain) {
  Rng rng(seed, "style", domain);
  DomainStyle st;
  st.background_hue = rng.uniform01();
  st.stroke_hue = rng.uniform01();
  st.texture_freq = rng.uniform(2.0, 6.0);
  st.texture_angle = rng.uniform(0.0, kPi);
  st.contrast = rng.uniform(0.85, 1.15);
  return st;
}

void validate(const SyntheticSpec& spec) {
  require_config(spec.num_domains >= 2, "synthetic: need at least 2 domains");
  require_config(spec.images_per_class >= 10,
                 "synthetic: images_per_class must be at least 10");
  require_config(spec.image_size >= 8, "synthetic: image_size must be >= 8");
  require_config(!spec.classes.empty(), "synthetic: empty class list");
  std::set<std::string> uniq(spec.classes.begin(), spec.classes.end());
  require_config(uniq.size() == spec.classes.size(),
                 "synthetic: duplicate class names");
  for (const auto& c : spec.classes) parse_glyph(c);
  require_config(spec.styles.empty() ||
                     spec.styles.size() == spec.num_domains,
                 "synthetic: styles must be empty or one per domain");
  for (const auto& st : spec.styles)
    require_config(st.contrast > 0.0,
                   "synthetic: contrast must stay positive");
  require_config(spec.train_fraction > 0.0 && spec.train_fraction < 1.0,
                 "synthetic: train_fraction must lie in (0, 1)");
}

}  // namespace

const std::vector<std::string>& synthetic_glyphs() {
  static const std::vector<std::string> glyphs = {"circle", "cross", "ring",
                                                  "square", "triangle"};
  return glyphs;
}

Tensor<float> synthetic_coverage(const SyntheticSpec& spec,
                                 std::size_t class_index,
                                 std::size_t image_index) {
  validate(spec);
  std::vector<std::string> classes = spec.classes;
  std::sort(classes.begin(), classes.end());
  require(class_index < classes.size(), "synthetic: class index out of range");
  require(image_index < spec.images_per_class,
          "synthetic: image index out of range");
  const std::string& name = classes[class_index];
  const Content c = draw_content(spec.rng_seed, name, image_index);
  return render_coverage(parse_glyph(name), c, spec.image_size);
}

DomainDataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t s = spec.image_size;
  const std::size_t hw = s * s;

  DomainDataset ds;
  ds.image_h = ds.image_w = s;
  ds.class_names = spec.classes;
  std::sort(ds.class_names.begin(), ds.class_names.end());
  for (std::size_t d = 0; d < spec.num_domains; ++d)
    ds.domains.push_back("d" + std::to_string(d));

  std::vector<DomainStyle> styles = spec.styles;
  if (styles.empty())
    for (std::size_t d = 0; d < spec.num_domains; ++d)
      styles.push_back(derive_style(spec.rng_seed, d));

  const std::size_t per_domain =
      ds.class_names.size() * spec.images_per_class;
  const std::size_t total = spec.num_domains * per_domain;
  ds.images = Tensor<float>({total, 3, s, s});

  // Content (coverage + sample-coupled draws) is rendered once per
  // (class, index) and reused by every domain.
  std::vector<Tensor<float>> coverage(ds.class_names.size() *
                                      spec.images_per_class);
  std::vector<Content> contents(coverage.size());
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
    const Glyph g = parse_glyph(ds.class_names[c]);
    for (std::size_t i = 0; i < spec.images_per_class; ++i) {
      const std::size_t slot = c * spec.images_per_class + i;
      contents[slot] = draw_content(spec.rng_seed, ds.class_names[c], i);
      coverage[slot] = render_coverage(g, contents[slot], s);
    }
  }

  std::uint32_t id = 0;
  for (std::size_t d = 0; d < spec.num_domains; ++d) {
    const DomainStyle& st = styles[d];
    const double cos_t = std::cos(st.texture_angle);
    const double sin_t = std::sin(st.texture_angle);
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
      for (std::size_t i = 0; i < spec.images_per_class; ++i) {
        const std::size_t slot = c * spec.images_per_class + i;
        const Content& ct = contents[slot];
        const Tensor<float>& cov = coverage[slot];

        const double fg_v =
            std::clamp(0.55 + 0.30 * st.contrast + ct.fg_jitter, 0.0, 1.0);
        const Rgb fg = hsv_to_rgb(st.stroke_hue, 0.85, fg_v);

        float* dst = ds.images.data() + std::size_t(id) * 3 * hw;
        for (std::size_t y = 0; y < s; ++y) {
          for (std::size_t x = 0; x < s; ++x) {
            const double u = (x + 0.5) / s, v = (y + 0.5) / s;
            const double wave =
                std::sin(2.0 * kPi * st.texture_freq * (u * cos_t + v * sin_t) +
                         ct.grating_phase);
            const Rgb bg =
                hsv_to_rgb(st.background_hue, 0.55, 0.42 + 0.16 * wave);
            const double a = cov(y, x);
            const double px[3] = {a * fg.r + (1 - a) * bg.r,
                                  a * fg.g + (1 - a) * bg.g,
                                  a * fg.b + (1 - a) * bg.b};
            for (std::size_t ch = 0; ch < 3; ++ch)
              dst[ch * hw + y * s + x] = static_cast<float>(px[ch]);
          }
        }

        Sample smp;
        smp.domain = ds.domains[d];
        smp.class_name = ds.class_names[c];
        smp.file = "";
        smp.sha256 = sha256_hex(dst, 3 * hw * sizeof(float));
        smp.label = static_cast<int>(c);
        smp.domain_index = static_cast<int>(d);
        smp.id = id;
        ds.samples.push_back(std::move(smp));
        ++id;
      }
    }
  }

  assign_split(ds.samples, spec.train_fraction, spec.rng_seed);
  return ds;
}

}  // namespace cirl::data
