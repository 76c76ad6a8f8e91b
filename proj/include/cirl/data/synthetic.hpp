#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirl/data/dataset.hpp"
#include "cirl/tensor.hpp"

namespace cirl::data {

// Per-domain rendering style. Every field is pure "style": it never changes
// which glyph is drawn or where.
struct DomainStyle {
  double background_hue = 0.0;  // [0, 1)
  double stroke_hue = 0.0;      // [0, 1)
  double texture_freq = 3.0;    // background grating cycles across the image
  double texture_angle = 0.0;   // grating orientation, radians
  double contrast = 1.0;        // foreground brightness scale, kept positive
};

// Multi-domain shape dataset: glyph identity and geometry (the causal
// content) are drawn per (class, index) and shared verbatim by every domain;
// only the style differs. Same spec -> byte-identical dataset.
struct SyntheticSpec {
  std::size_t num_domains = 4;
  std::vector<std::string> classes = {"circle", "cross", "ring", "square",
                                      "triangle"};
  std::size_t images_per_class = 100;  // per domain; >= 10
  std::size_t image_size = 32;
  std::uint64_t rng_seed = 0;
  double train_fraction = 0.8;
  // One entry per domain; empty = derive styles from rng_seed.
  std::vector<DomainStyle> styles;
};

// Known glyph classes, sorted.
const std::vector<std::string>& synthetic_glyphs();

// Domain names are "d0".."d{n-1}"; labels index the sorted class list.
DomainDataset generate_synthetic(const SyntheticSpec& spec);

// Foreground coverage of one glyph render (1 = pure glyph, 0 = pure
// background), {S, S}. Depends only on class and index, never on the domain;
// generate_synthetic blends pixel = a*fg + (1-a)*bg from exactly this map.
Tensor<float> synthetic_coverage(const SyntheticSpec& spec,
                                 std::size_t class_index,
                                 std::size_t image_index);

}  // namespace cirl::data
