#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cirl::data {

// 8-bit interleaved RGB, rows top to bottom.
struct ImageU8 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return rgb[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }
};

// Decodes a PNG or JPEG file (sniffed by signature, not extension). Gray and
// palette images come back expanded to RGB; alpha is dropped. Raises IoError
// with the path on any failure. *lossy is set to true for JPEG input so
// callers can warn that golden-value reproducibility is off the table.
ImageU8 read_image(const std::string& path, bool* lossy = nullptr);

// 8-bit RGB PNG. Raises IoError on failure.
void write_png(const std::string& path, const ImageU8& img);

// Bilinear resample to out_h x out_w.
ImageU8 resize_bilinear(const ImageU8& img, std::size_t out_h,
                        std::size_t out_w);

}  // namespace cirl::data
