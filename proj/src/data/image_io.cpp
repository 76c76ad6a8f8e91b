#include "cirl/data/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "cirl/error.hpp"

namespace cirl::data {

namespace {

struct FileHandle {
  FILE* fp = nullptr;
  explicit FileHandle(FILE* f) : fp(f) {}
  ~FileHandle() {
    if (fp) std::fclose(fp);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
};

// Heap-backed scratch so no locals are modified across setjmp frames.
struct PngScratch {
  std::vector<png_bytep> rows;
  ImageU8 out;
};

ImageU8 read_png_file(const std::string& path, FILE* fp) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png decoder initialization failed: " + path);
  }
  auto scratch = std::make_unique<PngScratch>();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed decoding PNG: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t h = png_get_image_height(png, info);
  const std::size_t w = png_get_image_width(png, info);
  if (png_get_channels(png, info) != 3 || h == 0 || w == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG did not reduce to 8-bit RGB: " + path);
  }
  scratch->out.height = h;
  scratch->out.width = w;
  scratch->out.rgb.resize(h * w * 3);
  scratch->rows.resize(h);
  for (std::size_t y = 0; y < h; ++y)
    scratch->rows[y] = scratch->out.rgb.data() + y * w * 3;
  png_read_image(png, scratch->rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return std::move(scratch->out);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jb;
};

void jpeg_error_exit_cb(j_common_ptr cinfo) {
  longjmp(reinterpret_cast<JpegErrorMgr*>(cinfo->err)->jb, 1);
}

ImageU8 read_jpeg_file(const std::string& path, FILE* fp) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit_cb;
  auto scratch = std::make_unique<ImageU8>();
  if (setjmp(err.jb)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("failed decoding JPEG: " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::size_t h = cinfo.output_height, w = cinfo.output_width;
  if (cinfo.output_components != 3 || h == 0 || w == 0) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("JPEG did not decode to RGB: " + path);
  }
  scratch->height = h;
  scratch->width = w;
  scratch->rgb.resize(h * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = scratch->rgb.data() + cinfo.output_scanline * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return std::move(*scratch);
}

}  // namespace

ImageU8 read_image(const std::string& path, bool* lossy) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open image: " + path);
  FileHandle guard(fp);
  unsigned char sig[4] = {0, 0, 0, 0};
  const std::size_t got = std::fread(sig, 1, sizeof(sig), fp);
  std::rewind(fp);
  if (got >= 4 && png_sig_cmp(sig, 0, 4) == 0) {
    if (lossy) *lossy = false;
    return read_png_file(path, fp);
  }
  if (got >= 2 && sig[0] == 0xff && sig[1] == 0xd8) {
    if (lossy) *lossy = true;
    return read_jpeg_file(path, fp);
  }
  throw IoError("unsupported image format (expected PNG or JPEG): " + path);
}

void write_png(const std::string& path, const ImageU8& img) {
  require(img.height > 0 && img.width > 0 &&
              img.rgb.size() == img.height * img.width * 3,
          "write_png: malformed image");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path);
  FileHandle guard(fp);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encoder initialization failed: " + path);
  }
  auto rows = std::make_unique<std::vector<png_bytep>>(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed encoding PNG: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (std::size_t y = 0; y < img.height; ++y)
    (*rows)[y] = const_cast<png_bytep>(img.rgb.data() + y * img.width * 3);
  png_set_rows(png, info, rows->data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 resize_bilinear(const ImageU8& img, std::size_t out_h,
                        std::size_t out_w) {
  require(out_h > 0 && out_w > 0, "resize: zero output dimension");
  require(img.height > 0 && img.width > 0, "resize: empty input");
  if (out_h == img.height && out_w == img.width) return img;
  ImageU8 out;
  out.height = out_h;
  out.width = out_w;
  out.rgb.resize(out_h * out_w * 3);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy =
        std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx =
          std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bot = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        const double v = (1 - wy) * top + wy * bot;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

}  // namespace cirl::data
