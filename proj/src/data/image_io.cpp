#include "spotkit/data/image_io.hpp"

#include "spotkit/core.hpp"

#include <png.h>
#include <jpeglib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace spotkit::data {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open " + path.string());
  return f;
}

Image read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng initialisation failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image read_jpeg(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jerr.error_exit = [](j_common_ptr c) {
    char msg[JMSG_LENGTH_MAX];
    (*c->err->format_message)(c, msg);
    throw Error(std::string("JPEG decode failed: ") + msg);
  };
  jpeg_create_decompress(&cinfo);
  Image img;
  try {
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img.width = static_cast<int>(cinfo.output_width);
    img.height = static_cast<int>(cinfo.output_height);
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = img.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    throw;
  }
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3 && image.channels != 1) throw Error("PNG writer supports 1 or 3 channels");
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.width, image.height, 8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw Error("unsupported image format " + path.string());
}

void write_flow(const std::filesystem::path& path, const FlowField& flow) {
  if (flow.values.size() != static_cast<std::size_t>(flow.height) * flow.width * 2) {
    throw Error("flow field size does not match its shape");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(flow.height), static_cast<std::uint32_t>(flow.width), 2u};
  os.write("FLO2", 4);
  os.write(reinterpret_cast<const char*>(header), sizeof(header));
  os.write(reinterpret_cast<const char*>(flow.values.data()),
           static_cast<std::streamsize>(flow.values.size() * sizeof(float)));
  if (!os) throw Error("failed writing " + path.string());
}

FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  char magic[4];
  std::uint32_t header[3];
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!is || std::memcmp(magic, "FLO2", 4) != 0) throw Error("not a FLO2 file: " + path.string());
  if (header[2] != 2 || header[0] == 0 || header[1] == 0 || header[0] > 1u << 15 || header[1] > 1u << 15) {
    throw Error("bad FLO2 header in " + path.string());
  }
  FlowField flow;
  flow.height = static_cast<int>(header[0]);
  flow.width = static_cast<int>(header[1]);
  flow.values.resize(static_cast<std::size_t>(flow.height) * flow.width * 2);
  is.read(reinterpret_cast<char*>(flow.values.data()), static_cast<std::streamsize>(flow.values.size() * sizeof(float)));
  if (!is) throw Error("truncated FLO2 file " + path.string());
  return flow;
}

std::filesystem::path frame_path(const std::filesystem::path& dir, int index, const char* ext) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.%s", index, ext);
  return dir / name;
}

}  // namespace spotkit::data
