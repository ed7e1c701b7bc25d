#include "ccstereo/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ccs {

namespace {

constexpr uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

uint32_t read_be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_be32(std::vector<uint8_t>* out, uint32_t v) {
  out->push_back(static_cast<uint8_t>((v >> 24) & 0xff));
  out->push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out->push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out->push_back(static_cast<uint8_t>(v & 0xff));
}

void append_chunk(std::vector<uint8_t>* out, const char type[4], const uint8_t* body, size_t len) {
  put_be32(out, static_cast<uint32_t>(len));
  const size_t crc_start = out->size();
  out->insert(out->end(), type, type + 4);
  if (len > 0) out->insert(out->end(), body, body + len);
  const uLong crc = crc32(0, out->data() + crc_start, static_cast<uInt>(4 + len));
  put_be32(out, static_cast<uint32_t>(crc));
}

uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
  if (pb <= pc) return static_cast<uint8_t>(b);
  return static_cast<uint8_t>(c);
}

std::vector<uint8_t> zlib_inflate(const uint8_t* src, size_t src_len, size_t expected_len) {
  std::vector<uint8_t> out(expected_len);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw std::runtime_error("png: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(src_len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.avail_out != 0)
    throw std::runtime_error("png: corrupt or truncated image data");
  return out;
}

std::vector<uint8_t> zlib_deflate(const uint8_t* src, size_t src_len) {
  uLongf bound = compressBound(static_cast<uLong>(src_len));
  std::vector<uint8_t> out(bound);
  if (compress2(out.data(), &bound, src, static_cast<uLong>(src_len), Z_DEFAULT_COMPRESSION) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  out.resize(bound);
  return out;
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Image Image::filled(int width, int height, uint8_t value) {
  Image img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<size_t>(width) * height * 3, value);
  return img;
}

Image read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 8 || std::memcmp(raw.data(), kPngSignature, 8) != 0)
    throw std::runtime_error("read_png: not a PNG file: " + path);

  int width = 0, height = 0, color_type = -1, bit_depth = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 12 <= raw.size()) {
    const uint32_t len = read_be32(raw.data() + pos);
    const char* type = reinterpret_cast<const char*>(raw.data() + pos + 4);
    const uint8_t* body = raw.data() + pos + 8;
    if (pos + 12 + len > raw.size()) throw std::runtime_error("read_png: truncated chunk: " + path);
    if (std::memcmp(type, "IHDR", 4) == 0 && len >= 13) {
      width = static_cast<int>(read_be32(body));
      height = static_cast<int>(read_be32(body + 4));
      bit_depth = body[8];
      color_type = body[9];
      if (body[12] != 0) throw std::runtime_error("read_png: interlaced PNG unsupported: " + path);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), body, body + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }

  if (width <= 0 || height <= 0) throw std::runtime_error("read_png: missing IHDR: " + path);
  if (bit_depth != 8) throw std::runtime_error("read_png: only 8-bit depth supported: " + path);
  int src_channels;
  switch (color_type) {
    case 0: src_channels = 1; break;
    case 2: src_channels = 3; break;
    case 4: src_channels = 2; break;
    case 6: src_channels = 4; break;
    default:
      throw std::runtime_error("read_png: unsupported colour type: " + path);
  }

  const size_t stride = static_cast<size_t>(width) * src_channels;
  std::vector<uint8_t> scan = zlib_inflate(idat.data(), idat.size(), (stride + 1) * height);

  std::vector<uint8_t> flat(stride * height);
  const int bpp = src_channels;
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = scan[(stride + 1) * y];
    const uint8_t* src = scan.data() + (stride + 1) * y + 1;
    uint8_t* cur = flat.data() + stride * y;
    const uint8_t* prev = y > 0 ? flat.data() + stride * (y - 1) : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<size_t>(bpp) ? cur[x - bpp] : 0;
      const int b = prev ? prev[x] : 0;
      const int c = (prev && x >= static_cast<size_t>(bpp)) ? prev[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw std::runtime_error("read_png: bad filter byte: " + path);
      }
      cur[x] = static_cast<uint8_t>(v & 0xff);
    }
  }

  Image img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const uint8_t* p = flat.data() + stride * y + static_cast<size_t>(x) * src_channels;
      uint8_t r, g, b;
      if (src_channels <= 2) {
        r = g = b = p[0];
      } else {
        r = p[0];
        g = p[1];
        b = p[2];
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

namespace {

void write_png_raw(const std::string& path, int width, int height, int channels,
                   uint8_t color_type, const uint8_t* pixels) {
  const size_t stride = static_cast<size_t>(width) * channels;
  std::vector<uint8_t> scan((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    scan[(stride + 1) * y] = 0;  // filter: none
    std::memcpy(scan.data() + (stride + 1) * y + 1, pixels + stride * y, stride);
  }
  const std::vector<uint8_t> compressed = zlib_deflate(scan.data(), scan.size());

  std::vector<uint8_t> out;
  out.insert(out.end(), kPngSignature, kPngSignature + 8);
  std::vector<uint8_t> ihdr;
  put_be32(&ihdr, static_cast<uint32_t>(width));
  put_be32(&ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(color_type);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(&out, "IHDR", ihdr.data(), ihdr.size());
  append_chunk(&out, "IDAT", compressed.data(), compressed.size());
  append_chunk(&out, "IEND", nullptr, 0);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_png: write failed: " + path);
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<size_t>(image.width) * image.height * 3)
    throw std::invalid_argument("write_png: inconsistent image dimensions");
  write_png_raw(path, image.width, image.height, 3, 2, image.pixels.data());
}

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
  if (width <= 0 || height <= 0 || pixels.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_png_gray: inconsistent image dimensions");
  write_png_raw(path, width, height, 1, 0, pixels.data());
}

Image resize_bilinear(const Image& image, int out_width, int out_height) {
  if (out_width <= 0 || out_height <= 0)
    throw std::invalid_argument("resize_bilinear: output dimensions must be positive");
  Image out;
  out.width = out_width;
  out.height = out_height;
  out.pixels.resize(static_cast<size_t>(out_width) * out_height * 3);

  const double sx = static_cast<double>(image.width) / out_width;
  const double sy = static_cast<double>(image.height) / out_height;
  for (int oy = 0; oy < out_height; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_width; ++ox) {
      const double fx =
          std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1.0 - wx) + image.at(y0, x1, c) * wx;
        const double bot = image.at(y1, x0, c) * (1.0 - wx) + image.at(y1, x1, c) * wx;
        out.at(oy, ox, c) = to_byte(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image crop(const Image& image, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > image.height ||
      left + width > image.width)
    throw std::invalid_argument("crop: region outside image bounds");
  Image out;
  out.width = width;
  out.height = height;
  out.pixels.resize(static_cast<size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    std::memcpy(out.pixels.data() + static_cast<size_t>(y) * width * 3,
                image.pixels.data() + (static_cast<size_t>(top + y) * image.width + left) * 3,
                static_cast<size_t>(width) * 3);
  return out;
}

JitterScales sample_jitter(Rng* rng) {
  JitterScales s;
  s.brightness = rng->uniform(0.9, 1.1);
  s.contrast = rng->uniform(0.9, 1.1);
  s.saturation = rng->uniform(0.9, 1.1);
  return s;
}

Image apply_jitter(const Image& image, const JitterScales& scales) {
  const size_t n = static_cast<size_t>(image.width) * image.height;
  std::vector<double> rgb(n * 3);
  for (size_t i = 0; i < n * 3; ++i) rgb[i] = image.pixels[i] * scales.brightness;

  double mean_luma = 0.0;
  for (size_t i = 0; i < n; ++i) mean_luma += luma(rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]);
  mean_luma /= static_cast<double>(n);

  Image out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(n * 3);
  for (size_t i = 0; i < n; ++i) {
    double r = mean_luma + (rgb[i * 3] - mean_luma) * scales.contrast;
    double g = mean_luma + (rgb[i * 3 + 1] - mean_luma) * scales.contrast;
    double b = mean_luma + (rgb[i * 3 + 2] - mean_luma) * scales.contrast;
    const double y = luma(r, g, b);
    r = y + (r - y) * scales.saturation;
    g = y + (g - y) * scales.saturation;
    b = y + (b - y) * scales.saturation;
    out.pixels[i * 3] = to_byte(r);
    out.pixels[i * 3 + 1] = to_byte(g);
    out.pixels[i * 3 + 2] = to_byte(b);
  }
  return out;
}

std::vector<float> normalize_image(const Image& image) {
  const size_t n = static_cast<size_t>(image.width) * image.height;
  std::vector<float> out(n * 3);
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < n; ++i)
      out[c * n + i] =
          static_cast<float>((image.pixels[i * 3 + c] / 255.0 - 0.5) / 0.25);
  return out;
}

}  // namespace ccs
