#include "ccstereo/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace ccs {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<uint8_t>* out, uint32_t v) {
  out->push_back(static_cast<uint8_t>(v & 0xff));
  out->push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out->push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out->push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

void put_u16(std::vector<uint8_t>* out, uint16_t v) {
  out->push_back(static_cast<uint8_t>(v & 0xff));
  out->push_back(static_cast<uint8_t>((v >> 8) & 0xff));
}

int16_t quantize(double x) {
  const double clamped = std::clamp(x, -1.0, 1.0);
  const double scaled = std::round(clamped * 32768.0);
  return static_cast<int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace

WaveformClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

  uint16_t channels = 0, bits = 0, format = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data = nullptr;
  size_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    const uint32_t len = read_u32(raw.data() + pos + 4);
    const uint8_t* body = raw.data() + pos + 8;
    if (pos + 8 + len > raw.size()) break;
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      format = read_u16(body);
      channels = read_u16(body + 2);
      sample_rate = read_u32(body + 4);
      bits = read_u16(body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }

  if (format != 1 || bits != 16)
    throw std::runtime_error("read_wav: only 16-bit PCM supported: " + path);
  if (channels != 1 && channels != 2)
    throw std::runtime_error("read_wav: only 1 or 2 channels supported: " + path);
  if (!data) throw std::runtime_error("read_wav: missing data chunk: " + path);

  const size_t frames = data_len / (2 * channels);
  auto decode = [&](size_t ch) {
    std::vector<double> out(frames);
    for (size_t i = 0; i < frames; ++i) {
      const uint8_t* p = data + (i * channels + ch) * 2;
      const int16_t s = static_cast<int16_t>(p[0] | (p[1] << 8));
      out[i] = static_cast<double>(s) / 32768.0;
    }
    return out;
  };

  WaveformClip clip;
  clip.sample_rate = static_cast<int>(sample_rate);
  if (channels == 1) {
    clip.mono = decode(0);
  } else {
    clip.left = decode(0);
    clip.right = decode(1);
  }
  return clip;
}

void write_wav(const std::string& path, const WaveformClip& clip) {
  const bool stereo = clip.is_stereo();
  if (!stereo && !clip.has(Channel::mono))
    throw std::invalid_argument("write_wav: clip must have mono or L/R channels");
  const uint16_t channels = stereo ? 2 : 1;
  const size_t frames = clip.length();
  const uint32_t sr = static_cast<uint32_t>(clip.sample_rate);
  const uint32_t data_len = static_cast<uint32_t>(frames * channels * 2);

  std::vector<uint8_t> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(&out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(&out, 16);
  put_u16(&out, 1);
  put_u16(&out, channels);
  put_u32(&out, sr);
  put_u32(&out, sr * channels * 2);
  put_u16(&out, static_cast<uint16_t>(channels * 2));
  put_u16(&out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(&out, data_len);

  auto push_sample = [&out](double x) {
    const int16_t q = quantize(x);
    out.push_back(static_cast<uint8_t>(q & 0xff));
    out.push_back(static_cast<uint8_t>((q >> 8) & 0xff));
  };
  if (stereo) {
    const auto& l = *clip.left;
    const auto& r = *clip.right;
    for (size_t i = 0; i < frames; ++i) {
      push_sample(l[i]);
      push_sample(r[i]);
    }
  } else {
    for (double s : *clip.mono) push_sample(s);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_wav: write failed: " + path);
}

}  // namespace ccs
