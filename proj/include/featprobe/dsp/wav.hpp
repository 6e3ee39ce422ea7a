#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "featprobe/error.hpp"

namespace featprobe::dsp {

struct AudioClip {
  std::vector<double> samples;
  int sampleRate = 0;
};

/// Zero-pad at the end or truncate to exactly `length` samples.
inline AudioClip conform(AudioClip clip, std::size_t length) {
  clip.samples.resize(length, 0.0);
  return clip;
}

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(char(v & 0xff));
  b.push_back(char(v >> 8));
}
inline void put32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}

}  // namespace detail

/// PCM WAV decoder: 16-bit integer or 32-bit float, any channel count, mixed to mono.
inline AudioClip decode_wav(const std::vector<char>& bytes) {
  using detail::le16;
  using detail::le32;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  require(n >= 12 && std::memcmp(p, "RIFF", 4) == 0 && std::memcmp(p + 8, "WAVE", 4) == 0,
          Errc::corrupt_header, "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t dataLen = 0;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::uint32_t len = le32(p + pos + 4);
    const unsigned char* body = p + pos + 8;
    const std::size_t avail = n - pos - 8;
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      require(len >= 16 && avail >= 16, Errc::corrupt_header, "short fmt chunk");
      format = le16(body);
      channels = le16(body + 2);
      rate = le32(body + 4);
      bits = le16(body + 14);
      if (format == 0xFFFE) {
        require(len >= 40 && avail >= 40, Errc::corrupt_header, "short extensible fmt chunk");
        format = le16(body + 24);  // sub-format GUID starts with the format tag
      }
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      data = body;
      dataLen = std::min<std::size_t>(len, avail);
    }
    pos += 8 + std::size_t(len) + (len & 1);
  }
  require(format != 0 && channels > 0 && rate > 0, Errc::corrupt_header, "missing or invalid fmt chunk");
  require(data != nullptr, Errc::corrupt_header, "missing data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  require(pcm16 || f32, Errc::unsupported_encoding,
          "format " + std::to_string(format) + " with " + std::to_string(bits) + " bits");

  const std::size_t width = bits / 8;
  const std::size_t frames = dataLen / (width * channels);
  AudioClip clip;
  clip.sampleRate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* s = data + (i * channels + c) * width;
      if (pcm16)
        acc += static_cast<std::int16_t>(le16(s)) / 32768.0;
      else
        acc += std::bit_cast<float>(le32(s));
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

enum class WavEncoding { pcm16, float32 };

inline std::vector<char> encode_wav(const AudioClip& clip, WavEncoding enc = WavEncoding::pcm16) {
  using detail::put16;
  using detail::put32;
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t dataLen = static_cast<std::uint32_t>(clip.samples.size() * (bits / 8));
  std::vector<char> b;
  b.reserve(44 + dataLen);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put32(b, 36 + dataLen);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(b, 16);
  put16(b, enc == WavEncoding::pcm16 ? 1 : 3);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(clip.sampleRate));
  put32(b, static_cast<std::uint32_t>(clip.sampleRate) * (bits / 8));
  put16(b, bits / 8);
  put16(b, bits);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put32(b, dataLen);
  for (double s : clip.samples) {
    if (enc == WavEncoding::pcm16) {
      const double q = std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0;
      put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(q))));
    } else {
      put32(b, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  return b;
}

inline void write_wav(const AudioClip& clip, const std::filesystem::path& path,
                      WavEncoding enc = WavEncoding::pcm16) {
  const auto bytes = encode_wav(clip, enc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), Errc::io, "write failed: " + path.string());
}

}  // namespace featprobe::dsp
