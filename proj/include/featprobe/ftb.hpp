#pragma once

// FTB tensor bundle format, little-endian throughout:
//
//   "FTB1" | u32 count | count x { u32 nameLen | name | u8 dtype | u32 ndim | ndim x u64 | f32 payload }
//
// dtype 1 is the only code (f32). Bundle metadata is not part of the byte
// layout; it travels in an optional JSON sidecar "<path>.meta.json".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "featprobe/error.hpp"
#include "featprobe/tensor.hpp"

namespace featprobe::ftb {

inline constexpr char kMagic[4] = {'F', 'T', 'B', '1'};
inline constexpr std::uint8_t kDtypeF32 = 1;

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& buf) : buf_(buf) {}

  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    require(remaining() >= n, Errc::truncated, std::string("truncated while reading ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

inline std::filesystem::path meta_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".meta.json");
}

}  // namespace detail

/// Serialize to an in-memory FTB image (no metadata).
inline std::vector<char> encode(const TensorBundle& bundle) {
  detail::Writer w;
  w.bytes(kMagic, 4);
  w.u32(static_cast<std::uint32_t>(bundle.size()));
  for (const auto& t : bundle.entries()) {
    // Tensor enforces this already; re-checked because it is the format's only integrity rule.
    require(dims_product(t.dims()) == t.size(), Errc::shape_mismatch,
            "tensor '" + t.name() + "' dims/data mismatch");
    w.u32(static_cast<std::uint32_t>(t.name().size()));
    w.bytes(t.name().data(), t.name().size());
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) w.u64(d);
    for (float v : t.data()) w.f32(v);
  }
  return w.buffer();
}

inline TensorBundle decode(const std::vector<char>& buf) {
  detail::Reader r(buf);
  require(buf.size() >= 4 && std::memcmp(buf.data(), kMagic, 4) == 0, Errc::bad_magic,
          "missing FTB1 magic");
  r.str(4, "magic");
  const std::uint32_t count = r.u32("tensor count");
  TensorBundle bundle;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t nameLen = r.u32("name length");
    std::string name = r.str(nameLen, "name");
    const std::uint8_t dtype = r.u8("dtype");
    require(dtype == kDtypeF32, Errc::unknown_dtype,
            "tensor '" + name + "' has dtype code " + std::to_string(dtype));
    const std::uint32_t ndim = r.u32("ndim");
    r.need(std::size_t(ndim) * 8, "dims");
    Dims dims(ndim);
    std::uint64_t count_values = 1;
    for (auto& d : dims) {
      d = r.u64("dims");
      require(d >= 1, Errc::shape_mismatch, "tensor '" + name + "' has a zero dim");
      require(count_values <= std::numeric_limits<std::uint64_t>::max() / 4 / d, Errc::truncated,
              "tensor '" + name + "' payload larger than file");
      count_values *= d;
    }
    require(count_values * 4 <= r.remaining(), Errc::truncated,
            "truncated payload of tensor '" + name + "'");
    std::vector<float> data(count_values);
    for (auto& v : data) v = std::bit_cast<float>(r.u32("payload"));
    bundle.add(Tensor(std::move(name), std::move(dims), std::move(data)));
  }
  return bundle;
}

inline void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
  const auto image = encode(bundle);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::io, "cannot open " + path.string() + " for writing");
    out.write(image.data(), static_cast<std::streamsize>(image.size()));
    require(static_cast<bool>(out), Errc::io, "write failed: " + path.string());
  }
  const auto mp = detail::meta_path(path);
  if (bundle.meta().empty()) {
    std::error_code ec;
    std::filesystem::remove(mp, ec);
  } else {
    std::ofstream meta(mp, std::ios::trunc);
    require(static_cast<bool>(meta), Errc::io, "cannot write " + mp.string());
    meta << nlohmann::json(bundle.meta()).dump() << '\n';
  }
}

inline TensorBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  TensorBundle bundle = decode(buf);
  const auto mp = detail::meta_path(path);
  if (std::filesystem::exists(mp)) {
    std::ifstream meta(mp);
    try {
      bundle.meta() = nlohmann::json::parse(meta).get<TensorBundle::Meta>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::corrupt_header, "bad metadata sidecar " + mp.string() + ": " + e.what());
    }
  }
  return bundle;
}

}  // namespace featprobe::ftb
