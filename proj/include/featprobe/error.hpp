#pragma once

#include <stdexcept>
#include <string>

namespace featprobe {

enum class Errc {
  io,
  bad_magic,
  truncated,
  unknown_dtype,
  shape_mismatch,
  invalid_argument,
  manifest,
  unsupported_encoding,
  corrupt_header,
  undefined_similarity,
  divergence,
  config,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::truncated: return "truncated";
    case Errc::unknown_dtype: return "unknown_dtype";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::manifest: return "manifest";
    case Errc::unsupported_encoding: return "unsupported_encoding";
    case Errc::corrupt_header: return "corrupt_header";
    case Errc::undefined_similarity: return "undefined_similarity";
    case Errc::divergence: return "divergence";
    case Errc::config: return "config";
  }
  return "unknown";
}

// All library failures surface as this exception; code() distinguishes them.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace featprobe
