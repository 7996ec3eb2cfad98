#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrade/errors.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are unsupported");

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

inline std::uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for digest: " + path);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    if (in.eof()) break;
  }
  return h;
}

// ---------------------------------------------------------------------------
// MGT1 tensor file: magic "MGT1", u8 precision (0 = f32, 1 = f64), u8 rank,
// little-endian u64 extents, little-endian payload.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
constexpr std::uint8_t precision_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

inline void write_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_raw(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw DataError(std::string("truncated tensor stream while reading ") + what);
  }
}

}  // namespace detail

template <typename T>
inline void write_tensor(std::ostream& os, const Tensor<T>& t) {
  detail::write_raw(os, "MGT1", 4);
  const std::uint8_t prec = detail::precision_tag<T>();
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  detail::write_raw(os, &prec, 1);
  detail::write_raw(os, &rank, 1);
  for (std::size_t d : t.shape()) {
    const std::uint64_t ext = d;
    detail::write_raw(os, &ext, 8);
  }
  detail::write_raw(os, t.data(), t.numel() * sizeof(T));
}

template <typename T>
inline Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  detail::read_raw(is, magic, 4, "magic");
  if (std::memcmp(magic, "MGT1", 4) != 0) {
    throw DataError("bad tensor magic (expected MGT1)");
  }
  std::uint8_t prec = 0, rank = 0;
  detail::read_raw(is, &prec, 1, "precision tag");
  detail::read_raw(is, &rank, 1, "rank");
  if (prec != detail::precision_tag<T>()) {
    throw DataError("tensor precision tag " + std::to_string(prec) +
                    " does not match requested element type");
  }
  Shape shape(rank);
  for (std::uint8_t i = 0; i < rank; ++i) {
    std::uint64_t ext = 0;
    detail::read_raw(is, &ext, 8, "extent");
    shape[i] = static_cast<std::size_t>(ext);
  }
  Tensor<T> t(shape);
  detail::read_raw(is, t.data(), t.numel() * sizeof(T), "payload");
  return t;
}

template <typename T>
inline void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  write_tensor(os, t);
  if (!os) throw DataError("write failed: " + path);
}

template <typename T>
inline Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open tensor file: " + path);
  return read_tensor<T>(is);
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic "MGC1", u64 length of a JSON table of contents,
// the TOC itself, then a payload of concatenated MGT1 blobs. The TOC records
// the config, free-form metadata, per-tensor offsets, and an FNV-1a digest of
// the payload that is verified on load.
// ---------------------------------------------------------------------------

template <typename T>
struct Archive {
  nlohmann::json config;
  nlohmann::json meta;
  std::map<std::string, Tensor<T>> tensors;
};

template <typename T>
inline void save_archive(const std::string& path, const Archive<T>& ar) {
  std::ostringstream payload;
  nlohmann::json toc;
  toc["format_version"] = 1;
  toc["config"] = ar.config;
  toc["meta"] = ar.meta;
  toc["tensors"] = nlohmann::json::array();
  for (const auto& [name, tensor] : ar.tensors) {
    const std::uint64_t offset = static_cast<std::uint64_t>(payload.tellp());
    write_tensor(payload, tensor);
    const std::uint64_t end = static_cast<std::uint64_t>(payload.tellp());
    toc["tensors"].push_back({{"name", name}, {"offset", offset}, {"bytes", end - offset}});
  }
  const std::string body = payload.str();
  toc["payload_digest"] = hex64(fnv1a64(body.data(), body.size()));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write("MGC1", 4);
  const std::string toc_text = toc.dump();
  const std::uint64_t toc_len = toc_text.size();
  os.write(reinterpret_cast<const char*>(&toc_len), 8);
  os.write(toc_text.data(), static_cast<std::streamsize>(toc_text.size()));
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw DataError("write failed: " + path);
}

template <typename T>
inline Archive<T> load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  detail::read_raw(is, magic, 4, "container magic");
  if (std::memcmp(magic, "MGC1", 4) != 0) throw DataError("bad container magic in " + path);
  std::uint64_t toc_len = 0;
  detail::read_raw(is, &toc_len, 8, "toc length");
  std::string toc_text(toc_len, '\0');
  detail::read_raw(is, toc_text.data(), toc_len, "toc");
  nlohmann::json toc = nlohmann::json::parse(toc_text, nullptr, false);
  if (toc.is_discarded()) throw DataError("unparseable checkpoint TOC in " + path);

  std::string body((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string want = toc.at("payload_digest").get<std::string>();
  const std::string got = hex64(fnv1a64(body.data(), body.size()));
  if (want != got) {
    throw DataError("checkpoint digest mismatch in " + path + " (want " + want + ", got " + got +
                    ")");
  }

  Archive<T> ar;
  ar.config = toc.at("config");
  ar.meta = toc.value("meta", nlohmann::json::object());
  for (const auto& entry : toc.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = entry.at("bytes").get<std::uint64_t>();
    if (offset + bytes > body.size()) throw DataError("checkpoint TOC offset out of range");
    std::istringstream blob(body.substr(offset, bytes));
    ar.tensors.emplace(name, read_tensor<T>(blob));
  }
  return ar;
}

}  // namespace mgrade
