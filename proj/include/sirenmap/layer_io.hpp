#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sirenmap/errors.hpp"
#include "sirenmap/grid.hpp"

namespace sirenmap {

namespace fs = std::filesystem;

inline std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 digest failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < digest_len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

/// Writes `bytes` to `path` through a temporary file and a rename, so readers
/// never observe a partially written file.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::string encode_f64_le(const std::vector<double>& values) {
  std::string blob(values.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b)
      blob[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return blob;
}

inline std::vector<double> decode_f64_le(std::string_view blob) {
  std::vector<double> values(blob.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[i * 8 + b])) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

inline fs::path with_suffix(const fs::path& base, const char* ext) {
  fs::path p = base;
  if (p.extension() == ".f64" || p.extension() == ".json") p.replace_extension();
  p += ext;
  return p;
}

}  // namespace detail

inline nlohmann::json geometry_to_json(const GridGeometry& g) {
  return {{"resolution_c", g.resolution},
          {"origin", {g.origin.x(), g.origin.y()}},
          {"width", g.width},
          {"height", g.height}};
}

/// Saves `layer` as `<base>.f64` (little-endian IEEE-754 doubles, row-major)
/// plus the `<base>.json` sidecar carrying geometry, semantic and the blob's
/// SHA-256. `base` may be given with or without either extension.
inline void save_layer(const GridLayer& layer, const fs::path& base) {
  const std::string blob = detail::encode_f64_le(layer.values);
  nlohmann::json meta = geometry_to_json(layer.geometry);
  meta["semantic"] = std::string(to_string(layer.semantic));
  meta["sha256_of_blob"] = sha256_hex(blob.data(), blob.size());
  write_file_atomic(detail::with_suffix(base, ".f64"), blob);
  write_file_atomic(detail::with_suffix(base, ".json"), meta.dump(2) + "\n");
}

inline GridLayer load_layer(const fs::path& base) {
  const fs::path json_path = detail::with_suffix(base, ".json");
  const fs::path blob_path = detail::with_suffix(base, ".f64");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(json_path.string() + ": " + e.what());
  }
  GridGeometry g;
  std::string semantic;
  std::string digest;
  try {
    const auto& org = meta.at("origin");
    if (!org.is_array() || org.size() != 2) throw MalformedFile("origin must be [x, y]");
    g = GridGeometry(meta.at("resolution_c").get<double>(),
                     Point2(org[0].get<double>(), org[1].get<double>()),
                     meta.at("width").get<int>(), meta.at("height").get<int>());
    semantic = meta.at("semantic").get<std::string>();
    digest = meta.at("sha256_of_blob").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(json_path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw MalformedFile(json_path.string() + ": " + e.what());
  }
  const std::string blob = read_file(blob_path);
  if (blob.size() % 8 != 0 || blob.size() / 8 != g.size())
    throw MalformedFile(blob_path.string() + ": holds " + std::to_string(blob.size() / 8) +
                        " values, header declares " + std::to_string(g.size()));
  if (sha256_hex(blob.data(), blob.size()) != digest)
    throw ChecksumMismatch(blob_path.string() + ": sha256 does not match sidecar");
  return GridLayer(g, semantic_from_string(semantic), detail::decode_f64_le(blob));
}

/// Parses a comma-separated grid, one line per row starting at row 0.
inline GridLayer layer_from_csv(std::string_view text, double resolution, const Point2& origin,
                                LayerSemantic semantic) {
  std::vector<double> values;
  int width = -1;
  int height = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    int cols = 0;
    std::size_t p = 0;
    while (p <= line.size()) {
      std::size_t comma = line.find(',', p);
      if (comma == std::string_view::npos) comma = line.size();
      std::string_view field = line.substr(p, comma - p);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size())
        throw MalformedFile("bad CSV number '" + std::string(field) + "'");
      values.push_back(v);
      ++cols;
      p = comma + 1;
    }
    if (width < 0) width = cols;
    else if (cols != width) throw MalformedFile("ragged CSV grid");
    ++height;
  }
  if (height == 0) throw MalformedFile("empty CSV grid");
  return GridLayer(GridGeometry(resolution, origin, width, height), semantic, std::move(values));
}

/// 8-bit binary PGM, min-max scaled, top image row = highest grid row.
/// Export only; the scaling is lossy.
inline void export_pgm(const GridLayer& layer, const fs::path& path) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : layer.values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::string out = "P5\n" + std::to_string(layer.width()) + " " +
                    std::to_string(layer.height()) + "\n255\n";
  for (int r = layer.height() - 1; r >= 0; --r) {
    for (int c = 0; c < layer.width(); ++c) {
      const double v = layer.at(c, r);
      const double t = std::isfinite(v) ? (v - lo) / span : 0.0;
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
  }
  write_file_atomic(path, out);
}

}  // namespace sirenmap
