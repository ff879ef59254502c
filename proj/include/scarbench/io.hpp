#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unistd.h>
#include <vector>

#include "json.hpp"

#include "scarbench/error.hpp"
#include "scarbench/types.hpp"

namespace scarbench::io {

namespace fs = std::filesystem;

/// 8-bit grayscale raster as stored on disk.
struct Gray8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw Error(Errc::FileMissing, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileMissing, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temp file and renames it over the target, so readers
/// never observe a partially written output.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(Errc::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(Errc::IoError, "cannot rename onto " + path.string());
  }
}

namespace detail {

inline Gray8 decode_pgm(const std::vector<std::uint8_t>& buf, const std::string& name) {
  std::size_t pos = 2;
  auto skip_space_and_comments = [&] {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> long {
    skip_space_and_comments();
    if (pos >= buf.size() || !std::isdigit(buf[pos])) {
      throw Error(Errc::MalformedHeader, name + ": expected an integer in PGM header");
    }
    long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + (buf[pos] - '0');
      if (v > (1L << 24)) throw Error(Errc::MalformedHeader, name + ": header value too large");
      ++pos;
    }
    return v;
  };

  const long width = read_uint();
  const long height = read_uint();
  const long maxval = read_uint();
  if (width <= 0 || height <= 0) throw Error(Errc::MalformedHeader, name + ": zero dimension");
  if (maxval <= 0 || maxval > 65535) throw Error(Errc::MalformedHeader, name + ": bad maxval");
  if (maxval > 255) throw Error(Errc::UnsupportedDepth, name + ": 16-bit PGM is not supported");
  if (pos >= buf.size() || !std::isspace(buf[pos])) {
    throw Error(Errc::MalformedHeader, name + ": missing separator after maxval");
  }
  ++pos;

  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (buf.size() - pos < need) {
    throw Error(Errc::MalformedHeader, name + ": header declares " + std::to_string(need) +
                                           " bytes, file holds " +
                                           std::to_string(buf.size() - pos));
  }
  Gray8 out{static_cast<int>(width), static_cast<int>(height), {}};
  out.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                    buf.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return out;
}

inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

inline Gray8 decode_png(const std::vector<std::uint8_t>& buf, const std::string& name) {
  // Signature (8) + IHDR length/type (8) + width, height, depth, colour type.
  if (buf.size() < 26 || std::memcmp(buf.data() + 12, "IHDR", 4) != 0) {
    throw Error(Errc::MalformedHeader, name + ": PNG without IHDR");
  }
  const std::uint8_t bit_depth = buf[24];
  const std::uint8_t color_type = buf[25];
  if (bit_depth != 8) {
    throw Error(Errc::UnsupportedDepth, name + ": PNG bit depth " + std::to_string(bit_depth));
  }
  if (color_type != PNG_COLOR_TYPE_GRAY) {
    throw Error(Errc::UnsupportedDepth, name + ": PNG is not single-channel grayscale");
  }

  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, buf.data(), buf.size())) {
    throw Error(Errc::MalformedHeader, name + ": " + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  Gray8 out{static_cast<int>(img.width), static_cast<int>(img.height), {}};
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(Errc::MalformedHeader, name + ": " + msg);
  }
  if (be32(buf.data() + 16) != img.width) {
    throw Error(Errc::MalformedHeader, name + ": inconsistent PNG header");
  }
  return out;
}

}  // namespace detail

/// Reads an 8-bit binary PGM (P5) or 8-bit grayscale PNG, dispatching on the
/// file signature.
inline Gray8 read_gray8(const fs::path& path) {
  const auto buf = read_file(path);
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() >= 8 && std::memcmp(buf.data(), png_sig, 8) == 0) {
    return detail::decode_png(buf, path.string());
  }
  if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '5') {
    return detail::decode_pgm(buf, path.string());
  }
  throw Error(Errc::MalformedHeader, path.string() + ": neither P5 PGM nor PNG");
}

inline std::string encode_pgm(int width, int height, const std::vector<std::uint8_t>& pixels) {
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

/// Any nonzero stored byte is foreground.
inline Mask load_mask(const fs::path& path) {
  Gray8 g = read_gray8(path);
  for (auto& v : g.pixels) v = v != 0 ? 1 : 0;
  return Mask(g.width, g.height, std::move(g.pixels));
}

inline Image load_image(const fs::path& path) {
  const Gray8 g = read_gray8(path);
  std::vector<double> data(g.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = g.pixels[i] / 255.0;
  return Image(g.width, g.height, std::move(data));
}

/// Foreground is written as 255.
inline void save_mask(const Mask& m, const fs::path& path) {
  std::vector<std::uint8_t> px(m.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m[i] ? 255 : 0;
  write_file_atomic(path, encode_pgm(m.width(), m.height(), px));
}

inline std::uint8_t quantize(double v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void save_image(const Image& img, const fs::path& path) {
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize(img[i]);
  write_file_atomic(path, encode_pgm(img.width(), img.height(), px));
}

/// Flat little-endian float32, row-major; dimensions come from the caller.
inline ScoreMap load_scores(const fs::path& path, int width, int height) {
  const auto buf = read_file(path);
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (buf.size() != n * 4) {
    throw Error(Errc::MalformedHeader, path.string() + ": expected " + std::to_string(n * 4) +
                                           " bytes of float32 scores, found " +
                                           std::to_string(buf.size()));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = std::uint32_t{buf[4 * i]} | (std::uint32_t{buf[4 * i + 1]} << 8) |
                         (std::uint32_t{buf[4 * i + 2]} << 16) |
                         (std::uint32_t{buf[4 * i + 3]} << 24);
    data[i] = std::bit_cast<float>(bits);
  }
  return ScoreMap(width, height, std::move(data));
}

inline void save_scores(const ScoreMap& s, const fs::path& path) {
  std::string bytes(s.size() * 4, '\0');
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(s[i]));
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  write_file_atomic(path, bytes);
}

namespace detail {

template <typename T>
T required(const nlohmann::json& entry, const char* key, std::size_t idx) {
  auto it = entry.find(key);
  if (it == entry.end()) {
    throw Error(Errc::ParseError,
                "manifest entry " + std::to_string(idx) + " lacks \"" + key + "\"");
  }
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::ParseError,
                "manifest entry " + std::to_string(idx) + ": \"" + key + "\" has the wrong type");
  }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Parses a case manifest. Relative paths resolve against the manifest's
/// directory.
inline std::vector<CaseRecord> parse_manifest(const std::string& text, const fs::path& base_dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, e.what());
  }
  if (!doc.is_array()) throw Error(Errc::ParseError, "manifest must be a JSON array");

  std::vector<CaseRecord> cases;
  std::set<std::tuple<std::string, std::string, int>> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    if (!e.is_object()) throw Error(Errc::ParseError, "manifest entry " + std::to_string(i));
    CaseRecord rec;
    rec.patient_id = detail::required<std::string>(e, "patient_id", i);
    rec.cohort_id = detail::required<std::string>(e, "cohort_id", i);
    const auto slice = detail::required<long long>(e, "slice_index", i);
    const auto image = detail::required<std::string>(e, "image", i);
    const auto mask = detail::required<std::string>(e, "mask", i);
    rec.geometry.spacing_x = detail::required<double>(e, "spacing_x_mm", i);
    rec.geometry.spacing_y = detail::required<double>(e, "spacing_y_mm", i);
    rec.geometry.slice_thickness = detail::required<double>(e, "slice_thickness_mm", i);
    if (e.contains("pred") && !e["pred"].is_null()) {
      rec.pred_path = detail::resolve(base_dir, detail::required<std::string>(e, "pred", i));
    }
    if (e.contains("scores") && !e["scores"].is_null()) {
      rec.scores_path = detail::resolve(base_dir, detail::required<std::string>(e, "scores", i));
    }

    if (rec.patient_id.empty()) {
      throw Error(Errc::ParseError, "manifest entry " + std::to_string(i) + ": empty patient_id");
    }
    if (slice < 0 || slice > std::numeric_limits<int>::max()) {
      throw Error(Errc::ParseError,
                  "manifest entry " + std::to_string(i) + ": slice_index out of range");
    }
    if (image.empty() || mask.empty()) {
      throw Error(Errc::ParseError, "manifest entry " + std::to_string(i) + ": empty path");
    }
    if (!rec.geometry.valid()) {
      throw Error(Errc::InvalidGeometry, "manifest entry " + std::to_string(i) + " (patient " +
                                             rec.patient_id + ")");
    }
    rec.slice_index = static_cast<int>(slice);
    rec.image_path = detail::resolve(base_dir, image);
    rec.mask_path = detail::resolve(base_dir, mask);
    if (!seen.emplace(rec.patient_id, rec.cohort_id, rec.slice_index).second) {
      throw Error(Errc::DuplicateCase, "patient " + rec.patient_id + ", cohort " + rec.cohort_id +
                                           ", slice " + std::to_string(rec.slice_index));
    }
    cases.push_back(std::move(rec));
  }
  return cases;
}

inline std::vector<CaseRecord> load_manifest(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

}  // namespace scarbench::io
