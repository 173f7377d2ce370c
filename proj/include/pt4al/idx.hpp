#pragma once

// IDX (MNIST) image/label files: big-endian 32-bit header fields followed by
// unsigned bytes.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pt4al/data.hpp"
#include "pt4al/error.hpp"

namespace pt4al {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4) throw FormatError(what + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t value) {
  const char b[4] = {static_cast<char>(value >> 24), static_cast<char>(value >> 16), static_cast<char>(value >> 8),
                     static_cast<char>(value)};
  out.write(b, 4);
}

}  // namespace detail

/// Loads an image file (magic 0x803, n x rows x cols) and label file (magic
/// 0x801) into a labeled pool with ids 0..n-1 and pixels scaled by 1/255.
inline Pool load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = detail::read_bytes(images_path);
  const auto labels = detail::read_bytes(labels_path);
  const std::string image_name = images_path.string(), label_name = labels_path.string();

  if (detail::read_be32(images, 0, image_name) != kIdxImageMagic) throw FormatError(image_name + ": bad image magic");
  if (detail::read_be32(labels, 0, label_name) != kIdxLabelMagic) throw FormatError(label_name + ": bad label magic");
  const std::uint32_t count = detail::read_be32(images, 4, image_name);
  const std::uint32_t rows = detail::read_be32(images, 8, image_name);
  const std::uint32_t cols = detail::read_be32(images, 12, image_name);
  const std::uint32_t label_count = detail::read_be32(labels, 4, label_name);
  if (count != label_count) {
    throw FormatError("image count " + std::to_string(count) + " does not match label count " +
                      std::to_string(label_count));
  }
  const std::size_t pixels = std::size_t{rows} * cols;
  if (images.size() < 16 + pixels * count) throw FormatError(image_name + ": truncated pixel data");
  if (labels.size() < 8 + std::size_t{count}) throw FormatError(label_name + ": truncated label data");

  Pool pool;
  pool.role = PoolRole::labeled;
  pool.samples.reserve(count);
  std::size_t max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Image img{rows, cols, 1, std::vector<double>(pixels)};
    const std::uint8_t* src = images.data() + 16 + std::size_t{i} * pixels;
    for (std::size_t p = 0; p < pixels; ++p) img.pixels[p] = static_cast<double>(src[p]) / 255.0;
    const std::size_t label = labels[8 + i];
    max_label = std::max(max_label, label);
    pool.samples.push_back({i, std::move(img), label});
  }
  pool.class_count = count == 0 ? 0 : max_label + 1;
  return pool;
}

/// Inverse of load_idx for single-channel labeled pools; pixels are rounded to
/// the nearest k/255.
inline void write_idx(const Pool& pool, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  const std::size_t rows = pool.empty() ? 0 : pool.samples.front().image.height;
  const std::size_t cols = pool.empty() ? 0 : pool.samples.front().image.width;
  std::ofstream img_out(images_path, std::ios::binary);
  std::ofstream lbl_out(labels_path, std::ios::binary);
  if (!img_out || !lbl_out) throw RuntimeError("cannot write IDX files");
  detail::write_be32(img_out, kIdxImageMagic);
  detail::write_be32(img_out, static_cast<std::uint32_t>(pool.size()));
  detail::write_be32(img_out, static_cast<std::uint32_t>(rows));
  detail::write_be32(img_out, static_cast<std::uint32_t>(cols));
  detail::write_be32(lbl_out, kIdxLabelMagic);
  detail::write_be32(lbl_out, static_cast<std::uint32_t>(pool.size()));
  for (const auto& s : pool.samples) {
    require(s.image.height == rows && s.image.width == cols && s.image.channels == 1,
            "IDX needs single-channel images of one size");
    require(s.label.has_value() && *s.label < 256, "IDX labels must be present and below 256");
    for (double v : s.image.pixels) img_out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    lbl_out.put(static_cast<char>(static_cast<std::uint8_t>(*s.label)));
  }
  if (!img_out || !lbl_out) throw RuntimeError("failed writing IDX files");
}

}  // namespace pt4al
