#pragma once

#include "geounc/camera.hpp"
#include "geounc/scene.hpp"
#include "geounc/sdf.hpp"

#include "json.hpp"

#include <png.h>

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace geounc {

namespace fs = std::filesystem;

[[noreturn]] inline void io_fail(const fs::path& path, const std::string& reason) {
  fail(ErrorKind::io, path.string() + ": " + reason);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot open for writing");
  out << text;
  if (!out) io_fail(path, "write failed");
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    io_fail(path, std::string("corrupt JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace detail {
template <class T>
void put_le(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  buf.append(bytes.data(), bytes.size());
}

template <class T>
T get_le(const std::string& buf, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(T) > buf.size()) io_fail(path, "truncated file");
  std::array<char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), buf.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Lattice files: magic(4) | version u32 = 1 | dims 3*u32 | bbox 6*f32 | values f32, x fastest

inline constexpr std::string_view kSdfMagic = "SDFG";
inline constexpr std::string_view kUncertaintyMagic = "UNCG";

template <class T>
std::string encode_lattice(const Grid3<T>& g, std::string_view magic) {
  std::string buf(magic);
  detail::put_le<std::uint32_t>(buf, 1);
  for (int d : g.dims()) detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) detail::put_le<float>(buf, static_cast<float>(g.bbox().min[a]));
  for (int a = 0; a < 3; ++a) detail::put_le<float>(buf, static_cast<float>(g.bbox().max[a]));
  for (const T& v : g.values()) detail::put_le<float>(buf, static_cast<float>(v));
  return buf;
}

template <class T>
Grid3<T> decode_lattice(const std::string& buf, std::string_view magic, const fs::path& path) {
  if (buf.size() < 4 || std::string_view(buf.data(), 4) != magic)
    io_fail(path, "bad magic, expected " + std::string(magic));
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(buf, pos, path);
  if (version != 1) io_fail(path, "unsupported version " + std::to_string(version));
  Dims dims{};
  for (int& d : dims) {
    const auto v = detail::get_le<std::uint32_t>(buf, pos, path);
    if (v < 2 || v > 4096) io_fail(path, "invalid dims");
    d = static_cast<int>(v);
  }
  Aabb box;
  for (int a = 0; a < 3; ++a) box.min[a] = detail::get_le<float>(buf, pos, path);
  for (int a = 0; a < 3; ++a) box.max[a] = detail::get_le<float>(buf, pos, path);
  if (!(box.min.array() < box.max.array()).all()) io_fail(path, "invalid bbox");
  Grid3<T> g(dims, box);
  const std::size_t need = pos + g.size() * sizeof(float);
  if (buf.size() != need) io_fail(path, "size mismatch: expected " + std::to_string(need) + " bytes");
  for (auto& v : g.values()) v = static_cast<T>(detail::get_le<float>(buf, pos, path));
  return g;
}

inline void save_sdfg(const VoxelSdf& sdf, const fs::path& path) {
  write_text(path, encode_lattice(sdf.grid(), kSdfMagic));
}

inline VoxelSdf load_sdfg(const fs::path& path) {
  if (!fs::exists(path)) io_fail(path, "missing grid file");
  return VoxelSdf(decode_lattice<float>(read_text(path), kSdfMagic, path));
}

// ---------------------------------------------------------------------------
// PNG (8-bit) and PFM

inline std::uint8_t quantize8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Writes a 1- or 3-channel float image in [0,1] as an 8-bit PNG.
inline void write_png(const fs::path& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, "PNG export supports 1 or 3 channels");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) io_fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    io_fail(path, "PNG encoding failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = quantize8(img.data[static_cast<std::size_t>(y) * row.size() + i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Reads an 8-bit PNG as floats in [0,1], converted to `channels` (1 or 3).
inline Image read_png(const fs::path& path, int channels = 3) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) io_fail(path, "missing image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    io_fail(path, "corrupt PNG");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  const png_byte color = png_get_color_type(png, info);
  if (channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)) png_set_gray_to_rgb(png);
  if (channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE))
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  if (c != channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    io_fail(path, "unexpected channel count");
  }
  Image img(w, h, c);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t i = 0; i < row.size(); ++i)
      img.data[static_cast<std::size_t>(y) * row.size() + i] = static_cast<float>(row[i]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

/// Single-channel little-endian PFM, rows stored bottom to top.
inline void write_pfm(const fs::path& path, const std::vector<float>& values, int width, int height) {
  require(values.size() == static_cast<std::size_t>(width) * height, "PFM size mismatch");
  std::string buf = "Pf\n" + std::to_string(width) + " " + std::to_string(height) + "\n-1.0\n";
  for (int y = height - 1; y >= 0; --y)
    for (int x = 0; x < width; ++x) detail::put_le<float>(buf, values[static_cast<std::size_t>(y) * width + x]);
  write_text(path, buf);
}

inline std::vector<float> read_pfm(const fs::path& path, int& width, int& height) {
  if (!fs::exists(path)) io_fail(path, "missing depth map");
  const std::string buf = read_text(path);
  std::istringstream header(buf);
  std::string magic;
  double scale = 0.0;
  header >> magic >> width >> height >> scale;
  if (!header || magic != "Pf" || width <= 0 || height <= 0) io_fail(path, "corrupt PFM header");
  if (scale >= 0.0) io_fail(path, "big-endian PFM not supported");
  std::size_t pos = static_cast<std::size_t>(header.tellg()) + 1;
  std::vector<float> values(static_cast<std::size_t>(width) * height);
  if (buf.size() != pos + values.size() * sizeof(float)) io_fail(path, "PFM size mismatch");
  for (int y = height - 1; y >= 0; --y)
    for (int x = 0; x < width; ++x)
      values[static_cast<std::size_t>(y) * width + x] = detail::get_le<float>(buf, pos, path);
  return values;
}

// ---------------------------------------------------------------------------
// Dataset directory

inline std::string view_file(int id, const char* ext) {
  char name[32];
  std::snprintf(name, sizeof(name), "view_%04d.%s", id, ext);
  return name;
}

inline nlohmann::json camera_to_json(const CameraView& v) {
  nlohmann::json R = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R.push_back(v.pose.R(r, c));
  return {{"id", v.id},
          {"fx", v.K.fx},
          {"fy", v.K.fy},
          {"cx", v.K.cx},
          {"cy", v.K.cy},
          {"width", v.width},
          {"height", v.height},
          {"R", R},
          {"t", {v.pose.t.x(), v.pose.t.y(), v.pose.t.z()}}};
}

inline CameraView camera_from_json(const nlohmann::json& j) {
  CameraView v;
  v.id = j.at("id").get<int>();
  v.K = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(), j.at("cy").get<double>()};
  v.width = j.at("width").get<int>();
  v.height = j.at("height").get<int>();
  const auto& R = j.at("R");
  const auto& t = j.at("t");
  require(R.size() == 9 && t.size() == 3, "camera R must have 9 entries and t 3");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v.pose.R(r, c) = R[r * 3 + c].get<double>();
  v.pose.t = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  return v;
}

inline void save_dataset(const SceneDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "depth");
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& v : ds.views) {
    cams.push_back(camera_to_json(v));
    if (!v.image.empty()) write_png(dir / "images" / view_file(v.id, "png"), v.image);
    if (v.has_depth()) write_pfm(dir / "depth" / view_file(v.id, "pfm"), v.depth, v.width, v.height);
  }
  write_text(dir / "cameras.json", cams.dump(2) + "\n");
  const nlohmann::json gt = {{"sdf", ds.gt_sdf.to_json()},
                             {"shading", shading_to_json(ds.shading)},
                             {"bounds",
                              {{"center", {ds.bounds.center.x(), ds.bounds.center.y(), ds.bounds.center.z()}},
                               {"radius", ds.bounds.radius}}}};
  write_text(dir / "gt.sdfc", gt.dump(2) + "\n");
  save_sdfg(ds.recon_sdf, dir / "recon.sdfg");
}

inline SceneDataset load_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "cameras.json";
  if (!fs::exists(manifest)) io_fail(manifest, "missing manifest");
  SceneDataset ds;
  const nlohmann::json cams = read_json(manifest);
  if (!cams.is_array()) io_fail(manifest, "manifest must be a JSON array");
  try {
    for (const auto& c : cams) ds.views.push_back(camera_from_json(c));
  } catch (const nlohmann::json::exception& e) {
    io_fail(manifest, std::string("corrupt camera entry: ") + e.what());
  }
  for (auto& v : ds.views) {
    const fs::path img = dir / "images" / view_file(v.id, "png");
    if (fs::exists(img)) {
      v.image = read_png(img, 3);
      if (v.image.width != v.width || v.image.height != v.height) io_fail(img, "image size disagrees with manifest");
    }
    const fs::path dep = dir / "depth" / view_file(v.id, "pfm");
    if (fs::exists(dep)) {
      int w = 0, h = 0;
      v.depth = read_pfm(dep, w, h);
      if (w != v.width || h != v.height) io_fail(dep, "depth size disagrees with manifest");
    }
  }
  const fs::path gt_path = dir / "gt.sdfc";
  if (!fs::exists(gt_path)) io_fail(gt_path, "missing ground-truth scene");
  const nlohmann::json gt = read_json(gt_path);
  try {
    ds.gt_sdf = AnalyticSdf::from_json(gt.at("sdf"));
    if (gt.contains("shading")) ds.shading = shading_from_json(gt.at("shading"));
    if (gt.contains("bounds")) {
      const auto& c = gt.at("bounds").at("center");
      ds.bounds.center = Vec3(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
      ds.bounds.radius = gt.at("bounds").at("radius").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    io_fail(gt_path, std::string("corrupt scene description: ") + e.what());
  } catch (const Error& e) {
    io_fail(gt_path, e.what());
  }
  ds.recon_sdf = load_sdfg(dir / "recon.sdfg");
  return ds;
}

}  // namespace geounc
