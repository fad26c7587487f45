// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/bundle_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gsnerf/errors.hpp"

namespace fs = std::filesystem;

namespace gsnerf::scene {

IoStats& io_stats() {
  static IoStats stats;
  return stats;
}

namespace {

constexpr char kDepthMagic[4] = {'D', 'P', 'F', '1'};

struct PngWriter {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngReader {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

void write_png_8bit(const std::string& path, const std::vector<uint8_t>& pixels, int w, int h,
                    int channels) {
  PngWriter ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) throw DataError("cannot open for writing: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info || setjmp(png_jmpbuf(ctx.png)))
    throw DataError("libpng failure writing: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * w * channels);
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

std::vector<uint8_t> read_png_8bit(const std::string& path, int* w, int* h, int want_channels) {
  PngReader ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (!ctx.fp) throw DataError("cannot open: " + path);
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info || setjmp(png_jmpbuf(ctx.png)))
    throw DataError("libpng failure reading: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_read_info(ctx.png, ctx.info);
  *w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  *h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
  const int color_type = png_get_color_type(ctx.png, ctx.info);
  if (bit_depth == 16) png_set_strip_16(ctx.png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (want_channels == 3) {
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(ctx.png);
    png_set_strip_alpha(ctx.png);
  } else {
    if (color_type & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(ctx.png, 1, -1, -1);
    png_set_strip_alpha(ctx.png);
  }
  png_read_update_info(ctx.png, ctx.info);
  std::vector<uint8_t> pixels(static_cast<size_t>(*w) * *h * want_channels);
  std::vector<png_bytep> rows(static_cast<size_t>(*h));
  for (int y = 0; y < *h; ++y)
    rows[static_cast<size_t>(y)] = pixels.data() + static_cast<size_t>(y) * *w * want_channels;
  png_read_image(ctx.png, rows.data());
  return pixels;
}

}  // namespace

void write_png_rgb(const std::string& path, const Image& img) {
  std::vector<uint8_t> bytes(static_cast<size_t>(img.width) * img.height * 3);
  for (size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(img.rgb[i], 0.0, 1.0);
    bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  write_png_8bit(path, bytes, img.width, img.height, 3);
}

Image read_png_rgb(const std::string& path) {
  int w = 0, h = 0;
  const std::vector<uint8_t> bytes = read_png_8bit(path, &w, &h, 3);
  Image img(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
  io_stats().image_files_read++;
  return img;
}

void write_png_labels(const std::string& path, const LabelMap& labels) {
  std::vector<uint8_t> bytes(static_cast<size_t>(labels.width) * labels.height);
  for (size_t i = 0; i < bytes.size(); ++i) {
    const int32_t v = labels.ids[i];
    if (v < 0 || v > 255) throw DataError("label out of 8-bit range writing " + path);
    bytes[i] = static_cast<uint8_t>(v);
  }
  write_png_8bit(path, bytes, labels.width, labels.height, 1);
}

LabelMap read_png_labels(const std::string& path) {
  int w = 0, h = 0;
  const std::vector<uint8_t> bytes = read_png_8bit(path, &w, &h, 1);
  LabelMap labels(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) labels.ids[i] = bytes[i];
  return labels;
}

void write_dpf(const std::string& path, const DepthMap& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kDepthMagic, 4);
  const uint32_t w = static_cast<uint32_t>(depth.width);
  const uint32_t h = static_cast<uint32_t>(depth.height);
  const uint32_t reserved = 0;
  os.write(reinterpret_cast<const char*>(&w), 4);
  os.write(reinterpret_cast<const char*>(&h), 4);
  os.write(reinterpret_cast<const char*>(&reserved), 4);
  std::vector<float> buf(depth.values.size());
  for (size_t i = 0; i < buf.size(); ++i)
    buf[i] = depth.valid[i] ? static_cast<float>(depth.values[i]) : 0.0f;
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw DataError("failed writing: " + path);
}

DepthMap read_dpf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDepthMagic, 4) != 0)
    throw DataError("not a DPF1 depth raster: " + path);
  uint32_t w = 0, h = 0, reserved = 0;
  is.read(reinterpret_cast<char*>(&w), 4);
  is.read(reinterpret_cast<char*>(&h), 4);
  is.read(reinterpret_cast<char*>(&reserved), 4);
  if (!is) throw DataError("truncated DPF header: " + path);
  DepthMap depth(static_cast<int>(w), static_cast<int>(h));
  std::vector<float> buf(static_cast<size_t>(w) * h);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (static_cast<size_t>(is.gcount()) != buf.size() * sizeof(float))
    throw DataError("truncated depth raster " + path + ": expected " +
                    std::to_string(16 + buf.size() * sizeof(float)) + " bytes");
  for (size_t i = 0; i < buf.size(); ++i) {
    depth.values[i] = buf[i];
    depth.valid[i] = buf[i] > 0.0f ? 1 : 0;
  }
  io_stats().depth_files_read++;
  return depth;
}

void write_pose(const std::string& path, const geom::Pose& pose) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.precision(17);
  for (int r = 0; r < 3; ++r) {
    os << pose.R.at(r, 0) << ' ' << pose.R.at(r, 1) << ' ' << pose.R.at(r, 2) << ' '
       << (r == 0 ? pose.t.x : (r == 1 ? pose.t.y : pose.t.z)) << '\n';
  }
  if (!os) throw DataError("failed writing: " + path);
}

geom::Pose read_pose(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  double v[12];
  for (double& x : v)
    if (!(is >> x)) throw DataError("pose file needs 12 numbers: " + path);
  geom::Pose pose;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) pose.R.at(r, c) = v[r * 4 + c];
  pose.t = {v[3], v[7], v[11]};
  return pose;
}

void write_intrinsics(const std::string& path, const CameraView& cam) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.precision(17);
  os << cam.fx << ' ' << cam.fy << ' ' << cam.cx << ' ' << cam.cy << '\n'
     << cam.width << ' ' << cam.height << ' ' << cam.near << ' ' << cam.far << '\n';
  if (!os) throw DataError("failed writing: " + path);
}

void read_intrinsics(const std::string& path, CameraView* cam) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  if (!(is >> cam->fx >> cam->fy >> cam->cx >> cam->cy >> cam->width >> cam->height >>
        cam->near >> cam->far))
    throw DataError("intrinsics file needs fx fy cx cy W H near far: " + path);
}

namespace {

void write_view(const fs::path& dir, const View& view) {
  fs::create_directories(dir);
  write_png_rgb((dir / "rgb.png").string(), view.image);
  write_dpf((dir / "depth.dpf").string(), view.depth);
  write_png_labels((dir / "sem.png").string(), view.labels);
  write_pose((dir / "pose.txt").string(), view.cam.pose);
  write_intrinsics((dir / "intr.txt").string(), view.cam);
}

View read_view(const fs::path& dir, bool with_depth) {
  View view;
  const std::string d = dir.string();
  try {
    view.image = read_png_rgb((dir / "rgb.png").string());
    view.labels = read_png_labels((dir / "sem.png").string());
    view.cam.pose = read_pose((dir / "pose.txt").string());
    read_intrinsics((dir / "intr.txt").string(), &view.cam);
    if (with_depth) view.depth = read_dpf((dir / "depth.dpf").string());
    else view.depth = DepthMap(view.cam.width, view.cam.height);
  } catch (const DataError& err) {
    throw DataError("view " + d + ": " + err.what());
  }
  view.cam.validate();
  if (view.image.width != view.cam.width || view.image.height != view.cam.height)
    throw DataError("view " + d + ": image size does not match intrinsics");
  return view;
}

}  // namespace

void write_bundle(const std::string& dir, const SceneBundle& bundle) {
  const fs::path root(dir);
  fs::create_directories(root);
  std::ofstream manifest(root / "manifest.txt");
  if (!manifest) throw DataError("cannot write manifest in " + dir);
  manifest << "K\t" << bundle.sources.size() << "\n"
           << "C\t" << bundle.num_classes << "\n"
           << "H\t" << bundle.target.cam.height << "\n"
           << "W\t" << bundle.target.cam.width << "\n";
  for (size_t i = 0; i < bundle.class_names.size(); ++i)
    manifest << i << '\t' << bundle.class_names[i] << '\n';
  for (size_t k = 0; k < bundle.sources.size(); ++k)
    write_view(root / ("view_" + std::to_string(k)), bundle.sources[k]);
  write_view(root / "view_t", bundle.target);
}

SceneBundle read_bundle(const std::string& dir, const BundleReadOptions& opts) {
  const fs::path root(dir);
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest) throw DataError("missing manifest.txt in " + dir);
  SceneBundle bundle;
  bundle.scene_id = root.filename().string();
  int k = 0, h = 0, w = 0;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "K") ss >> k;
    else if (key == "C") ss >> bundle.num_classes;
    else if (key == "H") ss >> h;
    else if (key == "W") ss >> w;
    else {
      // class row: id<TAB>name
      std::string name;
      ss >> name;
      bundle.class_names.push_back(name);
    }
  }
  if (k <= 0 || bundle.num_classes <= 0)
    throw DataError("manifest.txt in " + dir + " lacks K/C entries");
  for (int i = 0; i < k; ++i)
    bundle.sources.push_back(read_view(root / ("view_" + std::to_string(i)), opts.load_depth));
  bundle.target = read_view(root / "view_t", opts.load_target_depth);
  return bundle;
}

}  // namespace gsnerf::scene
