// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <string>
#include <vector>

#include "gsnerf/scenegen.hpp"

namespace gsnerf::scene {

// Counters for loader instrumentation (e.g. asserting that self-supervised
// training never touches GT depth rasters).
struct IoStats {
  std::atomic<int64_t> depth_files_read{0};
  std::atomic<int64_t> image_files_read{0};
  void reset() {
    depth_files_read = 0;
    image_files_read = 0;
  }
};
IoStats& io_stats();

struct BundleReadOptions {
  bool load_depth = true;
  bool load_target_depth = true;
};

// On-disk layout per scene:
//   scene_<id>/manifest.txt
//   scene_<id>/view_<k>/{rgb.png, depth.dpf, sem.png, pose.txt, intr.txt}
//   scene_<id>/view_t/...            (target view)
void write_bundle(const std::string& dir, const SceneBundle& bundle);
SceneBundle read_bundle(const std::string& dir, const BundleReadOptions& opts = {});

// Individual formats (also used by the CLI render command).
void write_png_rgb(const std::string& path, const Image& img);
Image read_png_rgb(const std::string& path);
void write_png_labels(const std::string& path, const LabelMap& labels);
LabelMap read_png_labels(const std::string& path);
void write_dpf(const std::string& path, const DepthMap& depth);
DepthMap read_dpf(const std::string& path);
void write_pose(const std::string& path, const geom::Pose& pose);
geom::Pose read_pose(const std::string& path);
void write_intrinsics(const std::string& path, const CameraView& cam);
// Fills everything except the pose.
void read_intrinsics(const std::string& path, CameraView* cam);

}  // namespace gsnerf::scene
