#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tv3s/mask.hpp"
#include "tv3s/tensor.hpp"

// Synthetic moving-shapes video generator and the on-disk dataset layout:
// one directory per video holding f####.tvt frame tensors [3,H,W] and
// m####.tvt label tensors [H,W], plus an index.txt with one line per video.
namespace tv3s {

struct SynthSpec {
  uint64_t seed = 1;
  int num_videos = 4;
  int frames = 16;
  int height = 64;
  int width = 64;
  int num_classes = 4;  // class 0 = background, classes 1.. are moving shapes
  int min_size = 8;     // object bounding-box edge in pixels
  int max_size = 16;
  double min_speed = 0.5;  // pixels per frame, per axis
  double max_speed = 2.5;
  double noise = 0.05;     // static per-video pixel noise amplitude
  bool occlusion = false;  // flicker occluders painted into frames only

  void validate() const;
  std::vector<std::pair<std::string, std::string>> items() const;
};

struct ObjectInfo {
  int cls = 0;
  bool disk = false;
  int size = 0;  // bounding-box edge; a rectangle covers exactly size*size pixels
};

struct VideoClip {
  std::string id;
  std::vector<Tensor<float>> frames;  // [3,H,W], values in [0,1]
  std::vector<ClassMask> masks;
  std::vector<ObjectInfo> objects;  // generator metadata; empty when loaded
};

// Fixed per-class paint color.
std::array<float, 3> class_color(int cls);

// Deterministic in (spec.seed, index): every video has its own RNG stream.
// With occlusion off and zero velocity, all frames of a video are identical.
VideoClip gen_video(const SynthSpec& spec, int index);

// Writes all videos plus index.txt into dir.
void gen_dataset(const SynthSpec& spec, const std::string& dir);

struct IndexEntry {
  std::string id;
  int frames = 0;
  int h = 0;
  int w = 0;
};

std::vector<IndexEntry> read_index(const std::string& dir);

VideoClip load_video(const std::string& dir, const IndexEntry& entry);

// Label masks as int32 tensors on disk.
void write_mask(const std::string& path, const ClassMask& m);
ClassMask read_mask(const std::string& path);

template <typename T>
Tensor<T> cast_tensor(const Tensor<float>& t) {
  Tensor<T> out(t.shape);
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<T>(t.data[i]);
  return out;
}

}  // namespace tv3s
