#include "tv3s/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tv3s/rng.hpp"
#include "tv3s/tvt1.hpp"

namespace tv3s {

void SynthSpec::validate() const {
  if (num_videos < 1) throw ConfigError("data.videos must be >= 1");
  if (frames < 1) throw ConfigError("data.frames must be >= 1");
  if (height < 4 || width < 4) throw ConfigError("data.height/width must be >= 4");
  if (num_classes < 2 || num_classes >= kIgnoreLabel)
    throw ConfigError("data.classes must be in [2, " + std::to_string(kIgnoreLabel) + ")");
  if (min_size < 2) throw ConfigError("data.min_size must be >= 2");
  if (max_size < min_size) throw ConfigError("data.max_size must be >= data.min_size");
  if (max_size > std::min(height, width))
    throw ConfigError("objects of size " + std::to_string(max_size) + " cannot fit a " +
                      std::to_string(height) + "x" + std::to_string(width) + " frame");
  if (min_speed < 0 || max_speed < min_speed)
    throw ConfigError("need 0 <= data.min_speed <= data.max_speed");
  if (noise < 0) throw ConfigError("data.noise must be >= 0");
}

std::vector<std::pair<std::string, std::string>> SynthSpec::items() const {
  auto f = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  return {{"data.seed", std::to_string(seed)},
          {"data.videos", std::to_string(num_videos)},
          {"data.frames", std::to_string(frames)},
          {"data.height", std::to_string(height)},
          {"data.width", std::to_string(width)},
          {"data.classes", std::to_string(num_classes)},
          {"data.min_size", std::to_string(min_size)},
          {"data.max_size", std::to_string(max_size)},
          {"data.min_speed", f(min_speed)},
          {"data.max_speed", f(max_speed)},
          {"data.noise", f(noise)},
          {"data.occlusion", occlusion ? "true" : "false"}};
}

std::array<float, 3> class_color(int cls) {
  if (cls == 0) return {0.08f, 0.09f, 0.10f};
  // Golden-angle hue walk keeps any number of classes visually distinct.
  double h = std::fmod(0.61803398875 * cls, 1.0) * 6.0;
  int i = static_cast<int>(h);
  double f = h - i;
  double v = 0.9, s = 0.8;
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r, g, b;
  switch (i % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

namespace {

struct MovingObject {
  int cls = 0;
  bool disk = false;
  int size = 0;
  double py = 0, px = 0;  // top-left of the bounding box
  double vy = 0, vx = 0;
};

// Advance one step, reflecting at [0, lim] so the box stays inside the frame.
void bounce(double& p, double& v, double lim) {
  p += v;
  if (lim <= 0) {
    p = 0;
    return;
  }
  while (p < 0 || p > lim) {
    if (p < 0) {
      p = -p;
      v = -v;
    } else {
      p = 2 * lim - p;
      v = -v;
    }
  }
}

void paint_objects(const SynthSpec& spec, const std::vector<MovingObject>& objs,
                   Tensor<float>& frame, ClassMask& mask) {
  auto bg = class_color(0);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) frame(ch, y, x) = bg[static_cast<size_t>(ch)];
  std::fill(mask.v.begin(), mask.v.end(), 0);
  // Ascending class order: later (higher-id) shapes overpaint earlier ones,
  // and the labels always match the paint exactly.
  for (const MovingObject& o : objs) {
    int iy = std::clamp(static_cast<int>(std::lround(o.py)), 0, spec.height - o.size);
    int ix = std::clamp(static_cast<int>(std::lround(o.px)), 0, spec.width - o.size);
    auto col = class_color(o.cls);
    double c = (o.size - 1) / 2.0;
    double r2 = (o.size / 2.0) * (o.size / 2.0);
    for (int y = 0; y < o.size; ++y)
      for (int x = 0; x < o.size; ++x) {
        if (o.disk) {
          double dy = y - c, dx = x - c;
          if (dy * dy + dx * dx > r2) continue;
        }
        mask.at(iy + y, ix + x) = o.cls;
        for (int ch = 0; ch < 3; ++ch) frame(ch, iy + y, ix + x) = col[static_cast<size_t>(ch)];
      }
  }
}

}  // namespace

VideoClip gen_video(const SynthSpec& spec, int index) {
  spec.validate();
  char name[32];
  std::snprintf(name, sizeof(name), "video%04d", index);
  VideoClip clip;
  clip.id = name;
  Rng rng(substream_seed(spec.seed, static_cast<uint64_t>(index)));

  std::vector<MovingObject> objs;
  for (int c = 1; c < spec.num_classes; ++c) {
    MovingObject o;
    o.cls = c;
    o.disk = c % 2 == 0;
    o.size = static_cast<int>(rng.uniform_int(spec.min_size, spec.max_size));
    o.py = rng.uniform(0.0, static_cast<double>(spec.height - o.size));
    o.px = rng.uniform(0.0, static_cast<double>(spec.width - o.size));
    o.vy = rng.uniform(spec.min_speed, spec.max_speed) * (rng.coin() ? 1.0 : -1.0);
    o.vx = rng.uniform(spec.min_speed, spec.max_speed) * (rng.coin() ? 1.0 : -1.0);
    objs.push_back(o);
    clip.objects.push_back({c, o.disk, o.size});
  }

  // The noise pattern is fixed per video, so motionless content yields
  // byte-identical frames.
  std::vector<float> field(static_cast<size_t>(3) * spec.height * spec.width);
  for (auto& v : field) v = static_cast<float>(2.0 * rng.uniform() - 1.0);

  for (int t = 0; t < spec.frames; ++t) {
    Tensor<float> frame({3, spec.height, spec.width});
    ClassMask mask(spec.height, spec.width);
    paint_objects(spec, objs, frame, mask);
    if (spec.noise > 0)
      for (size_t i = 0; i < frame.data.size(); ++i)
        frame.data[i] = std::clamp(frame.data[i] + static_cast<float>(spec.noise) * field[i],
                                   0.0f, 1.0f);
    // Flicker occlusion: on roughly half the frames, a random box of pure
    // noise wipes out the image content (labels underneath are unchanged),
    // so only temporal context can segment those pixels.
    if (spec.occlusion && rng.uniform() < 0.5) {
      int oh = static_cast<int>(rng.uniform_int(spec.height / 4, spec.height / 2));
      int ow = static_cast<int>(rng.uniform_int(spec.width / 4, spec.width / 2));
      int oy = static_cast<int>(rng.uniform_int(0, spec.height - oh));
      int ox = static_cast<int>(rng.uniform_int(0, spec.width - ow));
      for (int ch = 0; ch < 3; ++ch)
        for (int y = oy; y < oy + oh; ++y)
          for (int x = ox; x < ox + ow; ++x)
            frame(ch, y, x) = static_cast<float>(rng.uniform());
    }
    clip.frames.push_back(std::move(frame));
    clip.masks.push_back(std::move(mask));
    for (MovingObject& o : objs) {
      bounce(o.py, o.vy, static_cast<double>(spec.height - o.size));
      bounce(o.px, o.vx, static_cast<double>(spec.width - o.size));
    }
  }
  return clip;
}

void write_mask(const std::string& path, const ClassMask& m) {
  Tensor<int32_t> t({m.h, m.w});
  t.data = m.v;
  tvt1::write(path, t);
}

ClassMask read_mask(const std::string& path) {
  Tensor<int32_t> t = tvt1::read<int32_t>(path);
  if (t.ndim() != 2) throw IoError("mask tensor in " + path + " has rank " + std::to_string(t.ndim()));
  ClassMask m(t.shape[0], t.shape[1]);
  m.v = t.data;
  return m;
}

void gen_dataset(const SynthSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  spec.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream index((fs::path(dir) / "index.txt").string());
  if (!index) throw IoError("cannot write dataset index in " + dir);
  for (int v = 0; v < spec.num_videos; ++v) {
    VideoClip clip = gen_video(spec, v);
    fs::path vdir = fs::path(dir) / clip.id;
    fs::create_directories(vdir, ec);
    for (size_t t = 0; t < clip.frames.size(); ++t) {
      char fname[32], mname[32];
      std::snprintf(fname, sizeof(fname), "f%04d.tvt", static_cast<int>(t));
      std::snprintf(mname, sizeof(mname), "m%04d.tvt", static_cast<int>(t));
      tvt1::write((vdir / fname).string(), clip.frames[t]);
      write_mask((vdir / mname).string(), clip.masks[t]);
    }
    index << "id=" << clip.id << " frames=" << spec.frames << " h=" << spec.height
          << " w=" << spec.width << "\n";
  }
  if (!index) throw IoError("dataset index write failed in " + dir);
}

std::vector<IndexEntry> read_index(const std::string& dir) {
  namespace fs = std::filesystem;
  std::string path = (fs::path(dir) / "index.txt").string();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset index: " + path);
  std::vector<IndexEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    IndexEntry e;
    std::istringstream ls(line);
    std::string tok;
    bool have_id = false, have_frames = false, have_h = false, have_w = false;
    while (ls >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw IoError("malformed index line " + std::to_string(lineno) + " in " + path);
      std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      try {
        if (key == "id") {
          e.id = val;
          have_id = true;
        } else if (key == "frames") {
          e.frames = std::stoi(val);
          have_frames = true;
        } else if (key == "h") {
          e.h = std::stoi(val);
          have_h = true;
        } else if (key == "w") {
          e.w = std::stoi(val);
          have_w = true;
        } else {
          throw IoError("unknown index key '" + key + "' in " + path);
        }
      } catch (const IoError&) {
        throw;
      } catch (const std::exception&) {
        throw IoError("bad value for " + key + " on index line " + std::to_string(lineno) +
                      " in " + path);
      }
    }
    if (!have_id || !have_frames || !have_h || !have_w)
      throw IoError("index line " + std::to_string(lineno) + " in " + path +
                    " must provide id, frames, h, w");
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw IoError("dataset index is empty: " + path);
  return entries;
}

VideoClip load_video(const std::string& dir, const IndexEntry& entry) {
  namespace fs = std::filesystem;
  VideoClip clip;
  clip.id = entry.id;
  fs::path vdir = fs::path(dir) / entry.id;
  for (int t = 0; t < entry.frames; ++t) {
    char fname[32], mname[32];
    std::snprintf(fname, sizeof(fname), "f%04d.tvt", t);
    std::snprintf(mname, sizeof(mname), "m%04d.tvt", t);
    Tensor<float> frame = tvt1::read<float>((vdir / fname).string());
    if (frame.shape != std::vector<int>{3, entry.h, entry.w})
      throw IoError("frame " + (vdir / fname).string() + " has shape " + frame.shape_str() +
                    ", index promises [3, " + std::to_string(entry.h) + ", " +
                    std::to_string(entry.w) + "]");
    ClassMask mask = read_mask((vdir / mname).string());
    if (mask.h != entry.h || mask.w != entry.w)
      throw IoError("mask " + (vdir / mname).string() + " extents disagree with the index");
    clip.frames.push_back(std::move(frame));
    clip.masks.push_back(std::move(mask));
  }
  return clip;
}

}  // namespace tv3s
