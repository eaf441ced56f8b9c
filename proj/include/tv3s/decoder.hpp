#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tv3s/parallel.hpp"
#include "tv3s/tss.hpp"
#include "tv3s/tvt1.hpp"
#include "tv3s/windowing.hpp"

// The full decoder: toy convolutional patch encoder -> N blocks, each running
// an unshifted and a shifted window pass of temporal state-space units over
// patch sequences -> linear classifier head upsampled back to pixel
// resolution. Per-patch hidden states live in a StateStore whose size depends
// only on the model geometry, never on video length.
namespace tv3s {

struct DecoderConfig {
  int blocks = 4;
  int window = 20;
  int shift = 10;       // must be window/2
  int embed_dim = 256;
  int num_classes = 4;
  int expand = 2;
  int state_dim = 16;
  int conv_kernel = 4;
  int patch = 4;        // encoder patch size == upsample factor of the head
  int scan_chunk = 0;   // 0 = fused sequential scan

  int d_inner() const { return expand * embed_dim; }
  int d_rank() const { return std::max((d_inner() + 15) / 16, 1); }

  bool operator==(const DecoderConfig&) const = default;

  void validate() const {
    if (blocks < 1) throw ConfigError("model.blocks must be >= 1");
    if (window < 2 || window % 2 != 0)
      throw ConfigError("model.window must be an even number >= 2");
    if (shift != window / 2)
      throw ConfigError("model.shift must equal model.window / 2, got " + std::to_string(shift));
    if (embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
    if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
    if (expand < 1) throw ConfigError("model.expand must be >= 1");
    if (state_dim < 1) throw ConfigError("model.state_dim must be >= 1");
    if (conv_kernel < 1) throw ConfigError("model.conv_kernel must be >= 1");
    if (patch < 1) throw ConfigError("model.patch must be >= 1");
    if (scan_chunk < 0) throw ConfigError("model.scan_chunk must be >= 0");
  }

  // Key/value echo used in checkpoint manifests and `params` output.
  std::vector<std::pair<std::string, int>> items() const {
    return {{"model.blocks", blocks},       {"model.window", window},
            {"model.shift", shift},         {"model.embed_dim", embed_dim},
            {"model.num_classes", num_classes}, {"model.expand", expand},
            {"model.state_dim", state_dim}, {"model.conv_kernel", conv_kernel},
            {"model.patch", patch},         {"model.scan_chunk", scan_chunk}};
  }
};

// Toy encoder: non-overlapping patch embedding plus one pointwise residual
// MLP. All biases start at zero so a zero frame maps to a zero feature map.
template <typename T>
struct EncoderWeights {
  Param<T> embed_w;  // [De, 3*P*P]
  Param<T> embed_b;  // [De]
  Param<T> mlp_w1;   // [De,De]
  Param<T> mlp_b1;   // [De]
  Param<T> mlp_w2;   // [De,De]
  Param<T> mlp_b2;   // [De]

  void init(int de, int patch, Rng& rng) {
    int in_features = 3 * patch * patch;
    auto scaled_normal = [&rng](std::vector<int> shape, int fan_in) {
      Tensor<T> t(std::move(shape));
      double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<T>(s * rng.normal());
      return t;
    };
    embed_w = Param<T>("enc.embed_w", scaled_normal({de, in_features}, in_features));
    embed_b = Param<T>("enc.embed_b", Tensor<T>({de}, T(0)));
    mlp_w1 = Param<T>("enc.mlp_w1", scaled_normal({de, de}, de));
    mlp_b1 = Param<T>("enc.mlp_b1", Tensor<T>({de}, T(0)));
    mlp_w2 = Param<T>("enc.mlp_w2", scaled_normal({de, de}, de));
    mlp_b2 = Param<T>("enc.mlp_b2", Tensor<T>({de}, T(0)));
  }

  void for_each_param(const std::function<void(Param<T>&)>& fn) {
    fn(embed_w);
    fn(embed_b);
    fn(mlp_w1);
    fn(mlp_b1);
    fn(mlp_w2);
    fn(mlp_b2);
  }
};

inline const char* branch_name(int br) { return br == 0 ? "u" : "s"; }

template <typename T>
struct DecoderWeights {
  DecoderConfig cfg;
  EncoderWeights<T> enc;
  std::vector<std::array<TssWeights<T>, 2>> blocks;  // [block][0=unshifted, 1=shifted]
  Param<T> head_w;   // [C,De]
  Param<T> head_b;   // [C]
  Param<T> inter_w;  // [C,De] separate weights for the auxiliary head
  Param<T> inter_b;  // [C]

  static DecoderWeights init(const DecoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    DecoderWeights w;
    w.cfg = cfg;
    Rng rng(seed);
    w.enc.init(cfg.embed_dim, cfg.patch, rng);
    w.blocks.resize(static_cast<size_t>(cfg.blocks));
    for (int bi = 0; bi < cfg.blocks; ++bi)
      for (int br = 0; br < 2; ++br)
        w.blocks[static_cast<size_t>(bi)][static_cast<size_t>(br)].init(
            cfg.embed_dim, cfg.d_inner(), cfg.conv_kernel, cfg.state_dim, cfg.d_rank(), rng,
            "block" + std::to_string(bi) + "." + branch_name(br));
    auto scaled_normal = [&rng](std::vector<int> shape, int fan_in) {
      Tensor<T> t(std::move(shape));
      double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<T>(s * rng.normal());
      return t;
    };
    w.head_w = Param<T>("head.w", scaled_normal({cfg.num_classes, cfg.embed_dim}, cfg.embed_dim));
    w.head_b = Param<T>("head.b", Tensor<T>({cfg.num_classes}, T(0)));
    w.inter_w = Param<T>("inter.w", scaled_normal({cfg.num_classes, cfg.embed_dim}, cfg.embed_dim));
    w.inter_b = Param<T>("inter.b", Tensor<T>({cfg.num_classes}, T(0)));
    return w;
  }

  void for_each_param(const std::function<void(Param<T>&)>& fn) {
    enc.for_each_param(fn);
    for (auto& blk : blocks)
      for (auto& branch : blk) branch.for_each_param(fn);
    fn(head_w);
    fn(head_b);
    fn(inter_w);
    fn(inter_b);
  }

  int64_t param_count() {
    int64_t n = 0;
    for_each_param([&n](Param<T>& p) { n += p.value.numel(); });
    return n;
  }

  void zero_grads() {
    for_each_param([](Param<T>& p) { p.zero_grad(); });
  }
};

// ----------------------------------------------------------- hidden states

template <typename T>
struct StateEntry {
  Tensor<T> h;             // [Di,N]
  int64_t last_step = -1;  // frame index of the last update, -1 = fresh
};

// All per-patch hidden states of one video stream, keyed by
// (block, branch, slot). Size depends only on model + map geometry.
template <typename T>
struct StateStore {
  std::string video_id;
  int64_t frame_count = 0;
  int map_h = 0, map_w = 0;  // feature-map extents this store was built for
  std::vector<std::array<std::vector<StateEntry<T>>, 2>> states;

  static StateStore fresh(const DecoderConfig& cfg, int map_h, int map_w,
                          std::string video_id = "") {
    StateStore s;
    s.video_id = std::move(video_id);
    s.map_h = map_h;
    s.map_w = map_w;
    s.states.resize(static_cast<size_t>(cfg.blocks));
    for (int br = 0; br < 2; ++br) {
      PatchPlan plan = build_plan(map_h, map_w, cfg.window, cfg.shift, br == 1);
      for (int bi = 0; bi < cfg.blocks; ++bi) {
        auto& v = s.states[static_cast<size_t>(bi)][static_cast<size_t>(br)];
        v.resize(static_cast<size_t>(plan.slot_count()));
        for (auto& e : v) e.h = Tensor<T>({cfg.d_inner(), cfg.state_dim}, T(0));
      }
    }
    return s;
  }

  void reset() {
    frame_count = 0;
    for (auto& blk : states)
      for (auto& branch : blk)
        for (auto& e : branch) {
          std::fill(e.h.data.begin(), e.h.data.end(), T(0));
          e.last_step = -1;
        }
  }

  int64_t total_state_scalars() const {
    int64_t n = 0;
    for (const auto& blk : states)
      for (const auto& branch : blk)
        for (const auto& e : branch) n += e.h.numel();
    return n;
  }
};

// ------------------------------------------------------------ plain forward

template <typename T>
Tensor<T> encoder_forward(const DecoderWeights<T>& w, const Tensor<T>& frame) {
  require_ndim(frame, 3, "encoder frame");
  if (frame.shape[0] != 3)
    throw ShapeError("encoder expects 3-channel frames, got " + frame.shape_str());
  Tensor<T> e0 = ops::patch_embed(frame, w.enc.embed_w.value, w.enc.embed_b.value, w.cfg.patch);
  int de = e0.shape[0], hp = e0.shape[1], wp = e0.shape[2];
  Tensor<T> flat = ops::reshape(e0, {de, hp * wp});
  Tensor<T> hid = ops::silu(ops::linear(w.enc.mlp_w1.value, flat, &w.enc.mlp_b1.value));
  Tensor<T> out = ops::add(flat, ops::linear(w.enc.mlp_w2.value, hid, &w.enc.mlp_b2.value));
  return ops::reshape(out, {de, hp, wp});
}

// One block: unshifted pass then shifted pass. Slots are independent, so the
// per-slot loop may fan out over workers; every worker writes only its own
// slot's sequence and state, keeping the result identical to the serial run.
template <typename T>
Tensor<T> block_forward(const DecoderWeights<T>& w, int bi, const Tensor<T>& e,
                        StateStore<T>& store, int threads = 0) {
  int de = e.shape[0], hp = e.shape[1], wp = e.shape[2];
  Tensor<T> cur = e;
  for (int br = 0; br < 2; ++br) {
    PatchPlan plan = build_plan(hp, wp, w.cfg.window, w.cfg.shift, br == 1);
    auto& slots = store.states[static_cast<size_t>(bi)][static_cast<size_t>(br)];
    if (static_cast<int>(slots.size()) != plan.slot_count())
      throw ConfigError("state store holds " + std::to_string(slots.size()) + " slots, plan needs " +
                        std::to_string(plan.slot_count()));
    const TssWeights<T>& tw = w.blocks[static_cast<size_t>(bi)][static_cast<size_t>(br)];
    std::vector<Tensor<T>> seqs(static_cast<size_t>(plan.slot_count()));
    parallel_for(
        plan.slot_count(),
        [&](int k) {
          Tensor<T> seq = extract_flatten(cur, plan.rects[static_cast<size_t>(k)]);
          TssOut<T> out = tss_forward(tw, seq, slots[static_cast<size_t>(k)].h, w.cfg.scan_chunk);
          seqs[static_cast<size_t>(k)] = std::move(out.y);
          slots[static_cast<size_t>(k)].h = std::move(out.h_out);
          slots[static_cast<size_t>(k)].last_step = store.frame_count;
        },
        threads);
    cur = scatter_unflatten(seqs, plan, de);
  }
  return cur;
}

template <typename T>
Tensor<T> head_logits(const DecoderWeights<T>& w, const Tensor<T>& e, bool intermediate) {
  int de = e.shape[0], hp = e.shape[1], wp = e.shape[2];
  const Param<T>& pw = intermediate ? w.inter_w : w.head_w;
  const Param<T>& pb = intermediate ? w.inter_b : w.head_b;
  Tensor<T> logits = ops::linear(pw.value, ops::reshape(e, {de, hp * wp}), &pb.value);
  return ops::bilinear_upsample(ops::reshape(logits, {w.cfg.num_classes, hp, wp}), w.cfg.patch);
}

// Runs the block stack and final head over one already-encoded frame,
// advancing the store's frame counter.
template <typename T>
Tensor<T> decoder_forward(const DecoderWeights<T>& w, const Tensor<T>& e, StateStore<T>& store,
                          int threads = 0) {
  if (store.map_h != e.shape[1] || store.map_w != e.shape[2])
    throw ConfigError("state store was built for a " + std::to_string(store.map_h) + "x" +
                      std::to_string(store.map_w) + " feature map, frame provides " +
                      e.shape_str());
  Tensor<T> cur = e;
  for (int bi = 0; bi < w.cfg.blocks; ++bi) cur = block_forward(w, bi, cur, store, threads);
  store.frame_count++;
  return head_logits(w, cur, false);
}

// Full per-frame path: encode then decode.
template <typename T>
Tensor<T> segment_frame(const DecoderWeights<T>& w, const Tensor<T>& frame, StateStore<T>& store,
                        int threads = 0) {
  return decoder_forward(w, encoder_forward(w, frame), store, threads);
}

// -------------------------------------------------------------- tape forward

struct DecoderVars {
  Var embed_w = kNoVar, embed_b = kNoVar;
  Var mlp_w1 = kNoVar, mlp_b1 = kNoVar, mlp_w2 = kNoVar, mlp_b2 = kNoVar;
  std::vector<std::array<TssVars, 2>> blocks;
  Var head_w = kNoVar, head_b = kNoVar, inter_w = kNoVar, inter_b = kNoVar;
};

template <typename T>
DecoderVars bind_decoder(ParamBind<T>& bind, DecoderWeights<T>& w) {
  DecoderVars v;
  v.embed_w = bind.bind(w.enc.embed_w);
  v.embed_b = bind.bind(w.enc.embed_b);
  v.mlp_w1 = bind.bind(w.enc.mlp_w1);
  v.mlp_b1 = bind.bind(w.enc.mlp_b1);
  v.mlp_w2 = bind.bind(w.enc.mlp_w2);
  v.mlp_b2 = bind.bind(w.enc.mlp_b2);
  v.blocks.resize(w.blocks.size());
  for (size_t bi = 0; bi < w.blocks.size(); ++bi)
    for (int br = 0; br < 2; ++br)
      v.blocks[bi][static_cast<size_t>(br)] =
          bind_tss(bind, w.blocks[bi][static_cast<size_t>(br)]);
  v.head_w = bind.bind(w.head_w);
  v.head_b = bind.bind(w.head_b);
  v.inter_w = bind.bind(w.inter_w);
  v.inter_b = bind.bind(w.inter_b);
  return v;
}

// Hidden states as tape vars; same indexing as StateStore.
struct StateVars {
  std::vector<std::array<std::vector<Var>, 2>> v;
};

template <typename T>
StateVars bind_store(Tape<T>& tp, const StateStore<T>& store) {
  StateVars sv;
  sv.v.resize(store.states.size());
  for (size_t bi = 0; bi < store.states.size(); ++bi)
    for (int br = 0; br < 2; ++br)
      for (const auto& e : store.states[bi][static_cast<size_t>(br)])
        sv.v[bi][static_cast<size_t>(br)].push_back(tp.leaf(e.h));
  return sv;
}

template <typename T>
Var encoder_forward_var(Tape<T>& tp, const DecoderVars& v, const DecoderWeights<T>& w, Var frame) {
  Var e0 = ag::patch_embed(tp, frame, v.embed_w, v.embed_b, w.cfg.patch);
  int de = tp.val(e0).shape[0], hp = tp.val(e0).shape[1], wp = tp.val(e0).shape[2];
  Var flat = ag::reshape(tp, e0, {de, hp * wp});
  Var hid = ag::silu(tp, ag::linear(tp, v.mlp_w1, flat, v.mlp_b1));
  Var out = ag::add(tp, flat, ag::linear(tp, v.mlp_w2, hid, v.mlp_b2));
  return ag::reshape(tp, out, {de, hp, wp});
}

// Slots run sequentially on the tape: gradient accumulation order stays
// fixed, which keeps training runs byte-reproducible.
template <typename T>
Var block_forward_var(Tape<T>& tp, const DecoderVars& v, const DecoderWeights<T>& w, int bi, Var e,
                      StateVars& sv) {
  int hp = tp.val(e).shape[1], wp = tp.val(e).shape[2];
  Var cur = e;
  for (int br = 0; br < 2; ++br) {
    PatchPlan plan = build_plan(hp, wp, w.cfg.window, w.cfg.shift, br == 1);
    auto& slots = sv.v[static_cast<size_t>(bi)][static_cast<size_t>(br)];
    if (static_cast<int>(slots.size()) != plan.slot_count())
      throw ConfigError("state vars hold " + std::to_string(slots.size()) + " slots, plan needs " +
                        std::to_string(plan.slot_count()));
    const TssWeights<T>& tw = w.blocks[static_cast<size_t>(bi)][static_cast<size_t>(br)];
    const TssVars& tv = v.blocks[static_cast<size_t>(bi)][static_cast<size_t>(br)];
    std::vector<Var> seqs(static_cast<size_t>(plan.slot_count()), kNoVar);
    for (int k = 0; k < plan.slot_count(); ++k) {
      Var seq = ag::extract_flatten(tp, cur, plan.rects[static_cast<size_t>(k)]);
      auto [y, hout] = ag::tss_forward(tp, tv, tw, seq, slots[static_cast<size_t>(k)],
                                       w.cfg.scan_chunk);
      seqs[static_cast<size_t>(k)] = y;
      slots[static_cast<size_t>(k)] = hout;
    }
    cur = ag::scatter_unflatten(tp, seqs, plan);
  }
  return cur;
}

template <typename T>
Var head_logits_var(Tape<T>& tp, const DecoderVars& v, const DecoderWeights<T>& w, Var e,
                    bool intermediate) {
  int de = tp.val(e).shape[0], hp = tp.val(e).shape[1], wp = tp.val(e).shape[2];
  Var pw = intermediate ? v.inter_w : v.head_w;
  Var pb = intermediate ? v.inter_b : v.head_b;
  Var logits = ag::linear(tp, pw, ag::reshape(tp, e, {de, hp * wp}), pb);
  return ag::bilinear_upsample(tp, ag::reshape(tp, logits, {w.cfg.num_classes, hp, wp}),
                               w.cfg.patch);
}

template <typename T>
Var decoder_forward_var(Tape<T>& tp, const DecoderVars& v, const DecoderWeights<T>& w, Var e,
                        StateVars& sv) {
  Var cur = e;
  for (int bi = 0; bi < w.cfg.blocks; ++bi) cur = block_forward_var(tp, v, w, bi, cur, sv);
  return head_logits_var(tp, v, w, cur, false);
}

// ------------------------------------------------------------- persistence

namespace detail {

inline std::string manifest_path(const std::string& dir) {
  return (std::filesystem::path(dir) / "manifest.txt").string();
}

inline std::map<std::string, std::string> read_kv_lines(const std::string& path,
                                                        std::vector<std::string>* raw_lines) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (raw_lines) raw_lines->push_back(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline int manifest_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError("manifest is missing key: " + key);
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw IoError("manifest key " + key + " is not an integer: " + it->second);
  }
}

inline DecoderConfig config_from_manifest(const std::map<std::string, std::string>& kv) {
  DecoderConfig cfg;
  cfg.blocks = manifest_int(kv, "model.blocks");
  cfg.window = manifest_int(kv, "model.window");
  cfg.shift = manifest_int(kv, "model.shift");
  cfg.embed_dim = manifest_int(kv, "model.embed_dim");
  cfg.num_classes = manifest_int(kv, "model.num_classes");
  cfg.expand = manifest_int(kv, "model.expand");
  cfg.state_dim = manifest_int(kv, "model.state_dim");
  cfg.conv_kernel = manifest_int(kv, "model.conv_kernel");
  cfg.patch = manifest_int(kv, "model.patch");
  cfg.scan_chunk = manifest_int(kv, "model.scan_chunk");
  return cfg;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& dir, DecoderWeights<T>& w) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream os(detail::manifest_path(dir));
  if (!os) throw IoError("cannot write checkpoint manifest in " + dir);
  os << "format = tv3s-checkpoint-v1\n";
  for (auto& [k, v] : w.cfg.items()) os << k << " = " << v << "\n";
  int idx = 0;
  w.for_each_param([&](Param<T>& p) {
    char file[32];
    std::snprintf(file, sizeof(file), "t%04d.tvt", idx++);
    tvt1::write((fs::path(dir) / file).string(), p.value);
    os << "tensor " << p.name << " = " << file << "\n";
  });
  if (!os) throw IoError("checkpoint manifest write failed in " + dir);
}

inline DecoderConfig checkpoint_config(const std::string& dir) {
  auto kv = detail::read_kv_lines(detail::manifest_path(dir), nullptr);
  auto it = kv.find("format");
  if (it == kv.end() || it->second != "tv3s-checkpoint-v1")
    throw IoError("not a checkpoint directory: " + dir);
  return detail::config_from_manifest(kv);
}

// Loads a checkpoint. If `expected` is given, its configuration must match
// the manifest exactly; any tensor whose stored shape disagrees with the
// model is refused by name.
template <typename T>
DecoderWeights<T> load_checkpoint(const std::string& dir, const DecoderConfig* expected = nullptr) {
  namespace fs = std::filesystem;
  std::vector<std::string> lines;
  auto kv = detail::read_kv_lines(detail::manifest_path(dir), &lines);
  auto fit = kv.find("format");
  if (fit == kv.end() || fit->second != "tv3s-checkpoint-v1")
    throw IoError("not a checkpoint directory: " + dir);
  DecoderConfig cfg = detail::config_from_manifest(kv);
  if (expected) {
    // scan_chunk is an execution choice, not model identity: a checkpoint may
    // be run with any chunking.
    std::ostringstream msg;
    bool diff = false;
    auto a = cfg.items(), b = expected->items();
    for (size_t i = 0; i < a.size(); ++i)
      if (a[i].first != "model.scan_chunk" && a[i].second != b[i].second) {
        diff = true;
        msg << " " << a[i].first << " checkpoint=" << a[i].second << " requested=" << b[i].second;
      }
    if (diff) throw ConfigError("checkpoint configuration mismatch:" + msg.str());
  }
  cfg.validate();

  // Tensor name -> file map from the "tensor <name> = <file>" lines.
  std::map<std::string, std::string> files;
  for (const std::string& line : lines) {
    if (line.rfind("tensor ", 0) != 0) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed tensor line in manifest: " + line);
    std::string name = line.substr(7, eq - 7);
    std::string file = line.substr(eq + 1);
    auto trim = [](std::string s) {
      size_t x = s.find_first_not_of(" \t");
      size_t y = s.find_last_not_of(" \t\r");
      return x == std::string::npos ? std::string{} : s.substr(x, y - x + 1);
    };
    files[trim(name)] = trim(file);
  }

  DecoderWeights<T> w = DecoderWeights<T>::init(cfg, 0);
  w.for_each_param([&](Param<T>& p) {
    auto it = files.find(p.name);
    if (it == files.end()) throw IoError("checkpoint is missing tensor " + p.name);
    Tensor<T> t = tvt1::read<T>((fs::path(dir) / it->second).string());
    if (t.shape != p.value.shape)
      throw ConfigError("checkpoint tensor " + p.name + " has shape " + t.shape_str() +
                        ", model expects " + p.value.shape_str());
    p.value = std::move(t);
    files.erase(it);
  });
  if (!files.empty()) throw IoError("checkpoint has unknown tensor " + files.begin()->first);
  return w;
}

// State stores serialize the same way: manifest plus one tensor per slot.
template <typename T>
void save_state_store(const std::string& dir, const StateStore<T>& store) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream os(detail::manifest_path(dir));
  if (!os) throw IoError("cannot write state manifest in " + dir);
  os << "format = tv3s-state-v1\n";
  os << "video = " << store.video_id << "\n";
  os << "frames = " << store.frame_count << "\n";
  os << "map_h = " << store.map_h << "\n";
  os << "map_w = " << store.map_w << "\n";
  os << "blocks = " << store.states.size() << "\n";
  int idx = 0;
  for (size_t bi = 0; bi < store.states.size(); ++bi)
    for (int br = 0; br < 2; ++br) {
      const auto& v = store.states[bi][static_cast<size_t>(br)];
      for (size_t k = 0; k < v.size(); ++k) {
        char file[32];
        std::snprintf(file, sizeof(file), "s%05d.tvt", idx++);
        tvt1::write((fs::path(dir) / file).string(), v[k].h);
        os << "state " << bi << " " << br << " " << k << " " << v[k].last_step << " = " << file
           << "\n";
      }
    }
  if (!os) throw IoError("state manifest write failed in " + dir);
}

template <typename T>
StateStore<T> load_state_store(const std::string& dir, const DecoderConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<std::string> lines;
  auto kv = detail::read_kv_lines(detail::manifest_path(dir), &lines);
  auto fit = kv.find("format");
  if (fit == kv.end() || fit->second != "tv3s-state-v1")
    throw IoError("not a state-store directory: " + dir);
  int map_h = detail::manifest_int(kv, "map_h");
  int map_w = detail::manifest_int(kv, "map_w");
  if (detail::manifest_int(kv, "blocks") != cfg.blocks)
    throw ConfigError("state store holds " + kv.at("blocks") + " blocks, model has " +
                      std::to_string(cfg.blocks));
  StateStore<T> s = StateStore<T>::fresh(cfg, map_h, map_w, kv.count("video") ? kv.at("video") : "");
  s.frame_count = detail::manifest_int(kv, "frames");

  std::set<std::string> seen;
  for (const std::string& line : lines) {
    if (line.rfind("state ", 0) != 0) continue;
    std::istringstream ls(line.substr(6));
    size_t bi, br, k;
    int64_t last_step;
    std::string eq, file;
    if (!(ls >> bi >> br >> k >> last_step >> eq >> file) || eq != "=")
      throw IoError("malformed state line in manifest: " + line);
    if (bi >= s.states.size() || br >= 2 || k >= s.states[bi][br].size())
      throw ConfigError("state slot (" + std::to_string(bi) + "," + std::to_string(br) + "," +
                        std::to_string(k) + ") does not exist in this geometry");
    Tensor<T> h = tvt1::read<T>((fs::path(dir) / file).string());
    if (h.shape != s.states[bi][br][k].h.shape)
      throw ConfigError("state tensor for slot (" + std::to_string(bi) + "," + std::to_string(br) +
                        "," + std::to_string(k) + ") has shape " + h.shape_str() +
                        ", model expects " + s.states[bi][br][k].h.shape_str());
    s.states[bi][br][k].h = std::move(h);
    s.states[bi][br][k].last_step = last_step;
    seen.insert(std::to_string(bi) + "/" + std::to_string(br) + "/" + std::to_string(k));
  }
  int64_t expect = 0;
  for (const auto& blk : s.states)
    for (const auto& branch : blk) expect += static_cast<int64_t>(branch.size());
  if (static_cast<int64_t>(seen.size()) != expect)
    throw IoError("state store has " + std::to_string(seen.size()) + " slots on disk, geometry needs " +
                  std::to_string(expect));
  return s;
}

}  // namespace tv3s
