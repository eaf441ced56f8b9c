#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "tv3s/dataio.hpp"
#include "tv3s/decoder.hpp"

// Dual-loss clip training: every clip frame contributes a weighted
// cross-entropy through the auxiliary head, the newest frame adds an
// unweighted one through the final head. AdamW with a poly learning-rate
// schedule; hidden states stay attached across the clip frames so the
// temporal path is trained, unless explicitly detached.
namespace tv3s {

struct TrainConfig {
  double lambda = 0.5;                      // weight of the per-frame auxiliary terms
  std::vector<int> offsets = {-9, -6, -3, 0};  // clip frames relative to the anchor
  double base_lr = 6e-5;
  int max_iters = 1000;
  double poly_power = 0.9;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  int batch = 1;
  bool aux_includes_final = true;  // newest frame gets both loss terms
  bool detach_states = false;      // cut gradient flow at the frame boundary
  bool augment = false;            // random horizontal flip (and crop, if set)
  int crop_h = 0;                  // 0 = no crop; otherwise clip-wide random crop
  int crop_w = 0;

  void validate() const {
    if (lambda < 0) throw ConfigError("train.lambda must be >= 0");
    if (offsets.empty() || offsets.back() != 0)
      throw ConfigError("train.offsets must end at 0");
    for (size_t i = 1; i < offsets.size(); ++i)
      if (offsets[i] <= offsets[i - 1])
        throw ConfigError("train.offsets must be strictly increasing");
    if (base_lr <= 0) throw ConfigError("train.lr must be > 0");
    if (max_iters < 1) throw ConfigError("train.iters must be >= 1");
    if (poly_power <= 0) throw ConfigError("train.poly_power must be > 0");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (crop_h < 0 || crop_w < 0 || (crop_h > 0) != (crop_w > 0))
      throw ConfigError("train.crop_h and train.crop_w must both be set or both be 0");
  }

  // Frames a video must have so every offset lands inside it.
  int span() const { return 1 - offsets.front(); }
};

inline double poly_lr(int64_t iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.max_iters)
    throw ConfigError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(cfg.max_iters) + "]");
  double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iters);
  return cfg.base_lr * std::pow(frac, cfg.poly_power);
}

// ------------------------------------------------------------- clip forward

struct ClipLoss {
  Var loss = kNoVar;
  double ce_final = 0.0;
  double ce_inter = 0.0;         // unweighted sum of the auxiliary terms
  std::vector<Var> frame_vars;   // the clip frames' input leaves, oldest first
};

// Runs the clip oldest->newest through one tape, carrying hidden states.
// total = lambda * ce_inter + ce_final.
template <typename T>
ClipLoss clip_loss(Tape<T>& tp, const DecoderVars& dv, const DecoderWeights<T>& w,
                   const std::vector<Tensor<T>>& frames, const std::vector<ClassMask>& masks,
                   const TrainConfig& cfg, StateVars& sv) {
  if (frames.empty() || frames.size() != masks.size())
    throw ConfigError("clip_loss: got " + std::to_string(frames.size()) + " frames and " +
                      std::to_string(masks.size()) + " masks");
  std::vector<std::pair<T, Var>> terms;
  ClipLoss out;
  for (size_t f = 0; f < frames.size(); ++f) {
    Var in = tp.leaf(frames[f]);
    out.frame_vars.push_back(in);
    Var cur = encoder_forward_var(tp, dv, w, in);
    for (int bi = 0; bi < w.cfg.blocks; ++bi) cur = block_forward_var(tp, dv, w, bi, cur, sv);
    if (cfg.detach_states)
      for (auto& blk : sv.v)
        for (auto& branch : blk)
          for (Var& h : branch) h = tp.leaf(tp.val(h));
    bool last = f + 1 == frames.size();
    if (!last || cfg.aux_includes_final) {
      Var aux = ag::softmax_xent(tp, head_logits_var(tp, dv, w, cur, true), masks[f],
                                 kIgnoreLabel);
      out.ce_inter += static_cast<double>(tp.val(aux).data[0]);
      if (cfg.lambda > 0) terms.push_back({static_cast<T>(cfg.lambda), aux});
    }
    if (last) {
      Var fin = ag::softmax_xent(tp, head_logits_var(tp, dv, w, cur, false), masks[f],
                                 kIgnoreLabel);
      out.ce_final = static_cast<double>(tp.val(fin).data[0]);
      terms.push_back({T(1), fin});
    }
  }
  out.loss = ag::scalar_combine(tp, terms);
  return out;
}

// ----------------------------------------------------------------- optimizer

// Decoupled weight decay Adam. Moment buffers are kept in double regardless
// of the parameter type and are keyed by parameter registration order.
template <typename T>
class AdamW {
 public:
  AdamW(DecoderWeights<T>& w, const TrainConfig& cfg) : cfg_(cfg) {
    w.for_each_param([this](Param<T>& p) {
      m_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
    });
  }

  int64_t steps_taken() const { return t_; }

  void step(DecoderWeights<T>& w, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    size_t idx = 0;
    w.for_each_param([&](Param<T>& p) {
      if (idx >= m_.size()) throw ConfigError("optimizer state does not match the model");
      std::vector<double>& m = m_[idx];
      std::vector<double>& v = v_[idx];
      ++idx;
      for (size_t i = 0; i < m.size(); ++i) {
        double g = static_cast<double>(p.grad.data[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.adam_eps);
        double value = static_cast<double>(p.value.data[i]);
        p.value.data[i] = static_cast<T>(value - lr * (update + cfg_.weight_decay * value));
      }
    });
    if (idx != m_.size()) throw ConfigError("optimizer state does not match the model");
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// ----------------------------------------------------------------- one step

struct StepResult {
  double loss = 0.0;
  double ce_final = 0.0;
  double ce_inter = 0.0;
};

// One clip (or batch of clips), one update. Each clip starts from a fresh
// StateStore. If any loss comes back non-finite the step aborts before the
// optimizer or parameters are touched.
template <typename T>
StepResult train_step(DecoderWeights<T>& w, AdamW<T>& opt, double lr,
                      const std::vector<std::vector<Tensor<T>>>& clip_frames,
                      const std::vector<std::vector<ClassMask>>& clip_masks,
                      const TrainConfig& cfg) {
  if (clip_frames.empty() || clip_frames.size() != clip_masks.size())
    throw ConfigError("train_step: empty batch or frame/mask count mismatch");
  w.zero_grads();
  StepResult r;
  for (size_t b = 0; b < clip_frames.size(); ++b) {
    Tape<T> tp;
    ParamBind<T> bind(tp);
    DecoderVars dv = bind_decoder(bind, w);
    int hp = clip_frames[b][0].shape[1] / w.cfg.patch;
    int wp = clip_frames[b][0].shape[2] / w.cfg.patch;
    auto fresh = StateStore<T>::fresh(w.cfg, hp, wp);
    StateVars sv = bind_store(tp, fresh);
    ClipLoss cl = clip_loss(tp, dv, w, clip_frames[b], clip_masks[b], cfg, sv);
    double loss = static_cast<double>(tp.val(cl.loss).data[0]);
    if (!std::isfinite(loss))
      throw NumericError("non-finite loss " + std::to_string(loss) + " in batch clip " +
                         std::to_string(b) + "; step aborted");
    tp.backward(cl.loss);
    bind.harvest();
    r.loss += loss;
    r.ce_final += cl.ce_final;
    r.ce_inter += cl.ce_inter;
  }
  double inv = 1.0 / static_cast<double>(clip_frames.size());
  r.loss *= inv;
  r.ce_final *= inv;
  r.ce_inter *= inv;
  if (clip_frames.size() > 1)
    w.for_each_param([&](Param<T>& p) {
      for (auto& g : p.grad.data) g = static_cast<T>(static_cast<double>(g) * inv);
    });
  opt.step(w, lr);
  return r;
}

// ------------------------------------------------------------ clip sampling

// Mirrors frames and masks left-right; labels move with their pixels.
template <typename T>
void flip_clip(std::vector<Tensor<T>>& frames, std::vector<ClassMask>& masks) {
  for (Tensor<T>& f : frames) {
    int wpix = f.shape[2];
    for (int ch = 0; ch < f.shape[0]; ++ch)
      for (int y = 0; y < f.shape[1]; ++y)
        for (int x = 0; x < wpix / 2; ++x) std::swap(f(ch, y, x), f(ch, y, wpix - 1 - x));
  }
  for (ClassMask& m : masks)
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w / 2; ++x) std::swap(m.at(y, x), m.at(y, m.w - 1 - x));
}

// Cuts the same window out of every frame and mask of a clip.
template <typename T>
void crop_clip(std::vector<Tensor<T>>& frames, std::vector<ClassMask>& masks, int ch, int cw,
               int oy, int ox) {
  for (Tensor<T>& f : frames) {
    if (oy < 0 || ox < 0 || oy + ch > f.shape[1] || ox + cw > f.shape[2])
      throw ConfigError("crop " + std::to_string(ch) + "x" + std::to_string(cw) + " at (" +
                        std::to_string(oy) + "," + std::to_string(ox) +
                        ") exceeds the frame " + f.shape_str());
    Tensor<T> out({f.shape[0], ch, cw});
    for (int c = 0; c < f.shape[0]; ++c)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) out(c, y, x) = f(c, oy + y, ox + x);
    f = std::move(out);
  }
  for (ClassMask& m : masks) {
    ClassMask out(ch, cw);
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) out.at(y, x) = m.at(oy + y, ox + x);
    m = std::move(out);
  }
}

// Picks a video and anchor so every configured offset lands inside it.
template <typename T>
void sample_clip(const std::vector<VideoClip>& videos, const TrainConfig& cfg, Rng& rng,
                 std::vector<Tensor<T>>& frames, std::vector<ClassMask>& masks) {
  std::vector<size_t> eligible;
  for (size_t i = 0; i < videos.size(); ++i)
    if (static_cast<int>(videos[i].frames.size()) >= cfg.span()) eligible.push_back(i);
  if (eligible.empty())
    throw ConfigError("no video has the " + std::to_string(cfg.span()) +
                      " frames the training offsets require");
  const VideoClip& v = videos[eligible[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int64_t>(eligible.size()) - 1))]];
  int64_t anchor = rng.uniform_int(cfg.span() - 1, static_cast<int64_t>(v.frames.size()) - 1);
  frames.clear();
  masks.clear();
  for (int off : cfg.offsets) {
    size_t idx = static_cast<size_t>(anchor + off);
    frames.push_back(cast_tensor<T>(v.frames[idx]));
    masks.push_back(v.masks[idx]);
  }
  if (cfg.augment && cfg.crop_h > 0) {
    int oy = static_cast<int>(rng.uniform_int(0, frames[0].shape[1] - cfg.crop_h));
    int ox = static_cast<int>(rng.uniform_int(0, frames[0].shape[2] - cfg.crop_w));
    crop_clip(frames, masks, cfg.crop_h, cfg.crop_w, oy, ox);
  }
  if (cfg.augment && rng.coin()) flip_clip(frames, masks);
}

// ------------------------------------------------------------ training loop

// Runs cfg.max_iters updates, logging one parseable line per step. Returns
// the last step's result.
template <typename T>
StepResult train_loop(DecoderWeights<T>& w, const std::vector<VideoClip>& videos,
                      const TrainConfig& cfg, std::ostream& log) {
  cfg.validate();
  AdamW<T> opt(w, cfg);
  Rng rng(substream_seed(cfg.seed, 0x7261117ull));
  StepResult r;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    std::vector<std::vector<Tensor<T>>> frames(static_cast<size_t>(cfg.batch));
    std::vector<std::vector<ClassMask>> masks(static_cast<size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b)
      sample_clip(videos, cfg, rng, frames[static_cast<size_t>(b)],
                  masks[static_cast<size_t>(b)]);
    double lr = poly_lr(iter, cfg);
    r = train_step(w, opt, lr, frames, masks, cfg);
    log << "iter=" << iter << " lr=" << lr << " loss=" << r.loss << " ce_final=" << r.ce_final
        << " ce_inter=" << r.ce_inter << "\n";
  }
  return r;
}

}  // namespace tv3s
