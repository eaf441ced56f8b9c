#include "tv3s/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "tv3s/config.hpp"
#include "tv3s/dataio.hpp"
#include "tv3s/metrics.hpp"
#include "tv3s/training.hpp"

namespace tv3s {

namespace {

namespace fs = std::filesystem;

// The CLI runs everything in float32; the double path exists for the
// verification suites, which call the library directly.
using Scalar = float;

std::string trimmed(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  size_t b = s.find_last_not_of(" \t");
  return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

Config build_config(const std::optional<std::string>& file, const std::vector<std::string>& sets) {
  Config cfg = file ? Config::from_file(*file) : Config{};
  for (const std::string& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + s);
    std::string key = trimmed(s.substr(0, eq));
    if (key.empty()) throw ConfigError("--set expects key=value, got: " + s);
    cfg.set(key, trimmed(s.substr(eq + 1)));
  }
  return cfg;
}

DecoderConfig model_from(const Config& c) {
  DecoderConfig m;
  m.blocks = c.get_int("model.blocks", m.blocks);
  m.window = c.get_int("model.window", m.window);
  m.shift = c.get_int("model.shift", m.window / 2);
  m.embed_dim = c.get_int("model.embed_dim", m.embed_dim);
  m.num_classes = c.get_int("model.num_classes", m.num_classes);
  m.expand = c.get_int("model.expand", m.expand);
  m.state_dim = c.get_int("model.state_dim", m.state_dim);
  m.conv_kernel = c.get_int("model.conv_kernel", m.conv_kernel);
  m.patch = c.get_int("model.patch", m.patch);
  m.scan_chunk = c.get_int("model.scan_chunk", m.scan_chunk);
  m.validate();
  return m;
}

TrainConfig train_from(const Config& c) {
  TrainConfig t;
  t.lambda = c.get_double("train.lambda", t.lambda);
  t.offsets = c.get_int_list("train.offsets", t.offsets);
  t.base_lr = c.get_double("train.lr", t.base_lr);
  t.max_iters = c.get_int("train.iters", t.max_iters);
  t.poly_power = c.get_double("train.poly_power", t.poly_power);
  t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
  t.beta1 = c.get_double("train.beta1", t.beta1);
  t.beta2 = c.get_double("train.beta2", t.beta2);
  t.adam_eps = c.get_double("train.adam_eps", t.adam_eps);
  t.seed = c.get_u64("train.seed", t.seed);
  t.batch = c.get_int("train.batch", t.batch);
  t.aux_includes_final = c.get_bool("train.aux_final", t.aux_includes_final);
  t.detach_states = c.get_bool("train.detach", t.detach_states);
  t.augment = c.get_bool("train.augment", t.augment);
  t.crop_h = c.get_int("train.crop_h", t.crop_h);
  t.crop_w = c.get_int("train.crop_w", t.crop_w);
  t.validate();
  return t;
}

SynthSpec data_from(const Config& c) {
  SynthSpec s;
  s.seed = c.get_u64("data.seed", s.seed);
  s.num_videos = c.get_int("data.videos", s.num_videos);
  s.frames = c.get_int("data.frames", s.frames);
  s.height = c.get_int("data.height", s.height);
  s.width = c.get_int("data.width", s.width);
  s.num_classes = c.get_int("data.classes", s.num_classes);
  s.min_size = c.get_int("data.min_size", s.min_size);
  s.max_size = c.get_int("data.max_size", s.max_size);
  s.min_speed = c.get_double("data.min_speed", s.min_speed);
  s.max_speed = c.get_double("data.max_speed", s.max_speed);
  s.noise = c.get_double("data.noise", s.noise);
  s.occlusion = c.get_bool("data.occlusion", s.occlusion);
  s.validate();
  return s;
}

struct EvalOptions {
  int reset_every = 0;  // 0 = never reset: full streaming state
  bool strict = true;
  std::vector<int> vc = {8, 16};
};

EvalOptions eval_from(const Config& c) {
  EvalOptions e;
  e.reset_every = c.get_int("eval.reset_every", e.reset_every);
  e.strict = c.get_bool("eval.strict", e.strict);
  e.vc = c.get_int_list("eval.vc", e.vc);
  if (e.reset_every < 0) throw ConfigError("eval.reset_every must be >= 0");
  for (int n : e.vc)
    if (n < 1) throw ConfigError("eval.vc entries must be >= 1");
  return e;
}

// Every command parses all namespaces so that any leftover key is a typo.
void check_consumed(const Config& cfg) {
  (void)model_from(cfg);
  (void)train_from(cfg);
  (void)data_from(cfg);
  (void)eval_from(cfg);
  auto unused = cfg.unused_keys();
  if (!unused.empty()) {
    std::string msg = "unknown configuration key(s):";
    for (const auto& k : unused) msg += " " + k;
    throw ConfigError(msg);
  }
}

void check_geometry(const DecoderConfig& m, int h, int w, const std::string& what) {
  if (h % m.patch != 0 || w % m.patch != 0)
    throw ConfigError(what + " is " + std::to_string(h) + "x" + std::to_string(w) +
                      ", not a multiple of the patch size " + std::to_string(m.patch));
  if ((h / m.patch) % m.window != 0 || (w / m.patch) % m.window != 0)
    throw ConfigError(what + " gives a " + std::to_string(h / m.patch) + "x" +
                      std::to_string(w / m.patch) + " feature map, not a multiple of the window " +
                      std::to_string(m.window));
}

DecoderWeights<Scalar> load_model(const std::string& ckpt, const Config& cfg) {
  DecoderConfig expected;
  const DecoderConfig* exp_ptr = nullptr;
  if (cfg.has_prefix("model.")) {
    expected = model_from(cfg);
    exp_ptr = &expected;
  }
  DecoderWeights<Scalar> w = load_checkpoint<Scalar>(ckpt, exp_ptr);
  if (cfg.has("model.scan_chunk"))
    w.cfg.scan_chunk = cfg.get_int("model.scan_chunk", w.cfg.scan_chunk);
  return w;
}

std::string mask_file(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%04d.tvt", t);
  return buf;
}

// Streams one video through the model; logits are optionally collected, the
// store optionally round-trips through disk after every frame.
std::vector<ClassMask> run_video(const DecoderWeights<Scalar>& w, const VideoClip& clip,
                                 int reset_every, const std::string& state_dir,
                                 std::vector<Tensor<Scalar>>* logits_out) {
  int map_h = clip.frames[0].shape[1] / w.cfg.patch;
  int map_w = clip.frames[0].shape[2] / w.cfg.patch;
  StateStore<Scalar> store = StateStore<Scalar>::fresh(w.cfg, map_h, map_w, clip.id);
  std::vector<ClassMask> preds;
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    if (reset_every > 0 && t > 0 && t % static_cast<size_t>(reset_every) == 0) store.reset();
    Tensor<Scalar> logits = segment_frame(w, clip.frames[t], store);
    preds.push_back(ops::argmax_channel(logits));
    if (logits_out) logits_out->push_back(std::move(logits));
    if (!state_dir.empty()) {
      save_state_store(state_dir, store);
      store = load_state_store<Scalar>(state_dir, w.cfg);
    }
  }
  return preds;
}

struct EvalReport {
  MetricValue miou_value;
  std::vector<std::pair<int, MvcResult>> mvcs;
  int videos = 0;
};

std::string value_str(double v, bool defined) {
  if (!defined) return "nan";
  std::ostringstream os;
  os << v;
  return os.str();
}

void print_report(const EvalReport& r, std::ostream& os) {
  os << "metric=miou value=" << value_str(r.miou_value.value, r.miou_value.defined)
     << " videos=" << r.videos << " skipped=0\n";
  for (const auto& [n, mv] : r.mvcs)
    os << "metric=mvc" << n << " value=" << value_str(mv.value, mv.defined)
       << " videos=" << mv.videos_used << " skipped=" << mv.videos_skipped << "\n";
}

// Shared by `eval` and the context sweep of `bench`. Predictions come from
// the model unless pred_dir is set, in which case they are read from disk.
EvalReport run_eval(const DecoderWeights<Scalar>* w, const std::string& pred_dir,
                    const std::string& data_dir, const EvalOptions& opts, int num_classes) {
  auto entries = read_index(data_dir);
  ConfusionMatrix cm(num_classes);
  std::vector<std::vector<ClassMask>> truths, preds;
  for (const IndexEntry& e : entries) {
    VideoClip clip = load_video(data_dir, e);
    std::vector<ClassMask> p;
    if (w) {
      check_geometry(w->cfg, e.h, e.w, "video " + e.id);
      p = run_video(*w, clip, opts.reset_every, "", nullptr);
    } else {
      for (int t = 0; t < e.frames; ++t)
        p.push_back(read_mask((fs::path(pred_dir) / e.id / mask_file(t)).string()));
    }
    for (size_t t = 0; t < clip.masks.size(); ++t) cm.update(clip.masks[t], p[t]);
    truths.push_back(std::move(clip.masks));
    preds.push_back(std::move(p));
  }
  EvalReport r;
  r.videos = static_cast<int>(entries.size());
  r.miou_value = miou(cm);
  for (int n : opts.vc) r.mvcs.emplace_back(n, mvc(truths, preds, n, opts.strict));
  return r;
}

// Decoder-only throughput: features are encoded up front, the timed loop
// covers the block stack and head. The encoder is excluded by design.
double decoder_fps(const DecoderWeights<Scalar>& w, int frames, int h, int wpix) {
  Rng rng(1);
  std::vector<Tensor<Scalar>> feats;
  for (int t = 0; t < frames; ++t) {
    Tensor<Scalar> frame({3, h, wpix});
    for (auto& v : frame.data) v = static_cast<Scalar>(rng.uniform());
    feats.push_back(encoder_forward(w, frame));
  }
  StateStore<Scalar> store = StateStore<Scalar>::fresh(w.cfg, h / w.cfg.patch, wpix / w.cfg.patch);
  auto t0 = std::chrono::steady_clock::now();
  for (const auto& e : feats) (void)decoder_forward(w, e, store);
  auto t1 = std::chrono::steady_clock::now();
  double secs = std::chrono::duration<double>(t1 - t0).count();
  return secs > 0 ? frames / secs : 0.0;
}

// ----------------------------------------------------------------- commands

int run_gen_data(const Config& cfg, const std::string& out_dir, std::ostream& out) {
  SynthSpec spec = data_from(cfg);
  check_consumed(cfg);
  gen_dataset(spec, out_dir);
  out << "wrote " << spec.num_videos << " videos x " << spec.frames << " frames (" << spec.height
      << "x" << spec.width << ", " << spec.num_classes << " classes) to " << out_dir << "\n";
  return 0;
}

int run_train(const Config& cfg, const std::string& data_dir, const std::string& out_dir,
              std::ostream& out) {
  DecoderConfig model = model_from(cfg);
  TrainConfig tc = train_from(cfg);
  check_consumed(cfg);

  auto entries = read_index(data_dir);
  std::vector<VideoClip> videos;
  for (const IndexEntry& e : entries) {
    check_geometry(model, e.h, e.w, "video " + e.id);
    videos.push_back(load_video(data_dir, e));
  }
  DecoderWeights<Scalar> w = DecoderWeights<Scalar>::init(model, tc.seed);
  train_loop(w, videos, tc, out);
  save_checkpoint(out_dir, w);
  out << "saved checkpoint to " << out_dir << "\n";
  return 0;
}

int run_infer(const Config& cfg, const std::string& ckpt, const std::string& data_dir,
              const std::string& out_dir, bool stream, std::string state_dir, int reset_every,
              bool replay_check, const std::string& only_video, std::ostream& out) {
  DecoderWeights<Scalar> w = load_model(ckpt, cfg);
  EvalOptions opts = eval_from(cfg);
  check_consumed(cfg);
  if (reset_every < 0) throw ConfigError("--reset-every must be >= 0");
  if (reset_every == 0) reset_every = opts.reset_every;
  if (replay_check) stream = true;
  if (stream && state_dir.empty()) state_dir = (fs::path(out_dir) / "_state").string();

  auto entries = read_index(data_dir);
  if (!only_video.empty()) {
    std::vector<IndexEntry> filtered;
    for (const IndexEntry& e : entries)
      if (e.id == only_video) filtered.push_back(e);
    if (filtered.empty())
      throw ConfigError("video " + only_video + " is not in the dataset index of " + data_dir);
    entries = std::move(filtered);
  }

  for (const IndexEntry& e : entries) {
    check_geometry(w.cfg, e.h, e.w, "video " + e.id);
    VideoClip clip = load_video(data_dir, e);
    std::string vstate = stream ? (fs::path(state_dir) / e.id).string() : std::string{};
    std::vector<Tensor<Scalar>> logits;
    std::vector<ClassMask> preds =
        run_video(w, clip, reset_every, vstate, replay_check ? &logits : nullptr);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / e.id, ec);
    for (size_t t = 0; t < preds.size(); ++t)
      write_mask((fs::path(out_dir) / e.id / mask_file(static_cast<int>(t))).string(), preds[t]);

    if (replay_check) {
      // Uninterrupted second pass: identical math, no disk round trips.
      std::vector<Tensor<Scalar>> replay;
      (void)run_video(w, clip, reset_every, "", &replay);
      for (size_t t = 0; t < logits.size(); ++t)
        if (logits[t].data != replay[t].data)
          throw NumericError("replay-check: video " + e.id + " frame " + std::to_string(t) +
                             " differs between streamed and uninterrupted inference");
      out << "replay-check video=" << e.id << " frames=" << e.frames << " ok\n";
    }
    out << "video=" << e.id << " frames=" << e.frames << "\n";
  }
  return 0;
}

int run_eval_cmd(const Config& cfg, const std::string& ckpt, const std::string& pred_dir,
                 const std::string& data_dir, const std::string& report_file, std::ostream& out) {
  EvalOptions opts = eval_from(cfg);
  EvalReport report;
  if (!ckpt.empty()) {
    DecoderWeights<Scalar> w = load_model(ckpt, cfg);
    check_consumed(cfg);
    report = run_eval(&w, "", data_dir, opts, w.cfg.num_classes);
  } else {
    DecoderConfig model = model_from(cfg);
    check_consumed(cfg);
    report = run_eval(nullptr, pred_dir, data_dir, opts, model.num_classes);
  }
  print_report(report, out);
  if (!report_file.empty()) {
    std::ofstream rf(report_file);
    if (!rf) throw IoError("cannot write report file: " + report_file);
    print_report(report, rf);
  }
  return 0;
}

int run_bench(const Config& cfg, std::vector<int> windows, std::vector<int> blocks,
              std::vector<int> contexts, int frames, int height, int width,
              const std::string& ckpt, const std::string& data_dir, std::ostream& out) {
  int axes = (!windows.empty()) + (!blocks.empty()) + (!contexts.empty());
  if (axes != 1)
    throw ConfigError("bench sweeps exactly one of --window, --blocks, --context");
  if (frames < 1) throw ConfigError("--frames must be >= 1");
  DecoderConfig base = model_from(cfg);
  EvalOptions eopts = eval_from(cfg);
  check_consumed(cfg);

  auto dims_for = [&](const DecoderConfig& m) {
    int h = height > 0 ? height : m.patch * m.window * 2;
    int wd = width > 0 ? width : m.patch * m.window * 2;
    check_geometry(m, h, wd, "bench frame");
    return std::pair<int, int>{h, wd};
  };

  out << "# decoder-only throughput (encoder excluded), " << frames << " frames per row\n";
  if (!windows.empty()) {
    if (!ckpt.empty())
      throw ConfigError("--ckpt cannot follow the window sweep: geometry changes per row");
    for (int wv : windows) {
      DecoderConfig m = base;
      m.window = wv;
      m.shift = wv / 2;
      m.validate();
      auto [h, wd] = dims_for(m);
      DecoderWeights<Scalar> w = DecoderWeights<Scalar>::init(m, 1);
      auto store = StateStore<Scalar>::fresh(m, h / m.patch, wd / m.patch);
      out << "window=" << wv << " h=" << h << " w=" << wd << " params=" << w.param_count()
          << " state_scalars=" << store.total_state_scalars()
          << " fps=" << decoder_fps(w, frames, h, wd) << "\n";
    }
  } else if (!blocks.empty()) {
    if (!ckpt.empty())
      throw ConfigError("--ckpt cannot follow the blocks sweep: geometry changes per row");
    for (int bv : blocks) {
      DecoderConfig m = base;
      m.blocks = bv;
      m.validate();
      auto [h, wd] = dims_for(m);
      DecoderWeights<Scalar> w = DecoderWeights<Scalar>::init(m, 1);
      auto store = StateStore<Scalar>::fresh(m, h / m.patch, wd / m.patch);
      out << "blocks=" << bv << " h=" << h << " w=" << wd << " params=" << w.param_count()
          << " state_scalars=" << store.total_state_scalars()
          << " fps=" << decoder_fps(w, frames, h, wd) << "\n";
    }
  } else {
    if (ckpt.empty() != data_dir.empty())
      throw ConfigError("the context sweep needs both --ckpt and --data (or neither)");
    std::optional<DecoderWeights<Scalar>> w;
    if (!ckpt.empty())
      w.emplace(load_model(ckpt, cfg));
    else
      w.emplace(DecoderWeights<Scalar>::init(base, 1));
    auto [h, wd] = dims_for(w->cfg);
    for (int k : contexts) {
      if (k < 1) throw ConfigError("--context entries must be >= 1");
      out << "context=" << k;
      if (!data_dir.empty()) {
        EvalOptions o = eopts;
        o.reset_every = k;
        o.vc = {4};
        EvalReport r = run_eval(&*w, "", data_dir, o, w->cfg.num_classes);
        out << " miou=" << value_str(r.miou_value.value, r.miou_value.defined)
            << " mvc4=" << value_str(r.mvcs[0].second.value, r.mvcs[0].second.defined);
      }
      out << " fps=" << decoder_fps(*w, frames, h, wd) << "\n";
    }
  }
  return 0;
}

int run_params(const Config& cfg, bool verbose, std::ostream& out) {
  DecoderConfig model = model_from(cfg);
  SynthSpec data = data_from(cfg);
  check_consumed(cfg);
  DecoderWeights<Scalar> w = DecoderWeights<Scalar>::init(model, 1);
  for (auto& [k, v] : model.items()) out << k << " = " << v << "\n";
  out << "d_inner = " << model.d_inner() << "\n";
  out << "d_rank = " << model.d_rank() << "\n";
  out << "params = " << w.param_count() << "\n";
  if (verbose)
    w.for_each_param([&](Param<Scalar>& p) {
      out << "tensor " << p.name << " shape=" << p.value.shape_str() << " count=" << p.value.numel()
          << "\n";
    });
  check_geometry(model, data.height, data.width, "data frame");
  auto store = StateStore<Scalar>::fresh(model, data.height / model.patch, data.width / model.patch);
  int64_t slots = 0;
  for (const auto& blk : store.states)
    for (const auto& branch : blk) slots += static_cast<int64_t>(branch.size());
  out << "frame = " << data.height << "x" << data.width << "\n";
  out << "feature_map = " << data.height / model.patch << "x" << data.width / model.patch << "\n";
  out << "state_slots = " << slots << "\n";
  out << "state_scalars = " << store.total_state_scalars() << "\n";
  return 0;
}

}  // namespace

int cli_run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"temporal state-space video segmentation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads for window slots (0 = serial)");

  // Shared by every subcommand.
  struct Common {
    std::optional<std::string> config;
    std::vector<std::string> sets;
  };
  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "key = value configuration file");
    sub->add_option("--set", c.sets, "override a configuration key, e.g. --set model.window=8");
  };

  Common gen_c;
  std::string gen_out;
  std::optional<uint64_t> gen_seed;
  std::optional<int> gen_videos, gen_frames, gen_height, gen_width, gen_classes;
  std::optional<double> gen_noise;
  bool gen_occlusion = false;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic moving-shapes dataset");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--videos", gen_videos, "number of videos");
  gen->add_option("--frames", gen_frames, "frames per video");
  gen->add_option("--height", gen_height, "frame height");
  gen->add_option("--width", gen_width, "frame width");
  gen->add_option("--classes", gen_classes, "classes incl. background");
  gen->add_option("--noise", gen_noise, "pixel noise amplitude");
  gen->add_flag("--occlusion", gen_occlusion, "paint flicker occluders into frames");

  Common train_c;
  std::string train_data, train_out;
  std::optional<int> train_iters;
  std::optional<double> train_lr;
  std::optional<uint64_t> train_seed;
  CLI::App* train = app.add_subcommand("train", "train on a dataset and save a checkpoint");
  add_common(train, train_c);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint output directory")->required();
  train->add_option("--iters", train_iters, "training steps");
  train->add_option("--lr", train_lr, "base learning rate");
  train->add_option("--seed", train_seed, "training seed");

  Common infer_c;
  std::string infer_ckpt, infer_data, infer_out, infer_state, infer_video;
  int infer_reset = 0;
  bool infer_stream = false, infer_replay = false;
  CLI::App* infer = app.add_subcommand("infer", "segment videos frame by frame");
  add_common(infer, infer_c);
  infer->add_option("--ckpt", infer_ckpt, "checkpoint directory")->required();
  infer->add_option("--data", infer_data, "dataset directory")->required();
  infer->add_option("--out", infer_out, "predicted-mask output directory")->required();
  infer->add_flag("--stream", infer_stream, "persist the state store to disk after every frame");
  infer->add_option("--state-dir", infer_state, "where streamed states live");
  infer->add_option("--reset-every", infer_reset, "clear hidden states every k frames");
  infer->add_flag("--replay-check", infer_replay,
                  "verify streamed logits match an uninterrupted replay bitwise");
  infer->add_option("--video", infer_video, "process only this video id");

  Common eval_c;
  std::string eval_ckpt, eval_pred, eval_data, eval_report;
  std::optional<int> eval_reset;
  std::optional<std::string> eval_vc;
  std::optional<bool> eval_strict;
  CLI::App* eval = app.add_subcommand("eval", "compute mIoU and temporal consistency");
  add_common(eval, eval_c);
  eval->add_option("--ckpt", eval_ckpt, "checkpoint directory");
  eval->add_option("--pred", eval_pred, "stored predictions directory (instead of a model)");
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--reset-every", eval_reset, "clear hidden states every k frames");
  eval->add_option("--vc", eval_vc, "consistency window sizes, e.g. 8,16");
  eval->add_option("--strict", eval_strict, "consistency requires the true label");
  eval->add_option("--report", eval_report, "also write the metric lines to this file");

  Common bench_c;
  std::vector<int> bench_windows, bench_blocks, bench_contexts;
  int bench_frames = 8, bench_height = 0, bench_width = 0;
  std::string bench_ckpt, bench_data;
  CLI::App* bench = app.add_subcommand("bench", "sweep one axis and print a table");
  add_common(bench, bench_c);
  bench->add_option("--window", bench_windows, "window sizes")->delimiter(',');
  bench->add_option("--blocks", bench_blocks, "block counts")->delimiter(',');
  bench->add_option("--context", bench_contexts, "temporal context sizes")->delimiter(',');
  bench->add_option("--frames", bench_frames, "frames per row");
  bench->add_option("--height", bench_height, "frame height (0 = auto)");
  bench->add_option("--width", bench_width, "frame width (0 = auto)");
  bench->add_option("--ckpt", bench_ckpt, "checkpoint for the context sweep");
  bench->add_option("--data", bench_data, "dataset for the context sweep");

  Common params_c;
  bool params_verbose = false;
  CLI::App* params = app.add_subcommand("params", "print model configuration and sizes");
  add_common(params, params_c);
  params->add_flag("--verbose", params_verbose, "list every tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_default_threads(threads > 0 ? threads : 1);
    if (*gen) {
      Config cfg = build_config(gen_c.config, gen_c.sets);
      if (gen_seed) cfg.set("data.seed", std::to_string(*gen_seed));
      if (gen_videos) cfg.set("data.videos", std::to_string(*gen_videos));
      if (gen_frames) cfg.set("data.frames", std::to_string(*gen_frames));
      if (gen_height) cfg.set("data.height", std::to_string(*gen_height));
      if (gen_width) cfg.set("data.width", std::to_string(*gen_width));
      if (gen_classes) cfg.set("data.classes", std::to_string(*gen_classes));
      if (gen_noise) {
        std::ostringstream os;
        os << *gen_noise;
        cfg.set("data.noise", os.str());
      }
      if (gen_occlusion) cfg.set("data.occlusion", "true");
      return run_gen_data(cfg, gen_out, out);
    }
    if (*train) {
      Config cfg = build_config(train_c.config, train_c.sets);
      if (train_iters) cfg.set("train.iters", std::to_string(*train_iters));
      if (train_lr) {
        std::ostringstream os;
        os << *train_lr;
        cfg.set("train.lr", os.str());
      }
      if (train_seed) cfg.set("train.seed", std::to_string(*train_seed));
      return run_train(cfg, train_data, train_out, out);
    }
    if (*infer) {
      Config cfg = build_config(infer_c.config, infer_c.sets);
      return run_infer(cfg, infer_ckpt, infer_data, infer_out, infer_stream, infer_state,
                       infer_reset, infer_replay, infer_video, out);
    }
    if (*eval) {
      Config cfg = build_config(eval_c.config, eval_c.sets);
      if (eval_ckpt.empty() == eval_pred.empty())
        throw ConfigError("eval needs exactly one of --ckpt or --pred");
      if (eval_reset) cfg.set("eval.reset_every", std::to_string(*eval_reset));
      if (eval_vc) cfg.set("eval.vc", *eval_vc);
      if (eval_strict) cfg.set("eval.strict", *eval_strict ? "true" : "false");
      return run_eval_cmd(cfg, eval_ckpt, eval_pred, eval_data, eval_report, out);
    }
    if (*bench) {
      Config cfg = build_config(bench_c.config, bench_c.sets);
      return run_bench(cfg, bench_windows, bench_blocks, bench_contexts, bench_frames,
                       bench_height, bench_width, bench_ckpt, bench_data, out);
    }
    if (*params) {
      Config cfg = build_config(params_c.config, params_c.sets);
      return run_params(cfg, params_verbose, out);
    }
    throw ConfigError("no command given");
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tv3s
