#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tv3s/cli.hpp"
#include "tv3s/dataio.hpp"

using namespace tv3s;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("tv3s");
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli_run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("tv3s_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

int count_lines_starting(const std::string& text, const std::string& prefix) {
  int n = 0;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (line.rfind(prefix, 0) == 0) ++n;
  return n;
}

// Tiny but real pipeline geometry: 16x16 frames, patch 4 -> 4x4 map, window 2.
const std::vector<std::string> kTinyModel = {
    "--set", "model.window=2",      "--set", "model.embed_dim=8",
    "--set", "model.blocks=1",      "--set", "model.num_classes=3",
    "--set", "model.conv_kernel=3",
};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

CliResult gen_tiny(const fs::path& dir, int videos = 1, int frames = 4) {
  return run_cli({"gen-data", "--out", dir.string(), "--videos", std::to_string(videos),
                  "--frames", std::to_string(frames), "--height", "16", "--width", "16",
                  "--classes", "3", "--seed", "5"});
}

std::string mask_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%04d.tvt", t);
  return buf;
}

}  // namespace

TEST_CASE("help succeeds, unknown commands and flags fail with the usage code") {
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"eval", "--help"}).code == 0);
  CHECK(run_cli({"bogus"}).code == 2);
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"train", "--out", "x"}).code == 2);  // --data is required
  CHECK(run_cli({"gen-data", "--out", "x", "--frames", "zebra"}).code == 2);
}

TEST_CASE("misspelled configuration keys are refused by every command") {
  CliResult r = run_cli({"params", "--set", "model.windw=4"});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "model.windw"));
  r = run_cli({"params", "--set", "trian.lr=0.1"});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "trian.lr"));
  r = run_cli({"params", "--set", "noequals"});
  CHECK(r.code == 2);
}

TEST_CASE("config file values are overridden by --set, bad files rejected") {
  fs::path dir = fresh_dir("cfg");
  std::ofstream(dir / "a.cfg")
      << "model.window = 2\nmodel.embed_dim = 8\nmodel.blocks = 1  # one stage\n";

  CliResult base = run_cli({"params", "--config", (dir / "a.cfg").string()});
  CHECK(base.code == 0);
  CHECK(contains(base.out, "model.embed_dim = 8\n"));
  CHECK(contains(base.out, "model.blocks = 1\n"));

  CliResult over =
      run_cli({"params", "--config", (dir / "a.cfg").string(), "--set", "model.embed_dim=16"});
  CHECK(over.code == 0);
  CHECK(contains(over.out, "model.embed_dim = 16\n"));

  // A window that cannot tile the default frame geometry is refused.
  CHECK(run_cli({"params", "--set", "model.embed_dim=8"}).code == 2);

  CHECK(run_cli({"params", "--config", (dir / "missing.cfg").string()}).code == 3);
  std::ofstream(dir / "bad.cfg") << "model.embed_dim 8\n";
  CliResult bad = run_cli({"params", "--config", (dir / "bad.cfg").string()});
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "bad.cfg:1"));
  std::ofstream(dir / "oops.cfg") << "model.embed_dim = oops\n";
  CHECK(run_cli({"params", "--config", (dir / "oops.cfg").string()}).code == 2);
}

TEST_CASE("params prints sizes, verbose lists tensors, bad geometry is refused") {
  CliResult r = run_cli(cat({"params"}, kTinyModel));
  CHECK(r.code == 0);
  CHECK(contains(r.out, "d_inner = 16\n"));
  CHECK(contains(r.out, "params = "));
  CHECK(contains(r.out, "state_scalars = "));
  CHECK(contains(r.out, "feature_map = 16x16\n"));  // default 64x64 frame, patch 4
  CHECK(!contains(r.out, "tensor "));

  CliResult v = run_cli(cat({"params", "--verbose"}, kTinyModel));
  CHECK(v.code == 0);
  CHECK(contains(v.out, "tensor enc.embed_w"));
  CHECK(contains(v.out, "tensor head.w"));

  // 20x20 frames give a 5x5 map, not tileable by window 2.
  CliResult g = run_cli(cat({"params", "--set", "data.height=20", "--set", "data.width=20"},
                            kTinyModel));
  CHECK(g.code == 2);
}

TEST_CASE("gen-data writes a dataset the loader accepts, missing inputs give io errors") {
  fs::path dir = fresh_dir("gen");
  CliResult r = gen_tiny(dir / "d", 2, 4);
  CHECK(r.code == 0);
  CHECK(contains(r.out, "wrote 2 videos x 4 frames"));

  auto idx = read_index((dir / "d").string());
  REQUIRE(idx.size() == 2);
  VideoClip clip = load_video((dir / "d").string(), idx[0]);
  CHECK(clip.frames.size() == 4);
  CHECK(clip.frames[0].shape == std::vector<int>{3, 16, 16});
  CHECK(clip.masks[0].h == 16);

  CHECK(run_cli({"train", "--data", (dir / "nope").string(), "--out", (dir / "c").string()}).code ==
        3);
  CHECK(run_cli(cat({"eval", "--ckpt", (dir / "nope").string(), "--data", (dir / "d").string()},
                    kTinyModel))
            .code == 3);
}

TEST_CASE("train, infer with replay check, and both eval modes agree end to end") {
  fs::path dir = fresh_dir("pipe");
  REQUIRE(gen_tiny(dir / "d", 2, 4).code == 0);

  CliResult tr = run_cli(cat({"train", "--data", (dir / "d").string(), "--out",
                              (dir / "c").string(), "--iters", "3", "--lr", "1e-3", "--seed", "2",
                              "--set", "train.offsets=-1,0"},
                             kTinyModel));
  REQUIRE(tr.code == 0);
  CHECK(count_lines_starting(tr.out, "iter=") == 3);
  CHECK(contains(tr.out, "iter=0 lr=0.001 loss="));
  CHECK(contains(tr.out, "ce_final="));
  CHECK(contains(tr.out, "ce_inter="));
  CHECK(contains(tr.out, "saved checkpoint to "));

  CliResult inf = run_cli({"infer", "--ckpt", (dir / "c").string(), "--data", (dir / "d").string(),
                           "--out", (dir / "p").string(), "--replay-check"});
  REQUIRE(inf.code == 0);
  CHECK(contains(inf.out, "replay-check video=video0000 frames=4 ok"));
  CHECK(contains(inf.out, "replay-check video=video0001 frames=4 ok"));
  for (int t = 0; t < 4; ++t) CHECK(fs::exists(dir / "p" / "video0000" / mask_name(t)));
  CHECK(fs::exists(dir / "p" / "_state" / "video0001"));  // streaming side effect

  CliResult ec = run_cli({"eval", "--ckpt", (dir / "c").string(), "--data", (dir / "d").string(),
                          "--vc", "2", "--report", (dir / "rep.txt").string()});
  REQUIRE(ec.code == 0);
  CHECK(count_lines_starting(ec.out, "metric=miou ") == 1);
  CHECK(count_lines_starting(ec.out, "metric=mvc2 ") == 1);
  CHECK(contains(ec.out, "videos=2"));

  CliResult ep = run_cli(cat({"eval", "--pred", (dir / "p").string(), "--data",
                              (dir / "d").string(), "--vc", "2"},
                             kTinyModel));
  REQUIRE(ep.code == 0);
  CHECK(ep.out == ec.out);  // model predictions and stored predictions score identically

  std::ifstream rep(dir / "rep.txt");
  std::ostringstream rep_text;
  rep_text << rep.rdbuf();
  CHECK(rep_text.str() == ec.out);
}

TEST_CASE("evaluating the ground truth as predictions gives perfect scores") {
  fs::path dir = fresh_dir("perfect");
  REQUIRE(gen_tiny(dir / "d", 2, 4).code == 0);
  auto idx = read_index((dir / "d").string());
  for (const auto& e : idx) {
    VideoClip clip = load_video((dir / "d").string(), e);
    fs::create_directories(dir / "p" / e.id);
    for (int t = 0; t < e.frames; ++t)
      write_mask((dir / "p" / e.id / mask_name(t)).string(), clip.masks[t]);
  }
  CliResult r = run_cli(cat({"eval", "--pred", (dir / "p").string(), "--data",
                             (dir / "d").string(), "--vc", "2,4"},
                            kTinyModel));
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "metric=miou value=1 videos=2 skipped=0"));
  CHECK(contains(r.out, "metric=mvc2 value=1 videos=2 skipped=0"));
  CHECK(contains(r.out, "metric=mvc4 value=1 videos=2 skipped=0"));
}

TEST_CASE("the video filter restricts inference and rejects unknown ids") {
  fs::path dir = fresh_dir("filter");
  REQUIRE(gen_tiny(dir / "d", 2, 3).code == 0);
  REQUIRE(run_cli(cat({"train", "--data", (dir / "d").string(), "--out", (dir / "c").string(),
                       "--iters", "1", "--set", "train.offsets=-1,0"},
                      kTinyModel))
              .code == 0);

  CliResult r = run_cli({"infer", "--ckpt", (dir / "c").string(), "--data", (dir / "d").string(),
                         "--out", (dir / "p").string(), "--video", "video0001"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "p" / "video0001" / "p0000.tvt"));
  CHECK(!fs::exists(dir / "p" / "video0000"));

  CliResult bad = run_cli({"infer", "--ckpt", (dir / "c").string(), "--data",
                           (dir / "d").string(), "--out", (dir / "p2").string(), "--video",
                           "ghost"});
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "ghost"));
}

TEST_CASE("checkpoints refuse mismatched architectures but allow chunking overrides") {
  fs::path dir = fresh_dir("mismatch");
  REQUIRE(gen_tiny(dir / "d", 1, 3).code == 0);
  REQUIRE(run_cli(cat({"train", "--data", (dir / "d").string(), "--out", (dir / "c").string(),
                       "--iters", "1", "--set", "train.offsets=-1,0"},
                      kTinyModel))
              .code == 0);

  CliResult bad = run_cli(cat({"eval", "--ckpt", (dir / "c").string(), "--data",
                               (dir / "d").string(), "--set", "model.window=4"},
                              {"--set", "model.embed_dim=8", "--set", "model.blocks=1", "--set",
                               "model.num_classes=3", "--set", "model.conv_kernel=3"}));
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "model.window"));

  CliResult base = run_cli({"eval", "--ckpt", (dir / "c").string(), "--data",
                            (dir / "d").string(), "--vc", "2"});
  REQUIRE(base.code == 0);
  CliResult chunk = run_cli(cat(cat({"eval", "--ckpt", (dir / "c").string(), "--data",
                                     (dir / "d").string(), "--vc", "2"},
                                    kTinyModel),
                                {"--set", "model.scan_chunk=2"}));
  REQUIRE(chunk.code == 0);
  CHECK(chunk.out == base.out);  // chunked scan is an execution detail, not a model change
}

TEST_CASE("bench prints one row per swept value and rejects mixed axes") {
  CliResult w = run_cli(cat({"bench", "--window", "2,4", "--frames", "2"}, kTinyModel));
  REQUIRE(w.code == 0);
  CHECK(count_lines_starting(w.out, "window=2 ") == 1);
  CHECK(count_lines_starting(w.out, "window=4 ") == 1);
  CHECK(contains(w.out, " params="));
  CHECK(contains(w.out, " state_scalars="));
  CHECK(contains(w.out, " fps="));

  CliResult b = run_cli(cat({"bench", "--blocks", "1,2", "--frames", "2"}, kTinyModel));
  REQUIRE(b.code == 0);
  CHECK(count_lines_starting(b.out, "blocks=1 ") == 1);
  CHECK(count_lines_starting(b.out, "blocks=2 ") == 1);

  CliResult c = run_cli(cat({"bench", "--context", "1,2", "--frames", "2"}, kTinyModel));
  REQUIRE(c.code == 0);
  CHECK(count_lines_starting(c.out, "context=1 ") == 1);
  CHECK(count_lines_starting(c.out, "context=2 ") == 1);
  CHECK(!contains(c.out, "miou="));  // no dataset attached

  CHECK(run_cli(cat({"bench", "--window", "2", "--blocks", "1"}, kTinyModel)).code == 2);
  CHECK(run_cli(cat({"bench"}, kTinyModel)).code == 2);
  CHECK(run_cli(cat({"bench", "--context", "1", "--ckpt", "x"}, kTinyModel)).code == 2);
}

TEST_CASE("bench context sweep scores a dataset per context length") {
  fs::path dir = fresh_dir("benchctx");
  REQUIRE(gen_tiny(dir / "d", 1, 4).code == 0);
  REQUIRE(run_cli(cat({"train", "--data", (dir / "d").string(), "--out", (dir / "c").string(),
                       "--iters", "1", "--set", "train.offsets=-1,0"},
                      kTinyModel))
              .code == 0);
  CliResult r = run_cli({"bench", "--context", "1,4", "--frames", "2", "--ckpt",
                         (dir / "c").string(), "--data", (dir / "d").string()});
  REQUIRE(r.code == 0);
  CHECK(count_lines_starting(r.out, "context=1 miou=") == 1);
  CHECK(count_lines_starting(r.out, "context=4 miou=") == 1);
  CHECK(contains(r.out, " mvc4="));
}

TEST_CASE("seeded runs of the whole pipeline are reproducible") {
  std::vector<std::string> logs;
  for (int run = 0; run < 2; ++run) {
    fs::path dir = fresh_dir("repro" + std::to_string(run));
    REQUIRE(gen_tiny(dir / "d", 1, 4).code == 0);
    CliResult tr = run_cli(cat({"train", "--data", (dir / "d").string(), "--out",
                                (dir / "c").string(), "--iters", "2", "--seed", "9", "--set",
                                "train.offsets=-1,0"},
                               kTinyModel));
    REQUIRE(tr.code == 0);
    CliResult ev = run_cli({"eval", "--ckpt", (dir / "c").string(), "--data",
                            (dir / "d").string(), "--vc", "2"});
    REQUIRE(ev.code == 0);
    // The checkpoint path differs per run; the logs and metrics must not.
    std::string kept;
    std::istringstream is(tr.out);
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("iter=", 0) == 0) kept += line + "\n";
    logs.push_back(kept + ev.out);
  }
  CHECK(logs[0] == logs[1]);
}
