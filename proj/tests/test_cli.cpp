#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dgan/checkpoint.hpp"
#include "dgan/cli.hpp"
#include "dgan/image_io.hpp"
#include "dgan/metrics.hpp"
#include "dgan/training.hpp"
#include "helpers.hpp"

using namespace dgan;
using namespace dgan::test;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

const char* kMiniConfig = R"({
  "resolutions": [4, 8],
  "channels": [4, 3],
  "dim_z_s": 3, "dim_z_c": 3, "dim_s": 3, "dim_c": 3,
  "mapping_depth": 2,
  "dat_max_resolution": 8,
  "iterations": 3,
  "batch_size": 4,
  "data_resolution": 8,
  "data_size": 40,
  "diversity_groups": 2,
  "diversity_per_group": 3,
  "ppl_samples": 20,
  "ppl_inner": 2,
  "ppl_outer": 5
})";

/// Untrained miniature GAN with every DAT beta set to `beta`.
std::string write_gan(const TempDir& dir, const std::string& name, double beta,
                      std::uint64_t seed = 1) {
  GeneratorSpec spec = mini_spec();
  TrainConfig c;
  c.seed = seed;
  GanTrainResult g = init_gan(spec, c);
  g.generator = with_beta(spec, g.generator, beta);
  const std::string path = dir.file(name);
  save_checkpoint(g.checkpoint(), path);
  return path;
}

std::vector<Tensor> tiles(const Tensor& grid, std::size_t count, std::size_t cols, std::size_t r) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t ty = k / cols, tx = k % cols;
    std::vector<double> v;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t y = 0; y < r; ++y) {
        for (std::size_t x = 0; x < r; ++x) v.push_back(grid.at({ch, ty * r + y, tx * r + x}));
      }
    }
    out.push_back(Tensor::from({3, r, r}, v));
  }
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

}  // namespace

TEST_CASE("cli help lists subcommands and defaults") {
  Run top = cli({"--help"});
  CHECK(top.code == kExitOk);
  for (const char* sub : {"synth-data", "train", "train-invert", "sample", "interpolate", "attn-edit",
                          "metrics", "invert"}) {
    CHECK(top.out.find(sub) != std::string::npos);
  }
  Run sample = cli({"sample", "--help"});
  CHECK(sample.code == kExitOk);
  CHECK(sample.out.find("vary-both") != std::string::npos);
  CHECK(sample.out.find("16") != std::string::npos);
  CHECK(sample.out.find("0.7") != std::string::npos);
}

TEST_CASE("cli exit codes follow the error kind") {
  TempDir dir("cli_exit");
  const std::string ckpt = write_gan(dir, "g.dgan", 0.5);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"sample", "--out", dir.file("x.png")}).code == kExitUsage);
  CHECK(cli({"metrics", "--ckpt", ckpt, "--which", "bogus", "--out", dir.file("m.csv")}).code ==
        kExitUsage);

  Run zero = cli({"sample", "--ckpt", ckpt, "--n", "0", "--out", dir.file("x.png")});
  CHECK(zero.code == kExitValidation);
  CHECK(zero.err.find("n must be positive") != std::string::npos);
  CHECK(cli({"sample", "--ckpt", ckpt, "--domain", "3", "--out", dir.file("x.png")}).code ==
        kExitValidation);
  CHECK(cli({"interpolate", "--ckpt", ckpt, "--space", "layer:9", "--out", dir.file("x.png")}).code ==
        kExitValidation);
  CHECK(cli({"attn-edit", "--ckpt", ckpt, "--layer", "0", "--map", "const:2", "--out",
             dir.file("x.png")})
            .code == kExitValidation);
  write_file(dir.file("bad.json"), "{\"lamda_ds\": 0.3}");
  Run bad_cfg = cli({"--config", dir.file("bad.json"), "sample", "--ckpt", ckpt, "--out",
                     dir.file("x.png")});
  CHECK(bad_cfg.code == kExitOk);  // sample does not read the config
  Run bad_train = cli({"--config", dir.file("bad.json"), "train", "--run", dir.file("run")});
  CHECK(bad_train.code == kExitValidation);
  CHECK(bad_train.err.find("lamda_ds") != std::string::npos);

  Run missing = cli({"sample", "--ckpt", dir.file("nope.dgan"), "--out", dir.file("x.png")});
  CHECK(missing.code == kExitIo);
  CHECK(missing.err.find("nope.dgan") != std::string::npos);
  write_file(dir.file("junk.dgan"), "not a checkpoint");
  CHECK(cli({"sample", "--ckpt", dir.file("junk.dgan"), "--out", dir.file("x.png")}).code == kExitIo);
  CHECK(cli({"sample", "--ckpt", ckpt, "--out", dir.file("no/such/dir/x.png")}).code == kExitIo);
}

TEST_CASE("cli numeric failures map to their own exit code") {
  TempDir dir("cli_numeric");
  GeneratorSpec spec = mini_spec();
  TrainConfig c;
  GanTrainResult g = init_gan(spec, c);
  g.generator = with_beta(spec, g.generator, 0.5);
  std::vector<double> b(3, std::nan(""));
  g.generator["g.to_rgb.b"] = Tensor::from({3}, b);
  save_checkpoint(g.checkpoint(), dir.file("nan.dgan"));
  Rng rng(1);
  InversionEncoders enc = InversionEncoders::init(spec, rng);
  InversionTrainResult inv{enc, {}, {}, {}};
  save_checkpoint(inv.checkpoint(), dir.file("enc.dgan"));
  image_write(randu({3, 8, 8}, rng, 0, 1), dir.file("img.png"));
  Run r = cli({"invert", "--gen", dir.file("nan.dgan"), "--enc", dir.file("enc.dgan"), "--image",
               dir.file("img.png"), "--out", dir.file("inv")});
  CHECK(r.code == kExitNumeric);
}

TEST_CASE("sample modes control which codes vary") {
  TempDir dir("cli_sample");
  const std::string ckpt = write_gan(dir, "g.dgan", 0.5);
  const std::string flat = write_gan(dir, "flat.dgan", 0.0);

  auto grid = [&](const std::string& model, const std::string& mode, const std::string& name) {
    const std::string out = dir.file(name);
    REQUIRE(cli({"--seed", "4", "sample", "--ckpt", model, "--n", "4", "--mode", mode, "--out", out})
                .code == kExitOk);
    return tiles(image_read(out), 4, 2, 8);
  };
  auto all_same = [](const std::vector<Tensor>& t) {
    for (const auto& x : t) {
      if (!bitwise_equal(x, t[0])) return false;
    }
    return true;
  };
  CHECK(all_same(grid(ckpt, "fixed", "fixed.png")));
  CHECK_FALSE(all_same(grid(ckpt, "vary-style", "vs.png")));
  CHECK_FALSE(all_same(grid(ckpt, "vary-content", "vc.png")));
  CHECK(all_same(grid(flat, "vary-content", "flat_vc.png")));
  CHECK_FALSE(all_same(grid(flat, "vary-style", "flat_vs.png")));

  const std::string before = read_text(ckpt);
  std::set<std::string> distinct;
  for (int seed = 0; seed < 20; ++seed) {
    const std::string out = dir.file("s" + std::to_string(seed) + ".png");
    REQUIRE(cli({"--seed", std::to_string(seed), "sample", "--ckpt", ckpt, "--n", "1", "--out", out})
                .code == kExitOk);
    distinct.insert(read_text(out));
  }
  CHECK(distinct.size() == 20);
  CHECK(read_text(ckpt) == before);

  REQUIRE(cli({"--seed", "4", "sample", "--ckpt", ckpt, "--n", "4", "--out", dir.file("a.png")}).code ==
          kExitOk);
  REQUIRE(cli({"--seed", "4", "sample", "--ckpt", ckpt, "--n", "4", "--out", dir.file("b.png")}).code ==
          kExitOk);
  CHECK(read_text(dir.file("a.png")) == read_text(dir.file("b.png")));
}

TEST_CASE("interpolation endpoints match sampled images") {
  TempDir dir("cli_interp");
  const std::string ckpt = write_gan(dir, "g.dgan", 0.5);
  REQUIRE(cli({"--seed", "2", "sample", "--ckpt", ckpt, "--n", "1", "--mode", "fixed", "--out",
               dir.file("first.png")})
              .code == kExitOk);
  REQUIRE(cli({"--seed", "2", "sample", "--ckpt", ckpt, "--n", "2", "--mode", "vary-content", "--out",
               dir.file("pair.png")})
              .code == kExitOk);
  REQUIRE(cli({"--seed", "2", "interpolate", "--ckpt", ckpt, "--steps", "5", "--out",
               dir.file("strip.png")})
              .code == kExitOk);
  REQUIRE(cli({"--seed", "2", "interpolate", "--ckpt", ckpt, "--steps", "2", "--out",
               dir.file("ends.png")})
              .code == kExitOk);

  const Tensor strip = image_read(dir.file("strip.png"));
  CHECK(strip.shape() == Shape{3, 8, 40});
  const auto frames = tiles(strip, 5, 5, 8);
  CHECK(bitwise_equal(frames[0], image_read(dir.file("first.png"))));

  const auto pair = tiles(image_read(dir.file("pair.png")), 2, 2, 8);
  const auto ends = tiles(image_read(dir.file("ends.png")), 2, 2, 8);
  CHECK(image_read(dir.file("ends.png")).shape() == Shape{3, 8, 16});
  CHECK(bitwise_equal(ends[0], frames[0]));
  CHECK(bitwise_equal(ends[1], frames[4]));
  // Batched and single renders may round differently at the last 8-bit level.
  CHECK(max_abs_diff(ends[0], pair[0]) <= 1.0 / 255 + 1e-12);
  CHECK(max_abs_diff(ends[1], pair[1]) <= 1.0 / 255 + 1e-12);
  CHECK_FALSE(bitwise_equal(frames[0], frames[4]));

  REQUIRE(cli({"--seed", "2", "interpolate", "--ckpt", ckpt, "--steps", "5", "--space", "layer:1",
               "--out", dir.file("layer.png")})
              .code == kExitOk);
  const auto layer = tiles(image_read(dir.file("layer.png")), 5, 5, 8);
  CHECK(bitwise_equal(layer[0], frames[0]));
  CHECK_FALSE(bitwise_equal(layer[4], frames[4]));
  CHECK(cli({"interpolate", "--ckpt", ckpt, "--steps", "1", "--out", dir.file("x.png")}).code ==
        kExitValidation);
}

TEST_CASE("attention edits change the image where the map says") {
  TempDir dir("cli_attn");
  const std::string ckpt = write_gan(dir, "g.dgan", 0.8);
  GeneratorSpec spec = mini_spec();
  TrainConfig c;
  GanTrainResult g = init_gan(spec, c);
  g.generator = with_beta(spec, g.generator, 0.8);
  const std::size_t layer = 2;
  g.generator["g.l" + std::to_string(layer) + ".beta"] = Tensor::scalar(0.0);
  save_checkpoint(g.checkpoint(), dir.file("off.dgan"));

  auto edit = [&](const std::string& model, const std::string& map, const std::string& name,
                  const std::string& original = "") {
    std::vector<std::string> args{"attn-edit", "--ckpt", model, "--layer", std::to_string(layer),
                                  "--map", map, "--out", dir.file(name)};
    if (!original.empty()) {
      args.push_back("--original");
      args.push_back(dir.file(original));
    }
    REQUIRE(cli(args).code == kExitOk);
    return read_text(dir.file(name));
  };
  const std::string zero = edit(ckpt, "const:0", "zero.png", "orig.png");
  edit(dir.file("off.dgan"), "const:1", "unused.png", "off_orig.png");
  CHECK(zero == read_text(dir.file("off_orig.png")));
  CHECK(zero != read_text(dir.file("orig.png")));
  CHECK(edit(ckpt, "left-half", "left.png") != edit(ckpt, "right-half", "right.png"));
  CHECK(edit(ckpt, "top-half", "top.png") != edit(ckpt, "bottom-half", "bottom.png"));

  image_write(Tensor::ones({3, 8, 8}), dir.file("map.png"));
  CHECK(edit(ckpt, dir.file("map.png"), "png_map.png") == edit(ckpt, "const:1", "one.png"));
  image_write(Tensor::ones({3, 4, 4}), dir.file("small.png"));
  CHECK(cli({"attn-edit", "--ckpt", ckpt, "--layer", "2", "--map", dir.file("small.png"), "--out",
             dir.file("x.png")})
            .code == kExitValidation);
}

TEST_CASE("metrics command writes deterministic rows") {
  TempDir dir("cli_metrics");
  write_file(dir.file("cfg.json"), kMiniConfig);
  const std::string cfg = dir.file("cfg.json");
  const std::string ckpt = write_gan(dir, "g.dgan", 0.5);
  REQUIRE(cli({"--config", cfg, "synth-data", "--out", dir.file("data")}).code == kExitOk);
  const std::string data = dir.file("data/dataset.dgan");

  const std::vector<std::string> which{"--which", "ppl-w", "ppl-ws", "ppl-wc", "diversity"};
  auto run = [&](const std::string& name) {
    std::vector<std::string> args{"--config", cfg, "metrics", "--ckpt", ckpt, "--out", dir.file(name)};
    args.insert(args.end(), which.begin(), which.end());
    REQUIRE(cli(args).code == kExitOk);
    return read_text(dir.file(name));
  };
  const std::string a = run("a.csv"), b = run("b.csv");
  CHECK(a == b);
  CHECK(a.rfind(metric_csv_header() + "\n", 0) == 0);
  std::istringstream lines(a);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 1 + 3 + 3);
  run("a.csv");
  std::istringstream again(read_text(dir.file("a.csv")));
  rows = 0;
  while (std::getline(again, line)) ++rows;
  CHECK(rows == 1 + 6 + 6);

  // A generator with zeroed output layer renders a constant image.
  GeneratorSpec spec = mini_spec();
  TrainConfig tc;
  GanTrainResult flat = init_gan(spec, tc);
  flat.generator["g.to_rgb.w"] = Tensor::zeros(flat.generator.at("g.to_rgb.w").shape());
  save_checkpoint(flat.checkpoint(), dir.file("const.dgan"));
  Run ppl_run = cli({"--config", cfg, "metrics", "--ckpt", dir.file("const.dgan"), "--which", "ppl-w",
                     "--out", dir.file("const.csv")});
  REQUIRE(ppl_run.code == kExitOk);
  CHECK(ppl_run.out.find("ppl,W,0,") != std::string::npos);

  Run fid = cli({"--config", cfg, "metrics", "--ckpt", ckpt, "--which", "fid-proxy", "--data", data,
                 "--out", dir.file("fid.csv")});
  REQUIRE(fid.code == kExitOk);
  const std::string row = fid.out.substr(fid.out.find("fid-proxy"));
  const double untrained = std::stod(row.substr(row.find(',', row.find(',') + 1) + 1));
  LabeledImages ds = dataset_from_checkpoint(load_checkpoint(data));
  const std::size_t half = ds.images.dim(0) / 2;
  const std::vector<double> v = ds.images.to_vector();
  const std::size_t per = v.size() / ds.images.dim(0);
  Tensor lo = Tensor::from({half, 3, 8, 8}, std::vector<double>(v.begin(), v.begin() + half * per));
  Tensor hi = Tensor::from({half, 3, 8, 8}, std::vector<double>(v.begin() + half * per, v.end()));
  const auto fx = FeatureExtractor::random_conv();
  CHECK(frechet_distance(feature_stats(lo, fx), feature_stats(hi, fx)) < untrained);
}

TEST_CASE("end-to-end pipeline through the command line") {
  TempDir dir("cli_pipeline");
  write_file(dir.file("cfg.json"), kMiniConfig);
  const std::string cfg = dir.file("cfg.json");
  REQUIRE(cli({"--config", cfg, "synth-data", "--out", dir.file("data"), "--n", "24"}).code == kExitOk);
  const std::string data = dir.file("data/dataset.dgan");
  CHECK(dataset_from_checkpoint(load_checkpoint(data)).images.shape() == Shape{24, 3, 8, 8});
  CHECK(std::filesystem::exists(dir.file("data/factors.csv")));
  CHECK(std::filesystem::exists(dir.file("data/preview.png")));

  Run train = cli({"--config", cfg, "train", "--run", dir.file("gan"), "--data", data});
  REQUIRE(train.code == kExitOk);
  const std::string gen = dir.file("gan/3.dgan");
  REQUIRE(std::filesystem::exists(gen));
  CHECK(std::filesystem::exists(dir.file("gan/loss.csv")));

  const std::string gen_bytes = read_text(gen);
  Run tinv = cli({"--config", cfg, "train-invert", "--gen", gen, "--run", dir.file("inv"), "--data", data});
  REQUIRE(tinv.code == kExitOk);
  CHECK(tinv.out.find("lambda_lat=1 lambda_adv=0.1") != std::string::npos);
  const std::string enc = dir.file("inv/3.dgan");
  REQUIRE(std::filesystem::exists(enc));
  CHECK(read_text(gen) == gen_bytes);

  LabeledImages ds = dataset_from_checkpoint(load_checkpoint(data));
  const std::vector<double> v = ds.images.to_vector();
  image_write(Tensor::from({3, 8, 8}, std::vector<double>(v.begin(), v.begin() + 192)),
              dir.file("target.png"));
  const std::string enc_bytes = read_text(enc);

  Run fast = cli({"--config", cfg, "invert", "--gen", gen, "--enc", enc, "--image", dir.file("target.png"),
                  "--no-optimize", "--out", dir.file("fast")});
  REQUIRE(fast.code == kExitOk);
  CHECK(fast.out.find("steps 0") != std::string::npos);
  CHECK(read_text(dir.file("fast/trace.csv")) == "step,loss\n");

  Run slow = cli({"--config", cfg, "invert", "--gen", gen, "--enc", enc, "--image", dir.file("target.png"),
                  "--out", dir.file("slow")});
  REQUIRE(slow.code == kExitOk);
  std::istringstream trace(read_text(dir.file("slow/trace.csv")));
  std::string line;
  std::size_t n = 0;
  while (std::getline(trace, line)) ++n;
  CHECK(n == 1 + 100);
  Checkpoint codes = load_checkpoint(dir.file("slow/codes.dgan"));
  CHECK(codes.get("codes.style").shape() == Shape{1, 3});
  CHECK(codes.get("codes.content").shape() == Shape{1, 3});
  CHECK(image_read(dir.file("slow/reconstruction.png")).shape() == Shape{3, 8, 8});
  CHECK(read_text(gen) == gen_bytes);
  CHECK(read_text(enc) == enc_bytes);

  image_write(Tensor::ones({3, 4, 4}), dir.file("tiny.png"));
  CHECK(cli({"invert", "--gen", gen, "--enc", enc, "--image", dir.file("tiny.png"), "--out",
             dir.file("x")})
            .code == kExitValidation);
}
