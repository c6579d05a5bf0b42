#include <gtest/gtest.h>
#include <png.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "asconv/checkpoint.hpp"
#include "asconv/config.hpp"
#include "asconv/dataset.hpp"
#include "asconv/error.hpp"
#include "asconv/image_io.hpp"
#include "asconv/metrics.hpp"
#include "cli.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace asconv {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes raw samples through libpng directly, bypassing png_write.
void write_raw_png(const std::string& path, std::uint32_t format, std::size_t w, std::size_t h,
                   const void* pixels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.format = format;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  ASSERT_NE(png_image_write_to_file(&img, path.c_str(), 0, pixels, 0, nullptr), 0);
}

TensorF quantized_image(Rng& rng, std::size_t h, std::size_t w) {
  TensorF t(Shape{1, 3, h, w});
  for (auto& v : t.data()) v = static_cast<float>(rng.index(256)) / 255.0f;
  return t;
}

TEST(Png, KnownPatternRoundTrip) {
  TempDir dir("png");
  const std::uint8_t rgb[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 128, 250};
  write_raw_png(dir.file("p.png"), PNG_FORMAT_RGB, 2, 2, rgb);
  const TensorF img = png_read(dir.file("p.png"));
  ASSERT_EQ(img.shape(), (Shape{1, 3, 2, 2}));
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(img.at(0, c, y, x), rgb[(y * 2 + x) * 3 + c] / 255.0f);
  png_write(img, dir.file("q.png"));
  EXPECT_EQ(png_read(dir.file("q.png")), img);
  EXPECT_EQ(png_dimensions(dir.file("q.png")), (std::pair<std::size_t, std::size_t>{2, 2}));
}

TEST(Png, QuantizedDataIsLossless) {
  TempDir dir("png");
  Rng rng(1);
  const TensorF img = quantized_image(rng, 13, 17);
  png_write(img, dir.file("a.png"));
  const TensorF back = png_read(dir.file("a.png"));
  EXPECT_EQ(back, img);
  png_write(back, dir.file("b.png"));
  EXPECT_EQ(read_file(dir.file("a.png")), read_file(dir.file("b.png")));
}

TEST(Png, Quantization) {
  EXPECT_EQ(quantize_u8(-0.5f), 0);
  EXPECT_EQ(quantize_u8(1.7f), 255);
  EXPECT_EQ(quantize_u8(0.5f), 128);
  EXPECT_EQ(quantize_u8(0.4f / 255.0f), 0);
  EXPECT_EQ(quantize_u8(0.6f / 255.0f), 1);
}

TEST(Png, SixteenBitRejected) {
  TempDir dir("png");
  const std::uint16_t px[3 * 4] = {};
  write_raw_png(dir.file("deep.png"), PNG_FORMAT_LINEAR_RGB, 2, 2, px);
  EXPECT_THROW(png_read(dir.file("deep.png")), FormatError);
}

TEST(Png, GrayscaleExpandsWithWarning) {
  TempDir dir("png");
  const std::uint8_t g[6] = {0, 51, 102, 153, 204, 255};
  write_raw_png(dir.file("g.png"), PNG_FORMAT_GRAY, 3, 2, g);
  std::vector<std::string> warnings;
  const TensorF img = png_read(dir.file("g.png"), &warnings);
  ASSERT_EQ(img.shape(), (Shape{1, 3, 2, 3}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(img.at(0, c, i / 3, i % 3), g[i] / 255.0f);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Png, AlphaDroppedWithWarning) {
  TempDir dir("png");
  const std::uint8_t rgba[8] = {10, 20, 30, 0, 40, 50, 60, 128};
  write_raw_png(dir.file("a.png"), PNG_FORMAT_RGBA, 2, 1, rgba);
  std::vector<std::string> warnings;
  const TensorF img = png_read(dir.file("a.png"), &warnings);
  EXPECT_EQ(img.at(0, 0, 0, 0), 10 / 255.0f);
  EXPECT_EQ(img.at(0, 2, 0, 1), 60 / 255.0f);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Png, Errors) {
  TempDir dir("png");
  EXPECT_THROW(png_read(dir.file("missing.png")), IoError);
  std::ofstream(dir.file("junk.png")) << "not a png";
  EXPECT_THROW(png_read(dir.file("junk.png")), std::runtime_error);
  EXPECT_THROW(png_write(TensorF(Shape{1, 1, 2, 2}), dir.file("x.png")), ShapeError);
}

void write_image(const fs::path& path, Rng& rng, std::size_t h, std::size_t w) {
  fs::create_directories(path.parent_path());
  png_write(testing::synthetic_image(rng, h, w), path.string());
}

TEST(Dataset, HrOnlyFolderSynthesizesLr) {
  TempDir dir("data");
  Rng rng(2);
  for (const char* stem : {"d", "b", "c", "a"}) write_image(dir.path() / "HR" / (std::string(stem) + ".png"), rng, 16, 20);
  const DatasetIndex index = dataset_scan(dir.path().string());
  ASSERT_EQ(index.pairs.size(), 4u);
  const std::vector<std::string> order{"a", "b", "c", "d"};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& e = index.pairs[i];
    EXPECT_EQ(e.stem, order[i]);
    EXPECT_TRUE(e.synthesized);
    EXPECT_EQ(e.lr_width, 10u);
    EXPECT_EQ(e.lr_height, 8u);
    EXPECT_TRUE(fs::exists(dir.path() / "LR_gen" / (order[i] + ".png")));
  }
  const auto stamp = fs::last_write_time(dir.path() / "LR_gen" / "a.png");
  const auto cached = read_file(index.pairs[0].lr_path);
  const DatasetIndex again = dataset_scan(dir.path().string());
  EXPECT_EQ(fs::last_write_time(dir.path() / "LR_gen" / "a.png"), stamp);
  EXPECT_EQ(read_file(again.pairs[0].lr_path), cached);

  const auto pairs = load_dataset(index);
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(pairs[0].lr.shape(), (Shape{1, 3, 8, 10}));
  EXPECT_EQ(pairs[0].hr.shape(), (Shape{1, 3, 16, 20}));
}

TEST(Dataset, ProvidedLrIsUsed) {
  TempDir dir("data");
  Rng rng(3);
  write_image(dir.path() / "HR" / "x.png", rng, 8, 8);
  write_image(dir.path() / "LR" / "xx2.png", rng, 4, 4);
  write_image(dir.path() / "HR" / "y.png", rng, 8, 8);
  write_image(dir.path() / "LR" / "y.png", rng, 4, 4);
  const DatasetIndex index = dataset_scan(dir.path().string());
  ASSERT_EQ(index.pairs.size(), 2u);
  EXPECT_FALSE(index.pairs[0].synthesized);
  EXPECT_EQ(fs::path(index.pairs[0].lr_path).filename(), "xx2.png");
  EXPECT_EQ(fs::path(index.pairs[1].lr_path).filename(), "y.png");
  EXPECT_FALSE(fs::exists(dir.path() / "LR_gen"));
}

TEST(Dataset, DimensionMismatchNamesFile) {
  TempDir dir("data");
  Rng rng(4);
  write_image(dir.path() / "HR" / "img7.png", rng, 100, 100);
  write_image(dir.path() / "LR" / "img7.png", rng, 50, 49);
  try {
    dataset_scan(dir.path().string());
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("img7"), std::string::npos) << e.what();
  }
}

TEST(Dataset, Errors) {
  TempDir dir("data");
  EXPECT_THROW(dataset_scan(dir.path().string()), IoError);
  fs::create_directories(dir.path() / "HR");
  EXPECT_THROW(dataset_scan(dir.path().string()), IoError);
  Rng rng(5);
  write_image(dir.path() / "HR" / "odd.png", rng, 9, 8);
  EXPECT_THROW(dataset_scan(dir.path().string()), ShapeError);
}

TEST(Config, ParseKeyValues) {
  const KeyValues kv = parse_key_values("# header\n\n channels = 16 \nconv_mode=dynamic  # trailing\nlr0 = 1e-3\n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"channels", "16"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"conv_mode", "dynamic"}));
  EXPECT_EQ(kv[2], (std::pair<std::string, std::string>{"lr0", "1e-3"}));
  try {
    parse_key_values("a = 1\nb = 2\na = 3\n", "run.cfg");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_key_values("just words\n"), FormatError);
  EXPECT_THROW(parse_key_values("= 4\n"), FormatError);
}

TEST(Config, EntriesRoundTrip) {
  ModelConfig m = preset_asconvsr_l();
  m.conv_mode = ConvMode::Dynamic;
  m.coeff_norm = CoeffNorm::Softmax;
  m.bias = true;
  TrainConfig t;
  t.lr0 = 3.3e-4;
  t.beta2 = 0.999;
  t.augment = false;
  ModelConfig m2;
  TrainConfig t2;
  for (const auto& [k, v] : parse_key_values(format_key_values(model_config_entries(m)))) {
    EXPECT_TRUE(set_model_field(m2, k, v)) << k;
  }
  for (const auto& [k, v] : parse_key_values(format_key_values(train_config_entries(t)))) {
    EXPECT_TRUE(set_train_field(t2, k, v)) << k;
  }
  EXPECT_EQ(m2, m);
  EXPECT_EQ(t2, t);
}

TEST(Config, FieldErrors) {
  ModelConfig m;
  EXPECT_FALSE(set_model_field(m, "lr0", "1"));
  EXPECT_THROW(set_model_field(m, "channels", "many"), ValueError);
  EXPECT_THROW(set_model_field(m, "channels", "-3"), ValueError);
  EXPECT_THROW(set_model_field(m, "conv_mode", "fancy"), ValueError);
  EXPECT_THROW(set_model_field(m, "bias", "maybe"), ValueError);
  TrainConfig t;
  EXPECT_THROW(set_train_field(t, "lr0", "1e-3x"), ValueError);
}

TEST(Config, FormatDoubleRoundTrips) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal(0, 1) * std::pow(10.0, rng.uniform(-12, 12));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(5e-4), "0.0005");
  EXPECT_EQ(format_double(0.9999), "0.9999");
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, Score) {
  const CliRun r = run({"score", "--psnr", "30.87", "--bicubic", "29.81", "--runtime-ms", "3.91"});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto pos = r.out.find("score ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_NEAR(std::stod(r.out.substr(r.out.rfind("score ") + 6)), 21.09, 0.01);
  EXPECT_EQ(r.out.rfind("# asconvsr score", 0), 0u);
  EXPECT_EQ(run({"score", "--psnr", "30", "--bicubic", "29", "--runtime-ms", "0"}).code, cli::kUsage);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"score", "--psnr", "30"}).code, cli::kUsage);
  EXPECT_EQ(run({"flops", "--width", "8", "--height", "8", "--bogus", "1"}).code, cli::kUsage);
  EXPECT_EQ(run({"flops", "--width", "8", "--height", "8", "--preset", "huge"}).code, cli::kUsage);
  const CliRun bad = run({"flops", "--width", "8", "--height", "8", "--channels", "zero"});
  EXPECT_EQ(bad.code, cli::kUsage);
  EXPECT_NE(bad.err.find("--channels"), std::string::npos) << bad.err;
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST(Cli, FlopsTable) {
  const CliRun r = run({"flops", "--preset", "asconvsr-l", "--width", "1920", "--height", "1080"});
  ASSERT_EQ(r.code, 0) << r.err;
  const FlopsReport rep = flops_estimate(preset_asconvsr_l(), 1080, 1920);
  EXPECT_NE(r.out.find("channels = 128"), std::string::npos);
  EXPECT_NE(r.out.find("block1.conv3"), std::string::npos);
  EXPECT_NE(r.out.find("total flops (mul+add)    " + std::to_string(rep.total_flops())), std::string::npos);
  EXPECT_NE(r.out.find("total macs               " + std::to_string(rep.total_macs())), std::string::npos);
  EXPECT_EQ(run({"flops", "--width", "1920", "--height", "1081"}).code, cli::kDataError);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  TempDir dir("cli");
  std::ofstream(dir.file("m.cfg")) << "channels = 12\nnum_bases = 4\n";
  const CliRun r = run({"flops", "--config", dir.file("m.cfg"), "--num_bases", "6", "--width", "8", "--height", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("channels = 12\n"), std::string::npos);
  EXPECT_NE(r.out.find("num_bases = 6\n"), std::string::npos);
  std::ofstream(dir.file("bad.cfg")) << "channels = 12\nwidth_multiplier = 2\n";
  const CliRun bad = run({"flops", "--config", dir.file("bad.cfg"), "--width", "8", "--height", "8"});
  EXPECT_EQ(bad.code, cli::kUsage);
  EXPECT_NE(bad.err.find("width_multiplier"), std::string::npos);
  EXPECT_EQ(run({"flops", "--config", dir.file("absent.cfg"), "--width", "8", "--height", "8"}).code, cli::kUsage);
}

TEST(Cli, InferWithZeroTailIsNearestNeighbour) {
  TempDir dir("cli");
  Rng rng(7);
  AsConvSR<float> model(preset_asconvsr(), rng);
  model.params().value("tail.weight").fill(0.0f);
  save_checkpoint(make_checkpoint(model), dir.file("zero.ckpt"));
  const TensorF input = quantized_image(rng, 128, 128);
  png_write(input, dir.file("in.png"));
  const CliRun r = run({"infer", "--ckpt", dir.file("zero.ckpt"), "--in", dir.file("in.png"), "--out", dir.file("out.png")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(png_read(dir.file("out.png")), testing::nearest_upsample(input, 2));
  EXPECT_EQ(run({"infer", "--ckpt", dir.file("none.ckpt"), "--in", dir.file("in.png"), "--out", dir.file("o.png")}).code,
            cli::kDataError);
}

TEST(Cli, BenchReport) {
  TempDir dir("cli");
  const CliRun r = run({"bench", "--channels", "4", "--num_bases", "2", "--width", "16", "--height", "16",
                        "--reps", "3", "--json", dir.file("b.json"), "--csv", dir.file("b.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file(dir.file("b.json")));
  EXPECT_EQ(j["reps"], 3);
  EXPECT_EQ(j["rep_ms"].size(), 3u);
  EXPECT_EQ(j["threads"], 1);
  EXPECT_EQ(read_file(dir.file("b.csv")).rfind("model_id,", 0), 0u);
  EXPECT_EQ(run({"bench", "--reps", "2"}).code, cli::kUsage);
}

// train -> eval -> retrain from the echoed header.
TEST(Cli, TrainEvalAndHeaderReproducesRun) {
  TempDir dir("cli");
  Rng rng(8);
  for (const char* stem : {"p", "q"}) write_image(dir.path() / "data" / "HR" / (std::string(stem) + ".png"), rng, 32, 32);
  const std::string data = (dir.path() / "data").string();
  const std::vector<std::string> common{"--channels", "4", "--num_bases", "2", "--total_iters", "4",
                                        "--batch_size", "2", "--lr_patch", "8", "--hr_patch", "16",
                                        "--log_every", "1", "--seed", "5"};
  std::vector<std::string> args{"train", "--data", data, "--out", dir.file("a.ckpt"), "--log", dir.file("a.csv")};
  args.insert(args.end(), common.begin(), common.end());
  const CliRun first = run(args);
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.err.find("synthesized"), std::string::npos);
  EXPECT_EQ(read_file(dir.file("a.csv")).rfind("iter,lr,loss,psnr_eval\n", 0), 0u);

  // The header is valid config text: '#' lines are comments.
  const std::string header = first.out.substr(0, first.out.find("\n#\n") + 3);
  std::ofstream(dir.file("header.cfg")) << header;
  const CliRun second = run({"train", "--data", data, "--out", dir.file("b.ckpt"), "--config", dir.file("header.cfg")});
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(read_file(dir.file("a.ckpt")), read_file(dir.file("b.ckpt")));

  const CliRun eval = run({"eval", "--ckpt", dir.file("a.ckpt"), "--data", data, "--runtime-ms", "4", "--report",
                           dir.file("r.json")});
  ASSERT_EQ(eval.code, 0) << eval.err;
  const auto j = nlohmann::json::parse(read_file(dir.file("r.json")));
  EXPECT_EQ(j["images"].size(), 2u);
  EXPECT_EQ(j["runtime_source"], "given");
  EXPECT_NEAR(j["score"].get<double>(),
              efficiency_score(j["psnr"].get<double>(), j["bicubic_psnr"].get<double>(), 4.0), 1e-12);

  const CliRun measured = run({"eval", "--ckpt", dir.file("a.ckpt"), "--data", data, "--reps", "3"});
  ASSERT_EQ(measured.code, 0) << measured.err;
  EXPECT_NE(measured.out.find("(measured)"), std::string::npos);

  EXPECT_EQ(run({"train", "--data", (dir.path() / "nowhere").string(), "--out", dir.file("c.ckpt")}).code,
            cli::kDataError);
}

TEST(Cli, DivergentTrainingIsNumericFailure) {
  TempDir dir("cli");
  Rng rng(9);
  write_image(dir.path() / "data" / "HR" / "p.png", rng, 32, 32);
  const CliRun r = run({"train", "--data", (dir.path() / "data").string(), "--out", dir.file("x.ckpt"),
                        "--channels", "4", "--num_bases", "2", "--total_iters", "50", "--batch_size", "1",
                        "--lr_patch", "8", "--hr_patch", "16", "--lr0", "1e30"});
  EXPECT_EQ(r.code, cli::kNumericError) << r.err;
  EXPECT_NE(r.err.find("iteration"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace asconv
