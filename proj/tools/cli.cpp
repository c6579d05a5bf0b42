#include "cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "asconv/bench.hpp"
#include "asconv/checkpoint.hpp"
#include "asconv/config.hpp"
#include "asconv/dataset.hpp"
#include "asconv/image_io.hpp"
#include "asconv/metrics.hpp"
#include "asconv/model.hpp"
#include "asconv/ops.hpp"
#include "asconv/resize.hpp"
#include "asconv/training.hpp"

namespace asconv::cli {
namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Preset, optional config file and per-field flag overrides.
struct ConfigOptions {
  std::string preset = "asconvsr";
  std::string file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> keys;  // flags registered on the command
};

void add_config_options(CLI::App* cmd, ConfigOptions& opts, bool with_train) {
  cmd->add_option("--preset", opts.preset, "asconvsr or asconvsr-l")->capture_default_str();
  cmd->add_option("--config", opts.file, "flat key = value config file");
  auto add_keys = [&](const KeyValues& entries, const char* what) {
    for (const auto& [key, value] : entries) {
      opts.keys.push_back(key);
      cmd->add_option("--" + key, opts.flags[key], std::string(what) + " field (default " + value + ")");
    }
  };
  add_keys(model_config_entries(ModelConfig{}), "model");
  if (with_train) add_keys(train_config_entries(TrainConfig{}), "training");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Defaults < preset < file < flags.
void resolve(const CLI::App* cmd, const ConfigOptions& opts, ModelConfig& model, TrainConfig* train) {
  const auto preset = preset_by_name(opts.preset);
  if (!preset) throw UsageError("--preset: unknown preset '" + opts.preset + "'");
  model = *preset;
  auto apply = [&](const std::string& key, const std::string& value, const std::string& where) {
    try {
      if (set_model_field(model, key, value)) return;
      if (train && set_train_field(*train, key, value)) return;
    } catch (const ValueError& e) {
      throw UsageError(where + ": " + e.what());
    }
    throw UsageError(where + ": unknown key '" + key + "'");
  };
  if (!opts.file.empty()) {
    try {
      for (const auto& [k, v] : parse_key_values(read_text(opts.file), opts.file)) apply(k, v, opts.file);
    } catch (const FormatError& e) {
      throw UsageError(e.what());
    }
  }
  for (const auto& key : opts.keys) {
    if (cmd->count("--" + key) > 0) apply(key, opts.flags.at(key), "--" + key);
  }
  try {
    model.validate();
    if (train) train->validate(model.scale);
  } catch (const ValueError& e) {
    throw UsageError(e.what());
  }
}

void echo_header(std::ostream& out, const std::string& command, const KeyValues& extras,
                 const ModelConfig* model, const TrainConfig* train) {
  out << "# asconvsr " << command << "\n";
  for (const auto& [k, v] : extras) out << "# " << k << " = " << v << "\n";
  if (model) out << format_key_values(model_config_entries(*model));
  if (train) out << format_key_values(train_config_entries(*train));
  out << "#\n";
}

void print_warnings(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  ConfigOptions config;
  std::string data, out, log, resume;
  std::size_t threads = 1;
};

int run_train(const CLI::App* cmd, TrainArgs& a, std::ostream& out, std::ostream& err) {
  ModelConfig mc;
  TrainConfig tc;
  resolve(cmd, a.config, mc, &tc);
  echo_header(out, "train",
              {{"preset", a.config.preset}, {"data", a.data}, {"out", a.out}, {"log", a.log},
               {"resume", a.resume}, {"threads", std::to_string(a.threads)}},
              &mc, &tc);
  set_num_threads(a.threads);

  const DatasetIndex index = dataset_scan(a.data);
  std::vector<std::string> warnings;
  std::vector<ImagePair> data;
  for (const auto& e : index.pairs) {
    data.push_back(ImagePair{e.stem, png_read(e.lr_path, &warnings), png_read(e.hr_path, &warnings)});
    if (e.synthesized) warnings.push_back("'" + e.stem + "': LR synthesized into " + e.lr_path);
  }
  print_warnings(err, warnings);
  out << "dataset: " << data.size() << " pairs from " << a.data << "\n";

  Rng init_rng(tc.seed);
  AsConvSR<float> model(mc, init_rng);
  print_warnings(err, model.init_report().notices);
  // Sampling uses its own stream so changing the architecture does not
  // change which crops are drawn.
  TrainState state(tc.seed + 1);
  if (!a.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(a.resume);
    if (!(ckpt.config == mc)) {
      throw UsageError("--resume: checkpoint '" + a.resume + "' was trained with a different model config");
    }
    load_params(model, ckpt);
    restore_train_state(ckpt, state);
    out << "resumed at iteration " << state.iteration << "\n";
  }

  std::ofstream csv;
  if (!a.log.empty()) {
    csv.open(a.log, state.iteration == 0 ? std::ios::trunc : std::ios::app);
    if (!csv) throw IoError("cannot open log '" + a.log + "'");
  }
  const auto log = train_loop(model, data, tc, state, a.log.empty() ? nullptr : &csv);
  for (const auto& r : log) {
    out << "iter " << r.iter << "  lr " << r.lr << "  loss " << fixed(r.loss, 6);
    if (r.psnr_eval) out << "  psnr " << fixed(*r.psnr_eval, 3);
    out << "\n";
  }
  save_checkpoint(make_checkpoint(model, &state), a.out);
  out << "train psnr " << fixed(evaluate_psnr(model, data), 4) << " dB, bicubic "
      << fixed(bicubic_psnr(data), 4) << " dB\n";
  out << "checkpoint written to " << a.out << "\n";
  return kOk;
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, report;
  double runtime_ms = 0.0;
  std::size_t reps = 5, warmup = 1, threads = 1;
};

int run_eval(const CLI::App* cmd, EvalArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const AsConvSR<float> model = model_from_checkpoint(ckpt);
  const bool runtime_given = cmd->count("--runtime-ms") > 0;
  if (runtime_given && !(a.runtime_ms > 0.0)) throw UsageError("--runtime-ms must be positive");
  echo_header(out, "eval",
              {{"ckpt", a.ckpt}, {"data", a.data}, {"report", a.report},
               {"runtime-ms", runtime_given ? format_double(a.runtime_ms) : "bench"},
               {"reps", std::to_string(a.reps)}, {"warmup", std::to_string(a.warmup)},
               {"threads", std::to_string(a.threads)}},
              &ckpt.config, nullptr);
  set_num_threads(a.threads);

  const DatasetIndex index = dataset_scan(a.data);
  std::vector<std::string> warnings;
  double psnr = 0.0, ssim = 0.0, psnr_bic = 0.0, ssim_bic = 0.0;
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  for (const auto& e : index.pairs) {
    const TensorF lr = png_read(e.lr_path, &warnings);
    const TensorF hr = png_read(e.hr_path, &warnings);
    const TensorF sr = model.infer(lr, Mode::Eval);
    const TensorF bic = clamp(bicubic_resize(lr, hr.dim(2), hr.dim(3)), 0.0f, 1.0f);
    const double p = psnr_rgb(sr, hr), s = ssim_rgb(sr, hr);
    const double pb = psnr_rgb(bic, hr), sb = ssim_rgb(bic, hr);
    psnr += p;
    ssim += s;
    psnr_bic += pb;
    ssim_bic += sb;
    images.push_back({{"name", e.stem}, {"psnr", p}, {"ssim", s}, {"bicubic_psnr", pb}, {"bicubic_ssim", sb}});
    out << e.stem << ": psnr " << fixed(p, 4) << "  ssim " << fixed(s, 4) << "  bicubic " << fixed(pb, 4)
        << "\n";
  }
  print_warnings(err, warnings);
  const double n = static_cast<double>(index.pairs.size());
  psnr /= n;
  ssim /= n;
  psnr_bic /= n;
  ssim_bic /= n;

  double runtime = a.runtime_ms;
  if (!runtime_given) {
    const auto& first = index.pairs.front();
    runtime = runtime_bench(model, "checkpoint", first.lr_height, first.lr_width, a.warmup, a.reps)
                  .median_ms;
  }
  const double score = efficiency_score(psnr, psnr_bic, runtime);
  out << "mean psnr " << fixed(psnr, 4) << " dB  ssim " << fixed(ssim, 4) << "\n";
  out << "bicubic psnr " << fixed(psnr_bic, 4) << " dB  ssim " << fixed(ssim_bic, 4) << "\n";
  out << "runtime " << fixed(runtime, 3) << " ms" << (runtime_given ? " (given)" : " (measured)") << "\n";
  out << "score " << fixed(score, 4) << "\n";
  if (!a.report.empty()) {
    nlohmann::ordered_json j;
    j["checkpoint"] = a.ckpt;
    j["data"] = a.data;
    j["images"] = images;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["bicubic_psnr"] = psnr_bic;
    j["bicubic_ssim"] = ssim_bic;
    j["runtime_ms"] = runtime;
    j["runtime_source"] = runtime_given ? "given" : "measured";
    j["score"] = score;
    write_file(a.report, j.dump(2) + "\n");
  }
  return kOk;
}

// --- infer ---------------------------------------------------------------

struct InferArgs {
  std::string ckpt, in, out;
  std::size_t threads = 1;
};

int run_infer(InferArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const AsConvSR<float> model = model_from_checkpoint(ckpt);
  echo_header(out, "infer",
              {{"ckpt", a.ckpt}, {"in", a.in}, {"out", a.out}, {"threads", std::to_string(a.threads)}},
              &ckpt.config, nullptr);
  set_num_threads(a.threads);
  std::vector<std::string> warnings;
  const TensorF lr = png_read(a.in, &warnings);
  print_warnings(err, warnings);
  const TensorF sr = model.infer(lr, Mode::Eval);
  png_write(sr, a.out);
  out << "wrote " << sr.dim(3) << "x" << sr.dim(2) << " image to " << a.out << "\n";
  return kOk;
}

// --- bench ---------------------------------------------------------------

struct BenchArgs {
  ConfigOptions config;
  std::string ckpt, json, csv;
  std::size_t width = 256, height = 256, reps = 5, warmup = 1, threads = 1;
  std::uint64_t seed = 0;
};

int run_bench(const CLI::App* cmd, BenchArgs& a, std::ostream& out) {
  std::optional<AsConvSR<float>> model;
  std::string id;
  if (!a.ckpt.empty()) {
    model.emplace(model_from_checkpoint(load_checkpoint(a.ckpt)));
    id = a.ckpt;
  } else {
    ModelConfig mc;
    resolve(cmd, a.config, mc, nullptr);
    Rng rng(a.seed);
    model.emplace(mc, rng);
    id = a.config.preset;
  }
  echo_header(out, "bench",
              {{"model", id}, {"width", std::to_string(a.width)}, {"height", std::to_string(a.height)},
               {"reps", std::to_string(a.reps)}, {"warmup", std::to_string(a.warmup)},
               {"threads", std::to_string(a.threads)}, {"seed", std::to_string(a.seed)}},
              &model->config(), nullptr);
  set_num_threads(a.threads);
  const BenchReport r = runtime_bench(*model, id, a.height, a.width, a.warmup, a.reps, a.seed);
  const std::string json = bench_to_json(r);
  out << json << "\n";
  if (!a.json.empty()) write_file(a.json, json + "\n");
  if (!a.csv.empty()) write_file(a.csv, bench_csv_header() + "\n" + bench_csv_row(r) + "\n");
  return kOk;
}

// --- flops ---------------------------------------------------------------

struct FlopsArgs {
  ConfigOptions config;
  std::size_t width = 0, height = 0;
};

int run_flops(const CLI::App* cmd, FlopsArgs& a, std::ostream& out) {
  ModelConfig mc;
  resolve(cmd, a.config, mc, nullptr);
  echo_header(out, "flops",
              {{"preset", a.config.preset}, {"width", std::to_string(a.width)},
               {"height", std::to_string(a.height)}},
              &mc, nullptr);
  const FlopsReport rep = flops_estimate(mc, a.height, a.width);
  char line[256];
  auto row = [&](const FlopsEntry& e) {
    std::snprintf(line, sizeof line, "%-28s %6zu %6zu %3zu %5zux%-5zu %18llu %18llu\n", e.layer.c_str(),
                  e.c_in, e.c_out, e.kernel, e.width, e.height,
                  static_cast<unsigned long long>(e.flops), static_cast<unsigned long long>(e.macs));
    out << line;
  };
  std::snprintf(line, sizeof line, "%-28s %6s %6s %3s %11s %18s %18s\n", "layer", "c_in", "c_out", "k",
                "size", "flops", "macs");
  out << line;
  for (const auto& e : rep.convs) row(e);
  out << "dynamic overhead:\n";
  for (const auto& e : rep.overhead) row(e);
  out << "conv flops (mul+add)     " << rep.conv_flops << "\n";
  out << "conv macs                " << rep.conv_macs << "\n";
  out << "overhead flops (mul+add) " << rep.overhead_flops << "\n";
  out << "overhead macs            " << rep.overhead_macs << "\n";
  out << "total flops (mul+add)    " << rep.total_flops() << "\n";
  out << "total macs               " << rep.total_macs() << "\n";
  out << "params                   " << param_count(mc) << "\n";
  return kOk;
}

// --- score ---------------------------------------------------------------

struct ScoreArgs {
  double psnr = 0.0, bicubic = 0.0, runtime_ms = 0.0, c = 0.1;
};

int run_score(ScoreArgs& a, std::ostream& out) {
  echo_header(out, "score",
              {{"psnr", format_double(a.psnr)}, {"bicubic", format_double(a.bicubic)},
               {"runtime-ms", format_double(a.runtime_ms)}, {"c", format_double(a.c)}},
              nullptr, nullptr);
  double s = 0.0;
  try {
    s = efficiency_score(a.psnr, a.bicubic, a.runtime_ms, a.c);
  } catch (const ValueError& e) {
    throw UsageError(e.what());
  }
  out << "score " << fixed(s, 4) << "\n";
  return kOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"AsConvSR x2 super-resolution: train, evaluate, infer and benchmark", "asconvsr"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model on an HR[/LR] PNG folder");
  add_config_options(train_cmd, train.config, true);
  train_cmd->add_option("--data", train.data, "dataset root with HR/ and optional LR/")->required();
  train_cmd->add_option("--out", train.out, "checkpoint to write")->required();
  train_cmd->add_option("--log", train.log, "CSV training log");
  train_cmd->add_option("--resume", train.resume, "checkpoint to continue from");
  train_cmd->add_option("--threads", train.threads, "conv worker threads")->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM against HR, bicubic baseline and score");
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", eval.data, "dataset root with HR/ and optional LR/")->required();
  eval_cmd->add_option("--report", eval.report, "JSON report path");
  eval_cmd->add_option("--runtime-ms", eval.runtime_ms, "runtime for the score instead of a bench");
  eval_cmd->add_option("--reps", eval.reps, "timed repetitions")->check(CLI::Range(3, 1000000));
  eval_cmd->add_option("--warmup", eval.warmup, "warmup runs")->check(CLI::Range(1, 1000000));
  eval_cmd->add_option("--threads", eval.threads, "conv worker threads")->check(CLI::PositiveNumber);

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "upscale one PNG");
  infer_cmd->add_option("--ckpt", infer.ckpt, "checkpoint")->required();
  infer_cmd->add_option("--in", infer.in, "input PNG")->required();
  infer_cmd->add_option("--out", infer.out, "output PNG")->required();
  infer_cmd->add_option("--threads", infer.threads, "conv worker threads")->check(CLI::PositiveNumber);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "time forward passes on a random input");
  add_config_options(bench_cmd, bench.config, false);
  bench_cmd->add_option("--ckpt", bench.ckpt, "checkpoint (instead of --preset)");
  bench_cmd->add_option("--width", bench.width, "LR width")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--height", bench.height, "LR height")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--reps", bench.reps, "timed repetitions")->check(CLI::Range(3, 1000000));
  bench_cmd->add_option("--warmup", bench.warmup, "warmup runs")->check(CLI::Range(1, 1000000));
  bench_cmd->add_option("--threads", bench.threads, "conv worker threads")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench.seed, "input and init seed");
  bench_cmd->add_option("--json", bench.json, "write the report as JSON");
  bench_cmd->add_option("--csv", bench.csv, "write the report as a CSV row");

  FlopsArgs flops;
  auto* flops_cmd = app.add_subcommand("flops", "per-layer FLOPs for an LR input size");
  add_config_options(flops_cmd, flops.config, false);
  flops_cmd->add_option("--width", flops.width, "LR width")->required()->check(CLI::PositiveNumber);
  flops_cmd->add_option("--height", flops.height, "LR height")->required()->check(CLI::PositiveNumber);

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "efficiency score from PSNR and runtime");
  score_cmd->add_option("--psnr", score.psnr, "model PSNR (dB)")->required();
  score_cmd->add_option("--bicubic", score.bicubic, "bicubic PSNR (dB)")->required();
  score_cmd->add_option("--runtime-ms", score.runtime_ms, "runtime in ms")->required();
  score_cmd->add_option("--c", score.c, "score constant")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_cmd, train, out, err);
    if (eval_cmd->parsed()) return run_eval(eval_cmd, eval, out, err);
    if (infer_cmd->parsed()) return run_infer(infer, out, err);
    if (bench_cmd->parsed()) return run_bench(bench_cmd, bench, out);
    if (flops_cmd->parsed()) return run_flops(flops_cmd, flops, out);
    if (score_cmd->parsed()) return run_score(score, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace asconv::cli
