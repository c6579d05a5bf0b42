#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asconv/model.hpp"

namespace asconv {

struct BenchReport {
  std::string model_id;
  std::size_t height = 0;  // LR input
  std::size_t width = 0;
  std::size_t warmup = 0;
  std::size_t reps = 0;
  std::vector<double> rep_ms;  // timed repetitions only
  double median_ms = 0.0;
  double mean_ms = 0.0;
  double min_ms = 0.0;
  std::uint64_t flops = 0;  // conv + overhead, multiplies + adds
  std::uint64_t macs = 0;
  std::size_t params = 0;
  double output_mean = 0.0;  // of the last output; equal across runs with the same seed
  std::optional<double> psnr;
  std::optional<double> score;
  std::string precision = "fp32";
  std::size_t threads = 1;
  std::string platform;
};

/// Middle order statistic; mean of the two middle values for even counts.
double median(std::vector<double> values);

/// OS, architecture and compiler of this build.
std::string platform_string();

/// The benchmark input: uniform [0,1) values of shape [1, 3, height, width]
/// drawn from `seed`.
TensorF bench_input(std::size_t height, std::size_t width, std::uint64_t seed);

/// `warmup` discarded then `reps` timed evaluation-mode forwards on a fixed
/// uniform [0,1) input of shape [1, 3, height, width] drawn from `seed`.
/// Throws ValueError when warmup < 1 or reps < 3.
BenchReport runtime_bench(const AsConvSR<float>& model, const std::string& model_id,
                          std::size_t height, std::size_t width, std::size_t warmup,
                          std::size_t reps, std::uint64_t seed = 0);

std::string bench_to_json(const BenchReport& report);
std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& report);

}  // namespace asconv
