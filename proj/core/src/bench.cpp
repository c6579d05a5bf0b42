#include "asconv/bench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "asconv/ops.hpp"
#include "asconv/rng.hpp"

namespace asconv {

double median(std::vector<double> values) {
  if (values.empty()) throw ValueError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string platform_string() {
  std::string out;
  utsname u{};
  if (uname(&u) == 0) out = std::string(u.sysname) + " " + u.release + " " + u.machine;
#if defined(__clang__)
  out += ", clang " __clang_version__;
#elif defined(__GNUC__)
  out += ", gcc " __VERSION__;
#endif
  return out;
}

TensorF bench_input(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  return rng_fill<float>(rng, Shape{1, 3, height, width}, Uniform{0.0, 1.0});
}

BenchReport runtime_bench(const AsConvSR<float>& model, const std::string& model_id,
                          std::size_t height, std::size_t width, std::size_t warmup,
                          std::size_t reps, std::uint64_t seed) {
  if (warmup < 1) throw ValueError("runtime_bench: warmup must be >= 1");
  if (reps < 3) throw ValueError("runtime_bench: reps must be >= 3");
  const TensorF input = bench_input(height, width, seed);
  for (std::size_t i = 0; i < warmup; ++i) model.infer(input);

  BenchReport r;
  r.model_id = model_id;
  r.height = height;
  r.width = width;
  r.warmup = warmup;
  r.reps = reps;
  TensorF out;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    out = model.infer(input);
    const auto t1 = std::chrono::steady_clock::now();
    r.rep_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double total = 0.0;
  for (float v : out.data()) total += v;
  r.output_mean = total / static_cast<double>(out.numel());
  r.median_ms = median(r.rep_ms);
  r.mean_ms = std::accumulate(r.rep_ms.begin(), r.rep_ms.end(), 0.0) / static_cast<double>(reps);
  r.min_ms = *std::min_element(r.rep_ms.begin(), r.rep_ms.end());
  const FlopsReport f = flops_estimate(model.config(), height, width);
  r.flops = f.total_flops();
  r.macs = f.total_macs();
  r.params = model.param_count();
  r.threads = num_threads();
  r.platform = platform_string();
  return r;
}

std::string bench_to_json(const BenchReport& r) {
  nlohmann::ordered_json j;
  j["model_id"] = r.model_id;
  j["height"] = r.height;
  j["width"] = r.width;
  j["warmup"] = r.warmup;
  j["reps"] = r.reps;
  j["rep_ms"] = r.rep_ms;
  j["median_ms"] = r.median_ms;
  j["mean_ms"] = r.mean_ms;
  j["min_ms"] = r.min_ms;
  j["flops"] = r.flops;
  j["macs"] = r.macs;
  j["params"] = r.params;
  j["output_mean"] = r.output_mean;
  j["psnr"] = r.psnr ? nlohmann::ordered_json(*r.psnr) : nlohmann::ordered_json(nullptr);
  j["score"] = r.score ? nlohmann::ordered_json(*r.score) : nlohmann::ordered_json(nullptr);
  j["precision"] = r.precision;
  j["threads"] = r.threads;
  j["platform"] = r.platform;
  return j.dump(2);
}

std::string bench_csv_header() {
  return "model_id,height,width,warmup,reps,median_ms,mean_ms,min_ms,flops,macs,params,output_mean,psnr,score,"
         "precision,threads,platform";
}

std::string bench_csv_row(const BenchReport& r) {
  std::ostringstream os;
  os.precision(9);
  auto quoted = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  os << quoted(r.model_id) << ',' << r.height << ',' << r.width << ',' << r.warmup << ',' << r.reps
     << ',' << r.median_ms << ',' << r.mean_ms << ',' << r.min_ms << ',' << r.flops << ','
     << r.macs << ',' << r.params << ',' << r.output_mean << ',';
  if (r.psnr) os << *r.psnr;
  os << ',';
  if (r.score) os << *r.score;
  os << ',' << r.precision << ',' << r.threads << ',' << quoted(r.platform);
  return os.str();
}

}  // namespace asconv
