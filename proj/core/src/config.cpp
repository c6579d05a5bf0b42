#include "asconv/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

#include "asconv/error.hpp"

namespace asconv {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ValueError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  // std::from_chars for double is missing from older libstdc++.
  std::istringstream is(value);
  is.imbue(std::locale::classic());
  double out = 0.0;
  is >> out;
  if (is.fail() || !is.eof()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

std::string bool_text(bool v) { return v ? "true" : "false"; }

}  // namespace

std::string format_double(double value) {
  char buf[32];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues out;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw FormatError(where + ": empty key");
    if (!seen.insert(key).second) throw FormatError(where + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::string format_key_values(const KeyValues& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

KeyValues model_config_entries(const ModelConfig& c) {
  return {
      {"scale", std::to_string(c.scale)},
      {"unshuffle", std::to_string(c.unshuffle)},
      {"channels", std::to_string(c.channels)},
      {"num_blocks", std::to_string(c.num_blocks)},
      {"num_bases", std::to_string(c.num_bases)},
      {"kernel_size", std::to_string(c.kernel_size)},
      {"conv_mode", to_string(c.conv_mode)},
      {"bias", bool_text(c.bias)},
      {"residual_in_block", bool_text(c.residual_in_block)},
      {"coeff_norm", to_string(c.coeff_norm)},
      {"activation", to_string(c.activation)},
      {"shared_control", bool_text(c.shared_control)},
      {"control_bias", bool_text(c.control_bias)},
      {"global_skip", bool_text(c.global_skip)},
      {"init", to_string(c.init)},
  };
}

KeyValues train_config_entries(const TrainConfig& c) {
  return {
      {"lr0", format_double(c.lr0)},
      {"halve_every", std::to_string(c.halve_every)},
      {"total_iters", std::to_string(c.total_iters)},
      {"batch_size", std::to_string(c.batch_size)},
      {"hr_patch", std::to_string(c.hr_patch)},
      {"lr_patch", std::to_string(c.lr_patch)},
      {"beta1", format_double(c.beta1)},
      {"beta2", format_double(c.beta2)},
      {"adam_eps", format_double(c.adam_eps)},
      {"charbonnier_eps", format_double(c.charbonnier_eps)},
      {"seed", std::to_string(c.seed)},
      {"augment", bool_text(c.augment)},
      {"log_every", std::to_string(c.log_every)},
      {"eval_every", std::to_string(c.eval_every)},
  };
}

bool set_model_field(ModelConfig& c, const std::string& key, const std::string& v) {
  if (key == "scale") c.scale = parse_size(key, v);
  else if (key == "unshuffle") c.unshuffle = parse_size(key, v);
  else if (key == "channels") c.channels = parse_size(key, v);
  else if (key == "num_blocks") c.num_blocks = parse_size(key, v);
  else if (key == "num_bases") c.num_bases = parse_size(key, v);
  else if (key == "kernel_size") c.kernel_size = parse_size(key, v);
  else if (key == "conv_mode") {
    if (v == "plain") c.conv_mode = ConvMode::Plain;
    else if (v == "dynamic") c.conv_mode = ConvMode::Dynamic;
    else if (v == "assembled") c.conv_mode = ConvMode::Assembled;
    else bad_value(key, v, "plain, dynamic or assembled");
  } else if (key == "bias") c.bias = parse_bool(key, v);
  else if (key == "residual_in_block") c.residual_in_block = parse_bool(key, v);
  else if (key == "coeff_norm") {
    if (v == "none") c.coeff_norm = CoeffNorm::None;
    else if (v == "softmax") c.coeff_norm = CoeffNorm::Softmax;
    else bad_value(key, v, "none or softmax");
  } else if (key == "activation") {
    if (v == "relu") c.activation = Activation::Relu;
    else if (v == "none") c.activation = Activation::None;
    else bad_value(key, v, "relu or none");
  } else if (key == "shared_control") c.shared_control = parse_bool(key, v);
  else if (key == "control_bias") c.control_bias = parse_bool(key, v);
  else if (key == "global_skip") c.global_skip = parse_bool(key, v);
  else if (key == "init") {
    if (v == "he_normal") c.init = InitScheme::HeNormal;
    else if (v == "residual_equivalent") c.init = InitScheme::ResidualEquivalent;
    else bad_value(key, v, "he_normal or residual_equivalent");
  } else {
    return false;
  }
  return true;
}

bool set_train_field(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "lr0") c.lr0 = parse_double(key, v);
  else if (key == "halve_every") c.halve_every = parse_size(key, v);
  else if (key == "total_iters") c.total_iters = parse_size(key, v);
  else if (key == "batch_size") c.batch_size = parse_size(key, v);
  else if (key == "hr_patch") c.hr_patch = parse_size(key, v);
  else if (key == "lr_patch") c.lr_patch = parse_size(key, v);
  else if (key == "beta1") c.beta1 = parse_double(key, v);
  else if (key == "beta2") c.beta2 = parse_double(key, v);
  else if (key == "adam_eps") c.adam_eps = parse_double(key, v);
  else if (key == "charbonnier_eps") c.charbonnier_eps = parse_double(key, v);
  else if (key == "seed") c.seed = parse_size(key, v);
  else if (key == "augment") c.augment = parse_bool(key, v);
  else if (key == "log_every") c.log_every = parse_size(key, v);
  else if (key == "eval_every") c.eval_every = parse_size(key, v);
  else return false;
  return true;
}

}  // namespace asconv
