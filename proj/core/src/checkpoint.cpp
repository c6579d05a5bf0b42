#include "asconv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "asconv/config.hpp"

namespace asconv {
namespace {

constexpr char kMagic[4] = {'A', 'S', 'C', 'V'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const TensorF& t) {
    for (float f : t.data()) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  TensorF floats(const Shape& shape, const char* what) {
    const std::size_t n = shape.numel();
    if (n > (in_.size() - pos_) / 4) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    std::vector<float> data(n);
    for (auto& f : data) f = std::bit_cast<float>(u32(what));
    return TensorF(shape, std::move(data));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const AsConvSR<float>& model, const TrainState* state) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  for (const auto& p : model.params().entries()) ckpt.params.push_back({p.name, p.value});
  if (state) {
    if (!state->adam.empty()) ckpt.adam = state->adam;
    ckpt.iteration = state->iteration;
    ckpt.rng_state = state->rng.state();
  }
  return ckpt;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(format_key_values(model_config_entries(ckpt.config)));
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape().dims()) w.u32(static_cast<std::uint32_t>(d));
    w.floats(p.value);
  }
  w.u8(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    if (a.m.size() != ckpt.params.size() || a.v.size() != ckpt.params.size()) {
      throw ValueError("checkpoint: optimizer state does not match the parameter list");
    }
    w.u64(a.step);
    for (std::size_t i = 0; i < a.m.size(); ++i) {
      if (!(a.m[i].shape() == ckpt.params[i].value.shape()) ||
          !(a.v[i].shape() == ckpt.params[i].value.shape())) {
        throw ValueError("checkpoint: optimizer state shape mismatch for '" +
                         ckpt.params[i].name + "'");
      }
      w.floats(a.m[i]);
      w.floats(a.v[i]);
    }
  }
  w.u64(ckpt.iteration);
  w.str(ckpt.rng_state);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (bytes.compare(0, 4, kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  r.u32("magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  for (const auto& [key, value] : parse_key_values(r.str("config"), "checkpoint config")) {
    try {
      if (!set_model_field(ckpt.config, key, value)) {
        throw FormatError("checkpoint config has unknown key '" + key + "'");
      }
    } catch (const ValueError& e) {
      throw FormatError(std::string("checkpoint config: ") + e.what());
    }
  }
  const std::uint32_t count = r.u32("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray p;
    p.name = r.str("parameter name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > Shape::kMaxRank) {
      throw FormatError("checkpoint parameter '" + p.name + "' has invalid rank " +
                        std::to_string(rank));
    }
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) {
      d = r.u32("dims");
      if (d == 0) throw FormatError("checkpoint parameter '" + p.name + "' has a zero extent");
    }
    p.value = r.floats(Shape(std::span<const std::size_t>(dims)), "parameter values");
    ckpt.params.push_back(std::move(p));
  }
  const std::uint8_t has_adam = r.u8("optimizer flag");
  if (has_adam > 1) throw FormatError("checkpoint optimizer flag is corrupt");
  if (has_adam) {
    AdamState<float> a;
    a.step = r.u64("optimizer step");
    for (const auto& p : ckpt.params) {
      a.m.push_back(r.floats(p.value.shape(), "optimizer moments"));
      a.v.push_back(r.floats(p.value.shape(), "optimizer moments"));
    }
    ckpt.adam = std::move(a);
  }
  ckpt.iteration = r.u64("iteration");
  ckpt.rng_state = r.str("generator state");
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void load_params(AsConvSR<float>& model, const Checkpoint& ckpt) {
  auto& store = model.params();
  for (const auto& p : ckpt.params) {
    if (!store.contains(p.name)) {
      throw ValueError("checkpoint parameter '" + p.name + "' does not exist in the model");
    }
    const Tensor<float>& dst = store.value(p.name);
    if (!(dst.shape() == p.value.shape())) {
      throw ShapeError("parameter '" + p.name + "': checkpoint shape " + p.value.shape().str() +
                       " does not match model shape " + dst.shape().str());
    }
  }
  if (ckpt.params.size() != store.size()) {
    for (const auto& e : store.entries()) {
      bool found = false;
      for (const auto& p : ckpt.params) found = found || p.name == e.name;
      if (!found) throw ValueError("model parameter '" + e.name + "' missing from checkpoint");
    }
  }
  for (const auto& p : ckpt.params) store.value(p.name) = p.value;
}

AsConvSR<float> model_from_checkpoint(const Checkpoint& ckpt) {
  AsConvSR<float> model(ckpt.config);
  load_params(model, ckpt);
  return model;
}

void restore_train_state(const Checkpoint& ckpt, TrainState& state) {
  state.adam = ckpt.adam ? *ckpt.adam : AdamState<float>{};
  state.iteration = ckpt.iteration;
  if (!ckpt.rng_state.empty()) state.rng.set_state(ckpt.rng_state);
}

}  // namespace asconv
