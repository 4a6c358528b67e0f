#include "mfg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mfg {

namespace {

constexpr char kMagic[8] = {'M', 'F', 'G', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i)
      r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

class Writer {
public:
  void u64(std::uint64_t v) {
    v = to_little(v);
    char buf[8];
    std::memcpy(buf, &v, 8);
    out_.append(buf, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string &s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(const char *data, std::size_t n) { out_.append(data, n); }
  void params(const nn::MlpParams &p) {
    for (std::size_t i = 0, n = p.parameter_count(); i < n; ++i)
      f64(p.at(i));
  }
  std::string take() { return std::move(out_); }

private:
  std::string out_;
};

class Reader {
public:
  explicit Reader(const std::string &in) : in_(in) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, in_.data() + pos_, 8);
    pos_ += 8;
    return to_little(v);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_raw(const char *data, std::size_t n) {
    need(n);
    if (std::memcmp(in_.data() + pos_, data, n) != 0)
      throw IoError("not a checkpoint file (bad magic)");
    pos_ += n;
  }
  void params(nn::MlpParams &p) {
    for (std::size_t i = 0, n = p.parameter_count(); i < n; ++i)
      p.at(i) = f64();
  }
  bool done() const { return pos_ == in_.size(); }

private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_)
      throw IoError("truncated checkpoint");
  }
  const std::string &in_;
  std::size_t pos_ = 0;
};

} // namespace

std::string encode_checkpoint(const Checkpoint &ckpt) {
  ckpt.params.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u64(kCheckpointVersion);
  w.u64(ckpt.metadata.size());
  for (const auto &[k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  const auto sizes = ckpt.params.layer_sizes();
  w.u64(sizes.size());
  for (std::size_t s : sizes)
    w.u64(s);
  w.params(ckpt.params);

  const nn::OptimState &o = ckpt.optim;
  w.u64(static_cast<std::uint64_t>(o.kind));
  w.f64(o.beta1);
  w.f64(o.beta2);
  w.f64(o.eps);
  w.f64(o.weight_decay);
  w.u64(o.step);
  const bool has_moments = o.m.layer_sizes() == sizes;
  w.u64(has_moments ? 1 : 0);
  if (has_moments) {
    w.params(o.m);
    w.params(o.v);
  }
  w.u64(ckpt.epoch);
  w.str(ckpt.rng_state);
  return w.take();
}

Checkpoint decode_checkpoint(const std::string &bytes) {
  Reader r(bytes);
  r.expect_raw(kMagic, sizeof kMagic);
  if (const auto version = r.u64(); version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) {
    std::string key = r.str();
    ckpt.metadata[key] = r.str();
  }
  const std::uint64_t layers = r.u64();
  if (layers < 3 || layers > 1024)
    throw IoError("checkpoint has an invalid layer count");
  std::vector<std::size_t> sizes;
  for (std::uint64_t i = 0; i < layers; ++i) {
    const std::uint64_t s = r.u64();
    if (s == 0 || s > (1u << 24))
      throw IoError("checkpoint has an invalid layer size");
    sizes.push_back(s);
  }
  ckpt.params = nn::MlpParams::zeros(sizes);
  r.params(ckpt.params);

  nn::OptimState &o = ckpt.optim;
  const std::uint64_t kind = r.u64();
  if (kind > static_cast<std::uint64_t>(nn::OptimizerKind::AdamW))
    throw IoError("checkpoint has an unknown optimizer kind");
  o.kind = static_cast<nn::OptimizerKind>(kind);
  o.beta1 = r.f64();
  o.beta2 = r.f64();
  o.eps = r.f64();
  o.weight_decay = r.f64();
  o.step = r.u64();
  if (r.u64() == 1) {
    o.m = nn::MlpParams::zeros(sizes);
    o.v = nn::MlpParams::zeros(sizes);
    r.params(o.m);
    r.params(o.v);
  }
  ckpt.epoch = r.u64();
  ckpt.rng_state = r.str();
  if (!r.done())
    throw IoError("trailing bytes after checkpoint");
  return ckpt;
}

void write_checkpoint(const std::string &path, const Checkpoint &ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

std::string rng_to_string(const nn::Rng &rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

nn::Rng rng_from_string(const std::string &state) {
  nn::Rng rng;
  if (state.empty())
    return rng;
  std::istringstream in(state);
  in >> rng;
  if (!in)
    throw IoError("corrupt RNG state in checkpoint");
  return rng;
}

} // namespace mfg
