#include "fanav/nn.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "fanav/rng.hpp"

namespace fanav {

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "' (expected relu|tanh)");
}

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

MlpLayout::MlpLayout(std::vector<int> widths, std::vector<Activation> hidden)
    : widths_(std::move(widths)), hidden_(std::move(hidden)) {
  if (widths_.size() < 2) throw ShapeError("MlpLayout needs at least an input and an output width");
  if (hidden_.size() != widths_.size() - 2) {
    throw ShapeError("MlpLayout: one activation per hidden layer required");
  }
  for (int w : widths_) {
    if (w < 1) throw ShapeError("MlpLayout: widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(offsets_.back() +
                       static_cast<std::size_t>(widths_[l] * widths_[l + 1] + widths_[l + 1]));
  }
}

MlpLayout MlpLayout::make(int in, const std::vector<int>& hidden, int out, Activation act) {
  std::vector<int> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  return MlpLayout(std::move(widths), std::vector<Activation>(hidden.size(), act));
}

const NetRecord& Checkpoint::net(const std::string& name) const {
  for (const auto& n : nets) {
    if (n.name == name) return n;
  }
  throw FormatError("checkpoint has no network named '" + name + "'", 0);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& n : nets) {
    if (n.name == name) return true;
  }
  return false;
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint metadata lacks '" + key + "'", 0);
  return it->second;
}

namespace {

constexpr char kMagic[6] = {'F', 'A', 'M', 'L', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

struct Out {
  std::vector<char> buf;
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void vec(const std::vector<double>& v) {
    put<std::uint64_t>(v.size());
    const auto* p = reinterpret_cast<const char*>(v.data());
    buf.insert(buf.end(), p, p + v.size() * sizeof(double));
  }
};

struct In {
  const std::vector<char>& buf;
  std::size_t pos = 0;
  void raw(void* out, std::size_t n) {
    if (buf.size() - pos < n) throw FormatError("truncated checkpoint", pos);
    std::memcpy(out, buf.data() + pos, n);
    pos += n;
  }
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    if (n > buf.size() - pos) throw FormatError("string length exceeds checkpoint size", pos);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<double> vec() {
    const auto n = get<std::uint64_t>();
    if (n > (buf.size() - pos) / sizeof(double)) {
      throw FormatError("vector length exceeds checkpoint size", pos);
    }
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
};

std::vector<char> serialize(const Checkpoint& ck) {
  Out o;
  o.buf.insert(o.buf.end(), kMagic, kMagic + sizeof kMagic);
  o.put<std::uint32_t>(kVersion);
  o.put<std::uint32_t>(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    o.str(k);
    o.str(v);
  }
  o.put<std::uint32_t>(static_cast<std::uint32_t>(ck.nets.size()));
  for (const auto& n : ck.nets) {
    o.str(n.name);
    o.put<std::uint32_t>(static_cast<std::uint32_t>(n.layout.widths().size()));
    for (int w : n.layout.widths()) o.put<std::uint32_t>(static_cast<std::uint32_t>(w));
    for (auto a : n.layout.activations()) o.put<std::uint8_t>(static_cast<std::uint8_t>(a));
    o.vec(n.params);
    o.put<std::uint8_t>(n.has_adam ? 1 : 0);
    if (n.has_adam) {
      o.put<std::uint64_t>(n.adam_t);
      o.put<double>(n.adam_lr);
      o.put<double>(n.adam_beta1);
      o.put<double>(n.adam_beta2);
      o.put<double>(n.adam_eps);
      o.vec(n.adam_m);
      o.vec(n.adam_v);
    }
  }
  return std::move(o.buf);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize(ck);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  In in{buf};
  char magic[6];
  in.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a checkpoint file (bad magic)", 0);
  }
  const std::size_t vpos = in.pos;
  if (in.get<std::uint32_t>() != kVersion) throw FormatError("unsupported checkpoint version", vpos);
  Checkpoint ck;
  const auto n_meta = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = in.str();
    ck.meta[k] = in.str();
  }
  const auto n_nets = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_nets; ++i) {
    NetRecord r;
    r.name = in.str();
    const std::size_t wpos = in.pos;
    const auto nw = in.get<std::uint32_t>();
    if (nw < 2 || nw > 64) throw FormatError("implausible layer count", wpos);
    std::vector<int> widths(nw);
    for (auto& w : widths) w = static_cast<int>(in.get<std::uint32_t>());
    std::vector<Activation> acts(nw - 2);
    for (auto& a : acts) {
      const std::size_t apos = in.pos;
      const auto code = in.get<std::uint8_t>();
      if (code > 1) throw FormatError("unknown activation code", apos);
      a = static_cast<Activation>(code);
    }
    try {
      r.layout = MlpLayout(widths, acts);
    } catch (const ShapeError& e) {
      throw FormatError(e.what(), wpos);
    }
    const std::size_t ppos = in.pos;
    r.params = in.vec();
    if (r.params.size() < r.layout.param_count()) {
      throw FormatError("parameter vector shorter than layout of '" + r.name + "'", ppos);
    }
    r.has_adam = in.get<std::uint8_t>() != 0;
    if (r.has_adam) {
      r.adam_t = in.get<std::uint64_t>();
      r.adam_lr = in.get<double>();
      r.adam_beta1 = in.get<double>();
      r.adam_beta2 = in.get<double>();
      r.adam_eps = in.get<double>();
      r.adam_m = in.vec();
      r.adam_v = in.vec();
    }
    ck.nets.push_back(std::move(r));
  }
  if (in.pos != buf.size()) throw FormatError("trailing bytes in checkpoint", in.pos);
  return ck;
}

std::uint64_t checkpoint_digest(const Checkpoint& ck) {
  const auto bytes = serialize(ck);
  return fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()),
                                              bytes.size()));
}

}  // namespace fanav
