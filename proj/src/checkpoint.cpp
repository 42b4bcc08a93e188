#include "vle/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace vle {

namespace {

constexpr char kEndMagic[4] = {'V', 'E', 'N', 'D'};

class Writer {
 public:
  void bytes(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename U>
  void le(U v) {
    for (size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void f32(float f) { le(std::bit_cast<uint32_t>(f)); }
  void str(const std::string& s, bool wide) {
    if (wide)
      le<uint64_t>(s.size());
    else
      le<uint32_t>(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    str(name, false);
    le<uint32_t>(static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) le<uint64_t>(static_cast<uint64_t>(d));
    for (float f : t.vec()) f32(f);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}
  void need(size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("corrupt checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= uint64_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float f32() { return std::bit_cast<float>(le<uint32_t>()); }
  std::string str(bool wide) {
    const uint64_t n = wide ? le<uint64_t>() : le<uint32_t>();
    return bytes(static_cast<size_t>(n));
  }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = str(false);
    const uint32_t rank = le<uint32_t>();
    if (rank > 8) throw FormatError("corrupt checkpoint: tensor " + name + " has rank " + std::to_string(rank));
    Shape s;
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const auto d = static_cast<int64_t>(le<uint64_t>());
      if (d < 0 || d > (int64_t{1} << 32)) throw FormatError("corrupt checkpoint: bad dimension in " + name);
      s.push_back(d);
      numel *= d;
    }
    need(static_cast<size_t>(numel) * 4);
    std::vector<float> v(static_cast<size_t>(numel));
    for (auto& f : v) f = f32();
    return {std::move(name), Tensor<float>(std::move(s), std::move(v))};
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  KeyValues kv = ckpt.config.to_key_values();
  kv["global_step"] = std::to_string(ckpt.global_step);
  kv["adam.step"] = std::to_string(ckpt.adam.step);
  kv["sampler.rng_state"] = ckpt.sampler_rng;

  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<uint32_t>(ckpt.format_version);
  w.str(format_key_values(kv), true);
  const auto& params = ckpt.params.tensors.items();
  w.le<uint64_t>(params.size() * 3);
  for (const auto& [n, t] : params) w.tensor("param/" + n, t);
  for (const auto& [n, t] : ckpt.adam.m.items()) w.tensor("adam.m/" + n, t);
  for (const auto& [n, t] : ckpt.adam.v.items()) w.tensor("adam.v/" + n, t);
  w.bytes(kEndMagic, 4);

  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + tmp + " for writing");
    f.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!f) throw FormatError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str());
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw FormatError("not a checkpoint (bad magic): " + path);
  Checkpoint ck;
  ck.format_version = r.le<uint32_t>();
  if (ck.format_version != Checkpoint::kFormatVersion)
    throw FormatError("unsupported checkpoint format_version " + std::to_string(ck.format_version) + " (expected " +
                      std::to_string(Checkpoint::kFormatVersion) + ")");
  KeyValues kv = parse_key_values(r.str(true));
  const auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("corrupt checkpoint: manifest lacks " + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  ck.global_step = kv_int("global_step", take("global_step"));
  ck.adam.step = kv_int("adam.step", take("adam.step"));
  ck.sampler_rng = take("sampler.rng_state");
  ck.config = TrainConfig::from_key_values(kv);
  ck.params.config = ck.config.codec;

  const uint64_t count = r.le<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (name.rfind("param/", 0) == 0)
      ck.params.tensors.add(name.substr(6), std::move(t));
    else if (name.rfind("adam.m/", 0) == 0)
      ck.adam.m.add(name.substr(7), std::move(t));
    else if (name.rfind("adam.v/", 0) == 0)
      ck.adam.v.add(name.substr(7), std::move(t));
    else
      throw FormatError("corrupt checkpoint: unexpected tensor " + name);
  }
  if (r.bytes(4) != std::string(kEndMagic, 4) || !r.at_end())
    throw FormatError("corrupt checkpoint: missing end marker");
  // Validate tensor layout against the codec config.
  try {
    BoundCodec<float> probe(ck.params, false);
  } catch (const ContractError& e) {
    throw FormatError(std::string("corrupt checkpoint: ") + e.what());
  }
  return ck;
}

}  // namespace vle
