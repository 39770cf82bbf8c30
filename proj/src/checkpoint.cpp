#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace evqa {

namespace {

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  size_t offset() const { return off_; }

  const unsigned char* take(size_t n, const char* what) {
    if (off_ + n > bytes_.size())
      throw CheckpointError("checkpoint '" + path_ + "' truncated at offset " +
                            std::to_string(off_) + " while reading " + what);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + off_;
    off_ += n;
    return p;
  }

  uint8_t u8(const char* what) { return *take(1, what); }

  uint16_t u16(const char* what) {
    const auto* p = take(2, what);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }

  uint32_t u32(const char* what) {
    const auto* p = take(4, what);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }

  double f64(const char* what) {
    const auto* p = take(8, what);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  bool done() const { return off_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string path_;
  size_t off_ = 0;
};

}  // namespace

void save_named_tensors(const std::string& path, const NamedTensors& tensors) {
  std::string out;
  out += "EVQA";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw ContractError("tensor name too long: " + name);
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    put_u8(out, static_cast<uint8_t>(t->shape.size()));
    for (int64_t d : t->shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : t->data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("short write to checkpoint '" + path + "'");
}

std::map<std::string, TensorPtr> load_named_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);

  const auto* magic = r.take(4, "magic");
  if (std::memcmp(magic, "EVQA", 4) != 0)
    throw CheckpointError("checkpoint '" + path + "' has bad magic at offset 0");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint '" + path + "' has unsupported version " +
                          std::to_string(version));
  const uint32_t count = r.u32("tensor count");

  std::map<std::string, TensorPtr> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16("name length");
    const auto* name_bytes = r.take(name_len, "name");
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const uint8_t rank = r.u8("rank");
    std::vector<int64_t> shape;
    for (uint8_t d = 0; d < rank; ++d) shape.push_back(static_cast<int64_t>(r.u32("dim")));
    auto t = make_tensor(shape, false, name);
    for (int64_t j = 0; j < t->size(); ++j) t->data[static_cast<size_t>(j)] = r.f64("payload");
    if (!out.emplace(name, t).second)
      throw CheckpointError("checkpoint '" + path + "' repeats tensor '" + name + "'");
  }
  if (!r.done())
    throw CheckpointError("checkpoint '" + path + "' has " + std::to_string(r.offset()) +
                          " bytes consumed but trailing data remains");
  return out;
}

void apply_named_tensors(const NamedTensors& dst, const std::map<std::string, TensorPtr>& src) {
  for (const auto& [name, t] : dst) {
    auto it = src.find(name);
    if (it == src.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape != t->shape)
      throw CheckpointError("checkpoint tensor '" + name + "' has dims " +
                            shape_str(it->second->shape) + ", expected " + shape_str(t->shape));
    t->data = it->second->data;
  }
}

TensorPtr tensor_from_u64(const std::vector<uint64_t>& words, std::string name) {
  auto t = make_tensor({static_cast<int64_t>(words.size())}, false, std::move(name));
  for (size_t i = 0; i < words.size(); ++i)
    std::memcpy(&t->data[i], &words[i], sizeof(double));
  return t;
}

std::vector<uint64_t> u64_from_tensor(const TensorPtr& t) {
  std::vector<uint64_t> out(t->data.size());
  for (size_t i = 0; i < t->data.size(); ++i) std::memcpy(&out[i], &t->data[i], sizeof(uint64_t));
  return out;
}

}  // namespace evqa
