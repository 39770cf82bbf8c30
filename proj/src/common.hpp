#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace evqa {

// Status values double as process exit codes; keep them stable.
enum class Status : int {
  Ok = 0,
  Internal = 1,
  Config = 2,
  Checkpoint = 3,
  Input = 4,
  Numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(Status st, const std::string& msg) : std::runtime_error(msg), status_(st) {}
  Status status() const noexcept { return status_; }

 private:
  Status status_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(Status::Internal, m) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& m) : Error(Status::Internal, m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error(Status::Internal, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(Status::Numeric, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(Status::Config, m) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m) : Error(Status::Checkpoint, m) {}
};
struct InputError : Error {
  explicit InputError(const std::string& m) : Error(Status::Input, m) {}
};

// xoshiro256** with splitmix64 seeding. Hand-rolled so that streams are
// bit-reproducible across standard library versions; the serialized state
// goes into checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) {
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      w = z ^ (z >> 31);
    }
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  // Standard normal via Box-Muller; one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  std::vector<uint64_t> state() const {
    std::vector<uint64_t> out(s_, s_ + 4);
    out.push_back(has_spare_ ? 1u : 0u);
    uint64_t bits = 0;
    std::memcpy(&bits, &spare_, sizeof(bits));
    out.push_back(bits);
    return out;
  }

  void restore(const std::vector<uint64_t>& st) {
    if (st.size() != 6) throw CheckpointError("rng state must have 6 words, got " + std::to_string(st.size()));
    for (int i = 0; i < 4; ++i) s_[i] = st[static_cast<size_t>(i)];
    has_spare_ = st[4] != 0;
    std::memcpy(&spare_, &st[5], sizeof(spare_));
  }

 private:
  uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace evqa
