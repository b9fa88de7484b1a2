#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace efclab {

/// Error with a stable machine-readable code ("degenerate-normalization",
/// "unknown-harness", ...) plus a human message.
class EfcError : public std::runtime_error {
 public:
  EfcError(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& what) {
  throw EfcError(std::move(code), what);
}

// 64-bit FNV-1a. Used for task ids, observation hashes, content fingerprints.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based deterministic generator. No global state; identical output
/// on every platform (std:: distributions are not portable bit-for-bit).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

 private:
  std::uint64_t state_;
};

/// Stated 64-bit run-seed mix: FNV over the textual cell key chained into the
/// master seed through splitmix. Replaying the same tuple replays the run.
inline std::uint64_t mix_run_seed(std::uint64_t master_seed, std::string_view task_id,
                                  std::string_view harness_id, std::string_view model_id,
                                  std::string_view budget_level, std::uint64_t replicate) {
  std::string key;
  key.reserve(task_id.size() + harness_id.size() + model_id.size() + budget_level.size() + 8);
  key.append(task_id);
  key.push_back('|');
  key.append(harness_id);
  key.push_back('|');
  key.append(model_id);
  key.push_back('|');
  key.append(budget_level);
  std::uint64_t s = master_seed ^ fnv1a64(key);
  s ^= 0x9E3779B97F4A7C15ull * (replicate + 1);
  std::uint64_t st = s;
  return splitmix64(st);
}

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

/// Shortest-ish deterministic decimal rendering for CSV/JSON side channels.
inline std::string fmt_num(double v, int precision = 12) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace efclab
