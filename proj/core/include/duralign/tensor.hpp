#pragma once

// Dense row-major tensors and the seeded RNG used everywhere. The scalar type
// is a template parameter: float for training, double for gradient checks.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace duralign {

using Shape = std::vector<int>;

inline int64_t shape_count(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("tensor dimension must be nonnegative");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), v(static_cast<size_t>(shape_count(shape)), T(0)) {}
  Tensor(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (shape_count(shape) != static_cast<int64_t>(v.size()))
      throw std::invalid_argument("tensor shape/data size mismatch");
  }

  static Tensor scalar(T x) {
    Tensor t(Shape{1});
    t.v[0] = x;
    return t;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

template <class T>
Tensor<T> zeros(Shape s) {
  return Tensor<T>(std::move(s));
}

template <class T>
Tensor<T> full(Shape s, T value) {
  Tensor<T> t(std::move(s));
  for (auto& x : t.v) x = value;
  return t;
}

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Stable mixing of seed material into a derived stream seed.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

/// Deterministic RNG with hand-rolled distributions so corpora and training
/// trajectories are byte-identical for a given seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // avoid the all-zero fixed point
    if (state_ == 0) state_ = 0x853C49E6748FEA9Bull;
  }

  uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  double spare_ = 0;
  bool has_spare_ = false;
};

}  // namespace duralign
