#pragma once

// Core utilities shared across the library: error type, deterministic RNG,
// flat tensors, a small thread pool, checksums and config parsing.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace s4ecg {

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256** seeded via splitmix64, with explicit
// distribution implementations so streams are reproducible across platforms
// (std::shuffle / std::*_distribution are implementation-defined).
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Independent stream derived from (master, stream); used so parallel work
  // is deterministic regardless of scheduling.
  static Rng fork(uint64_t master, uint64_t stream) {
    uint64_t sm = master ^ (0x9e3779b97f4a7c15ull + stream * 0xff51afd7ed558ccdull);
    return Rng(splitmix64(sm));
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    uint64_t result = rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  uint64_t uniform_int(uint64_t n) {
    require(n > 0, "uniform_int: n must be positive");
    // rejection sampling to remove modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state_string() const {
    std::ostringstream os;
    os << s_[0] << " " << s_[1] << " " << s_[2] << " " << s_[3] << " "
       << (has_spare_ ? 1 : 0) << " " << spare_;
    return os.str();
  }

  void restore_state(const std::string& text) {
    std::istringstream is(text);
    int spare_flag = 0;
    is >> s_[0] >> s_[1] >> s_[2] >> s_[3] >> spare_flag >> spare_;
    require(!is.fail(), "Rng::restore_state: malformed state string");
    has_spare_ = spare_flag != 0;
  }

 private:
  uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stateless hash used for counter-based randomness (dropout masks).
inline uint64_t hash_mix(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// ---------------------------------------------------------------------------
// Tensor: contiguous row-major buffer with a small shape vector.
// ---------------------------------------------------------------------------

template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(size_t(count(shape)), T(0));
  }
  Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    require(int64_t(data.size()) == count(shape), "Tensor: shape/data size mismatch");
  }

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  int64_t size() const { return int64_t(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  int rank() const { return int(shape.size()); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](int64_t i) { return data[size_t(i)]; }
  const T& operator[](int64_t i) const { return data[size_t(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

inline std::string shape_string(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---------------------------------------------------------------------------
// Thread pool. Work is split into index chunks; tasks write disjoint output
// slices so results do not depend on scheduling.
// ---------------------------------------------------------------------------

class ThreadPool {
 public:
  explicit ThreadPool(int n_threads) {
    n_threads = std::max(1, n_threads);
    for (int i = 0; i < n_threads - 1; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int threads() const { return int(workers_.size()) + 1; }

  // Runs fn(begin, end) over [0, n) split into roughly equal chunks, one per
  // thread. Blocks until all chunks finish. Not reentrant.
  void run_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int nt = std::min<int64_t>(threads(), n);
    if (nt == 1) {
      fn(0, n);
      return;
    }
    std::atomic<int> remaining(nt - 1);
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (int t = 1; t < nt; ++t) {
        int64_t b = n * t / nt, e = n * (t + 1) / nt;
        tasks_.emplace_back([&fn, b, e, &remaining] {
          fn(b, e);
          remaining.fetch_sub(1, std::memory_order_acq_rel);
        });
      }
    }
    cv_.notify_all();
    fn(0, n / nt);  // chunk 0 runs on the calling thread
    while (remaining.load(std::memory_order_acquire) != 0) {
      std::unique_lock<std::mutex> lk(mu_);
      if (!tasks_.empty()) {  // help out if a worker has not picked up yet
        auto task = std::move(tasks_.back());
        tasks_.pop_back();
        lk.unlock();
        task();
      } else {
        lk.unlock();
        std::this_thread::yield();
      }
    }
  }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.back());
        tasks_.pop_back();
      }
      task();
    }
  }

  std::vector<std::thread> workers_;
  std::vector<std::function<void()>> tasks_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
};

inline int default_thread_count() {
  if (const char* env = std::getenv("S4ECG_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? int(hc) : 1;
}

inline ThreadPool& global_pool() {
  static ThreadPool pool(default_thread_count());
  return pool;
}

inline void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  global_pool().run_chunks(n, fn);
}

inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  parallel_chunks(n, [&fn](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) fn(i);
  });
}

// ---------------------------------------------------------------------------
// CRC32 (IEEE, reflected) for archive blob integrity.
// ---------------------------------------------------------------------------

inline uint32_t crc32(const void* bytes, size_t n, uint32_t seed = 0) {
  static const auto table = [] {
    std::vector<uint32_t> t(256);
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xffffffffu;
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Small string / config helpers.
// ---------------------------------------------------------------------------

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Flat `key = value` documents (one pair per line, '#' comments).
inline std::map<std::string, std::string> parse_flat_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(line_no) + ": expected key = value");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

}  // namespace s4ecg
