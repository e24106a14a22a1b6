#pragma once

// Iterative radix-2 FFT over a plain re/im pair type, with cached plans and
// helpers for zero-padded causal convolution of real channel data.

#include <complex>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "s4ecg/core.hpp"

namespace s4ecg {

template <typename T>
struct cplx {
  T re = 0, im = 0;
  cplx() = default;
  cplx(T r, T i) : re(r), im(i) {}
};

template <typename T>
inline cplx<T> operator+(cplx<T> a, cplx<T> b) { return {a.re + b.re, a.im + b.im}; }
template <typename T>
inline cplx<T> operator-(cplx<T> a, cplx<T> b) { return {a.re - b.re, a.im - b.im}; }
template <typename T>
inline cplx<T> operator*(cplx<T> a, cplx<T> b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}
template <typename T>
inline cplx<T> operator*(T s, cplx<T> a) { return {s * a.re, s * a.im}; }
template <typename T>
inline cplx<T> operator*(cplx<T> a, T s) { return {s * a.re, s * a.im}; }
template <typename T>
inline cplx<T> conj(cplx<T> a) { return {a.re, -a.im}; }

template <typename T>
struct FftPlan {
  int n = 0;
  std::vector<int> rev;         // bit-reversal permutation
  std::vector<cplx<T>> w;       // forward twiddles, per-stage concatenated
};

template <typename T>
inline const FftPlan<T>& fft_plan(int n) {
  require(n > 0 && (n & (n - 1)) == 0, "fft: size must be a power of two");
  static std::mutex mu;
  static std::unordered_map<int, std::unique_ptr<FftPlan<T>>> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return *it->second;

  auto plan = std::make_unique<FftPlan<T>>();
  plan->n = n;
  plan->rev.resize(n);
  int log_n = 0;
  while ((1 << log_n) < n) ++log_n;
  for (int i = 0; i < n; ++i) {
    int r = 0;
    for (int b = 0; b < log_n; ++b) r |= ((i >> b) & 1) << (log_n - 1 - b);
    plan->rev[i] = r;
  }
  // twiddles for each stage length 2,4,...,n; stage m stores m/2 factors
  plan->w.reserve(n);
  for (int m = 2; m <= n; m <<= 1) {
    for (int k = 0; k < m / 2; ++k) {
      double a = -6.283185307179586476925 * k / m;
      plan->w.emplace_back(T(std::cos(a)), T(std::sin(a)));
    }
  }
  const FftPlan<T>& ref = *plan;
  cache.emplace(n, std::move(plan));
  return ref;
}

// In-place forward DFT (unnormalized).
template <typename T>
inline void fft_inplace(cplx<T>* a, const FftPlan<T>& p) {
  const int n = p.n;
  for (int i = 0; i < n; ++i) {
    int r = p.rev[i];
    if (i < r) std::swap(a[i], a[r]);
  }
  const cplx<T>* w = p.w.data();
  for (int m = 2; m <= n; m <<= 1) {
    const int h = m / 2;
    for (int s = 0; s < n; s += m) {
      cplx<T>* lo = a + s;
      cplx<T>* hi = a + s + h;
      for (int k = 0; k < h; ++k) {
        cplx<T> t = w[k] * hi[k];
        hi[k] = lo[k] - t;
        lo[k] = lo[k] + t;
      }
    }
    w += h;
  }
}

// In-place inverse DFT (includes the 1/n factor).
template <typename T>
inline void ifft_inplace(cplx<T>* a, const FftPlan<T>& p) {
  const int n = p.n;
  for (int i = 0; i < n; ++i) a[i].im = -a[i].im;
  fft_inplace(a, p);
  const T s = T(1) / T(n);
  for (int i = 0; i < n; ++i) {
    a[i].re *= s;
    a[i].im *= -s;
  }
}

inline int next_pow2(int64_t n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// FFT of two real sequences packed as one complex transform.
// xa, xb have length `len` and are zero-padded to plan size; outputs are the
// full spectra of each sequence.
template <typename T>
inline void fft_two_real(const T* xa, const T* xb, int len, const FftPlan<T>& p,
                         cplx<T>* spec_a, cplx<T>* spec_b, cplx<T>* work) {
  const int n = p.n;
  for (int i = 0; i < len; ++i) work[i] = {xa[i], xb ? xb[i] : T(0)};
  for (int i = len; i < n; ++i) work[i] = {T(0), T(0)};
  fft_inplace(work, p);
  for (int k = 0; k < n; ++k) {
    cplx<T> z = work[k];
    cplx<T> zc = conj(work[(n - k) & (n - 1)]);
    // a = (z + conj(z[-k]))/2, b = (z - conj(z[-k]))/(2i)
    spec_a[k] = {T(0.5) * (z.re + zc.re), T(0.5) * (z.im + zc.im)};
    if (spec_b) spec_b[k] = {T(0.5) * (z.im - zc.im), T(-0.5) * (z.re - zc.re)};
  }
}

// Inverse transform of two conjugate-symmetric spectra whose time-domain
// signals are real; writes the first `len` samples of each.
template <typename T>
inline void ifft_two_real(const cplx<T>* spec_a, const cplx<T>* spec_b, int len,
                          const FftPlan<T>& p, T* ya, T* yb, cplx<T>* work) {
  const int n = p.n;
  for (int k = 0; k < n; ++k) work[k] = spec_a[k] + cplx<T>{-spec_b[k].im, spec_b[k].re};
  ifft_inplace(work, p);
  for (int i = 0; i < len; ++i) {
    ya[i] = work[i].re;
    if (yb) yb[i] = work[i].im;
  }
}

}  // namespace s4ecg
