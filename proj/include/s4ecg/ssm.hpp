#pragma once

// Diagonal structured state-space layers. A layer is parameterized per channel
// by N/2 complex modes (the other half of the state is the implicit conjugate
// pair, realized by taking twice the real part of the output). The layer can
// be evaluated either by materializing the convolution kernel and applying an
// FFT convolution, or by the equivalent recurrent scan; the two routes are
// held to agree to high precision by the test suite.

#include <complex>

#include "s4ecg/core.hpp"
#include "s4ecg/fft.hpp"

namespace s4ecg {

template <typename T>
struct SsmParams {
  int channels = 0;
  int n_state = 0;  // even; modes() = n_state / 2 stored entries per channel
  std::vector<std::complex<T>> a, b, c;  // channels x modes, row-major
  std::vector<T> d;                      // skip gain per channel
  std::vector<T> log_dt;                 // step = exp(log_dt) per channel

  int modes() const { return n_state / 2; }
  int64_t mode_count() const { return int64_t(channels) * modes(); }
};

template <typename T>
struct DiscreteSsm {
  int channels = 0;
  int modes = 0;
  std::vector<std::complex<T>> a_bar, b_bar;  // channels x modes
};

// (exp(z) - 1) / z, stable near z = 0.
template <typename T>
inline std::complex<T> expm1_over_z(std::complex<T> z) {
  if (std::abs(z) < T(1e-4)) {
    // 1 + z/2 + z^2/6 + z^3/24
    return T(1) + z * (T(0.5) + z * (T(1) / T(6) + z * (T(1) / T(24))));
  }
  return (std::exp(z) - T(1)) / z;
}

template <typename T>
inline SsmParams<T> init_diagonal_ssm(int channels, int n_state, uint64_t seed) {
  require(channels >= 1 && n_state >= 1, "init_diagonal_ssm: dimensions must be positive");
  require(n_state % 2 == 0, "init_diagonal_ssm: state dimension must be even");
  SsmParams<T> p;
  p.channels = channels;
  p.n_state = n_state;
  const int m = p.modes();
  p.a.resize(size_t(channels) * m);
  p.b.resize(size_t(channels) * m);
  p.c.resize(size_t(channels) * m);
  p.d.assign(channels, T(1));
  p.log_dt.resize(channels);
  Rng rng(seed);
  const T pi = T(3.14159265358979323846);
  for (int h = 0; h < channels; ++h) {
    for (int n = 0; n < m; ++n) {
      p.a[size_t(h) * m + n] = {T(-0.5), pi * T(n)};
      p.b[size_t(h) * m + n] = {T(1), T(0)};
      p.c[size_t(h) * m + n] = {T(rng.normal()), T(rng.normal())};
    }
    p.log_dt[h] = T(rng.uniform(std::log(0.001), std::log(0.1)));
  }
  return p;
}

// Zero-order-hold discretization: a_bar = exp(dt*a), b_bar = dt*(expm1(dt*a)/(dt*a))*b.
template <typename T>
inline DiscreteSsm<T> discretize(const SsmParams<T>& p) {
  DiscreteSsm<T> d;
  d.channels = p.channels;
  d.modes = p.modes();
  d.a_bar.resize(p.a.size());
  d.b_bar.resize(p.b.size());
  for (int h = 0; h < p.channels; ++h) {
    const T dt = std::exp(p.log_dt[h]);
    for (int n = 0; n < d.modes; ++n) {
      size_t i = size_t(h) * d.modes + n;
      std::complex<T> z = dt * p.a[i];
      std::complex<T> abar = std::exp(z);
      require(std::norm(abar) < T(1),
              "discretize: unstable mode |a_bar| >= 1 at channel " + std::to_string(h));
      d.a_bar[i] = abar;
      d.b_bar[i] = dt * expm1_over_z(z) * p.b[i];
    }
  }
  return d;
}

// K[h][l] = 2 Re( sum_n c[h][n] * a_bar[h][n]^l * b_bar[h][n] )
template <typename T>
inline Tensor<T> compute_kernel(const SsmParams<T>& p, int64_t length) {
  require(length >= 1, "compute_kernel: length must be >= 1");
  DiscreteSsm<T> d = discretize(p);
  Tensor<T> k({p.channels, length});
  const int m = d.modes;
  for (int h = 0; h < p.channels; ++h) {
    T* kh = k.ptr() + int64_t(h) * length;
    for (int n = 0; n < m; ++n) {
      size_t i = size_t(h) * m + n;
      const T ar = d.a_bar[i].real(), ai = d.a_bar[i].imag();
      const T cr = p.c[i].real(), ci = p.c[i].imag();
      T pr = d.b_bar[i].real(), pi_ = d.b_bar[i].imag();
      for (int64_t l = 0; l < length; ++l) {
        kh[l] += T(2) * (cr * pr - ci * pi_);
        const T nr = pr * ar - pi_ * ai;
        pi_ = pr * ai + pi_ * ar;
        pr = nr;
      }
    }
  }
  return k;
}

// Causal (linear) per-channel convolution via zero-padded FFT:
// y[l] = sum_{j<=l} k[j] * u[l-j].
template <typename T>
inline Tensor<T> fft_convolve(const Tensor<T>& u, const Tensor<T>& k) {
  require(u.shape == k.shape && u.rank() == 2, "fft_convolve: u and k must both be [H x L]");
  const int64_t channels = u.dim(0), length = u.dim(1);
  const int f = next_pow2(2 * length - 1);
  const FftPlan<T>& plan = fft_plan<T>(f);
  Tensor<T> y(u.shape);
  std::vector<cplx<T>> work(f), su0(f), su1(f), sk0(f), sk1(f);
  for (int64_t h = 0; h < channels; h += 2) {
    const bool pair = h + 1 < channels;
    const T* u0 = u.ptr() + h * length;
    const T* u1 = pair ? u.ptr() + (h + 1) * length : nullptr;
    const T* k0 = k.ptr() + h * length;
    const T* k1 = pair ? k.ptr() + (h + 1) * length : nullptr;
    fft_two_real(u0, u1, int(length), plan, su0.data(), su1.data(), work.data());
    fft_two_real(k0, k1, int(length), plan, sk0.data(), sk1.data(), work.data());
    for (int j = 0; j < f; ++j) {
      su0[j] = su0[j] * sk0[j];
      if (pair) su1[j] = su1[j] * sk1[j];
    }
    ifft_two_real(su0.data(), pair ? su1.data() : su0.data(), int(length), plan,
                  y.ptr() + h * length, pair ? y.ptr() + (h + 1) * length : nullptr,
                  work.data());
  }
  return y;
}

// Recurrent dual form: x_l = a_bar .* x_{l-1} + b_bar * u_l, y_l = 2 Re(c . x_l).
template <typename T>
inline Tensor<T> recurrent_scan(const SsmParams<T>& p, const Tensor<T>& u) {
  require(u.rank() == 2 && u.dim(0) == p.channels, "recurrent_scan: input must be [H x L]");
  const int64_t length = u.dim(1);
  DiscreteSsm<T> d = discretize(p);
  Tensor<T> y(u.shape);
  const int m = d.modes;
  for (int h = 0; h < p.channels; ++h) {
    const T* uh = u.ptr() + int64_t(h) * length;
    T* yh = y.ptr() + int64_t(h) * length;
    std::vector<T> xr(m, T(0)), xi(m, T(0));
    for (int64_t l = 0; l < length; ++l) {
      T acc = T(0);
      const T ul = uh[l];
      for (int n = 0; n < m; ++n) {
        size_t i = size_t(h) * m + n;
        const T ar = d.a_bar[i].real(), ai = d.a_bar[i].imag();
        const T nr = xr[n] * ar - xi[n] * ai + d.b_bar[i].real() * ul;
        const T ni = xr[n] * ai + xi[n] * ar + d.b_bar[i].imag() * ul;
        xr[n] = nr;
        xi[n] = ni;
        acc += p.c[i].real() * nr - p.c[i].imag() * ni;
      }
      yh[l] = T(2) * acc;
    }
  }
  return y;
}

template <typename T>
inline Tensor<T> time_reverse_rows(const Tensor<T>& u) {
  Tensor<T> out(u.shape);
  const int64_t channels = u.dim(0), length = u.dim(1);
  for (int64_t h = 0; h < channels; ++h)
    for (int64_t l = 0; l < length; ++l)
      out[h * length + l] = u[h * length + (length - 1 - l)];
  return out;
}

// One bidirectional layer: two independent directions, concatenated to 2H
// channels and merged back to H by a pointwise linear map.
template <typename T>
struct BidirectionalSsm {
  SsmParams<T> forward, backward;
  Tensor<T> merge_w;  // [H x 2H]
  Tensor<T> merge_b;  // [H]
};

template <typename T>
inline Tensor<T> ssm_apply_conv(const SsmParams<T>& p, const Tensor<T>& u) {
  Tensor<T> y = fft_convolve(u, compute_kernel(p, u.dim(1)));
  const int64_t length = u.dim(1);
  for (int h = 0; h < p.channels; ++h)
    for (int64_t l = 0; l < length; ++l) y[h * length + l] += p.d[h] * u[h * length + l];
  return y;
}

template <typename T>
inline Tensor<T> bidirectional_apply(const BidirectionalSsm<T>& layer, const Tensor<T>& u) {
  require(u.rank() == 2 && u.dim(0) == layer.forward.channels,
          "bidirectional_apply: input must be [H x L]");
  const int64_t channels = u.dim(0), length = u.dim(1);
  require(layer.merge_w.shape == std::vector<int64_t>({channels, 2 * channels}),
          "bidirectional_apply: merge weight must be [H x 2H]");
  Tensor<T> yf = ssm_apply_conv(layer.forward, u);
  Tensor<T> yb = time_reverse_rows(ssm_apply_conv(layer.backward, time_reverse_rows(u)));
  Tensor<T> out({channels, length});
  for (int64_t h = 0; h < channels; ++h) {
    const T* wf = layer.merge_w.ptr() + h * 2 * channels;
    const T* wb = wf + channels;
    for (int64_t l = 0; l < length; ++l) {
      T acc = layer.merge_b[h];
      for (int64_t j = 0; j < channels; ++j)
        acc += wf[j] * yf[j * length + l] + wb[j] * yb[j * length + l];
      out[h * length + l] = acc;
    }
  }
  return out;
}

}  // namespace s4ecg
