#pragma once

// Reverse-mode differentiation over the fixed operation set the model needs.
// Nodes hold tensor values; each op appends a node with a backward closure.
// Training runs in single precision; gradient checking instantiates the same
// graph code in double precision.

#include <memory>

#include "s4ecg/core.hpp"
#include "s4ecg/fft.hpp"
#include "s4ecg/ssm.hpp"

namespace s4ecg::autodiff {

// ---------------------------------------------------------------------------
// Scalar math. Double paths use exact libm forms; float paths use a
// vectorizable exp/tanh approximation (the analytic backward differentiates
// the approximation itself, keeping value and gradient consistent).
// ---------------------------------------------------------------------------

inline float fast_expf(float x) {
  x = std::min(std::max(x, -87.0f), 88.0f);
  const float t = x * 1.4426950408889634f;  // log2(e)
  const float fi = std::floor(t);
  const float f = t - fi;
  // 2^f on [0,1), degree-6 expansion of exp(f*ln2)
  float p = 1.0f +
            f * (0.693147180559945f +
                 f * (0.240226506959101f +
                      f * (0.0555041086648216f +
                           f * (0.00961812910762848f +
                                f * (0.00133335581464284f + f * 0.000154035303934f)))));
  int32_t i = int32_t(fi);
  uint32_t bits;
  std::memcpy(&bits, &p, 4);
  bits += uint32_t(i) << 23;
  std::memcpy(&p, &bits, 4);
  return p;
}

inline float fast_tanhf(float x) {
  // branchless: the clamp saturates the rational form at +/-1 to float
  // precision, keeping the whole chain vectorizable
  x = std::min(std::max(x, -9.0f), 9.0f);
  const float e = fast_expf(2.0f * x);
  return (e - 1.0f) / (e + 1.0f);
}

template <typename T>
inline T scalar_exp(T x) { return std::exp(x); }
inline float scalar_exp(float x) { return fast_expf(x); }

// gelu value and derivative
inline void gelu_vd(double x, double& v, double& d) {
  const double inv_sqrt2 = 0.70710678118654752440;
  const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
  const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
  v = x * phi;
  d = phi + x * pdf;
}

inline void gelu_vd(float x, float& v, float& d) {
  // tanh form; derivative of the same expression
  const float c0 = 0.7978845608028654f, c1 = 0.044715f;
  const float x2 = x * x;
  const float g = c0 * x * (1.0f + c1 * x2);
  const float t = fast_tanhf(g);
  const float dg = c0 * (1.0f + 3.0f * c1 * x2);
  v = 0.5f * x * (1.0f + t);
  d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * dg;
}

// Reductions written with an explicit lane array so the compiler can map
// them onto vector registers without reassociating a scalar chain; the
// summation order is fixed, keeping results bit-reproducible per build.
template <typename T>
inline T dot_lanes(const T* a, const T* b, int64_t n) {
  T lanes[16] = {};
  int64_t i = 0;
  for (; i + 16 <= n; i += 16)
    for (int k = 0; k < 16; ++k) lanes[k] += a[i + k] * b[i + k];
  T acc = 0;
  for (int k = 0; k < 16; ++k) acc += lanes[k];
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
inline T sum_lanes(const T* a, int64_t n) {
  T lanes[16] = {};
  int64_t i = 0;
  for (; i + 16 <= n; i += 16)
    for (int k = 0; k < 16; ++k) lanes[k] += a[i + k];
  T acc = 0;
  for (int k = 0; k < 16; ++k) acc += lanes[k];
  for (; i < n; ++i) acc += a[i];
  return acc;
}

// ---------------------------------------------------------------------------
// Parameter store: named leaf tensors with gradient accumulators and
// optimizer moments. Single-writer: gradient accumulation and optimizer
// steps happen on the orchestrating thread.
// ---------------------------------------------------------------------------

template <typename T>
struct ParamStore {
  struct Param {
    std::string name;
    Tensor<T> value, grad, m, v;
    double lr_scale = 1.0;   // per-group learning-rate multiplier
    bool decay = true;       // weight decay applies to this tensor
  };
  std::vector<Param> params;
  std::map<std::string, int> by_name;
  int64_t step = 0;

  int add(const std::string& name, Tensor<T> init) {
    require(by_name.find(name) == by_name.end(), "param '" + name + "' already registered");
    Param p;
    p.name = name;
    p.grad = Tensor<T>(init.shape);
    p.m = Tensor<T>(init.shape);
    p.v = Tensor<T>(init.shape);
    p.value = std::move(init);
    params.push_back(std::move(p));
    by_name[name] = int(params.size()) - 1;
    return int(params.size()) - 1;
  }

  int find(const std::string& name) const {
    auto it = by_name.find(name);
    return it == by_name.end() ? -1 : it->second;
  }

  Param& at(int id) { return params[size_t(id)]; }
  const Param& at(int id) const { return params[size_t(id)]; }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params) p.grad.zero();
  }
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first write during backward
    std::function<void(Tape&, int)> backward_fn;
    int param_id = -1;
  };

  std::vector<Node> nodes;

  int add(Tensor<T> value, std::function<void(Tape&, int)> bw = nullptr, int param_id = -1) {
    Node n;
    n.value = std::move(value);
    n.backward_fn = std::move(bw);
    n.param_id = param_id;
    nodes.push_back(std::move(n));
    return int(nodes.size()) - 1;
  }

  Tensor<T>& val(int id) { return nodes[size_t(id)].value; }
  const Tensor<T>& val(int id) const { return nodes[size_t(id)].value; }

  bool has_grad(int id) const { return !nodes[size_t(id)].grad.data.empty(); }

  // gradient buffer, allocated and zeroed on first use
  Tensor<T>& grad(int id) {
    Node& n = nodes[size_t(id)];
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }

  void backward(int loss_id) {
    require(val(loss_id).size() == 1, "backward: loss must be a scalar node");
    grad(loss_id)[0] = T(1);
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes[size_t(id)];
      if (n.grad.data.empty() || !n.backward_fn) continue;
      n.backward_fn(*this, id);
    }
  }

  // Adds `scale` times each reachable leaf gradient into its parameter;
  // leaves the graph untouched otherwise.
  void accumulate_param_grads(ParamStore<T>& store, T scale = T(1)) {
    for (size_t id = 0; id < nodes.size(); ++id) {
      Node& n = nodes[id];
      if (n.param_id < 0 || n.grad.data.empty()) continue;
      auto& g = store.at(n.param_id).grad;
      for (int64_t i = 0; i < g.size(); ++i) g[i] += scale * n.grad[i];
    }
  }
};

// ---------------------------------------------------------------------------
// Leaf ops
// ---------------------------------------------------------------------------

template <typename T>
inline int op_input(Tape<T>& tape, Tensor<T> value) {
  return tape.add(std::move(value));
}

// differentiable leaf not bound to a parameter (used by grad_check)
template <typename T>
inline int op_variable(Tape<T>& tape, Tensor<T> value) {
  return tape.add(std::move(value), [](Tape<T>&, int) {});
}

template <typename T>
inline int op_param(Tape<T>& tape, ParamStore<T>& store, int param_id) {
  return tape.add(store.at(param_id).value, [](Tape<T>&, int) {}, param_id);
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename T>
inline int op_add(Tape<T>& tape, int a, int b) {
  require(tape.val(a).shape == tape.val(b).shape, "add: shape mismatch");
  Tensor<T> out(tape.val(a).shape);
  const Tensor<T>&va = tape.val(a), &vb = tape.val(b);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return tape.add(std::move(out), [a, b](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>&ga = t.grad(a), &gb = t.grad(b);
    for (int64_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

template <typename T>
inline int op_gelu(Tape<T>& tape, int x) {
  const Tensor<T>& vx = tape.val(x);
  Tensor<T> out(vx.shape);
  const int64_t n = out.size();
  const T* in = vx.ptr();
  T* o = out.ptr();
  parallel_chunks(n, [&](int64_t b, int64_t e) {
    T v, d;
    for (int64_t i = b; i < e; ++i) {
      gelu_vd(in[i], v, d);
      o[i] = v;
    }
  });
  return tape.add(std::move(out), [x](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const T* in = t.val(x).ptr();
    T* gx = t.grad(x).ptr();
    const T* gs = g.ptr();
    parallel_chunks(g.size(), [&](int64_t b, int64_t e) {
      T v, d;
      for (int64_t i = b; i < e; ++i) {
        gelu_vd(in[i], v, d);
        gx[i] += gs[i] * d;
      }
    });
  });
}

template <typename T>
inline int op_sigmoid(Tape<T>& tape, int x) {
  const Tensor<T>& vx = tape.val(x);
  Tensor<T> out(vx.shape);
  for (int64_t i = 0; i < out.size(); ++i) {
    const T v = vx[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + scalar_exp(-v))
                       : scalar_exp(v) / (T(1) + scalar_exp(v));
  }
  return tape.add(std::move(out), [x](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.val(self);
    Tensor<T>& gx = t.grad(x);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
inline int op_sum_squares(Tape<T>& tape, int x) {
  const Tensor<T>& vx = tape.val(x);
  T acc = 0;
  for (int64_t i = 0; i < vx.size(); ++i) acc += vx[i] * vx[i];
  Tensor<T> out({1});
  out[0] = acc;
  return tape.add(std::move(out), [x](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    const Tensor<T>& vx = t.val(x);
    Tensor<T>& gx = t.grad(x);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g * T(2) * vx[i];
  });
}

template <typename T>
inline int op_time_reverse(Tape<T>& tape, int x) {
  const Tensor<T>& vx = tape.val(x);
  require(vx.rank() == 3, "time_reverse: expected [B x C x L]");
  const int64_t rows = vx.dim(0) * vx.dim(1), length = vx.dim(2);
  Tensor<T> out(vx.shape);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t l = 0; l < length; ++l)
      out[r * length + l] = vx[r * length + (length - 1 - l)];
  return tape.add(std::move(out), [x, rows, length](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t l = 0; l < length; ++l)
        gx[r * length + (length - 1 - l)] += g[r * length + l];
  });
}

template <typename T>
inline int op_concat_channels(Tape<T>& tape, int a, int b) {
  const Tensor<T>&va = tape.val(a), &vb = tape.val(b);
  require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2),
          "concat_channels: incompatible shapes");
  const int64_t batch = va.dim(0), ca = va.dim(1), cb = vb.dim(1), length = va.dim(2);
  Tensor<T> out({batch, ca + cb, length});
  for (int64_t i = 0; i < batch; ++i) {
    std::memcpy(out.ptr() + i * (ca + cb) * length, va.ptr() + i * ca * length,
                size_t(ca * length) * sizeof(T));
    std::memcpy(out.ptr() + (i * (ca + cb) + ca) * length, vb.ptr() + i * cb * length,
                size_t(cb * length) * sizeof(T));
  }
  return tape.add(std::move(out), [a, b, batch, ca, cb, length](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>&ga = t.grad(a), &gb = t.grad(b);
    for (int64_t i = 0; i < batch; ++i) {
      const T* gs = g.ptr() + i * (ca + cb) * length;
      T* pa = ga.ptr() + i * ca * length;
      T* pb = gb.ptr() + i * cb * length;
      for (int64_t j = 0; j < ca * length; ++j) pa[j] += gs[j];
      for (int64_t j = 0; j < cb * length; ++j) pb[j] += gs[ca * length + j];
    }
  });
}

// Deterministic counter-based dropout; the mask is a pure function of
// (seed, element index) so backward recomputes it instead of storing it.
template <typename T>
inline int op_dropout(Tape<T>& tape, int x, double p, uint64_t seed) {
  require(p >= 0 && p < 1, "dropout: probability must be in [0,1)");
  if (p == 0) return x;
  const Tensor<T>& vx = tape.val(x);
  Tensor<T> out(vx.shape);
  const T scale = T(1.0 / (1.0 - p));
  const uint64_t threshold = uint64_t(p * double(UINT64_MAX));
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = hash_mix(seed, uint64_t(i)) < threshold ? T(0) : vx[i] * scale;
  return tape.add(std::move(out), [x, seed, threshold, scale](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (int64_t i = 0; i < g.size(); ++i)
      if (hash_mix(seed, uint64_t(i)) >= threshold) gx[i] += g[i] * scale;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

// y[b,co,l] = bias[co] + sum_ci w[co,ci] * x[b,ci,l]
template <typename T>
inline int op_pointwise_linear(Tape<T>& tape, int x, int w, int bias) {
  const Tensor<T>&vx = tape.val(x), &vw = tape.val(w), &vb = tape.val(bias);
  require(vx.rank() == 3 && vw.rank() == 2, "pointwise_linear: expected [B,Ci,L], [Co,Ci]");
  const int64_t batch = vx.dim(0), ci = vx.dim(1), length = vx.dim(2), co = vw.dim(0);
  require(vw.dim(1) == ci && vb.size() == co, "pointwise_linear: dimension mismatch");
  Tensor<T> out({batch, co, length});
  parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b)
      for (int64_t o = 0; o < co; ++o) {
        T* y = out.ptr() + (b * co + o) * length;
        const T bv = vb[o];
        for (int64_t l = 0; l < length; ++l) y[l] = bv;
        const T* wr = vw.ptr() + o * ci;
        for (int64_t c = 0; c < ci; ++c) {
          const T wv = wr[c];
          const T* xr = vx.ptr() + (b * ci + c) * length;
          for (int64_t l = 0; l < length; ++l) y[l] += wv * xr[l];
        }
      }
  });
  return tape.add(std::move(out), [x, w, bias, batch, ci, co, length](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>&vx = t.val(x), &vw = t.val(w);
    Tensor<T>& gx = t.grad(x);
    // dX = W^T dY, parallel over instances
    parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b)
        for (int64_t c = 0; c < ci; ++c) {
          T* gxr = gx.ptr() + (b * ci + c) * length;
          for (int64_t o = 0; o < co; ++o) {
            const T wv = vw[o * ci + c];
            const T* gr = g.ptr() + (b * co + o) * length;
            for (int64_t l = 0; l < length; ++l) gxr[l] += wv * gr[l];
          }
        }
    });
    // dW and db via per-instance partials, reduced in fixed order
    Tensor<T> pw({batch, co, ci});
    Tensor<T> pb({batch, co});
    parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b)
        for (int64_t o = 0; o < co; ++o) {
          const T* gr = g.ptr() + (b * co + o) * length;
          pb[b * co + o] = sum_lanes(gr, length);
          for (int64_t c = 0; c < ci; ++c)
            pw[(b * co + o) * ci + c] =
                dot_lanes(gr, vx.ptr() + (b * ci + c) * length, length);
        }
    });
    Tensor<T>& gw = t.grad(w);
    Tensor<T>& gb = t.grad(bias);
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t i = 0; i < co * ci; ++i) gw[i] += pw[b * co * ci + i];
      for (int64_t o = 0; o < co; ++o) gb[o] += pb[b * co + o];
    }
  });
}

// 1-D convolution with odd kernel, symmetric zero padding (k-1)/2, stride s.
// y[b,co,o] = bias[co] + sum_{ci,t} w[co,ci,t] * x[b,ci,o*s + t - p]
template <typename T>
inline int op_conv1d(Tape<T>& tape, int x, int w, int bias, int64_t stride) {
  const Tensor<T>&vx = tape.val(x), &vw = tape.val(w), &vb = tape.val(bias);
  require(vx.rank() == 3 && vw.rank() == 3, "conv1d: expected [B,Ci,L], [Co,Ci,K]");
  const int64_t batch = vx.dim(0), ci = vx.dim(1), length = vx.dim(2);
  const int64_t co = vw.dim(0), kernel = vw.dim(2);
  require(vw.dim(1) == ci && vb.size() == co, "conv1d: dimension mismatch");
  require(kernel % 2 == 1, "conv1d: kernel size must be odd");
  require(stride >= 1, "conv1d: stride must be positive");
  const int64_t pad = (kernel - 1) / 2;
  const int64_t out_len = (length + 2 * pad - kernel) / stride + 1;
  Tensor<T> out({batch, co, out_len});
  parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b)
      for (int64_t o = 0; o < co; ++o) {
        T* y = out.ptr() + (b * co + o) * out_len;
        for (int64_t l = 0; l < out_len; ++l) y[l] = vb[o];
        for (int64_t c = 0; c < ci; ++c) {
          const T* xr = vx.ptr() + (b * ci + c) * length;
          const T* wr = vw.ptr() + (o * ci + c) * kernel;
          for (int64_t t = 0; t < kernel; ++t) {
            const T wv = wr[t];
            const int64_t off = t - pad;
            const int64_t lo = std::max<int64_t>(0, (-off + stride - 1) / stride);
            const int64_t hi_excl = std::min(out_len, (length - off + stride - 1) / stride);
            for (int64_t l = lo; l < hi_excl; ++l) y[l] += wv * xr[l * stride + off];
          }
        }
      }
  });
  return tape.add(std::move(out), [x, w, bias, batch, ci, co, length, kernel, stride,
                                   pad](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const int64_t out_len = g.dim(2);
    const Tensor<T>&vx = t.val(x), &vw = t.val(w);
    Tensor<T>& gx = t.grad(x);
    parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b)
        for (int64_t c = 0; c < ci; ++c) {
          T* gxr = gx.ptr() + (b * ci + c) * length;
          for (int64_t o = 0; o < co; ++o) {
            const T* gr = g.ptr() + (b * co + o) * out_len;
            const T* wr = vw.ptr() + (o * ci + c) * kernel;
            for (int64_t t = 0; t < kernel; ++t) {
              const T wv = wr[t];
              const int64_t off = t - pad;
              const int64_t lo = std::max<int64_t>(0, (-off + stride - 1) / stride);
              const int64_t hi_excl = std::min(out_len, (length - off + stride - 1) / stride);
              for (int64_t l = lo; l < hi_excl; ++l) gxr[l * stride + off] += wv * gr[l];
            }
          }
        }
    });
    Tensor<T> pw({batch, co, ci * kernel});
    Tensor<T> pb({batch, co});
    parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b)
        for (int64_t o = 0; o < co; ++o) {
          const T* gr = g.ptr() + (b * co + o) * out_len;
          pb[b * co + o] = sum_lanes(gr, out_len);
          for (int64_t c = 0; c < ci; ++c) {
            const T* xr = vx.ptr() + (b * ci + c) * length;
            for (int64_t t = 0; t < kernel; ++t) {
              const int64_t off = t - pad;
              const int64_t lo = std::max<int64_t>(0, (-off + stride - 1) / stride);
              const int64_t hi_excl = std::min(out_len, (length - off + stride - 1) / stride);
              T acc = 0;
              for (int64_t l = lo; l < hi_excl; ++l) acc += gr[l] * xr[l * stride + off];
              pw[(b * co + o) * ci * kernel + c * kernel + t] = acc;
            }
          }
        }
    });
    Tensor<T>& gw = t.grad(w);
    Tensor<T>& gb = t.grad(bias);
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t i = 0; i < co * ci * kernel; ++i) gw[i] += pw[b * co * ci * kernel + i];
      for (int64_t o = 0; o < co; ++o) gb[o] += pb[b * co + o];
    }
  });
}

// Layer normalization over the channel dimension at every (batch, position).
template <typename T>
inline int op_layer_norm(Tape<T>& tape, int x, int gamma, int beta, T eps = T(1e-5)) {
  const Tensor<T>& vx = tape.val(x);
  require(vx.rank() == 3, "layer_norm: expected [B,C,L]");
  const int64_t batch = vx.dim(0), channels = vx.dim(1), length = vx.dim(2);
  require(tape.val(gamma).size() == channels && tape.val(beta).size() == channels,
          "layer_norm: gamma/beta must have C entries");
  Tensor<T> out(vx.shape);
  auto inv_std = std::make_shared<Tensor<T>>(Tensor<T>({batch, length}));
  auto mean = std::make_shared<Tensor<T>>(Tensor<T>({batch, length}));
  const Tensor<T>&vg = tape.val(gamma), &vbt = tape.val(beta);
  parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      T* mu = mean->ptr() + b * length;
      T* iv = inv_std->ptr() + b * length;
      for (int64_t l = 0; l < length; ++l) mu[l] = 0;
      for (int64_t c = 0; c < channels; ++c) {
        const T* xr = vx.ptr() + (b * channels + c) * length;
        for (int64_t l = 0; l < length; ++l) mu[l] += xr[l];
      }
      const T inv_c = T(1) / T(channels);
      for (int64_t l = 0; l < length; ++l) mu[l] *= inv_c;
      for (int64_t l = 0; l < length; ++l) iv[l] = 0;
      for (int64_t c = 0; c < channels; ++c) {
        const T* xr = vx.ptr() + (b * channels + c) * length;
        for (int64_t l = 0; l < length; ++l) {
          const T d = xr[l] - mu[l];
          iv[l] += d * d;
        }
      }
      for (int64_t l = 0; l < length; ++l) iv[l] = T(1) / std::sqrt(iv[l] * inv_c + eps);
      for (int64_t c = 0; c < channels; ++c) {
        const T* xr = vx.ptr() + (b * channels + c) * length;
        T* y = out.ptr() + (b * channels + c) * length;
        const T gc = vg[c], bc = vbt[c];
        for (int64_t l = 0; l < length; ++l) y[l] = (xr[l] - mu[l]) * iv[l] * gc + bc;
      }
    }
  });
  return tape.add(std::move(out), [x, gamma, beta, batch, channels, length, mean,
                                   inv_std](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>&vx = t.val(x), &vg = t.val(gamma);
    Tensor<T>& gx = t.grad(x);
    Tensor<T> pg({batch, channels}), pb({batch, channels});
    parallel_chunks(batch, [&](int64_t b0, int64_t b1) {
      std::vector<T> s1(static_cast<size_t>(length)), s2(static_cast<size_t>(length)),
          xh(static_cast<size_t>(length));
      for (int64_t b = b0; b < b1; ++b) {
        const T* mu = mean->ptr() + b * length;
        const T* iv = inv_std->ptr() + b * length;
        // s1 = sum_c(dy*gamma), s2 = sum_c(dy*gamma*xhat)
        std::fill(s1.begin(), s1.end(), T(0));
        std::fill(s2.begin(), s2.end(), T(0));
        for (int64_t c = 0; c < channels; ++c) {
          const T* gr = g.ptr() + (b * channels + c) * length;
          const T* xr = vx.ptr() + (b * channels + c) * length;
          const T gc = vg[c];
          T* xhp = xh.data();
          for (int64_t l = 0; l < length; ++l) xhp[l] = (xr[l] - mu[l]) * iv[l];
          for (int64_t l = 0; l < length; ++l) {
            const T gg = gr[l] * gc;
            s1[size_t(l)] += gg;
            s2[size_t(l)] += gg * xhp[l];
          }
          pg[b * channels + c] = dot_lanes(gr, xhp, length);
          pb[b * channels + c] = sum_lanes(gr, length);
        }
        const T inv_c = T(1) / T(channels);
        for (int64_t c = 0; c < channels; ++c) {
          const T* gr = g.ptr() + (b * channels + c) * length;
          const T* xr = vx.ptr() + (b * channels + c) * length;
          T* gxr = gx.ptr() + (b * channels + c) * length;
          const T gc = vg[c];
          for (int64_t l = 0; l < length; ++l) {
            const T xhat = (xr[l] - mu[l]) * iv[l];
            gxr[l] += iv[l] * (gr[l] * gc - inv_c * (s1[size_t(l)] + xhat * s2[size_t(l)]));
          }
        }
      }
    });
    Tensor<T>& gg = t.grad(gamma);
    Tensor<T>& gb = t.grad(beta);
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t c = 0; c < channels; ++c) {
        gg[c] += pg[b * channels + c];
        gb[c] += pb[b * channels + c];
      }
  });
}

// mean over the time dimension: [B,C,L] -> [B,C]
template <typename T>
inline int op_mean_pool_time(Tape<T>& tape, int x) {
  const Tensor<T>& vx = tape.val(x);
  require(vx.rank() == 3, "mean_pool_time: expected [B,C,L]");
  const int64_t batch = vx.dim(0), channels = vx.dim(1), length = vx.dim(2);
  Tensor<T> out({batch, channels});
  for (int64_t r = 0; r < batch * channels; ++r)
    out[r] = sum_lanes(vx.ptr() + r * length, length) / T(length);
  return tape.add(std::move(out), [x, batch, channels, length](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    const T inv = T(1) / T(length);
    for (int64_t r = 0; r < batch * channels; ++r) {
      const T gv = g[r] * inv;
      T* gxr = gx.ptr() + r * length;
      for (int64_t l = 0; l < length; ++l) gxr[l] += gv;
    }
  });
}

// ---------------------------------------------------------------------------
// SSM convolution op: materializes the ZOH-discretized kernel from the
// complex parameters (stored as re/im tensor pairs), applies the causal FFT
// convolution per channel plus the D*u skip, and back-propagates to the
// input and to every parameter. Channel tasks are independent, so all
// reductions stay deterministic.
// ---------------------------------------------------------------------------

namespace ssm_detail {

template <typename T>
inline cplx<T> cexp(cplx<T> z) {
  const T e = std::exp(z.re);
  return {e * std::cos(z.im), e * std::sin(z.im)};
}

template <typename T>
inline cplx<T> cdiv(cplx<T> a, cplx<T> b) {
  const T n = b.re * b.re + b.im * b.im;
  return {(a.re * b.re + a.im * b.im) / n, (a.im * b.re - a.re * b.im) / n};
}

// q(z) = (exp(z)-1)/z and its derivative, stable near zero
template <typename T>
inline void expm1z_vd(cplx<T> z, cplx<T>& q, cplx<T>& dq) {
  const T mag = std::sqrt(z.re * z.re + z.im * z.im);
  if (mag < T(1e-3)) {
    q = cplx<T>{1, 0} + z * (cplx<T>{T(0.5), 0} +
        z * (cplx<T>{T(1) / T(6), 0} + z * cplx<T>{T(1) / T(24), 0}));
    dq = cplx<T>{T(0.5), 0} + z * (cplx<T>{T(1) / T(3), 0} +
         z * (cplx<T>{T(1) / T(8), 0} + z * cplx<T>{T(1) / T(30), 0}));
    return;
  }
  const cplx<T> ez = cexp(z);
  q = cdiv(ez - cplx<T>{1, 0}, z);
  dq = cdiv(ez * (z - cplx<T>{1, 0}) + cplx<T>{1, 0}, z * z);
}

template <typename T>
struct ChannelDiscrete {
  std::vector<cplx<T>> abar, bbar;  // per mode
};

// Discretization of one channel; inputs are raw parameter rows.
template <typename T>
inline ChannelDiscrete<T> discretize_channel(const T* a_re, const T* a_im, const T* b_re,
                                             const T* b_im, T log_dt, int modes) {
  ChannelDiscrete<T> out;
  out.abar.resize(size_t(modes));
  out.bbar.resize(size_t(modes));
  const T dt = std::exp(log_dt);
  for (int m = 0; m < modes; ++m) {
    const cplx<T> a{a_re[m], a_im[m]};
    const cplx<T> z = dt * a;
    const cplx<T> abar = cexp(z);
    require(abar.re * abar.re + abar.im * abar.im < T(1),
            "ssm_conv: unstable mode |a_bar| >= 1");
    cplx<T> q, dq;
    expm1z_vd(z, q, dq);
    out.abar[size_t(m)] = abar;
    out.bbar[size_t(m)] = dt * (q * cplx<T>{b_re[m], b_im[m]});
  }
  return out;
}

}  // namespace ssm_detail

// u: [B,H,L]; a/b/c re+im: [H,M]; d, log_dt: [H]
template <typename T>
inline int op_ssm_conv(Tape<T>& tape, int u, int a_re, int a_im, int b_re, int b_im, int c_re,
                       int c_im, int d, int log_dt) {
  const Tensor<T>& vu = tape.val(u);
  require(vu.rank() == 3, "ssm_conv: input must be [B,H,L]");
  const int64_t batch = vu.dim(0), channels = vu.dim(1), length = vu.dim(2);
  const Tensor<T>& var = tape.val(a_re);
  require(var.rank() == 2 && var.dim(0) == channels, "ssm_conv: parameter shape mismatch");
  const int modes = int(var.dim(1));
  for (int id : {a_im, b_re, b_im, c_re, c_im})
    require(tape.val(id).shape == var.shape, "ssm_conv: parameter shape mismatch");
  require(tape.val(d).size() == channels && tape.val(log_dt).size() == channels,
          "ssm_conv: d/log_dt must have H entries");

  const int f = next_pow2(2 * length - 1);
  const FftPlan<T>& plan = fft_plan<T>(f);
  auto khat = std::make_shared<std::vector<cplx<T>>>(size_t(channels) * f);
  Tensor<T> kernel({channels, length});

  const T* p_ar = tape.val(a_re).ptr();
  const T* p_ai = tape.val(a_im).ptr();
  const T* p_br = tape.val(b_re).ptr();
  const T* p_bi = tape.val(b_im).ptr();
  const T* p_cr = tape.val(c_re).ptr();
  const T* p_ci = tape.val(c_im).ptr();
  const T* p_d = tape.val(d).ptr();
  const T* p_dt = tape.val(log_dt).ptr();

  // kernel rows
  parallel_chunks(channels, [&](int64_t h0, int64_t h1) {
    for (int64_t h = h0; h < h1; ++h) {
      auto disc = ssm_detail::discretize_channel(p_ar + h * modes, p_ai + h * modes,
                                                 p_br + h * modes, p_bi + h * modes, p_dt[h],
                                                 modes);
      T* krow = kernel.ptr() + h * length;
      for (int m = 0; m < modes; ++m) {
        const cplx<T> ab = disc.abar[size_t(m)];
        const cplx<T> c{p_cr[h * modes + m], p_ci[h * modes + m]};
        cplx<T> pw = disc.bbar[size_t(m)];
        for (int64_t l = 0; l < length; ++l) {
          krow[l] += T(2) * (c.re * pw.re - c.im * pw.im);
          pw = pw * ab;
        }
      }
    }
  });
  // kernel spectra, channel-paired
  const int64_t kpairs = (channels + 1) / 2;
  parallel_chunks(kpairs, [&](int64_t q0, int64_t q1) {
    std::vector<cplx<T>> work(static_cast<size_t>(f));
    for (int64_t qp = q0; qp < q1; ++qp) {
      const int64_t h = 2 * qp;
      const bool pair = h + 1 < channels;
      fft_two_real(kernel.ptr() + h * length,
                   pair ? kernel.ptr() + (h + 1) * length : nullptr, int(length), plan,
                   khat->data() + h * f, pair ? khat->data() + (h + 1) * f : nullptr,
                   work.data());
    }
  });

  // convolution + skip; channels of the same instance share packed FFTs so
  // each instance's output is independent of its batch neighbours
  Tensor<T> out(vu.shape);
  const int64_t cpairs = (channels + 1) / 2;
  parallel_chunks(cpairs, [&](int64_t q0, int64_t q1) {
    std::vector<cplx<T>> work(static_cast<size_t>(f)), s0(static_cast<size_t>(f)),
        s1(static_cast<size_t>(f));
    for (int64_t qp = q0; qp < q1; ++qp) {
      const int64_t h = 2 * qp;
      const bool pair = h + 1 < channels;
      const cplx<T>* k0 = khat->data() + h * f;
      const cplx<T>* k1 = pair ? khat->data() + (h + 1) * f : nullptr;
      for (int64_t b = 0; b < batch; ++b) {
        const T* u0 = vu.ptr() + (b * channels + h) * length;
        const T* u1 = pair ? vu.ptr() + (b * channels + h + 1) * length : nullptr;
        fft_two_real(u0, u1, int(length), plan, s0.data(), pair ? s1.data() : nullptr,
                     work.data());
        for (int j = 0; j < f; ++j) {
          s0[size_t(j)] = s0[size_t(j)] * k0[j];
          if (pair) s1[size_t(j)] = s1[size_t(j)] * k1[j];
        }
        T* y0 = out.ptr() + (b * channels + h) * length;
        T* y1 = pair ? out.ptr() + (b * channels + h + 1) * length : nullptr;
        ifft_two_real(s0.data(), pair ? s1.data() : s0.data(), int(length), plan, y0, y1,
                      work.data());
        const T d0 = p_d[h];
        for (int64_t l = 0; l < length; ++l) y0[l] += d0 * u0[l];
        if (pair) {
          const T d1 = p_d[h + 1];
          for (int64_t l = 0; l < length; ++l) y1[l] += d1 * u1[l];
        }
      }
    }
  });

  return tape.add(std::move(out), [u, a_re, a_im, b_re, b_im, c_re, c_im, d, log_dt, batch,
                                   channels, length, modes, f, khat](Tape<T>& t, int self) {
    const FftPlan<T>& plan = fft_plan<T>(f);
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& vu = t.val(u);
    const T* p_ar = t.val(a_re).ptr();
    const T* p_ai = t.val(a_im).ptr();
    const T* p_br = t.val(b_re).ptr();
    const T* p_bi = t.val(b_im).ptr();
    const T* p_cr = t.val(c_re).ptr();
    const T* p_ci = t.val(c_im).ptr();
    const T* p_d = t.val(d).ptr();
    const T* p_dt = t.val(log_dt).ptr();
    Tensor<T>& gu = t.grad(u);
    T* g_ar = t.grad(a_re).ptr();
    T* g_ai = t.grad(a_im).ptr();
    T* g_br = t.grad(b_re).ptr();
    T* g_bi = t.grad(b_im).ptr();
    T* g_cr = t.grad(c_re).ptr();
    T* g_ci = t.grad(c_im).ptr();
    T* g_d = t.grad(d).ptr();
    T* g_dt = t.grad(log_dt).ptr();

    Tensor<T> dk({channels, length});
    std::vector<cplx<T>> dkhat(size_t(channels) * f);

    const int64_t cpairs = (channels + 1) / 2;
    parallel_chunks(cpairs, [&](int64_t q0, int64_t q1) {
      std::vector<cplx<T>> work(static_cast<size_t>(f)), su0(static_cast<size_t>(f)),
          su1(static_cast<size_t>(f)), dy0(static_cast<size_t>(f)), dy1(static_cast<size_t>(f));
      std::vector<T> tmp0(static_cast<size_t>(length)), tmp1(static_cast<size_t>(length));
      for (int64_t qp = q0; qp < q1; ++qp) {
        const int64_t h = 2 * qp;
        const bool pair = h + 1 < channels;
        const cplx<T>* k0 = khat->data() + h * f;
        const cplx<T>* k1 = pair ? khat->data() + (h + 1) * f : nullptr;
        cplx<T>* dk0 = dkhat.data() + h * f;
        cplx<T>* dk1 = pair ? dkhat.data() + (h + 1) * f : nullptr;
        T dD0 = 0, dD1 = 0;
        for (int64_t b = 0; b < batch; ++b) {
          const T* u0 = vu.ptr() + (b * channels + h) * length;
          const T* u1 = pair ? vu.ptr() + (b * channels + h + 1) * length : nullptr;
          const T* gy0 = g.ptr() + (b * channels + h) * length;
          const T* gy1 = pair ? g.ptr() + (b * channels + h + 1) * length : nullptr;
          fft_two_real(u0, u1, int(length), plan, su0.data(), pair ? su1.data() : nullptr,
                       work.data());
          fft_two_real(gy0, gy1, int(length), plan, dy0.data(), pair ? dy1.data() : nullptr,
                       work.data());
          // dkhat += conj(U) .* dY, accumulated per channel in batch order
          for (int j = 0; j < f; ++j) dk0[j] = dk0[j] + conj(su0[size_t(j)]) * dy0[size_t(j)];
          if (pair)
            for (int j = 0; j < f; ++j)
              dk1[j] = dk1[j] + conj(su1[size_t(j)]) * dy1[size_t(j)];
          // dU = ifft(dY .* conj(K))
          for (int j = 0; j < f; ++j) {
            dy0[size_t(j)] = dy0[size_t(j)] * conj(k0[j]);
            if (pair) dy1[size_t(j)] = dy1[size_t(j)] * conj(k1[j]);
          }
          ifft_two_real(dy0.data(), pair ? dy1.data() : dy0.data(), int(length), plan,
                        tmp0.data(), pair ? tmp1.data() : nullptr, work.data());
          T* gu0 = gu.ptr() + (b * channels + h) * length;
          const T d0 = p_d[h];
          for (int64_t l = 0; l < length; ++l) gu0[l] += tmp0[size_t(l)] + d0 * gy0[l];
          dD0 += dot_lanes(gy0, u0, length);
          if (pair) {
            T* gu1 = gu.ptr() + (b * channels + h + 1) * length;
            const T d1 = p_d[h + 1];
            for (int64_t l = 0; l < length; ++l) gu1[l] += tmp1[size_t(l)] + d1 * gy1[l];
            dD1 += dot_lanes(gy1, u1, length);
          }
        }
        g_d[h] += dD0;
        if (pair) g_d[h + 1] += dD1;
      }
    });

    // dk rows from accumulated spectra, channel-paired
    const int64_t kpairs = (channels + 1) / 2;
    parallel_chunks(kpairs, [&](int64_t q0, int64_t q1) {
      std::vector<cplx<T>> work(static_cast<size_t>(f));
      for (int64_t qp = q0; qp < q1; ++qp) {
        const int64_t h = 2 * qp;
        const bool pair = h + 1 < channels;
        ifft_two_real(dkhat.data() + h * f,
                      pair ? dkhat.data() + (h + 1) * f : dkhat.data() + h * f, int(length),
                      plan, dk.ptr() + h * length,
                      pair ? dk.ptr() + (h + 1) * length : nullptr, work.data());
      }
    });

    // kernel -> parameter chain per channel
    parallel_chunks(channels, [&](int64_t h0, int64_t h1) {
      for (int64_t h = h0; h < h1; ++h) {
        const T dt = std::exp(p_dt[h]);
        const T* dkr = dk.ptr() + h * length;
        T ddt = 0;
        for (int m = 0; m < modes; ++m) {
          const int64_t i = h * modes + m;
          const cplx<T> a{p_ar[i], p_ai[i]};
          const cplx<T> bb{p_br[i], p_bi[i]};
          const cplx<T> c{p_cr[i], p_ci[i]};
          const cplx<T> z = dt * a;
          const cplx<T> abar = ssm_detail::cexp(z);
          cplx<T> q, dq_dz;
          ssm_detail::expm1z_vd(z, q, dq_dz);
          const cplx<T> bbar = dt * (q * bb);
          // Q = sum_l dk[l] abar^l, R = sum_{l>=1} l dk[l] abar^{l-1}
          cplx<T> pw{1, 0}, Q{0, 0}, R{0, 0};
          Q = dkr[0] * pw;
          for (int64_t l = 1; l < length; ++l) {
            R = R + (T(l) * dkr[l]) * pw;
            pw = pw * abar;
            Q = Q + dkr[l] * pw;
          }
          // packed adjoints (dJ/dre + i dJ/dim); holomorphic steps propagate
          // as dz_in += dz_out * conj(f'(z))
          const cplx<T> dC = T(2) * conj(bbar * Q);
          const cplx<T> dAbar = T(2) * conj(c * bbar * R);
          const cplx<T> dBbar = T(2) * conj(c * Q);
          const cplx<T> dB = dBbar * conj(dt * q);
          const cplx<T> dQf = dBbar * conj(bb * dt);
          ddt += (dBbar * conj(bb * q)).re;
          const cplx<T> dz = dQf * conj(dq_dz) + dAbar * conj(abar);
          const cplx<T> dA = dt * dz;
          ddt += (dz * conj(a)).re;
          g_cr[i] += dC.re;
          g_ci[i] += dC.im;
          g_br[i] += dB.re;
          g_bi[i] += dB.im;
          g_ar[i] += dA.re;
          g_ai[i] += dA.im;
        }
        g_dt[h] += ddt * dt;
      }
    });
  });
}

// Standalone causal FFT convolution where the kernel itself is a
// differentiable node: y[b,h,:] = k[h,:] (*) u[b,h,:].
template <typename T>
inline int op_fft_convolve(Tape<T>& tape, int u, int k) {
  const Tensor<T>&vu = tape.val(u), &vk = tape.val(k);
  require(vu.rank() == 3 && vk.rank() == 2 && vu.dim(1) == vk.dim(0) &&
              vu.dim(2) == vk.dim(1),
          "fft_convolve: expected u [B,H,L], k [H,L]");
  const int64_t batch = vu.dim(0), channels = vu.dim(1), length = vu.dim(2);
  const int f = next_pow2(2 * length - 1);
  const FftPlan<T>& plan = fft_plan<T>(f);
  Tensor<T> out(vu.shape);
  std::vector<cplx<T>> work(static_cast<size_t>(f)), su(static_cast<size_t>(f)), sk(static_cast<size_t>(f));
  for (int64_t h = 0; h < channels; ++h) {
    fft_two_real<T>(vk.ptr() + h * length, nullptr, int(length), plan, sk.data(),
                    nullptr, work.data());
    for (int64_t b = 0; b < batch; ++b) {
      fft_two_real<T>(vu.ptr() + (b * channels + h) * length, nullptr, int(length), plan,
                      su.data(), nullptr, work.data());
      for (int j = 0; j < f; ++j) su[size_t(j)] = su[size_t(j)] * sk[size_t(j)];
      ifft_two_real<T>(su.data(), su.data(), int(length), plan,
                       out.ptr() + (b * channels + h) * length, nullptr, work.data());
    }
  }
  return tape.add(std::move(out), [u, k, batch, channels, length, f](Tape<T>& t, int self) {
    const FftPlan<T>& plan = fft_plan<T>(f);
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>&vu = t.val(u), &vk = t.val(k);
    Tensor<T>&gu = t.grad(u), &gk = t.grad(k);
    std::vector<cplx<T>> work(static_cast<size_t>(f)), sk(static_cast<size_t>(f)), su(static_cast<size_t>(f)), sg(static_cast<size_t>(f)),
        acc(static_cast<size_t>(f));
    std::vector<T> tmp(static_cast<size_t>(length));
    for (int64_t h = 0; h < channels; ++h) {
      fft_two_real<T>(vk.ptr() + h * length, nullptr, int(length), plan, sk.data(),
                      nullptr, work.data());
      std::fill(acc.begin(), acc.end(), cplx<T>{0, 0});
      for (int64_t b = 0; b < batch; ++b) {
        fft_two_real<T>(g.ptr() + (b * channels + h) * length, nullptr, int(length), plan,
                        sg.data(), nullptr, work.data());
        fft_two_real<T>(vu.ptr() + (b * channels + h) * length, nullptr, int(length), plan,
                        su.data(), nullptr, work.data());
        for (int j = 0; j < f; ++j) acc[size_t(j)] = acc[size_t(j)] + conj(su[size_t(j)]) * sg[size_t(j)];
        for (int j = 0; j < f; ++j) sg[size_t(j)] = sg[size_t(j)] * conj(sk[size_t(j)]);
        ifft_two_real<T>(sg.data(), sg.data(), int(length), plan, tmp.data(), nullptr,
                         work.data());
        T* gur = gu.ptr() + (b * channels + h) * length;
        for (int64_t l = 0; l < length; ++l) gur[l] += tmp[size_t(l)];
      }
      ifft_two_real<T>(acc.data(), acc.data(), int(length), plan, tmp.data(), nullptr,
                       work.data());
      T* gkr = gk.ptr() + h * length;
      for (int64_t l = 0; l < length; ++l) gkr[l] += tmp[size_t(l)];
    }
  });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Binary cross-entropy over fractional targets, masked per epoch.
// probs: [B,C,N]; targets: [B,C,N]; mask: [B,N] with nonzero = included.
// Returns the mean over included (epoch, class) elements.
template <typename T>
inline int op_bce_masked(Tape<T>& tape, int probs, Tensor<T> targets, Tensor<T> mask) {
  const Tensor<T>& vp = tape.val(probs);
  require(vp.rank() == 3 && vp.shape == targets.shape, "bce: probs/targets shape mismatch");
  const int64_t batch = vp.dim(0), classes = vp.dim(1), epochs = vp.dim(2);
  require(mask.shape == std::vector<int64_t>({batch, epochs}), "bce: mask must be [B,N]");
  const T lo = T(1e-7), hi = T(1) - T(1e-7);
  int64_t included = 0;
  double acc = 0;
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t n = 0; n < epochs; ++n) {
      if (!(mask[b * epochs + n] > T(0.5))) continue;
      ++included;
      for (int64_t c = 0; c < classes; ++c) {
        const int64_t i = (b * classes + c) * epochs + n;
        const T p = std::clamp(vp[i], lo, hi);
        const T tv = targets[i];
        acc += double(tv) * std::log(double(p)) + double(T(1) - tv) * std::log(double(T(1) - p));
      }
    }
  require(included > 0, "bce: all epochs masked out (empty loss)");
  const int64_t count = included * classes;
  Tensor<T> out({1});
  out[0] = T(-acc / double(count));
  auto tgt = std::make_shared<Tensor<T>>(std::move(targets));
  auto msk = std::make_shared<Tensor<T>>(std::move(mask));
  return tape.add(std::move(out), [probs, tgt, msk, batch, classes, epochs, count, lo,
                                   hi](Tape<T>& t, int self) {
    const T gscale = t.grad(self)[0] / T(count);
    const Tensor<T>& vp = t.val(probs);
    Tensor<T>& gp = t.grad(probs);
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t n = 0; n < epochs; ++n) {
        if (!((*msk)[b * epochs + n] > T(0.5))) continue;
        for (int64_t c = 0; c < classes; ++c) {
          const int64_t i = (b * classes + c) * epochs + n;
          // straight-through clamp: saturated predictions keep a finite
          // gradient so training can recover from them
          const T p = std::clamp(vp[i], lo, hi);
          const T tv = (*tgt)[i];
          gp[i] += gscale * (-(tv / p) + (T(1) - tv) / (T(1) - p));
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker (double precision).
// ---------------------------------------------------------------------------

using GraphBuilder = std::function<int(Tape<double>&, const std::vector<int>&)>;

inline double grad_check(const GraphBuilder& build, std::vector<Tensor<double>> inputs,
                         double eps = 1e-5) {
  Tape<double> tape;
  std::vector<int> ids;
  for (auto& in : inputs) ids.push_back(op_variable(tape, in));
  const int loss = build(tape, ids);
  require(tape.val(loss).size() == 1, "grad_check: builder must return a scalar");
  tape.backward(loss);

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t2;
    std::vector<int> id2;
    for (const auto& x : xs) id2.push_back(op_variable(t2, x));
    return t2.val(build(t2, id2))[0];
  };

  double worst = 0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic =
        tape.has_grad(ids[k]) ? tape.nodes[size_t(ids[k])].grad : Tensor<double>(inputs[k].shape);
    for (int64_t i = 0; i < inputs[k].size(); ++i) {
      auto xs = inputs;
      xs[k][i] += eps;
      const double up = eval(xs);
      xs[k][i] -= 2 * eps;
      const double dn = eval(xs);
      const double numeric = (up - dn) / (2 * eps);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// [B*N, C] encoder tokens -> [B, C, N] predictor sequence
template <typename T>
inline int op_tokens_to_seq(Tape<T>& tape, int x, int64_t batch, int64_t n_epochs) {
  const Tensor<T>& vx = tape.val(x);
  require(vx.rank() == 2 && vx.dim(0) == batch * n_epochs, "tokens_to_seq: bad token matrix");
  const int64_t channels = vx.dim(1);
  Tensor<T> out({batch, channels, n_epochs});
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t n = 0; n < n_epochs; ++n)
      for (int64_t c = 0; c < channels; ++c)
        out[(b * channels + c) * n_epochs + n] = vx[(b * n_epochs + n) * channels + c];
  return tape.add(std::move(out), [x, batch, n_epochs, channels](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t n = 0; n < n_epochs; ++n)
        for (int64_t c = 0; c < channels; ++c)
          gx[(b * n_epochs + n) * channels + c] += g[(b * channels + c) * n_epochs + n];
  });
}

}  // namespace s4ecg::autodiff
