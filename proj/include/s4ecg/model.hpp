#pragma once

// The hierarchical encoder-predictor model: a strided conv front-end and an
// S4 stack compress each 30-second epoch to one token; a second S4 stack over
// the token sequence captures inter-epoch structure; a linear head with
// per-class sigmoids emits fractional rhythm probabilities per epoch.
// A predictor-less configuration is the single-epoch baseline.

#include <iomanip>

#include "s4ecg/autodiff.hpp"
#include "s4ecg/wfdb.hpp"

namespace s4ecg::model {

using autodiff::ParamStore;
using autodiff::Tape;

struct ModelConfig {
  int64_t epoch_len = 3840;
  int conv_layers = 2;
  int conv_channels = 128;
  int conv_kernel = 3;
  int conv_stride = 2;
  int d_model = 512;
  int d_state = 64;
  int encoder_layers = 4;
  bool bidirectional = true;
  int predictor_layers = 4;
  int n_classes = 0;
  int64_t input_epochs = 1;
  double dropout = 0.1;
  double scale = 1.0;
  double predictor_lr_scale = 1.0;  // constant per-group rate for the upper stack

  static int apply_scale(int dim, double scale, const char* what) {
    const double v = double(dim) * scale;
    require(std::abs(v - std::round(v)) < 1e-9 && v >= 1.0,
            std::string(what) + " * scale must be a positive integer");
    return int(std::llround(v));
  }

  int conv_channels_s() const { return apply_scale(conv_channels, scale, "conv_channels"); }
  int d_model_s() const { return apply_scale(d_model, scale, "d_model"); }
  int d_state_s() const {
    int n = apply_scale(d_state, scale, "d_state");
    require(n % 2 == 0, "scaled d_state must be even");
    return n;
  }
  int64_t encoded_len() const {
    int64_t len = epoch_len;
    for (int i = 0; i < conv_layers; ++i) {
      require(len % conv_stride == 0, "epoch_len must divide by stride at every conv layer");
      len /= conv_stride;
    }
    return len;
  }

  void validate() const {
    require(scale > 0, "scale must be positive");
    require(n_classes >= 1, "n_classes must be set");
    require(input_epochs >= 1, "input_epochs must be >= 1");
    require(conv_layers >= 1 && conv_kernel % 2 == 1, "conv front-end needs an odd kernel");
    require(bidirectional, "only bidirectional S4 stacks are supported");
    require(dropout >= 0 && dropout < 1, "dropout must be in [0,1)");
    (void)conv_channels_s();
    (void)d_model_s();
    (void)d_state_s();
    (void)encoded_len();
  }

  std::map<std::string, std::string> to_kv() const {
    std::map<std::string, std::string> kv;
    auto put = [&](const char* k, auto v) { kv[k] = std::to_string(v); };
    put("epoch_len", epoch_len);
    put("conv_layers", conv_layers);
    put("conv_channels", conv_channels);
    put("conv_kernel", conv_kernel);
    put("conv_stride", conv_stride);
    put("d_model", d_model);
    put("d_state", d_state);
    put("encoder_layers", encoder_layers);
    put("bidirectional", int(bidirectional));
    put("predictor_layers", predictor_layers);
    put("n_classes", n_classes);
    put("input_epochs", input_epochs);
    kv["dropout"] = std::to_string(dropout);
    kv["scale"] = std::to_string(scale);
    kv["predictor_lr_scale"] = std::to_string(predictor_lr_scale);
    return kv;
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto get = [&](const char* k, auto& out) {
      auto it = kv.find(k);
      if (it == kv.end()) return;
      if constexpr (std::is_same_v<std::decay_t<decltype(out)>, double>)
        out = std::stod(it->second);
      else if constexpr (std::is_same_v<std::decay_t<decltype(out)>, bool>)
        out = std::stoi(it->second) != 0;
      else
        out = std::decay_t<decltype(out)>(std::stoll(it->second));
    };
    get("epoch_len", c.epoch_len);
    get("conv_layers", c.conv_layers);
    get("conv_channels", c.conv_channels);
    get("conv_kernel", c.conv_kernel);
    get("conv_stride", c.conv_stride);
    get("d_model", c.d_model);
    get("d_state", c.d_state);
    get("encoder_layers", c.encoder_layers);
    get("bidirectional", c.bidirectional);
    get("predictor_layers", c.predictor_layers);
    get("n_classes", c.n_classes);
    get("input_epochs", c.input_epochs);
    get("dropout", c.dropout);
    get("scale", c.scale);
    get("predictor_lr_scale", c.predictor_lr_scale);
    return c;
  }
};

struct SsmParamIds {
  int a_re = -1, a_im = -1, b_re = -1, b_im = -1, c_re = -1, c_im = -1, d = -1, log_dt = -1;
};

struct BlockIds {
  int ln_gamma = -1, ln_beta = -1;
  SsmParamIds fwd, bwd;
  int merge_w = -1, merge_b = -1;
};

template <typename T>
class Model {
 public:
  ModelConfig config;
  ParamStore<T> store;

  Model(ModelConfig cfg, uint64_t seed) : config(cfg) {
    config.validate();
    Rng rng(seed);
    const int ch = config.conv_channels_s();
    const int dm = config.d_model_s();

    conv1_w_ = add_normal({ch, 1, config.conv_kernel}, std::sqrt(2.0 / config.conv_kernel),
                          "enc.conv1.w", rng);
    conv1_b_ = add_zeros({ch}, "enc.conv1.b");
    conv2_w_ = add_normal({ch, ch, config.conv_kernel},
                          std::sqrt(2.0 / (double(ch) * config.conv_kernel)), "enc.conv2.w",
                          rng);
    conv2_b_ = add_zeros({ch}, "enc.conv2.b");
    proj_w_ = add_normal({dm, ch}, std::sqrt(2.0 / double(ch + dm)), "enc.proj.w", rng);
    proj_b_ = add_zeros({dm}, "enc.proj.b");
    for (int l = 0; l < config.encoder_layers; ++l)
      encoder_.push_back(add_block("enc.block" + std::to_string(l), dm, rng));
    enc_norm_gamma_ = add_ones({dm}, "enc.norm.gamma");
    enc_norm_beta_ = add_zeros({dm}, "enc.norm.beta");
    for (int l = 0; l < config.predictor_layers; ++l)
      predictor_.push_back(add_block("pred.block" + std::to_string(l), dm, rng));
    if (config.predictor_layers > 0) {
      pred_norm_gamma_ = add_ones({dm}, "pred.norm.gamma");
      pred_norm_beta_ = add_zeros({dm}, "pred.norm.beta");
    }
    head_w_ = add_normal({config.n_classes, dm}, std::sqrt(2.0 / double(dm + config.n_classes)),
                         "head.w", rng);
    head_b_ = add_zeros({config.n_classes}, "head.b");

    // the customary optimizer grouping for state-space stacks: state and
    // step parameters move at a reduced rate and are never decayed, and
    // normalization parameters are not decayed either
    for (auto& p : store.params) {
      const bool ssm = p.name.find(".a_re") != std::string::npos ||
                       p.name.find(".a_im") != std::string::npos ||
                       p.name.find(".b_re") != std::string::npos ||
                       p.name.find(".b_im") != std::string::npos ||
                       p.name.find(".log_dt") != std::string::npos;
      const bool ssm_out = p.name.find(".c_re") != std::string::npos ||
                           p.name.find(".c_im") != std::string::npos ||
                           (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".d") == 0);
      const bool norm = p.name.find(".ln.") != std::string::npos ||
                        p.name.find(".norm.") != std::string::npos;
      if (ssm) {
        p.lr_scale = 0.25;
        p.decay = false;
      } else if (ssm_out || norm) {
        p.decay = false;
      }
      if (p.name.rfind("pred.", 0) == 0) p.lr_scale *= config.predictor_lr_scale;
    }
  }

  int64_t parameter_count() const { return store.scalar_count(); }

  // projection onto the stable set after optimizer steps: every SSM mode
  // keeps Re(a) strictly negative so |a_bar| < 1 holds for any step size
  void enforce_ssm_stability(T max_real = T(-0.05)) {
    for (auto& p : store.params) {
      if (p.name.size() < 5 || p.name.compare(p.name.size() - 5, 5, ".a_re") != 0) continue;
      for (int64_t i = 0; i < p.value.size(); ++i)
        p.value[i] = std::min(p.value[i], max_real);
    }
  }

  // signal: [B, N*epoch_len] flattened crops. Returns the id of the
  // probability node with value [B, n_classes, N].
  int forward(Tape<T>& tape, const Tensor<T>& signal, bool train_mode = false,
              uint64_t dropout_seed = 0, bool bypass_predictor = false) {
    require(signal.rank() == 2, "forward: expected [B, length]");
    const int64_t batch = signal.dim(0), total = signal.dim(1);
    require(total % config.epoch_len == 0,
            "forward: input length " + std::to_string(total) + " is not a multiple of " +
                std::to_string(config.epoch_len));
    const int64_t n_epochs = total / config.epoch_len;

    // epochs become independent encoder instances: [B*N, 1, epoch_len]
    Tensor<T> staged = signal;
    staged.shape = {batch * n_epochs, 1, config.epoch_len};
    int x = autodiff::op_input(tape, std::move(staged));
    uint64_t drop_k = dropout_seed;

    x = encode(tape, x, train_mode, drop_k);                      // [B*N, D]
    x = autodiff::op_tokens_to_seq(tape, x, batch, n_epochs);     // [B, D, N]
    if (!bypass_predictor && !predictor_.empty()) {
      for (auto& block : predictor_) x = apply_block(tape, x, block, train_mode, drop_k);
      x = autodiff::op_layer_norm(tape, x, leaf(tape, pred_norm_gamma_),
                                  leaf(tape, pred_norm_beta_));
    }
    const int logits =
        autodiff::op_pointwise_linear(tape, x, leaf(tape, head_w_), leaf(tape, head_b_));
    return autodiff::op_sigmoid(tape, logits);                    // [B, C, N]
  }

  // One 30-second epoch to one token; kept separate so the per-epoch path
  // can be inspected directly.
  Tensor<T> encode_epoch(const Tensor<T>& epoch) {
    require(epoch.size() == config.epoch_len, "encode_epoch: epoch must have epoch_len samples");
    Tape<T> tape;
    Tensor<T> staged = epoch;
    staged.shape = {1, 1, config.epoch_len};
    uint64_t drop_k = 0;
    int x = autodiff::op_input(tape, std::move(staged));
    x = encode(tape, x, false, drop_k);
    Tensor<T> token({config.d_model_s()});
    std::copy(tape.val(x).data.begin(), tape.val(x).data.end(), token.data.begin());
    return token;
  }

  // convenience inference: [B, N*epoch_len] -> probabilities [B, N, C]
  Tensor<T> predict(const Tensor<T>& signal, bool bypass_predictor = false) {
    Tape<T> tape;
    const int probs = forward(tape, signal, false, 0, bypass_predictor);
    return extract_probs(tape, probs);
  }

  static Tensor<T> extract_probs(Tape<T>& tape, int probs_node) {
    const Tensor<T>& v = tape.val(probs_node);
    const int64_t batch = v.dim(0), classes = v.dim(1), epochs = v.dim(2);
    Tensor<T> out({batch, epochs, classes});
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t c = 0; c < classes; ++c)
        for (int64_t n = 0; n < epochs; ++n)
          out[(b * epochs + n) * classes + c] = v[(b * classes + c) * epochs + n];
    return out;
  }

 private:
  int add_normal(std::vector<int64_t> shape, double stddev, const std::string& name, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = T(rng.normal() * stddev);
    return store.add(name, std::move(t));
  }

  int add_zeros(std::vector<int64_t> shape, const std::string& name) {
    return store.add(name, Tensor<T>(std::move(shape)));
  }

  int add_ones(std::vector<int64_t> shape, const std::string& name) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = T(1);
    return store.add(name, std::move(t));
  }

  SsmParamIds add_ssm(const std::string& prefix, int channels, Rng& rng) {
    auto p = init_diagonal_ssm<T>(channels, config.d_state_s(), rng.next_u64());
    const int modes = p.modes();
    auto split = [&](const std::vector<std::complex<T>>& src, bool imag) {
      Tensor<T> t({channels, modes});
      for (int64_t i = 0; i < t.size(); ++i)
        t[i] = imag ? src[size_t(i)].imag() : src[size_t(i)].real();
      return t;
    };
    SsmParamIds ids;
    ids.a_re = store.add(prefix + ".a_re", split(p.a, false));
    ids.a_im = store.add(prefix + ".a_im", split(p.a, true));
    ids.b_re = store.add(prefix + ".b_re", split(p.b, false));
    ids.b_im = store.add(prefix + ".b_im", split(p.b, true));
    ids.c_re = store.add(prefix + ".c_re", split(p.c, false));
    ids.c_im = store.add(prefix + ".c_im", split(p.c, true));
    Tensor<T> d({channels}), ldt({channels});
    for (int h = 0; h < channels; ++h) {
      d[h] = p.d[size_t(h)];
      ldt[h] = p.log_dt[size_t(h)];
    }
    ids.d = store.add(prefix + ".d", std::move(d));
    ids.log_dt = store.add(prefix + ".log_dt", std::move(ldt));
    return ids;
  }

  BlockIds add_block(const std::string& prefix, int dm, Rng& rng) {
    BlockIds b;
    b.ln_gamma = add_ones({dm}, prefix + ".ln.gamma");
    b.ln_beta = add_zeros({dm}, prefix + ".ln.beta");
    b.fwd = add_ssm(prefix + ".fwd", dm, rng);
    b.bwd = add_ssm(prefix + ".bwd", dm, rng);
    // zero-initialized merge: residual branches start as the identity so the
    // stream keeps unit scale regardless of depth
    b.merge_w = add_zeros({dm, 2 * dm}, prefix + ".merge.w");
    b.merge_b = add_zeros({dm}, prefix + ".merge.b");
    return b;
  }

  // every parameter appears exactly once per forward pass
  int leaf(Tape<T>& tape, int pid) { return autodiff::op_param(tape, store, pid); }

  int ssm_leafed(Tape<T>& tape, int x, const SsmParamIds& p) {
    return autodiff::op_ssm_conv(tape, x, leaf(tape, p.a_re), leaf(tape, p.a_im),
                                 leaf(tape, p.b_re), leaf(tape, p.b_im), leaf(tape, p.c_re),
                                 leaf(tape, p.c_im), leaf(tape, p.d), leaf(tape, p.log_dt));
  }

  int apply_block(Tape<T>& tape, int x, const BlockIds& b, bool train_mode, uint64_t& drop_k) {
    const int normed = autodiff::op_layer_norm(tape, x, leaf(tape, b.ln_gamma),
                                               leaf(tape, b.ln_beta));
    const int fwd = ssm_leafed(tape, normed, b.fwd);
    const int rev = autodiff::op_time_reverse(tape, normed);
    const int bwd = autodiff::op_time_reverse(tape, ssm_leafed(tape, rev, b.bwd));
    const int cat = autodiff::op_concat_channels(tape, fwd, bwd);
    const int act = autodiff::op_gelu(tape, cat);
    int merged = autodiff::op_pointwise_linear(tape, act, leaf(tape, b.merge_w),
                                               leaf(tape, b.merge_b));
    if (train_mode && config.dropout > 0)
      merged = autodiff::op_dropout(tape, merged, config.dropout, hash_mix(drop_k++, 0x5eed));
    return autodiff::op_add(tape, x, merged);
  }

  int encode(Tape<T>& tape, int x, bool train_mode, uint64_t& drop_k) {
    x = autodiff::op_conv1d(tape, x, leaf(tape, conv1_w_), leaf(tape, conv1_b_),
                            config.conv_stride);
    x = autodiff::op_gelu(tape, x);
    x = autodiff::op_conv1d(tape, x, leaf(tape, conv2_w_), leaf(tape, conv2_b_),
                            config.conv_stride);
    x = autodiff::op_gelu(tape, x);
    x = autodiff::op_pointwise_linear(tape, x, leaf(tape, proj_w_), leaf(tape, proj_b_));
    for (auto& block : encoder_) x = apply_block(tape, x, block, train_mode, drop_k);
    x = autodiff::op_layer_norm(tape, x, leaf(tape, enc_norm_gamma_),
                                leaf(tape, enc_norm_beta_));
    return autodiff::op_mean_pool_time(tape, x);
  }

  int conv1_w_ = -1, conv1_b_ = -1, conv2_w_ = -1, conv2_b_ = -1;
  int proj_w_ = -1, proj_b_ = -1;
  std::vector<BlockIds> encoder_, predictor_;
  int enc_norm_gamma_ = -1, enc_norm_beta_ = -1;
  int pred_norm_gamma_ = -1, pred_norm_beta_ = -1;
  int head_w_ = -1, head_b_ = -1;
};

inline int64_t count_params(const ModelConfig& config) {
  Model<float> probe(config, 0);
  return probe.parameter_count();
}

// ---------------------------------------------------------------------------
// Checkpoint container: versioned binary with a text metadata block and
// shape-prefixed named float32 tensors (weights plus optimizer moments).
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  double validation_macro_auroc = 0.0;
  int64_t optimizer_step = 0;
  std::string rng_state;
};

namespace detail {

inline void put_u32(std::string& s, uint32_t v) { s.append(reinterpret_cast<char*>(&v), 4); }
inline void put_u64(std::string& s, uint64_t v) { s.append(reinterpret_cast<char*>(&v), 8); }

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  template <typename T>
  T get() {
    require(pos + sizeof(T) <= buf.size(), "checkpoint: truncated file");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string get_str(size_t n) {
    require(pos + n <= buf.size(), "checkpoint: truncated file");
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model<float>& m,
                            const CheckpointMeta& meta) {
  std::string out;
  out.append("S4ECGCK1", 8);
  detail::put_u32(out, 1);  // version

  std::ostringstream ms;
  for (const auto& [k, v] : m.config.to_kv()) ms << k << " = " << v << "\n";
  ms << "validation_macro_auroc = " << std::setprecision(17) << meta.validation_macro_auroc
     << "\n";
  ms << "optimizer_step = " << meta.optimizer_step << "\n";
  ms << "rng_state = " << meta.rng_state << "\n";
  const std::string meta_text = ms.str();
  detail::put_u32(out, uint32_t(meta_text.size()));
  out += meta_text;

  detail::put_u32(out, uint32_t(m.store.params.size()));
  for (const auto& p : m.store.params) {
    detail::put_u32(out, uint32_t(p.name.size()));
    out += p.name;
    detail::put_u32(out, uint32_t(p.value.shape.size()));
    for (auto d : p.value.shape) detail::put_u64(out, uint64_t(d));
    auto dump = [&](const Tensor<float>& t) {
      out.append(reinterpret_cast<const char*>(t.ptr()), size_t(t.size()) * 4);
    };
    dump(p.value);
    dump(p.m);
    dump(p.v);
  }
  wfdb::write_file_bytes(path, out.data(), out.size());
}

struct LoadedCheckpoint {
  ModelConfig config;
  std::shared_ptr<Model<float>> model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const auto buf = wfdb::read_file_bytes(path);
  detail::Reader r{buf};
  require(r.get_str(8) == "S4ECGCK1", "checkpoint: bad magic in " + path);
  require(r.get<uint32_t>() == 1, "checkpoint: unsupported version");
  const auto meta_text = r.get_str(r.get<uint32_t>());
  const auto kv = parse_flat_config(meta_text);

  LoadedCheckpoint out;
  out.config = ModelConfig::from_kv(kv);
  if (auto it = kv.find("validation_macro_auroc"); it != kv.end())
    out.meta.validation_macro_auroc = std::stod(it->second);
  if (auto it = kv.find("optimizer_step"); it != kv.end())
    out.meta.optimizer_step = std::stoll(it->second);
  if (auto it = kv.find("rng_state"); it != kv.end()) out.meta.rng_state = it->second;

  out.model = std::make_shared<Model<float>>(out.config, 0);
  auto& store = out.model->store;
  const uint32_t count = r.get<uint32_t>();
  require(count == store.params.size(),
          "checkpoint: tensor count mismatch (file " + std::to_string(count) + ", model " +
              std::to_string(store.params.size()) + ")");
  std::vector<bool> seen(store.params.size(), false);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_str(r.get<uint32_t>());
    const uint32_t ndim = r.get<uint32_t>();
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = int64_t(r.get<uint64_t>());
    const int pid = store.find(name);
    require(pid >= 0, "checkpoint: unknown tensor '" + name + "'");
    auto& p = store.at(pid);
    require(p.value.shape == shape,
            "checkpoint: shape mismatch for tensor '" + name + "' (file " +
                shape_string(shape) + ", model " + shape_string(p.value.shape) + ")");
    auto fill = [&](Tensor<float>& t) {
      const std::string raw = r.get_str(size_t(t.size()) * 4);
      std::memcpy(t.ptr(), raw.data(), raw.size());
    };
    fill(p.value);
    fill(p.m);
    fill(p.v);
    seen[size_t(pid)] = true;
  }
  for (size_t i = 0; i < seen.size(); ++i)
    require(seen[i], "checkpoint: tensor '" + store.params[i].name + "' missing from file");
  out.model->store.step = out.meta.optimizer_step;
  return out;
}

}  // namespace s4ecg::model
