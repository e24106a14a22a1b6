#pragma once

// Loss, optimizer, and the training loop: gradient accumulation over
// micro-batches of non-overlapping crops, per-pass validation, and selection
// of the checkpoint with the best validation macro-AUROC.

#include <json.hpp>

#include "s4ecg/evaluation.hpp"
#include "s4ecg/model.hpp"
#include "s4ecg/pipeline.hpp"

namespace s4ecg::training {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  int micro_batch = 4;
  int accumulation = 16;  // micro_batch * accumulation = effective batch 64
  int max_epochs = 5;
  uint64_t seed = 0;
  double unknown_exclusion_threshold = 0.0;
  std::array<double, 3> split_ratios = {8, 1, 1};

  void validate() const {
    require(lr > 0 && weight_decay >= 0, "train config: lr must be positive");
    require(micro_batch >= 1 && accumulation >= 1, "train config: batch sizes must be >= 1");
    require(max_epochs >= 1, "train config: max_epochs must be >= 1");
    require(unknown_exclusion_threshold >= 0 && unknown_exclusion_threshold <= 1,
            "train config: unknown threshold must be in [0,1]");
  }

  std::map<std::string, std::string> to_kv() const {
    std::map<std::string, std::string> kv;
    kv["lr"] = std::to_string(lr);
    kv["weight_decay"] = std::to_string(weight_decay);
    kv["beta1"] = std::to_string(beta1);
    kv["beta2"] = std::to_string(beta2);
    kv["eps"] = std::to_string(eps);
    kv["micro_batch"] = std::to_string(micro_batch);
    kv["accumulation"] = std::to_string(accumulation);
    kv["max_epochs"] = std::to_string(max_epochs);
    kv["seed"] = std::to_string(seed);
    kv["unknown_exclusion_threshold"] = std::to_string(unknown_exclusion_threshold);
    kv["ratio_train"] = std::to_string(split_ratios[0]);
    kv["ratio_valid"] = std::to_string(split_ratios[1]);
    kv["ratio_test"] = std::to_string(split_ratios[2]);
    return kv;
  }

  static TrainConfig from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    auto num = [&](const char* k, double& out) {
      if (auto it = kv.find(k); it != kv.end()) out = std::stod(it->second);
    };
    auto integer = [&](const char* k, auto& out) {
      if (auto it = kv.find(k); it != kv.end())
        out = std::decay_t<decltype(out)>(std::stoll(it->second));
    };
    num("lr", c.lr);
    num("weight_decay", c.weight_decay);
    num("beta1", c.beta1);
    num("beta2", c.beta2);
    num("eps", c.eps);
    integer("micro_batch", c.micro_batch);
    integer("accumulation", c.accumulation);
    integer("max_epochs", c.max_epochs);
    integer("seed", c.seed);
    num("unknown_exclusion_threshold", c.unknown_exclusion_threshold);
    num("ratio_train", c.split_ratios[0]);
    num("ratio_valid", c.split_ratios[1]);
    num("ratio_test", c.split_ratios[2]);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Loss (reference form; the tape op carries the gradient during training)
// ---------------------------------------------------------------------------

// probs/targets: [B, N, C] flattened; mask: [B, N]. Mean of the binary
// cross-entropy over unmasked (epoch, class) elements, probabilities clamped
// to [1e-7, 1-1e-7]. nullopt when every epoch is masked out.
inline std::optional<double> bce_fractional_loss(const std::vector<double>& probs,
                                                 const std::vector<double>& targets,
                                                 const std::vector<double>& epoch_mask,
                                                 int n_classes) {
  require(probs.size() == targets.size(), "bce: probs/targets size mismatch");
  require(probs.size() == epoch_mask.size() * size_t(n_classes), "bce: mask size mismatch");
  double acc = 0;
  int64_t count = 0;
  for (size_t e = 0; e < epoch_mask.size(); ++e) {
    if (!(epoch_mask[e] > 0.5)) continue;
    for (int c = 0; c < n_classes; ++c) {
      const double p = std::clamp(probs[e * size_t(n_classes) + c], 1e-7, 1.0 - 1e-7);
      const double t = targets[e * size_t(n_classes) + c];
      acc += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return -acc / double(count);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

// Decoupled weight decay step over every parameter in the store. Returns
// false (leaving parameters untouched) when any gradient is non-finite;
// `diagnostic` then names the first offending tensor.
template <typename T>
inline bool adamw_step(autodiff::ParamStore<T>& store, const TrainConfig& cfg,
                       std::string* diagnostic = nullptr) {
  for (const auto& p : store.params)
    for (int64_t i = 0; i < p.grad.size(); ++i)
      if (!std::isfinite(double(p.grad[i]))) {
        if (diagnostic)
          *diagnostic = "non-finite gradient in tensor '" + p.name + "' at index " +
                        std::to_string(i);
        return false;
      }
  const int64_t t = ++store.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (auto& p : store.params) {
    T* theta = p.value.ptr();
    T* m = p.m.ptr();
    T* v = p.v.ptr();
    const T* g = p.grad.ptr();
    const int64_t n = p.value.size();
    const double lr = cfg.lr * p.lr_scale;
    const double wd = p.decay ? cfg.weight_decay : 0.0;
    for (int64_t i = 0; i < n; ++i) {
      m[i] = T(cfg.beta1) * m[i] + T(1.0 - cfg.beta1) * g[i];
      v[i] = T(cfg.beta2) * v[i] + T(1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = double(m[i]) / bc1;
      const double vhat = double(v[i]) / bc2;
      theta[i] = T(double(theta[i]) -
                   lr * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * double(theta[i])));
    }
  }
  return true;
}

template <typename T>
inline void scale_grads(autodiff::ParamStore<T>& store, T scale) {
  for (auto& p : store.params)
    for (int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] *= scale;
}

// ---------------------------------------------------------------------------
// Batched crops and the optimizer window
// ---------------------------------------------------------------------------

struct Crop {
  int record = 0;
  int64_t begin = 0;  // first epoch of the crop
};

struct MicroBatch {
  Tensor<float> signal;   // [B, N*epoch_len]
  Tensor<float> targets;  // [B, C, N]
  Tensor<float> mask;     // [B, N]
  int64_t included_elements = 0;  // unmasked epochs x classes
};

inline MicroBatch assemble_batch(const pipeline::EpochDataset& data,
                                 const std::vector<Crop>& crops, int64_t input_epochs,
                                 double unknown_threshold) {
  const int64_t epoch_len = data.epoch_len;
  const int n_classes = int(data.classes.size());
  const int64_t batch = int64_t(crops.size());
  MicroBatch mb;
  mb.signal = Tensor<float>({batch, input_epochs * epoch_len});
  mb.targets = Tensor<float>({batch, n_classes, input_epochs});
  mb.mask = Tensor<float>({batch, input_epochs});
  for (int64_t b = 0; b < batch; ++b) {
    const auto& rec = data.records[size_t(crops[size_t(b)].record)];
    const int64_t e0 = crops[size_t(b)].begin;
    std::copy(rec.signal.begin() + e0 * epoch_len,
              rec.signal.begin() + (e0 + input_epochs) * epoch_len,
              mb.signal.ptr() + b * input_epochs * epoch_len);
    for (int64_t n = 0; n < input_epochs; ++n) {
      const bool included = rec.labels.unknown[size_t(e0 + n)] <= unknown_threshold;
      mb.mask[b * input_epochs + n] = included ? 1.0f : 0.0f;
      if (included) mb.included_elements += n_classes;
      for (int c = 0; c < n_classes; ++c)
        mb.targets[(b * n_classes + c) * input_epochs + n] =
            float(rec.labels.fraction(e0 + n, c));
    }
  }
  return mb;
}

// Accumulates gradients over the micro-batches (weighted by their unmasked
// element counts so the combined update equals one large batch) and applies
// one AdamW step. Returns the combined mean loss, or nullopt when every
// epoch in the window was masked out and the step was skipped.
inline std::optional<double> step_on_batches(model::Model<float>& m,
                                             const std::vector<MicroBatch>& window,
                                             const TrainConfig& cfg, Rng& dropout_rng,
                                             std::string* diagnostic = nullptr) {
  int64_t total_elements = 0;
  double loss_acc = 0;
  m.store.zero_grads();
  for (const auto& mb : window) {
    if (mb.included_elements == 0) continue;
    autodiff::Tape<float> tape;
    const int probs = m.forward(tape, mb.signal, /*train=*/true, dropout_rng.next_u64());
    const int loss = autodiff::op_bce_masked(tape, probs, mb.targets, mb.mask);
    tape.backward(loss);
    tape.accumulate_param_grads(m.store, float(mb.included_elements));
    loss_acc += double(tape.val(loss)[0]) * double(mb.included_elements);
    total_elements += mb.included_elements;
  }
  if (total_elements == 0) {
    m.store.zero_grads();
    return std::nullopt;  // empty-loss window, step skipped
  }
  scale_grads(m.store, float(1.0 / double(total_elements)));
  if (!adamw_step(m.store, cfg, diagnostic)) {
    m.store.zero_grads();
    return std::nullopt;
  }
  m.enforce_ssm_stability();
  m.store.zero_grads();
  return loss_acc / double(total_elements);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::shared_ptr<model::Model<float>> best_model;
  model::CheckpointMeta best_meta;
  pipeline::SplitAssignment split;
  std::vector<double> pass_validation;  // macro-AUROC after each pass
  std::vector<std::string> log_lines;   // line-delimited JSON records
};

inline std::vector<Crop> training_crops(const pipeline::EpochDataset& data,
                                        const std::vector<std::string>& patients,
                                        int64_t input_epochs) {
  std::vector<Crop> crops;
  for (size_t r = 0; r < data.records.size(); ++r) {
    const auto& rec = data.records[r];
    if (std::find(patients.begin(), patients.end(), rec.patient_id) == patients.end())
      continue;
    for (const auto& range : pipeline::crop_ranges(rec.labels.epochs, input_epochs,
                                                   pipeline::CropMode::train_nonoverlap))
      crops.push_back({int(r), range.begin});
  }
  return crops;
}

inline TrainResult train(model::Model<float>& m, const pipeline::EpochDataset& data,
                         const TrainConfig& cfg, std::ostream* log_stream = nullptr) {
  cfg.validate();
  const int64_t input_epochs = m.config.input_epochs;
  require(int(data.classes.size()) == m.config.n_classes,
          "train: dataset class count does not match the model");

  const uint64_t split_seed = data.split_seed ? data.split_seed : cfg.seed;
  auto split = pipeline::split_patients(pipeline::dataset_patients(data), cfg.split_ratios,
                                        split_seed);
  require(!split.train.empty(), "train: empty training split");
  require(!split.valid.empty(), "train: empty validation split");

  auto crops = training_crops(data, split.train, input_epochs);
  require(!crops.empty(), "train: no usable crops (records shorter than the input window?)");
  int64_t maskable = 0;
  for (const auto& c : crops)
    for (int64_t n = 0; n < input_epochs; ++n)
      if (data.records[size_t(c.record)].labels.unknown[size_t(c.begin + n)] <=
          cfg.unknown_exclusion_threshold)
        ++maskable;
  require(maskable > 0, "train: every epoch is excluded by the unknown threshold");

  TrainResult result;
  result.split = split;
  Rng shuffle_rng = Rng::fork(cfg.seed, 1);
  Rng dropout_rng = Rng::fork(cfg.seed, 2);
  int64_t step = 0;
  double best_val = -1;

  auto emit = [&](nlohmann::json j) {
    const std::string line = j.dump();
    result.log_lines.push_back(line);
    if (log_stream) (*log_stream) << line << "\n";
  };

  for (int pass = 0; pass < cfg.max_epochs; ++pass) {
    shuffle_rng.shuffle(crops);
    const int64_t window_crops = int64_t(cfg.micro_batch) * cfg.accumulation;
    for (int64_t w0 = 0; w0 < int64_t(crops.size()); w0 += window_crops) {
      std::vector<MicroBatch> window;
      for (int64_t b0 = w0; b0 < std::min<int64_t>(w0 + window_crops, crops.size());
           b0 += cfg.micro_batch) {
        const int64_t b1 = std::min<int64_t>(b0 + cfg.micro_batch, crops.size());
        window.push_back(assemble_batch(
            data, {crops.begin() + b0, crops.begin() + b1}, input_epochs,
            cfg.unknown_exclusion_threshold));
      }
      std::string diagnostic;
      auto loss = step_on_batches(m, window, cfg, dropout_rng, &diagnostic);
      if (!loss) {
        emit({{"step", step}, {"skipped", true}, {"reason", diagnostic.empty()
                                                                ? "all epochs masked"
                                                                : diagnostic}});
        continue;
      }
      ++step;
      emit({{"step", step}, {"loss", *loss}, {"lr", cfg.lr}});
    }

    // validation on a snapshot of the weights, tiled windows
    auto scored = evaluation::score_dataset(m, data, split.valid, input_epochs, input_epochs);
    auto metric = evaluation::macro_auroc_metric(scored);
    auto val = metric(scored, std::vector<double>(scored.patients.size(), 1.0));
    const double val_auroc = val.value_or(0.0);
    result.pass_validation.push_back(val_auroc);
    emit({{"step", step}, {"pass", pass + 1}, {"val_macro_auroc", val_auroc}});
    if (val_auroc > best_val) {
      best_val = val_auroc;
      result.best_model = std::make_shared<model::Model<float>>(m);
      result.best_meta.validation_macro_auroc = val_auroc;
      result.best_meta.optimizer_step = m.store.step;
      result.best_meta.rng_state = dropout_rng.state_string();
    }
  }
  return result;
}

}  // namespace s4ecg::training
