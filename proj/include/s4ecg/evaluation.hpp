#pragma once

// Evaluation protocol: per-class and macro AUROC over epochs, specificity at
// fixed sensitivity via FNR-targeted thresholds, patient-level (optionally
// paired) bootstrap confidence intervals with the positive-free redraw rule,
// sliding-window probability aggregation, AF burden, and rhythm-band export.

#include <optional>

#include "s4ecg/model.hpp"
#include "s4ecg/pipeline.hpp"

namespace s4ecg::evaluation {

// Per-epoch scores and fractional targets, grouped by patient.
struct ScoredEpochs {
  std::vector<std::string> classes;
  std::vector<std::string> patients;     // unique ids; epochs refer by index
  std::vector<int> patient_of;           // epoch -> patient index
  std::vector<double> scores;            // epoch x C
  std::vector<double> targets;           // epoch x C
  std::vector<double> unknown_fraction;  // per epoch

  int n_classes() const { return int(classes.size()); }
  int64_t n_epochs() const { return int64_t(patient_of.size()); }
  double score(int64_t e, int c) const { return scores[size_t(e) * classes.size() + c]; }
  double target(int64_t e, int c) const { return targets[size_t(e) * classes.size() + c]; }
};

// Fractional targets are binarized at majority fraction for metric purposes.
constexpr double kBinarizeThreshold = 0.5;
// Epochs dominated by unknown rhythm are excluded from metrics.
constexpr double kMetricUnknownThreshold = 0.5;

// ---------------------------------------------------------------------------
// AUROC and thresholds on raw score/label arrays
// ---------------------------------------------------------------------------

// Mann-Whitney statistic: (#concordant + 0.5 #ties) / (#pos * #neg).
// Undefined (nullopt) when either class is missing.
inline std::optional<double> auroc(const std::vector<double>& scores,
                                   const std::vector<uint8_t>& labels) {
  require(scores.size() == labels.size(), "auroc: scores/labels size mismatch");
  const int64_t n = int64_t(scores.size());
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return scores[size_t(a)] < scores[size_t(b)]; });
  double pos = 0, neg = 0;
  for (auto l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) return std::nullopt;
  double neg_below = 0, acc = 0;
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;
    double gp = 0, gn = 0;
    while (j < n && scores[size_t(order[size_t(j)])] == scores[size_t(order[size_t(i)])]) {
      (labels[size_t(order[size_t(j)])] ? gp : gn) += 1;
      ++j;
    }
    acc += gp * neg_below + 0.5 * gp * gn;
    neg_below += gn;
    i = j;
  }
  return acc / (pos * neg);
}

inline std::optional<double> macro_auroc(const std::vector<std::optional<double>>& per_class) {
  double sum = 0;
  int n = 0;
  for (const auto& v : per_class)
    if (v) {
      sum += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Threshold minimizing |FNR - target| over all achievable operating points
// (candidates are below-minimum, midpoints of distinct scores, above-maximum).
// Positive prediction is score >= threshold. When two achievable FNR values
// are equidistant from the target, the lower FNR (higher sensitivity) wins;
// within an equal-FNR plateau the largest threshold wins, since it keeps the
// same sensitivity while rejecting the most negatives.
inline std::optional<double> threshold_at_fnr(const std::vector<double>& scores,
                                              const std::vector<uint8_t>& labels,
                                              double fnr_target) {
  require(scores.size() == labels.size(), "threshold_at_fnr: size mismatch");
  require(fnr_target >= 0 && fnr_target <= 1, "threshold_at_fnr: target must be in [0,1]");
  std::vector<int64_t> order(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) order[i] = int64_t(i);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return scores[size_t(a)] < scores[size_t(b)]; });
  double pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  if (pos == 0 || pos == double(labels.size())) return std::nullopt;

  double best_theta = scores[size_t(order[0])] - 1.0;
  double best_fnr = 0.0;  // everything predicted positive at the first candidate
  double best_err = std::abs(0.0 - fnr_target);
  double pos_below = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() &&
           scores[size_t(order[j])] == scores[size_t(order[i])]) {
      pos_below += labels[size_t(order[j])] ? 1 : 0;
      ++j;
    }
    const double theta = j < order.size()
                             ? 0.5 * (scores[size_t(order[i])] + scores[size_t(order[j])])
                             : scores[size_t(order[i])] + 1.0;
    const double fnr = pos_below / pos;
    const double err = std::abs(fnr - fnr_target);
    if (err < best_err || (err == best_err && fnr == best_fnr)) {
      best_err = err;
      best_fnr = fnr;
      best_theta = theta;
    }
    i = j;
  }
  return best_theta;
}

inline std::optional<double> specificity_at_sensitivity(const std::vector<double>& scores,
                                                        const std::vector<uint8_t>& labels,
                                                        double sensitivity) {
  auto theta = threshold_at_fnr(scores, labels, 1.0 - sensitivity);
  if (!theta) return std::nullopt;
  double tn = 0, negs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) continue;
    negs += 1;
    if (scores[i] < *theta) tn += 1;
  }
  if (negs == 0) return std::nullopt;
  return tn / negs;
}

// ---------------------------------------------------------------------------
// Patient-weighted metrics over ScoredEpochs (used by the bootstrap; integer
// patient weights are equivalent to duplicating resampled patients)
// ---------------------------------------------------------------------------

namespace detail {

struct PreparedClass {
  std::vector<int64_t> order;  // included epochs sorted by this class's score
  bool evaluable = false;      // both labels present in the full data
};

struct Prepared {
  const ScoredEpochs* data = nullptr;
  std::vector<uint8_t> included;  // metric-inclusion mask per epoch
  std::vector<PreparedClass> per_class;
  std::vector<std::vector<int64_t>> positives_of_class;  // included positive epochs
};

inline std::shared_ptr<Prepared> prepare(const ScoredEpochs& data,
                                         double unknown_threshold = kMetricUnknownThreshold) {
  auto prep = std::make_shared<Prepared>();
  prep->data = &data;
  const int64_t n = data.n_epochs();
  prep->included.resize(static_cast<size_t>(n));
  for (int64_t e = 0; e < n; ++e)
    prep->included[size_t(e)] = data.unknown_fraction[size_t(e)] <= unknown_threshold;
  prep->per_class.resize(size_t(data.n_classes()));
  prep->positives_of_class.resize(size_t(data.n_classes()));
  for (int c = 0; c < data.n_classes(); ++c) {
    auto& pc = prep->per_class[size_t(c)];
    bool any_pos = false, any_neg = false;
    for (int64_t e = 0; e < n; ++e) {
      if (!prep->included[size_t(e)]) continue;
      pc.order.push_back(e);
      if (data.target(e, c) >= kBinarizeThreshold) {
        any_pos = true;
        prep->positives_of_class[size_t(c)].push_back(e);
      } else {
        any_neg = true;
      }
    }
    std::sort(pc.order.begin(), pc.order.end(), [&](int64_t a, int64_t b) {
      return data.score(a, c) < data.score(b, c);
    });
    pc.evaluable = any_pos && any_neg;
  }
  return prep;
}

inline std::optional<double> weighted_auroc(const Prepared& prep, int c,
                                            const std::vector<double>& patient_weights) {
  const auto& data = *prep.data;
  const auto& order = prep.per_class[size_t(c)].order;
  double pos = 0, neg = 0, neg_below = 0, acc = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    double gp = 0, gn = 0;
    const double s0 = data.score(order[i], c);
    while (j < order.size() && data.score(order[j], c) == s0) {
      const int64_t e = order[j];
      const double w = patient_weights[size_t(data.patient_of[size_t(e)])];
      (data.target(e, c) >= kBinarizeThreshold ? gp : gn) += w;
      ++j;
    }
    acc += gp * neg_below + 0.5 * gp * gn;
    neg_below += gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return acc / (pos * neg);
}

inline std::optional<double> weighted_specificity_at_sensitivity(
    const Prepared& prep, int c, double sensitivity,
    const std::vector<double>& patient_weights) {
  const auto& data = *prep.data;
  const auto& order = prep.per_class[size_t(c)].order;
  const double fnr_target = 1.0 - sensitivity;
  double pos = 0, neg = 0;
  for (int64_t e : order) {
    const double w = patient_weights[size_t(data.patient_of[size_t(e)])];
    (data.target(e, c) >= kBinarizeThreshold ? pos : neg) += w;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  // scan candidate thresholds with the same tie rules as threshold_at_fnr:
  // closest FNR first, higher sensitivity on FNR ties, then best specificity
  double best_err = std::abs(0.0 - fnr_target);
  double best_fnr = 0.0;
  double best_neg_below = 0;
  double pos_below = 0, neg_below = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    const double s0 = data.score(order[i], c);
    while (j < order.size() && data.score(order[j], c) == s0) {
      const int64_t e = order[j];
      const double w = patient_weights[size_t(data.patient_of[size_t(e)])];
      (data.target(e, c) >= kBinarizeThreshold ? pos_below : neg_below) += w;
      ++j;
    }
    const double fnr = pos_below / pos;
    const double err = std::abs(fnr - fnr_target);
    if (err < best_err || (err == best_err && fnr == best_fnr)) {
      best_err = err;
      best_fnr = fnr;
      best_neg_below = neg_below;
    }
    i = j;
  }
  return best_neg_below / neg;
}

}  // namespace detail

// Metric over a patient-weighted view of the data. Weights are per patient;
// the all-ones vector reproduces the plain metric.
using MetricFn =
    std::function<std::optional<double>(const ScoredEpochs&, const std::vector<double>&)>;

inline MetricFn macro_auroc_metric(const ScoredEpochs& data,
                                   double unknown_threshold = kMetricUnknownThreshold) {
  auto prep = detail::prepare(data, unknown_threshold);
  return [prep](const ScoredEpochs&, const std::vector<double>& w) -> std::optional<double> {
    std::vector<std::optional<double>> per_class;
    for (int c = 0; c < prep->data->n_classes(); ++c) {
      if (!prep->per_class[size_t(c)].evaluable) continue;  // absent class skipped
      per_class.push_back(detail::weighted_auroc(*prep, c, w));
      if (!per_class.back()) return std::nullopt;  // degenerate resample
    }
    return macro_auroc(per_class);
  };
}

inline MetricFn class_auroc_metric(const ScoredEpochs& data, int c,
                                   double unknown_threshold = kMetricUnknownThreshold) {
  auto prep = detail::prepare(data, unknown_threshold);
  return [prep, c](const ScoredEpochs&, const std::vector<double>& w) {
    return detail::weighted_auroc(*prep, c, w);
  };
}

inline MetricFn specificity_metric(const ScoredEpochs& data, int c, double sensitivity,
                                   double unknown_threshold = kMetricUnknownThreshold) {
  auto prep = detail::prepare(data, unknown_threshold);
  return [prep, c, sensitivity](const ScoredEpochs&, const std::vector<double>& w) {
    return detail::weighted_specificity_at_sensitivity(*prep, c, sensitivity, w);
  };
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

struct BootstrapResult {
  double point = 0, lo = 0, hi = 0;
  double max_abs_dev = 0;  // the +/- value reported alongside point estimates
  int64_t redraws = 0;
};

namespace detail {

inline double percentile(std::vector<double> sorted_values, double q) {
  const int64_t n = int64_t(sorted_values.size());
  require(n > 0, "percentile of empty sample");
  const double pos = q * double(n - 1);
  const int64_t lo = int64_t(std::floor(pos));
  const int64_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - double(lo);
  return sorted_values[size_t(lo)] * (1 - frac) + sorted_values[size_t(hi)] * frac;
}

// Draws patient multiplicities until every evaluable class keeps at least one
// positive epoch; counts the redraws. Throws after the attempt limit.
inline void resample_weights(const Prepared& prep, Rng& rng, std::vector<double>& weights,
                             int64_t& redraws) {
  const auto& data = *prep.data;
  const size_t n_patients = data.patients.size();
  for (int64_t attempt = 0; attempt < 1'000'000; ++attempt) {
    std::fill(weights.begin(), weights.end(), 0.0);
    for (size_t i = 0; i < n_patients; ++i) weights[size_t(rng.uniform_int(n_patients))] += 1;
    bool ok = true;
    for (int c = 0; c < data.n_classes() && ok; ++c) {
      if (!prep.per_class[size_t(c)].evaluable) continue;
      bool has_pos = false;
      for (int64_t e : prep.positives_of_class[size_t(c)]) {
        if (weights[size_t(data.patient_of[size_t(e)])] > 0) {
          has_pos = true;
          break;
        }
      }
      ok = has_pos;
    }
    if (ok) return;
    ++redraws;
  }
  fail("bootstrap: redraw limit exceeded; data too degenerate to resample");
}

}  // namespace detail

inline BootstrapResult bootstrap_ci(const MetricFn& metric, const ScoredEpochs& data,
                                    int n_iter = 10000, uint64_t seed = 0) {
  require(data.patients.size() >= 2, "bootstrap: need at least two patient groups");
  auto prep = detail::prepare(data);
  const std::vector<double> ones(data.patients.size(), 1.0);
  auto point = metric(data, ones);
  require(point.has_value(), "bootstrap: metric undefined on the full data");

  std::vector<double> samples(static_cast<size_t>(n_iter));
  std::vector<int64_t> redraws(size_t(n_iter), 0);
  parallel_chunks(n_iter, [&](int64_t i0, int64_t i1) {
    std::vector<double> weights(data.patients.size());
    for (int64_t it = i0; it < i1; ++it) {
      Rng rng = Rng::fork(seed, uint64_t(it));
      for (;;) {
        detail::resample_weights(*prep, rng, weights, redraws[size_t(it)]);
        auto v = metric(data, weights);
        if (v) {
          samples[size_t(it)] = *v;
          break;
        }
        ++redraws[size_t(it)];
      }
    }
  });

  std::sort(samples.begin(), samples.end());
  BootstrapResult r;
  r.point = *point;
  r.lo = detail::percentile(samples, 0.025);
  r.hi = detail::percentile(samples, 0.975);
  r.max_abs_dev = std::max(std::abs(r.point - r.lo), std::abs(r.point - r.hi));
  for (auto c : redraws) r.redraws += c;
  return r;
}

struct PairedDiffResult {
  double point = 0, lo = 0, hi = 0;
  bool significant = false;
  int64_t redraws = 0;
};

// Shared patient resampling applied to both systems; significance is
// "the 95% CI of the difference excludes zero".
inline PairedDiffResult paired_bootstrap_diff(const MetricFn& metric_a,
                                              const MetricFn& metric_b,
                                              const ScoredEpochs& data_a,
                                              const ScoredEpochs& data_b, int n_iter = 10000,
                                              uint64_t seed = 0) {
  require(data_a.patients == data_b.patients, "paired bootstrap: patient sets differ");
  require(data_a.n_epochs() == data_b.n_epochs() && data_a.targets == data_b.targets,
          "paired bootstrap: systems must be scored on identical epochs");
  auto prep = detail::prepare(data_a);
  const std::vector<double> ones(data_a.patients.size(), 1.0);
  auto pa = metric_a(data_a, ones);
  auto pb = metric_b(data_b, ones);
  require(pa.has_value() && pb.has_value(), "paired bootstrap: metric undefined on full data");

  std::vector<double> samples(static_cast<size_t>(n_iter));
  std::vector<int64_t> redraws(size_t(n_iter), 0);
  parallel_chunks(n_iter, [&](int64_t i0, int64_t i1) {
    std::vector<double> weights(data_a.patients.size());
    for (int64_t it = i0; it < i1; ++it) {
      Rng rng = Rng::fork(seed, uint64_t(it));
      for (;;) {
        detail::resample_weights(*prep, rng, weights, redraws[size_t(it)]);
        auto va = metric_a(data_a, weights);
        auto vb = metric_b(data_b, weights);
        if (va && vb) {
          samples[size_t(it)] = *va - *vb;
          break;
        }
        ++redraws[size_t(it)];
      }
    }
  });

  std::sort(samples.begin(), samples.end());
  PairedDiffResult r;
  r.point = *pa - *pb;
  r.lo = detail::percentile(samples, 0.025);
  r.hi = detail::percentile(samples, 0.975);
  r.significant = !(r.lo <= 0.0 && 0.0 <= r.hi);
  for (auto c : redraws) r.redraws += c;
  return r;
}

// ---------------------------------------------------------------------------
// Sliding-window inference
// ---------------------------------------------------------------------------

// Per-epoch probabilities for one record: run the model over sliding windows
// and average each epoch's probability across every window covering it.
// Records shorter than the window run as one whole-record window.
inline Tensor<double> sliding_window_predict(model::Model<float>& m,
                                             const std::vector<float>& signal,
                                             int64_t input_epochs, int64_t stride_epochs) {
  require(stride_epochs >= 1, "sliding_window_predict: stride must be positive");
  const int64_t epoch_len = m.config.epoch_len;
  const int64_t epochs = int64_t(signal.size()) / epoch_len;
  require(epochs >= 1, "sliding_window_predict: record shorter than one epoch");
  const int n_classes = m.config.n_classes;

  std::vector<pipeline::CropRange> windows;
  if (epochs < input_epochs) {
    windows.push_back({0, epochs});
  } else {
    windows = pipeline::crop_ranges(epochs, input_epochs,
                                    pipeline::CropMode::infer_sliding,
                                    std::min(stride_epochs, input_epochs));
  }

  Tensor<double> acc({epochs, n_classes});
  std::vector<int64_t> cover(size_t(epochs), 0);
  // batch windows of equal length to bound activation memory
  const int64_t win_len = windows.empty() ? epochs : windows[0].end - windows[0].begin;
  const int64_t max_batch = std::max<int64_t>(1, 64 / std::max<int64_t>(1, win_len));
  for (size_t w0 = 0; w0 < windows.size();) {
    size_t w1 = w0;
    while (w1 < windows.size() && w1 - w0 < size_t(max_batch) &&
           windows[w1].end - windows[w1].begin == windows[w0].end - windows[w0].begin)
      ++w1;
    const int64_t wlen = windows[w0].end - windows[w0].begin;
    Tensor<float> batch({int64_t(w1 - w0), wlen * epoch_len});
    for (size_t w = w0; w < w1; ++w)
      std::copy(signal.begin() + windows[w].begin * epoch_len,
                signal.begin() + windows[w].end * epoch_len,
                batch.ptr() + int64_t(w - w0) * wlen * epoch_len);
    auto probs = m.predict(batch);  // [B, wlen, C]
    for (size_t w = w0; w < w1; ++w)
      for (int64_t n = 0; n < wlen; ++n) {
        const int64_t e = windows[w].begin + n;
        ++cover[size_t(e)];
        for (int c = 0; c < n_classes; ++c)
          acc[e * n_classes + c] += double(probs[(int64_t(w - w0) * wlen + n) * n_classes + c]);
      }
    w0 = w1;
  }
  for (int64_t e = 0; e < epochs; ++e) {
    require(cover[size_t(e)] > 0, "sliding_window_predict: uncovered epoch");
    for (int c = 0; c < n_classes; ++c) acc[e * n_classes + c] /= double(cover[size_t(e)]);
  }
  return acc;
}

// Scores every record of a dataset subset; patients keep dataset order.
inline ScoredEpochs score_dataset(model::Model<float>& m, const pipeline::EpochDataset& data,
                                  const std::vector<std::string>& patient_subset,
                                  int64_t input_epochs, int64_t stride_epochs) {
  ScoredEpochs out;
  out.classes = data.classes;
  for (const auto& rec : data.records) {
    if (std::find(patient_subset.begin(), patient_subset.end(), rec.patient_id) ==
        patient_subset.end())
      continue;
    if (rec.labels.epochs == 0) continue;
    int patient_idx = -1;
    for (size_t i = 0; i < out.patients.size(); ++i)
      if (out.patients[i] == rec.patient_id) patient_idx = int(i);
    if (patient_idx < 0) {
      out.patients.push_back(rec.patient_id);
      patient_idx = int(out.patients.size()) - 1;
    }
    auto probs = sliding_window_predict(m, rec.signal, input_epochs, stride_epochs);
    const int64_t epochs = std::min<int64_t>(rec.labels.epochs, probs.dim(0));
    for (int64_t e = 0; e < epochs; ++e) {
      out.patient_of.push_back(patient_idx);
      for (int c = 0; c < int(data.classes.size()); ++c) {
        out.scores.push_back(probs[e * int(data.classes.size()) + c]);
        out.targets.push_back(rec.labels.fraction(e, c));
      }
      out.unknown_fraction.push_back(rec.labels.unknown[size_t(e)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// AF burden and rhythm-band export
// ---------------------------------------------------------------------------

inline double af_burden(const std::vector<double>& per_epoch_values) {
  require(!per_epoch_values.empty(), "af_burden: empty input");
  double acc = 0;
  for (double v : per_epoch_values) acc += v;
  return acc / double(per_epoch_values.size());
}

inline double af_burden_predicted(const std::vector<double>& af_probs, double threshold) {
  require(!af_probs.empty(), "af_burden: empty input");
  double acc = 0;
  for (double p : af_probs) acc += p >= threshold ? 1.0 : 0.0;
  return acc / double(af_probs.size());
}

// Per-class FNR-targeted thresholds, then one label per epoch: the class
// exceeding its threshold by the largest margin.
inline std::vector<int> classify_epochs(const ScoredEpochs& data,
                                        const std::vector<double>& thresholds) {
  require(int(thresholds.size()) == data.n_classes(), "classify_epochs: threshold count");
  std::vector<int> out(size_t(data.n_epochs()));
  for (int64_t e = 0; e < data.n_epochs(); ++e) {
    int best = 0;
    double best_margin = -1e300;
    for (int c = 0; c < data.n_classes(); ++c) {
      const double margin = data.score(e, c) - thresholds[size_t(c)];
      if (margin > best_margin) {
        best_margin = margin;
        best = c;
      }
    }
    out[size_t(e)] = best;
  }
  return out;
}

struct BandRow {
  std::string label;
  std::vector<int> classes;  // -1 renders as a gap (e.g. truth-only rows)
};

inline int fragmentation_count(const std::vector<int>& classes) {
  int changes = 0;
  for (size_t i = 1; i < classes.size(); ++i)
    if (classes[i] != classes[i - 1]) ++changes;
  return changes;
}

// Writes the horizontal color-band figure as SVG plus the band data as CSV;
// returns the per-row fragmentation counts.
inline std::vector<int> render_rhythm_band(const std::vector<BandRow>& rows,
                                           const std::vector<std::string>& class_names,
                                           const std::string& svg_path,
                                           const std::string& csv_path) {
  require(!rows.empty(), "render_rhythm_band: no rows");
  const size_t epochs = rows[0].classes.size();
  require(epochs > 0, "render_rhythm_band: empty band");
  for (const auto& r : rows)
    require(r.classes.size() == epochs, "render_rhythm_band: row length mismatch");

  static const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                   "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
  const double width = 1000.0, row_h = 42.0, band_h = 28.0, left = 140.0;
  const double cell = width / double(epochs);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 20
      << "\" height=\"" << rows.size() * row_h + 50 << "\">\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    const double y = 10 + double(r) * row_h;
    svg << "  <text x=\"8\" y=\"" << y + band_h * 0.7
        << "\" font-family=\"sans-serif\" font-size=\"13\">" << rows[r].label << "</text>\n";
    for (size_t e = 0; e < epochs; ++e) {
      const int c = rows[r].classes[e];
      if (c < 0) continue;
      svg << "  <rect x=\"" << left + double(e) * cell << "\" y=\"" << y << "\" width=\""
          << cell + 0.5 << "\" height=\"" << band_h << "\" fill=\""
          << kPalette[size_t(c) % 8] << "\"/>\n";
    }
  }
  const double ly = 10 + double(rows.size()) * row_h;
  for (size_t c = 0; c < class_names.size(); ++c) {
    svg << "  <rect x=\"" << left + double(c) * 120 << "\" y=\"" << ly
        << "\" width=\"14\" height=\"14\" fill=\"" << kPalette[c % 8] << "\"/>\n"
        << "  <text x=\"" << left + double(c) * 120 + 20 << "\" y=\"" << ly + 12
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << class_names[c] << "</text>\n";
  }
  svg << "</svg>\n";
  const std::string svg_text = svg.str();
  wfdb::write_file_bytes(svg_path, svg_text.data(), svg_text.size());

  std::ostringstream csv;
  csv << "epoch";
  for (const auto& r : rows) csv << "," << r.label;
  csv << "\n";
  for (size_t e = 0; e < epochs; ++e) {
    csv << e;
    for (const auto& r : rows) {
      csv << ",";
      const int c = r.classes[e];
      if (c >= 0 && c < int(class_names.size())) csv << class_names[size_t(c)];
    }
    csv << "\n";
  }
  const std::string csv_text = csv.str();
  wfdb::write_file_bytes(csv_path, csv_text.data(), csv_text.size());

  std::vector<int> frag;
  for (const auto& r : rows) frag.push_back(fragmentation_count(r.classes));
  return frag;
}

}  // namespace s4ecg::evaluation
