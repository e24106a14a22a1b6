#pragma once

// Turns decoded records into model-ready tensors: resampling to the target
// rate, sample-level rhythm masks, per-epoch class-fraction labels, patient
// splits, crop sampling, and a binary dataset archive.

#include <filesystem>
#include <json.hpp>

#include "s4ecg/core.hpp"
#include "s4ecg/wfdb.hpp"

namespace s4ecg::pipeline {

constexpr double kTargetRate = 128.0;
constexpr int kEpochLen = 3840;  // 30 seconds at 128 Hz

// ---------------------------------------------------------------------------
// Resampling: polyphase windowed-sinc interpolation with Kaiser window.
// beta = 8.6 and 64 zero crossings per side give ~86 dB stopband attenuation;
// the cutoff is pulled in by a rolloff factor so the stopband is fully
// developed at the output Nyquist frequency.
// ---------------------------------------------------------------------------

namespace detail {

inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (double(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

struct SincFilter {
  double cutoff = 0;      // cycles per input sample
  double half_width = 0;  // input samples
  double beta = 8.6;
  double i0_beta = 1;

  static SincFilter design(double fs_in, double fs_out) {
    constexpr double kRolloff = 0.9475;
    constexpr double kZerosPerSide = 64.0;
    SincFilter f;
    f.cutoff = kRolloff * std::min(fs_in, fs_out) / 2.0 / fs_in;
    f.half_width = kZerosPerSide / (2.0 * f.cutoff);
    f.i0_beta = bessel_i0(f.beta);
    return f;
  }

  double tap(double offset) const {
    if (std::abs(offset) >= half_width) return 0.0;
    const double x = 2.0 * cutoff * offset;
    const double pi = 3.14159265358979323846;
    const double sinc = x == 0.0 ? 1.0 : std::sin(pi * x) / (pi * x);
    const double r = offset / half_width;
    const double window = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
    return 2.0 * cutoff * sinc * window;
  }
};

}  // namespace detail

template <typename T>
inline std::vector<T> resample(const std::vector<T>& x, double fs_in, double fs_out) {
  require(fs_in > 0 && fs_out > 0, "resample: sampling rates must be positive");
  if (fs_in == fs_out) return x;
  const int64_t n_in = int64_t(x.size());
  const int64_t n_out = llround(double(n_in) * fs_out / fs_in);
  std::vector<T> y(size_t(n_out), T(0));
  if (n_in == 0 || n_out == 0) return y;

  const auto filt = detail::SincFilter::design(fs_in, fs_out);
  const int64_t reach = int64_t(filt.half_width) + 1;

  // phase-periodic tap tables when the rate ratio is rational with a small
  // denominator (always the case for integer rates)
  int64_t q = 0, p = 0;
  if (std::abs(fs_in - std::round(fs_in)) < 1e-9 && std::abs(fs_out - std::round(fs_out)) < 1e-9) {
    int64_t a = int64_t(std::llround(fs_in)), b = int64_t(std::llround(fs_out));
    int64_t g = std::gcd(a, b);
    p = a / g;
    q = b / g;
    if (q > 4096) q = 0;  // fall back to direct evaluation
  }

  auto compute_taps = [&](double frac, std::vector<double>& taps) {
    taps.assign(size_t(2 * reach + 1), 0.0);
    double sum = 0;
    for (int64_t d = -reach; d <= reach; ++d) {
      double t = filt.tap(double(d) - frac);
      taps[size_t(d + reach)] = t;
      sum += t;
    }
    for (auto& t : taps) t /= sum;  // unit DC gain per phase
  };

  std::vector<std::vector<double>> phase_taps;
  if (q > 0) {
    phase_taps.resize(size_t(q));
    for (int64_t r = 0; r < q; ++r)
      compute_taps(double(r * p % q) / double(q), phase_taps[size_t(r)]);
  }

  parallel_chunks(n_out, [&](int64_t begin, int64_t end) {
    std::vector<double> local;
    for (int64_t j = begin; j < end; ++j) {
      const double t = double(j) * fs_in / fs_out;
      const int64_t base = int64_t(std::floor(t));
      const std::vector<double>* taps;
      if (q > 0) {
        taps = &phase_taps[size_t(j % q)];
      } else {
        compute_taps(t - double(base), local);
        taps = &local;
      }
      double acc = 0;
      const int64_t lo = std::max<int64_t>(base - reach, 0);
      const int64_t hi = std::min<int64_t>(base + reach, n_in - 1);
      const double* tp = taps->data();
      for (int64_t i = lo; i <= hi; ++i) acc += double(x[size_t(i)]) * tp[i - base + reach];
      y[size_t(j)] = T(acc);
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Rhythm masks and fraction labels
// ---------------------------------------------------------------------------

struct RhythmMask {
  std::vector<std::string> classes;
  std::vector<uint16_t> mask;  // class index per sample; classes.size() = Unknown

  uint16_t unknown_index() const { return uint16_t(classes.size()); }
};

inline RhythmMask build_rhythm_mask(const std::vector<wfdb::AnnotationEvent>& annotations,
                                    int64_t n_samples_resampled, double fs_orig,
                                    const std::vector<std::string>& classes,
                                    double fs_target = kTargetRate) {
  require(fs_orig > 0, "build_rhythm_mask: original rate must be positive");
  RhythmMask m;
  m.classes = classes;
  m.mask.assign(size_t(n_samples_resampled), m.unknown_index());

  auto class_index = [&](const std::string& aux) -> uint16_t {
    const std::string name = wfdb::canonical_rhythm(aux);
    for (size_t c = 0; c < classes.size(); ++c)
      if (classes[c] == name) return uint16_t(c);
    return m.unknown_index();
  };

  int64_t prev_start = -1;
  uint16_t prev_class = m.unknown_index();
  auto close_segment = [&](int64_t end) {
    if (prev_start < 0) return;
    for (int64_t i = prev_start; i < std::min(end, n_samples_resampled); ++i)
      m.mask[size_t(i)] = prev_class;
  };
  for (const auto& e : annotations) {
    if (e.code != wfdb::kCodeRhythm || e.aux.empty()) continue;  // only "+" defines rhythm
    const int64_t start = llround(double(e.sample_index) * fs_target / fs_orig);
    require(start <= n_samples_resampled,
            "build_rhythm_mask: event at sample " + std::to_string(e.sample_index) +
                " lies beyond the record");
    require(prev_start < 0 || start >= prev_start,
            "build_rhythm_mask: rhythm events out of order");
    close_segment(start);
    prev_start = start;
    prev_class = class_index(e.aux);
  }
  close_segment(n_samples_resampled);
  return m;
}

struct FractionLabels {
  int64_t epochs = 0;
  int n_classes = 0;
  std::vector<double> fractions;  // epochs x n_classes, row-major
  std::vector<double> unknown;    // per epoch

  double fraction(int64_t e, int c) const { return fractions[size_t(e) * n_classes + c]; }
};

inline FractionLabels aggregate_epoch_fractions(const RhythmMask& mask,
                                                int64_t epoch_len = kEpochLen) {
  require(epoch_len > 0, "aggregate_epoch_fractions: epoch length must be positive");
  FractionLabels out;
  out.n_classes = int(mask.classes.size());
  out.epochs = int64_t(mask.mask.size()) / epoch_len;  // trailing partial epoch dropped
  out.fractions.assign(size_t(out.epochs) * out.n_classes, 0.0);
  out.unknown.assign(size_t(out.epochs), 0.0);
  for (int64_t e = 0; e < out.epochs; ++e) {
    std::vector<int64_t> counts(size_t(out.n_classes) + 1, 0);
    for (int64_t i = e * epoch_len; i < (e + 1) * epoch_len; ++i) ++counts[mask.mask[size_t(i)]];
    for (int c = 0; c < out.n_classes; ++c)
      out.fractions[size_t(e) * out.n_classes + c] = double(counts[size_t(c)]) / double(epoch_len);
    out.unknown[size_t(e)] = double(counts[size_t(out.n_classes)]) / double(epoch_len);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patient splits
// ---------------------------------------------------------------------------

struct SplitAssignment {
  std::vector<std::string> train, valid, test;
  uint64_t seed = 0;
};

inline SplitAssignment split_patients(std::vector<std::string> patient_ids,
                                      const std::array<double, 3>& ratios, uint64_t seed) {
  int nonzero = 0;
  for (double r : ratios) {
    require(r >= 0, "split_patients: ratios must be non-negative");
    nonzero += r > 0 ? 1 : 0;
  }
  require(nonzero > 0, "split_patients: at least one ratio must be positive");
  require(patient_ids.size() >= size_t(nonzero),
          "split_patients: fewer patients than nonzero partitions");

  Rng rng(seed);
  rng.shuffle(patient_ids);

  const double total = ratios[0] + ratios[1] + ratios[2];
  const int64_t n = int64_t(patient_ids.size());
  std::array<int64_t, 3> counts{};
  std::array<double, 3> remainders{};
  int64_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    double share = double(n) * ratios[k] / total;
    counts[k] = int64_t(std::floor(share + 1e-9));
    remainders[k] = share - double(counts[k]);
    assigned += counts[k];
  }
  // hand out the remainder round-robin by descending fractional share,
  // ties resolved in partition order
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (int i = 0; assigned < n; ++i) {
    int k = order[size_t(i % 3)];
    if (ratios[k] > 0) {
      ++counts[k];
      ++assigned;
    }
  }

  SplitAssignment s;
  s.seed = seed;
  auto it = patient_ids.begin();
  s.train.assign(it, it + counts[0]);
  it += counts[0];
  s.valid.assign(it, it + counts[1]);
  it += counts[1];
  s.test.assign(it, it + counts[2]);
  return s;
}

// ---------------------------------------------------------------------------
// Crop sampling
// ---------------------------------------------------------------------------

enum class CropMode { train_nonoverlap, infer_sliding };

struct CropRange {
  int64_t begin = 0, end = 0;  // epoch indices, half-open
};

inline std::vector<CropRange> crop_ranges(int64_t record_epochs, int64_t input_epochs,
                                          CropMode mode, int64_t stride_epochs = 1) {
  require(input_epochs >= 1, "crop_ranges: input_epochs must be >= 1");
  std::vector<CropRange> out;
  if (record_epochs < input_epochs) return out;  // record skipped
  if (mode == CropMode::train_nonoverlap) {
    for (int64_t b = 0; b + input_epochs <= record_epochs; b += input_epochs)
      out.push_back({b, b + input_epochs});
    return out;
  }
  require(stride_epochs >= 1, "crop_ranges: stride must be positive");
  require(stride_epochs <= input_epochs,
          "crop_ranges: stride above the window size cannot cover every epoch");
  int64_t last = -1;
  for (int64_t b = 0; b + input_epochs <= record_epochs; b += stride_epochs) {
    out.push_back({b, b + input_epochs});
    last = b;
  }
  if (last != record_epochs - input_epochs)
    out.push_back({record_epochs - input_epochs, record_epochs});  // right-aligned tail
  return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly and archive
// ---------------------------------------------------------------------------

struct DatasetRecord {
  std::string patient_id;
  std::string record_name;
  std::vector<float> signal;  // millivolts at the target rate
  FractionLabels labels;

  int64_t epochs() const { return labels.epochs; }
};

struct EpochDataset {
  std::vector<std::string> classes;
  double sampling_rate = kTargetRate;
  int64_t epoch_len = kEpochLen;
  uint64_t split_seed = 0;
  std::vector<DatasetRecord> records;
};

inline std::string patient_id_from_record_name(const std::string& name) {
  auto us = name.find('_');
  return us == std::string::npos ? name : name.substr(0, us);
}

// First channel only; remaining channels stay in the wfdb::Record.
inline DatasetRecord process_record(const wfdb::Record& r,
                                    const std::vector<std::string>& classes) {
  DatasetRecord out;
  out.record_name = r.header.record_name;
  out.patient_id = patient_id_from_record_name(r.header.record_name);
  std::vector<double> ch0(r.signal.ptr(), r.signal.ptr() + r.header.n_samples);
  std::vector<double> at_target = resample(ch0, r.header.sampling_rate, kTargetRate);
  out.signal.assign(at_target.begin(), at_target.end());
  auto mask = build_rhythm_mask(r.annotations, int64_t(out.signal.size()),
                                r.header.sampling_rate, classes);
  out.labels = aggregate_epoch_fractions(mask, kEpochLen);
  return out;
}

namespace detail {

constexpr uint32_t kArchiveVersion = 1;

template <typename T>
void put_raw(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(const std::vector<uint8_t>& buf, size_t& pos) {
  require(pos + sizeof(T) <= buf.size(), "archive blob: truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

// Record blob: length-prefixed little-endian sections (float32 signal,
// float64 labels).
inline std::string encode_record_blob(const DatasetRecord& r) {
  std::string buf;
  buf.append("S4EB", 4);
  detail::put_raw(buf, detail::kArchiveVersion);
  detail::put_raw(buf, uint64_t(r.signal.size()));
  buf.append(reinterpret_cast<const char*>(r.signal.data()), r.signal.size() * sizeof(float));
  detail::put_raw(buf, uint64_t(r.labels.epochs));
  detail::put_raw(buf, uint32_t(r.labels.n_classes));
  buf.append(reinterpret_cast<const char*>(r.labels.fractions.data()),
             r.labels.fractions.size() * sizeof(double));
  buf.append(reinterpret_cast<const char*>(r.labels.unknown.data()),
             r.labels.unknown.size() * sizeof(double));
  return buf;
}

inline DatasetRecord decode_record_blob(const std::vector<uint8_t>& buf) {
  require(buf.size() >= 8 && std::memcmp(buf.data(), "S4EB", 4) == 0,
          "archive blob: bad magic");
  size_t pos = 4;
  const uint32_t version = detail::get_raw<uint32_t>(buf, pos);
  require(version == detail::kArchiveVersion,
          "archive blob: version " + std::to_string(version) + " not supported");
  DatasetRecord r;
  const uint64_t n = detail::get_raw<uint64_t>(buf, pos);
  require(pos + n * sizeof(float) <= buf.size(), "archive blob: truncated signal");
  r.signal.resize(size_t(n));
  std::memcpy(r.signal.data(), buf.data() + pos, size_t(n) * sizeof(float));
  pos += size_t(n) * sizeof(float);
  r.labels.epochs = int64_t(detail::get_raw<uint64_t>(buf, pos));
  r.labels.n_classes = int(detail::get_raw<uint32_t>(buf, pos));
  const size_t fr = size_t(r.labels.epochs) * size_t(r.labels.n_classes);
  require(pos + fr * sizeof(double) + size_t(r.labels.epochs) * sizeof(double) <= buf.size(),
          "archive blob: truncated labels");
  r.labels.fractions.resize(fr);
  std::memcpy(r.labels.fractions.data(), buf.data() + pos, fr * sizeof(double));
  pos += fr * sizeof(double);
  r.labels.unknown.resize(size_t(r.labels.epochs));
  std::memcpy(r.labels.unknown.data(), buf.data() + pos,
              size_t(r.labels.epochs) * sizeof(double));
  return r;
}

inline void export_dataset(const EpochDataset& d, const std::string& path) {
  namespace fs = std::filesystem;
  fs::create_directories(path);
  nlohmann::json manifest;
  manifest["version"] = detail::kArchiveVersion;
  manifest["classes"] = d.classes;
  manifest["sampling_rate"] = d.sampling_rate;
  manifest["epoch_len"] = d.epoch_len;
  manifest["split_seed"] = d.split_seed;
  manifest["records"] = nlohmann::json::array();
  for (size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    const std::string file = "rec_" + std::to_string(i) + ".bin";
    const std::string blob = encode_record_blob(r);
    wfdb::write_file_bytes((fs::path(path) / file).string(), blob.data(), blob.size());
    manifest["records"].push_back({{"name", r.record_name},
                                   {"patient", r.patient_id},
                                   {"file", file},
                                   {"samples", r.signal.size()},
                                   {"epochs", r.labels.epochs},
                                   {"crc32", crc32(blob.data(), blob.size())}});
  }
  const std::string text = manifest.dump(2);
  wfdb::write_file_bytes((fs::path(path) / "manifest.json").string(), text.data(), text.size());
}

inline EpochDataset load_dataset(const std::string& path) {
  namespace fs = std::filesystem;
  const auto manifest =
      nlohmann::json::parse(wfdb::read_file_text((fs::path(path) / "manifest.json").string()));
  require(manifest.at("version").get<uint32_t>() == detail::kArchiveVersion,
          "archive: manifest version not supported");
  EpochDataset d;
  d.classes = manifest.at("classes").get<std::vector<std::string>>();
  d.sampling_rate = manifest.at("sampling_rate").get<double>();
  d.epoch_len = manifest.at("epoch_len").get<int64_t>();
  d.split_seed = manifest.at("split_seed").get<uint64_t>();
  for (const auto& entry : manifest.at("records")) {
    auto blob = wfdb::read_file_bytes((fs::path(path) / entry.at("file").get<std::string>()).string());
    require(crc32(blob.data(), blob.size()) == entry.at("crc32").get<uint32_t>(),
            "archive: checksum failure for " + entry.at("file").get<std::string>());
    DatasetRecord r = decode_record_blob(blob);
    r.record_name = entry.at("name").get<std::string>();
    r.patient_id = entry.at("patient").get<std::string>();
    require(r.labels.n_classes == int(d.classes.size()),
            "archive: class count mismatch in " + r.record_name);
    d.records.push_back(std::move(r));
  }
  return d;
}

inline std::vector<std::string> dataset_patients(const EpochDataset& d) {
  std::vector<std::string> out;
  for (const auto& r : d.records)
    if (std::find(out.begin(), out.end(), r.patient_id) == out.end())
      out.push_back(r.patient_id);
  return out;
}

}  // namespace s4ecg::pipeline
