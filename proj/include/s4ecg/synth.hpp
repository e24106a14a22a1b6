#pragma once

// Deterministic synthetic ECG-like corpus. A semi-Markov process emits rhythm
// segments with bounded-exponential dwell times; each segment synthesizes a
// pulse train whose timing statistics depend on the class (identical pulse
// morphology across classes, so rhythm, not shape, carries the label).
// Optional "ambiguity" sub-blocks temporarily borrow the timing texture of
// another class, which caps what a single-epoch observer can resolve while
// leaving multi-epoch context intact.

#include "s4ecg/wfdb.hpp"

namespace s4ecg::synth {

struct ClassProfile {
  std::string name;       // canonical class name
  std::string aux;        // rhythm annotation string
  double dwell_mean_s = 300;
  double rate_lo_bpm = 60, rate_hi_bpm = 90;
  double rr_sigma_rel = 0.03;  // relative RR-interval irregularity
};

struct SynthSpec {
  int n_patients = 40;
  double record_minutes = 120;
  double fs = 250;
  double noise_sigma_mv = 0.05;
  double pulse_width_s = 0.025;
  double pulse_amp_mv = 1.0;
  double dwell_min_s = 120, dwell_max_s = 600;
  double ambiguity_prob = 0.0;     // per sub-block texture swap probability
  double ambiguity_block_s = 45;   // texture sub-block length
  std::vector<double> af_load_factors = {1.0};  // per-patient AF dwell scaling
  uint64_t seed = 0;
  std::vector<ClassProfile> classes;

  void validate() const {
    require(n_patients >= 1 && record_minutes > 0 && fs > 0, "synth spec: bad dimensions");
    require(!classes.empty(), "synth spec: no classes");
    require(dwell_min_s > 0 && dwell_max_s > dwell_min_s, "synth spec: bad dwell bounds");
    require(ambiguity_prob >= 0 && ambiguity_prob < 1, "synth spec: bad ambiguity an");
    for (const auto& c : classes) {
      require(c.dwell_mean_s > dwell_min_s, "synth spec: dwell mean below the floor");
      require(c.rate_lo_bpm >= 30 && c.rate_hi_bpm <= 220 && c.rate_lo_bpm < c.rate_hi_bpm,
              "synth spec: rates must lie within 30-220 bpm");
    }
  }
};

inline ClassProfile builtin_profile(const std::string& name) {
  if (name == "N") return {"N", "(N", 300, 55, 95, 0.03};
  if (name == "AF") return {"AF", "(AFIB", 300, 70, 120, 0.25};
  if (name == "AFLT") return {"AFLT", "(AFL", 240, 140, 170, 0.02};
  if (name == "SVTA") return {"SVTA", "(SVTA", 180, 150, 180, 0.05};
  fail("synth: no builtin profile for class '" + name + "'");
}

inline SynthSpec default_spec(const std::vector<std::string>& class_names = {"N", "AF",
                                                                             "AFLT"}) {
  SynthSpec spec;
  for (const auto& n : class_names) spec.classes.push_back(builtin_profile(n));
  return spec;
}

// parses the flat key-value spec document used by the CLI
inline SynthSpec spec_from_kv(const std::map<std::string, std::string>& kv) {
  std::vector<std::string> names = {"N", "AF", "AFLT"};
  if (auto it = kv.find("classes"); it != kv.end()) {
    names.clear();
    for (auto& tok : split(it->second, ',')) names.push_back(trim(tok));
  }
  SynthSpec spec = default_spec(names);
  auto num = [&](const char* k, double& out) {
    if (auto it = kv.find(k); it != kv.end()) out = std::stod(it->second);
  };
  auto integer = [&](const char* k, auto& out) {
    if (auto it = kv.find(k); it != kv.end())
      out = std::decay_t<decltype(out)>(std::stoll(it->second));
  };
  integer("n_patients", spec.n_patients);
  num("record_minutes", spec.record_minutes);
  num("fs", spec.fs);
  num("noise_sigma_mv", spec.noise_sigma_mv);
  num("pulse_width_s", spec.pulse_width_s);
  num("pulse_amp_mv", spec.pulse_amp_mv);
  num("dwell_min_s", spec.dwell_min_s);
  num("dwell_max_s", spec.dwell_max_s);
  num("ambiguity_prob", spec.ambiguity_prob);
  num("ambiguity_block_s", spec.ambiguity_block_s);
  integer("seed", spec.seed);
  for (auto& c : spec.classes) num(("dwell_" + c.name).c_str(), c.dwell_mean_s);
  if (auto it = kv.find("af_load_factors"); it != kv.end()) {
    spec.af_load_factors.clear();
    for (auto& tok : split(it->second, ',')) spec.af_load_factors.push_back(std::stod(tok));
  }
  spec.validate();
  return spec;
}

// mean of min(dwell_min + Exp(mean - dwell_min), dwell_max)
inline double expected_dwell(double mean_s, double dwell_min_s, double dwell_max_s) {
  const double tail = mean_s - dwell_min_s;
  const double span = dwell_max_s - dwell_min_s;
  return dwell_min_s + tail * (1.0 - std::exp(-span / tail));
}

inline double sample_dwell(Rng& rng, double mean_s, double dwell_min_s, double dwell_max_s) {
  double u = rng.uniform();
  while (u <= 1e-300) u = rng.uniform();
  const double d = dwell_min_s + (mean_s - dwell_min_s) * -std::log(u);
  return std::min(d, dwell_max_s);
}

struct Segment {
  int class_index = 0;
  double start_s = 0, end_s = 0;
};

struct GeneratedRecord {
  wfdb::Record record;
  std::vector<Segment> segments;
  std::vector<double> beat_times_s;
  std::vector<int> beat_class;  // effective texture class of each beat
};

inline GeneratedRecord generate_record(const SynthSpec& spec, int patient_id) {
  spec.validate();
  Rng rng = Rng::fork(spec.seed, uint64_t(patient_id));
  const double duration_s = spec.record_minutes * 60.0;
  const int n_classes = int(spec.classes.size());

  // per-patient AF dwell scaling creates AF-light and AF-heavy patients
  double af_scale = 1.0;
  if (!spec.af_load_factors.empty())
    af_scale = spec.af_load_factors[size_t(patient_id) % spec.af_load_factors.size()];

  // AF-heavy patients dwell longer in AF and correspondingly shorter in the
  // other rhythms, so their overall AF burden actually rises
  auto dwell_mean = [&](int c) {
    double m = spec.classes[size_t(c)].dwell_mean_s;
    if (spec.classes[size_t(c)].name == "AF") m *= af_scale;
    else if (af_scale != 1.0) m /= af_scale;
    return std::min(std::max(m, spec.dwell_min_s + 1.0), spec.dwell_max_s * 4.0);
  };

  GeneratedRecord out;
  // rhythm process
  double t = 0;
  int state = int(rng.uniform_int(uint64_t(n_classes)));
  while (t < duration_s) {
    const double dwell = sample_dwell(rng, dwell_mean(state), spec.dwell_min_s,
                                      spec.dwell_max_s);
    out.segments.push_back({state, t, std::min(t + dwell, duration_s)});
    t += dwell;
    if (n_classes > 1) {
      // uniform jump to one of the other classes
      int next = int(rng.uniform_int(uint64_t(n_classes - 1)));
      if (next >= state) ++next;
      state = next;
    }
  }

  // beat train with per-sub-block texture (possibly borrowed from another
  // class when ambiguity is enabled)
  for (const auto& seg : out.segments) {
    const auto& own = spec.classes[size_t(seg.class_index)];
    const double seg_rate = rng.uniform(own.rate_lo_bpm, own.rate_hi_bpm);
    double bt = seg.start_s;
    double block_end = seg.start_s;
    int texture = seg.class_index;
    double rate = seg_rate, sigma = own.rr_sigma_rel;
    while (bt < seg.end_s) {
      if (bt >= block_end) {
        block_end = std::min(bt + spec.ambiguity_block_s, seg.end_s);
        texture = seg.class_index;
        rate = seg_rate;
        sigma = own.rr_sigma_rel;
        if (n_classes > 1 && rng.uniform() < spec.ambiguity_prob) {
          int other = int(rng.uniform_int(uint64_t(n_classes - 1)));
          if (other >= seg.class_index) ++other;
          texture = other;
          const auto& prof = spec.classes[size_t(texture)];
          rate = rng.uniform(prof.rate_lo_bpm, prof.rate_hi_bpm);
          sigma = prof.rr_sigma_rel;
        }
      }
      out.beat_times_s.push_back(bt);
      out.beat_class.push_back(texture);
      const double rr = 60.0 / rate * std::max(0.25, 1.0 + sigma * rng.normal());
      bt += rr;
    }
  }

  // waveform: one gaussian pulse per beat plus noise
  const int64_t n_samples = int64_t(std::llround(duration_s * spec.fs));
  wfdb::Record& rec = out.record;
  char name[32];
  std::snprintf(name, sizeof(name), "p%04d", patient_id);
  rec.header.record_name = name;
  rec.header.n_signals = 1;
  rec.header.sampling_rate = spec.fs;
  rec.header.n_samples = n_samples;
  rec.header.signals.push_back({16, 200.0, 0, "synthetic"});
  rec.signal = Tensor<double>({1, n_samples});

  const double w = spec.pulse_width_s;
  const int64_t reach = int64_t(4.0 * w * spec.fs) + 1;
  for (double beat : out.beat_times_s) {
    const int64_t center = int64_t(std::llround(beat * spec.fs));
    for (int64_t i = std::max<int64_t>(0, center - reach);
         i <= std::min(n_samples - 1, center + reach); ++i) {
      const double dt = double(i) / spec.fs - beat;
      rec.signal[i] += spec.pulse_amp_mv * std::exp(-0.5 * dt * dt / (w * w));
    }
  }
  for (int64_t i = 0; i < n_samples; ++i) rec.signal[i] += spec.noise_sigma_mv * rng.normal();

  for (const auto& seg : out.segments) {
    wfdb::AnnotationEvent e;
    e.sample_index = int64_t(std::llround(seg.start_s * spec.fs));
    e.code = wfdb::kCodeRhythm;
    e.aux = spec.classes[size_t(seg.class_index)].aux;
    rec.annotations.push_back(e);
  }
  return out;
}

// writes the whole corpus as WFDB triplets; returns the record names
inline std::vector<std::string> generate_corpus(const SynthSpec& spec,
                                                const std::string& out_dir) {
  std::vector<std::string> names(size_t(spec.n_patients));
  parallel_for(spec.n_patients, [&](int64_t p) {
    auto gen = generate_record(spec, int(p));
    wfdb::write_record(out_dir, gen.record);
    names[size_t(p)] = gen.record.header.record_name;
  });
  return names;
}

}  // namespace s4ecg::synth
