#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "s4ecg/pipeline.hpp"
#include "s4ecg/synth.hpp"

using namespace s4ecg;
using namespace s4ecg::synth;

TEST_CASE("single-class spec yields one annotation and a constant mask") {
  SynthSpec spec = default_spec({"N"});
  spec.record_minutes = 4;
  spec.seed = 5;
  auto gen = generate_record(spec, 0);
  REQUIRE(gen.record.annotations.size() >= 1);
  for (const auto& a : gen.record.annotations) CHECK(a.aux == "(N");

  auto rec = pipeline::process_record(gen.record, {"N", "AF"});
  for (int64_t e = 0; e < rec.labels.epochs; ++e) {
    CHECK(rec.labels.fraction(e, 0) == 1.0);
    CHECK(rec.labels.fraction(e, 1) == 0.0);
  }
}

TEST_CASE("same seed and patient id reproduce the record bit for bit") {
  SynthSpec spec = default_spec();
  spec.record_minutes = 3;
  spec.seed = 77;
  auto a = generate_record(spec, 3);
  auto b = generate_record(spec, 3);
  CHECK(a.record.signal.data == b.record.signal.data);
  REQUIRE(a.record.annotations.size() == b.record.annotations.size());
  for (size_t i = 0; i < a.record.annotations.size(); ++i) {
    CHECK(a.record.annotations[i].sample_index == b.record.annotations[i].sample_index);
    CHECK(a.record.annotations[i].aux == b.record.annotations[i].aux);
  }
  auto c = generate_record(spec, 4);
  CHECK(a.record.signal.data != c.record.signal.data);
}

TEST_CASE("generated annotations survive the byte-level round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "s4ecg_synth_test";
  fs::remove_all(dir);
  SynthSpec spec = default_spec();
  spec.record_minutes = 5;
  spec.seed = 9;
  auto gen = generate_record(spec, 1);
  wfdb::write_record(dir.string(), gen.record);
  auto back = wfdb::read_record(dir.string(), gen.record.header.record_name);
  REQUIRE(back.annotations.size() == gen.record.annotations.size());
  for (size_t i = 0; i < back.annotations.size(); ++i) {
    CHECK(back.annotations[i].sample_index == gen.record.annotations[i].sample_index);
    CHECK(back.annotations[i].code == gen.record.annotations[i].code);
    CHECK(back.annotations[i].aux == gen.record.annotations[i].aux);
  }
  fs::remove_all(dir);
}

TEST_CASE("class prevalence approaches the dwell-implied stationary distribution") {
  // uniform jump chain: prevalence per class is proportional to its
  // expected dwell time
  SynthSpec spec = default_spec();
  spec.classes[0].dwell_mean_s = 360;
  spec.classes[1].dwell_mean_s = 240;
  spec.classes[2].dwell_mean_s = 180;
  spec.record_minutes = 30;
  spec.n_patients = 100;
  spec.seed = 2024;

  std::array<double, 3> occupied{};
  for (int p = 0; p < spec.n_patients; ++p) {
    auto gen = generate_record(spec, p);
    for (const auto& seg : gen.segments)
      occupied[size_t(seg.class_index)] += seg.end_s - seg.start_s;
  }
  double total = occupied[0] + occupied[1] + occupied[2];
  double expected_total = 0;
  std::array<double, 3> expect{};
  for (int c = 0; c < 3; ++c) {
    expect[size_t(c)] =
        expected_dwell(spec.classes[size_t(c)].dwell_mean_s, spec.dwell_min_s, spec.dwell_max_s);
    expected_total += expect[size_t(c)];
  }
  for (int c = 0; c < 3; ++c)
    CHECK(std::abs(occupied[size_t(c)] / total - expect[size_t(c)] / expected_total) < 0.05);
}

TEST_CASE("mean dwell per class tracks the spec within ten percent") {
  SynthSpec spec = default_spec();
  spec.record_minutes = 240;
  spec.seed = 31;
  std::array<double, 3> sum{}, count{};
  for (int p = 0; p < 12; ++p) {
    auto gen = generate_record(spec, p);
    for (size_t s = 0; s + 1 < gen.segments.size(); ++s) {  // last segment is truncated
      const auto& seg = gen.segments[s];
      sum[size_t(seg.class_index)] += seg.end_s - seg.start_s;
      count[size_t(seg.class_index)] += 1;
    }
  }
  for (int c = 0; c < 3; ++c) {
    const double expect =
        expected_dwell(spec.classes[size_t(c)].dwell_mean_s, spec.dwell_min_s, spec.dwell_max_s);
    CHECK(sum[size_t(c)] / count[size_t(c)] == doctest::Approx(expect).epsilon(0.10));
  }
}

TEST_CASE("AF beats are at least three times as irregular as N beats") {
  SynthSpec spec = default_spec();  // ambiguity disabled by default
  spec.record_minutes = 120;
  spec.seed = 8;
  auto cv = [](const std::vector<double>& v) {
    double mean = 0, var = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    for (double x : v) var += (x - mean) * (x - mean);
    return std::sqrt(var / double(v.size())) / mean;
  };
  // per-segment coefficient of variation, averaged per class
  std::array<double, 3> cv_sum{}, cv_count{};
  for (int p = 0; p < 4; ++p) {
    auto gen = generate_record(spec, p);
    for (const auto& seg : gen.segments) {
      std::vector<double> rr;
      for (size_t i = 1; i < gen.beat_times_s.size(); ++i) {
        if (gen.beat_times_s[i - 1] < seg.start_s || gen.beat_times_s[i] >= seg.end_s)
          continue;
        rr.push_back(gen.beat_times_s[i] - gen.beat_times_s[i - 1]);
      }
      if (rr.size() < 20) continue;
      cv_sum[size_t(seg.class_index)] += cv(rr);
      cv_count[size_t(seg.class_index)] += 1;
    }
  }
  const double cv_n = cv_sum[0] / cv_count[0];
  const double cv_af = cv_sum[1] / cv_count[1];
  CHECK(cv_af >= 3.0 * cv_n);
}

TEST_CASE("ambiguity blocks borrow the other class's texture") {
  SynthSpec spec = default_spec({"N", "AF"});
  spec.ambiguity_prob = 0.25;
  spec.record_minutes = 60;
  spec.seed = 12;
  auto gen = generate_record(spec, 0);
  // some beats inside AF segments must carry the N texture and vice versa
  int64_t swapped = 0;
  for (size_t i = 0; i < gen.beat_times_s.size(); ++i) {
    for (const auto& seg : gen.segments)
      if (gen.beat_times_s[i] >= seg.start_s && gen.beat_times_s[i] < seg.end_s) {
        if (gen.beat_class[i] != seg.class_index) ++swapped;
        break;
      }
  }
  const double frac = double(swapped) / double(gen.beat_times_s.size());
  CHECK(frac > 0.1);
  CHECK(frac < 0.45);
}

TEST_CASE("spec document parsing") {
  auto kv = parse_flat_config(
      "classes = N,AF\n"
      "n_patients = 7\n"
      "record_minutes = 15\n"
      "dwell_AF = 480\n"
      "ambiguity_prob = 0.2\n"
      "af_load_factors = 0.5,2.0\n"
      "seed = 123\n");
  auto spec = spec_from_kv(kv);
  CHECK(spec.classes.size() == 2);
  CHECK(spec.classes[1].name == "AF");
  CHECK(spec.classes[1].dwell_mean_s == 480);
  CHECK(spec.n_patients == 7);
  CHECK(spec.ambiguity_prob == 0.2);
  CHECK(spec.af_load_factors == std::vector<double>{0.5, 2.0});
  CHECK(spec.seed == 123);

  CHECK_THROWS_AS((void)spec_from_kv({{"classes", "N,AF,XYZ"}}), error);
}
