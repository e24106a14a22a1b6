#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "s4ecg/evaluation.hpp"

using namespace s4ecg;
using namespace s4ecg::evaluation;

namespace {

// Brute-force pairwise AUROC oracle (ties count half).
std::optional<double> auroc_oracle(const std::vector<double>& scores,
                                   const std::vector<uint8_t>& labels) {
  double pos = 0, neg = 0, acc = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    pos += 1;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) acc += 1;
      else if (scores[i] == scores[j]) acc += 0.5;
    }
  }
  for (auto l : labels) neg += l ? 0 : 1;
  if (pos == 0 || neg == 0) return std::nullopt;
  return acc / (pos * neg);
}

// Exhaustive threshold-scan oracle for the FNR-targeted threshold.
double threshold_oracle(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                        double target) {
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates = {sorted.front() - 1.0};
  for (size_t i = 0; i + 1 < sorted.size(); ++i)
    candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  candidates.push_back(sorted.back() + 1.0);
  double pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  // stage 1: achievable FNR closest to the target, lower FNR on ties;
  // stage 2: the largest threshold attaining that FNR
  double best_theta = candidates[0], best_err = 1e300, best_fnr = -1;
  for (double theta : candidates) {  // ascending
    double fn = 0;
    for (size_t i = 0; i < scores.size(); ++i)
      if (labels[i] && scores[i] < theta) fn += 1;
    const double fnr = fn / pos;
    const double err = std::abs(fnr - target);
    if (err < best_err || (err == best_err && fnr == best_fnr)) {
      best_err = err;
      best_fnr = fnr;
      best_theta = theta;
    }
  }
  return best_theta;
}

ScoredEpochs make_scored(const std::vector<int>& patient_of,
                         const std::vector<std::vector<double>>& scores,
                         const std::vector<std::vector<double>>& targets,
                         int n_patients, std::vector<std::string> classes) {
  ScoredEpochs d;
  d.classes = std::move(classes);
  for (int p = 0; p < n_patients; ++p) d.patients.push_back("p" + std::to_string(p));
  for (size_t e = 0; e < patient_of.size(); ++e) {
    d.patient_of.push_back(patient_of[e]);
    for (double s : scores[e]) d.scores.push_back(s);
    for (double t : targets[e]) d.targets.push_back(t);
    d.unknown_fraction.push_back(0.0);
  }
  return d;
}

}  // namespace

TEST_CASE("auroc on the documented example and edge cases") {
  CHECK(*auroc({0.35, 0.8, 0.1, 0.4}, {1, 1, 0, 0}) == doctest::Approx(0.75));

  CHECK(*auroc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(*auroc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);

  CHECK(!auroc({0.1, 0.2}, {1, 1}).has_value());
  CHECK(!auroc({0.1, 0.2}, {0, 0}).has_value());
}

TEST_CASE("auroc equals the brute-force oracle on random draws") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + int(rng.uniform_int(30));
    std::vector<double> scores(static_cast<size_t>(n));
    std::vector<uint8_t> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      scores[size_t(i)] = double(rng.uniform_int(5)) / 4.0;  // ties likely
      labels[size_t(i)] = uint8_t(rng.uniform_int(2));
    }
    auto fast = auroc(scores, labels);
    auto slow = auroc_oracle(scores, labels);
    CHECK(fast.has_value() == slow.has_value());
    if (fast) CHECK(*fast == doctest::Approx(*slow).epsilon(1e-12));
  }
}

TEST_CASE("auroc is invariant under strictly monotone score transforms") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + int(rng.uniform_int(20));
    std::vector<double> scores(static_cast<size_t>(n));
    std::vector<uint8_t> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      scores[size_t(i)] = rng.uniform(0, 1);
      labels[size_t(i)] = uint8_t(rng.uniform_int(2));
    }
    auto base = auroc(scores, labels);
    std::vector<double> warped(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) warped[size_t(i)] = std::exp(3.0 * scores[size_t(i)]) - 2.0;
    auto after = auroc(warped, labels);
    CHECK(base.has_value() == after.has_value());
    if (base) CHECK(*base == doctest::Approx(*after).epsilon(1e-12));
  }
}

TEST_CASE("macro_auroc") {
  CHECK(*macro_auroc({1.0, 0.5}) == doctest::Approx(0.75));
  CHECK(*macro_auroc({0.7}) == doctest::Approx(0.7));
  CHECK(*macro_auroc({0.6, std::nullopt, 0.8}) == doctest::Approx(0.7));  // absent class skipped
  CHECK(!macro_auroc({std::nullopt, std::nullopt}).has_value());

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::optional<double>> vals;
    double sum = 0;
    for (int c = 0; c < 3; ++c) {
      vals.emplace_back(rng.uniform(0, 1));
      sum += *vals.back();
    }
    CHECK(*macro_auroc(vals) == doctest::Approx(sum / 3));
  }
}

TEST_CASE("threshold_at_fnr") {
  SUBCASE("nine of ten positives admitted at target 0.1") {
    std::vector<double> scores = {0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97, 0.98, 0.99, 0.05};
    std::vector<uint8_t> labels(10, 1);
    // negatives well below the positive cluster
    scores.insert(scores.end(), {0.01, 0.02, 0.03});
    labels.insert(labels.end(), {0, 0, 0});
    auto theta = threshold_at_fnr(scores, labels, 0.1);
    REQUIRE(theta.has_value());
    int admitted = 0;
    for (int i = 0; i < 10; ++i) admitted += scores[size_t(i)] >= *theta ? 1 : 0;
    CHECK(admitted == 9);
  }

  SUBCASE("target zero sits below the minimum positive score") {
    std::vector<double> scores = {0.5, 0.6, 0.7, 0.2, 0.1};
    std::vector<uint8_t> labels = {1, 1, 1, 0, 0};
    auto theta = threshold_at_fnr(scores, labels, 0.0);
    REQUIRE(theta.has_value());
    CHECK(*theta < 0.5);
  }

  SUBCASE("target one sits above the maximum positive score") {
    std::vector<double> scores = {0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<uint8_t> labels = {1, 1, 1, 0, 0};
    auto theta = threshold_at_fnr(scores, labels, 1.0);
    REQUIRE(theta.has_value());
    CHECK(*theta > 0.7);
  }

  SUBCASE("ties break toward the higher-sensitivity threshold") {
    // achievable FNR values are 0, 0.5, 1.0; target 0.25 ties 0 with 0.5
    std::vector<double> scores = {1.0, 2.0, 0.5};
    std::vector<uint8_t> labels = {1, 1, 0};
    auto theta = threshold_at_fnr(scores, labels, 0.25);
    REQUIRE(theta.has_value());
    CHECK(*theta < 1.0);  // admits both positives (FNR 0), not just one
  }

  SUBCASE("agrees with the exhaustive scan on random instances") {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
      const int n = 4 + int(rng.uniform_int(20));
      std::vector<double> scores(static_cast<size_t>(n));
      std::vector<uint8_t> labels(static_cast<size_t>(n));
      bool has_pos = false, has_neg = false;
      for (int i = 0; i < n; ++i) {
        scores[size_t(i)] = double(rng.uniform_int(8)) / 7.0;
        labels[size_t(i)] = uint8_t(rng.uniform_int(2));
        (labels[size_t(i)] ? has_pos : has_neg) = true;
      }
      if (!has_pos || !has_neg) continue;
      const double target = rng.uniform(0, 1);
      auto fast = threshold_at_fnr(scores, labels, target);
      REQUIRE(fast.has_value());
      CHECK(*fast == doctest::Approx(threshold_oracle(scores, labels, target)).epsilon(1e-12));
    }
  }
}

TEST_CASE("specificity_at_sensitivity") {
  SUBCASE("perfect separation gives specificity one") {
    std::vector<double> scores = {0.9, 0.8, 0.2, 0.1};
    std::vector<uint8_t> labels = {1, 1, 0, 0};
    CHECK(*specificity_at_sensitivity(scores, labels, 0.9) == 1.0);
  }

  SUBCASE("identical distributions give roughly one minus sensitivity") {
    Rng rng(5);
    double acc = 0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
      std::vector<double> scores;
      std::vector<uint8_t> labels;
      for (int i = 0; i < 400; ++i) {
        scores.push_back(rng.uniform(0, 1));
        labels.push_back(uint8_t(i % 2));
      }
      acc += *specificity_at_sensitivity(scores, labels, 0.9);
    }
    CHECK(acc / trials == doctest::Approx(0.1).epsilon(0.35));
  }

  SUBCASE("non-increasing in the required sensitivity over achievable points") {
    Rng rng(55);
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<double> scores;
      std::vector<uint8_t> labels;
      int pos = 0;
      for (int i = 0; i < 60; ++i) {
        scores.push_back(double(rng.uniform_int(12)) / 11.0);
        labels.push_back(uint8_t(rng.uniform_int(2)));
        pos += labels.back();
      }
      if (pos == 0 || pos == 60) continue;
      double prev = 2.0;
      for (int k = 0; k <= pos; ++k) {  // achievable sensitivities k/pos
        auto v = specificity_at_sensitivity(scores, labels, double(k) / double(pos));
        REQUIRE(v.has_value());
        CHECK(*v <= prev + 1e-12);
        prev = *v;
      }
    }
  }

  SUBCASE("always within the unit interval") {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> scores;
      std::vector<uint8_t> labels;
      for (int i = 0; i < 30; ++i) {
        scores.push_back(double(rng.uniform_int(4)) / 3.0);
        labels.push_back(uint8_t(rng.uniform_int(2)));
      }
      auto v = specificity_at_sensitivity(scores, labels, rng.uniform(0.05, 0.95));
      if (v) {
        CHECK(*v >= 0.0);
        CHECK(*v <= 1.0);
      }
    }
  }
}

TEST_CASE("bootstrap_ci") {
  Rng rng(7);
  // 6 patients, 40 epochs each, binary targets on 2 classes
  std::vector<int> patient_of;
  std::vector<std::vector<double>> scores, targets;
  for (int p = 0; p < 6; ++p)
    for (int e = 0; e < 40; ++e) {
      patient_of.push_back(p);
      const bool af = rng.uniform() < 0.4;
      targets.push_back({af ? 0.0 : 1.0, af ? 1.0 : 0.0});
      const double sn = rng.normal() * 0.2;
      scores.push_back({af ? 0.3 + sn : 0.7 + sn, af ? 0.7 + sn : 0.3 + sn});
    }
  auto data = make_scored(patient_of, scores, targets, 6, {"N", "AF"});

  SUBCASE("fixed seed reproduces the interval bit for bit") {
    auto m = macro_auroc_metric(data);
    auto a = bootstrap_ci(m, data, 500, 42);
    auto b = bootstrap_ci(m, data, 500, 42);
    CHECK(a.point == b.point);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.redraws == b.redraws);
    CHECK(a.lo <= a.point);
    CHECK(a.point <= a.hi);
    CHECK(a.max_abs_dev ==
          doctest::Approx(std::max(std::abs(a.point - a.lo), std::abs(a.point - a.hi))));
    auto c = bootstrap_ci(m, data, 500, 43);
    CHECK(a.lo != c.lo);  // a different seed resamples differently
  }

  SUBCASE("constant metric collapses to a zero-width interval") {
    MetricFn constant = [](const ScoredEpochs&, const std::vector<double>&) {
      return std::optional<double>(0.625);
    };
    auto r = bootstrap_ci(constant, data, 200, 1);
    CHECK(r.point == 0.625);
    CHECK(r.lo == 0.625);
    CHECK(r.hi == 0.625);
  }

  SUBCASE("positive-free resamples are discarded and redrawn") {
    // only patient 0 carries AF positives; resamples without patient 0
    // must be redrawn
    std::vector<int> po;
    std::vector<std::vector<double>> sc, tg;
    for (int p = 0; p < 4; ++p)
      for (int e = 0; e < 10; ++e) {
        po.push_back(p);
        const bool af = p == 0 && e < 5;
        tg.push_back({af ? 0.0 : 1.0, af ? 1.0 : 0.0});
        sc.push_back({0.5, af ? 0.8 : 0.2});
      }
    auto sparse = make_scored(po, sc, tg, 4, {"N", "AF"});
    auto r = bootstrap_ci(macro_auroc_metric(sparse), sparse, 400, 3);
    CHECK(r.redraws > 0);
  }
}

TEST_CASE("paired_bootstrap_diff") {
  Rng rng(8);
  std::vector<int> patient_of;
  std::vector<std::vector<double>> scores_a, scores_b, targets;
  for (int p = 0; p < 5; ++p)
    for (int e = 0; e < 30; ++e) {
      patient_of.push_back(p);
      const bool af = rng.uniform() < 0.5;
      targets.push_back({af ? 0.0 : 1.0, af ? 1.0 : 0.0});
      const double noise = rng.normal() * 0.3;
      // system A separates cleanly; system B is noisy
      scores_a.push_back({af ? 0.15 : 0.85, af ? 0.85 : 0.15});
      scores_b.push_back({af ? 0.4 + noise : 0.6 + noise, af ? 0.6 + noise : 0.4 + noise});
    }
  auto a = make_scored(patient_of, scores_a, targets, 5, {"N", "AF"});
  auto b = make_scored(patient_of, scores_b, targets, 5, {"N", "AF"});

  SUBCASE("a system against itself is exactly null") {
    auto r = paired_bootstrap_diff(macro_auroc_metric(a), macro_auroc_metric(a), a, a, 300, 9);
    CHECK(r.point == 0.0);
    CHECK(r.lo == 0.0);
    CHECK(r.hi == 0.0);
    CHECK(!r.significant);
  }

  SUBCASE("a dominant system is detected as significant") {
    auto r = paired_bootstrap_diff(macro_auroc_metric(a), macro_auroc_metric(b), a, b, 500, 10);
    CHECK(r.point > 0);
    CHECK(r.lo > 0);
    CHECK(r.significant);
  }

  SUBCASE("swapping the systems negates the interval exactly") {
    auto ab = paired_bootstrap_diff(macro_auroc_metric(a), macro_auroc_metric(b), a, b, 300, 11);
    auto ba = paired_bootstrap_diff(macro_auroc_metric(b), macro_auroc_metric(a), b, a, 300, 11);
    CHECK(ab.point == -ba.point);
    CHECK(ab.lo == -ba.hi);
    CHECK(ab.hi == -ba.lo);
  }

  SUBCASE("misaligned epochs are rejected") {
    auto c = a;
    c.targets[0] = 1.0 - c.targets[0];
    CHECK_THROWS_AS(
        (void)paired_bootstrap_diff(macro_auroc_metric(a), macro_auroc_metric(c), a, c, 10, 1),
        error);
  }
}

TEST_CASE("sliding_window_predict") {
  model::ModelConfig cfg;
  cfg.n_classes = 3;
  cfg.scale = 0.03125;
  cfg.dropout = 0.0;
  model::Model<float> m(cfg, 31);

  Rng rng(9);
  std::vector<float> signal(size_t(25) * 3840);
  for (auto& v : signal) v = float(rng.normal() * 0.4);

  SUBCASE("stride equal to the window reduces to tiled prediction") {
    auto slid = sliding_window_predict(m, signal, 5, 5);
    REQUIRE(slid.shape == std::vector<int64_t>({25, 3}));
    for (int64_t w = 0; w < 5; ++w) {
      Tensor<float> tile({1, 5 * 3840});
      std::copy(signal.begin() + w * 5 * 3840, signal.begin() + (w + 1) * 5 * 3840, tile.ptr());
      auto probs = m.predict(tile);
      for (int64_t n = 0; n < 5; ++n)
        for (int c = 0; c < 3; ++c)
          CHECK(slid[(w * 5 + n) * 3 + c] == doctest::Approx(double(probs[n * 3 + c])));
    }
  }

  SUBCASE("a constant-output model aggregates to that constant") {
    model::Model<float> flat(cfg, 31);
    flat.store.at(flat.store.find("head.w")).value.zero();
    flat.store.at(flat.store.find("head.b")).value.zero();
    auto probs = sliding_window_predict(flat, signal, 10, 1);
    for (int64_t i = 0; i < probs.size(); ++i) CHECK(probs[i] == doctest::Approx(0.5));
  }

  SUBCASE("stride one covers interior epochs with the full window count") {
    // derived from the window layout: epoch 12 lies in windows starting 3..12
    auto windows = pipeline::crop_ranges(25, 10, pipeline::CropMode::infer_sliding, 1);
    int covering = 0;
    for (auto& w : windows)
      if (w.begin <= 12 && 12 < w.end) ++covering;
    CHECK(covering == 10);
  }

  SUBCASE("short records fall back to one whole-record window") {
    std::vector<float> brief(size_t(3) * 3840, 0.1f);
    auto probs = sliding_window_predict(m, brief, 10, 1);
    CHECK(probs.shape == std::vector<int64_t>({3, 3}));
  }
}

TEST_CASE("af burden") {
  CHECK(af_burden({1.0, 1.0, 1.0}) == 1.0);
  CHECK(af_burden({1.0, 1.0, 0.0, 0.0}) == 0.5);
  CHECK_THROWS_AS((void)af_burden({}), error);

  Rng rng(10);
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + int(rng.uniform_int(200));
    std::vector<double> vals(static_cast<size_t>(n));
    double sum = 0;
    for (auto& v : vals) {
      v = rng.uniform(0, 1);
      sum += v;
    }
    CHECK(std::abs(af_burden(vals) - sum / n) < 1e-12);
  }

  CHECK(af_burden_predicted({0.9, 0.8, 0.1, 0.2}, 0.5) == 0.5);
}

TEST_CASE("rhythm band rendering") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "s4ecg_band_test";
  fs::create_directories(dir);
  const std::string svg = (dir / "band.svg").string();
  const std::string csv = (dir / "band.csv").string();

  SUBCASE("identical rows give identical csv columns and fragmentation") {
    std::vector<int> classes = {0, 0, 1, 1, 1, 0, 2, 2};
    auto frag = render_rhythm_band({{"truth", classes}, {"model", classes}},
                                   {"N", "AF", "AFLT"}, svg, csv);
    CHECK(frag[0] == frag[1]);
    CHECK(frag[0] == 3);  // run-length oracle: 0|1, 1|0, 0|2
    const auto text = wfdb::read_file_text(csv);
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    CHECK(line == "epoch,truth,model");
    while (std::getline(is, line)) {
      auto cols = split(line, ',');
      REQUIRE(cols.size() == 3);
      CHECK(cols[1] == cols[2]);
    }
    CHECK(wfdb::read_file_text(svg).find("<svg") != std::string::npos);
  }

  SUBCASE("fragmentation equals a run-length oracle on random bands") {
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
      const int n = 2 + int(rng.uniform_int(60));
      std::vector<int> classes(static_cast<size_t>(n));
      for (auto& c : classes) c = int(rng.uniform_int(3));
      int runs = 1;
      for (size_t i = 1; i < classes.size(); ++i)
        if (classes[i] != classes[i - 1]) ++runs;
      CHECK(fragmentation_count(classes) == runs - 1);
    }
  }

  SUBCASE("truth-only rendering with an empty prediction row") {
    auto frag = render_rhythm_band({{"truth", {0, 1, 1}}, {"model", {-1, -1, -1}}},
                                   {"N", "AF"}, svg, csv);
    CHECK(frag.size() == 2);
  }

  SUBCASE("mismatched lengths are rejected") {
    CHECK_THROWS_AS((void)render_rhythm_band({{"a", {0, 1}}, {"b", {0}}}, {"N", "AF"}, svg, csv),
                    error);
  }

  fs::remove_all(dir);
}

TEST_CASE("classify_epochs picks the class with the largest threshold margin") {
  ScoredEpochs d = make_scored({0, 0}, {{0.6, 0.3}, {0.2, 0.45}}, {{1, 0}, {0, 1}}, 1,
                               {"N", "AF"});
  auto classes = classify_epochs(d, {0.5, 0.4});
  CHECK(classes[0] == 0);
  CHECK(classes[1] == 1);
}
