// s4ecg command-line tool: synthesize corpora, preprocess WFDB records,
// split patients, train, evaluate, predict, plot rhythm bands, and compare
// two checkpoints with a paired bootstrap. Every command writes a
// reproducibility manifest next to its primary output.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "s4ecg/evaluation.hpp"
#include "s4ecg/model.hpp"
#include "s4ecg/pipeline.hpp"
#include "s4ecg/synth.hpp"
#include "s4ecg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace s4ecg;

namespace {

constexpr const char* kVersion = "s4ecg 0.1.0";

struct ManifestScope {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> config;
  std::vector<std::string> outputs;
  uint64_t seed = 0;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void write(const std::string& dir_or_file) {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["code_version"] = kVersion;
    j["seed"] = seed;
    j["threads"] = global_pool().threads();
    std::string canon;
    for (const auto& [k, v] : config) canon += k + "=" + v + "\n";
    j["config_hash"] = fnv1a(canon);
    j["outputs"] = outputs;
    j["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fs::path base(dir_or_file);
    fs::path path = fs::is_directory(base) || !base.has_extension()
                        ? base / ("manifest-" + command + ".json")
                        : base.parent_path() / ("manifest-" + command + ".json");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const std::string text = j.dump(2) + "\n";
    wfdb::write_file_bytes(path.string(), text.data(), text.size());
  }
};

std::map<std::string, std::string> load_config_file(const std::string& path) {
  if (path.empty()) return {};
  return parse_flat_config(wfdb::read_file_text(path));
}

std::array<double, 3> parse_ratios(const std::string& text) {
  auto parts = split(text, ':');
  require(parts.size() == 3, "ratios must look like 8:1:1");
  return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
}

pipeline::SplitAssignment dataset_split(const pipeline::EpochDataset& data,
                                        const std::string& ratios, uint64_t seed_override) {
  const uint64_t seed = seed_override ? seed_override : data.split_seed;
  return pipeline::split_patients(pipeline::dataset_patients(data), parse_ratios(ratios), seed);
}

const std::vector<std::string>& subset_of(const pipeline::SplitAssignment& split,
                                          const std::string& which,
                                          std::vector<std::string>& all_storage,
                                          const pipeline::EpochDataset& data) {
  if (which == "train") return split.train;
  if (which == "valid") return split.valid;
  if (which == "test") return split.test;
  require(which == "all", "unknown split '" + which + "'");
  all_storage = pipeline::dataset_patients(data);
  return all_storage;
}

json ci_json(const evaluation::BootstrapResult& r) {
  return {{"point", r.point}, {"lo", r.lo}, {"hi", r.hi}, {"pm", r.max_abs_dev},
          {"redraws", r.redraws}};
}

int find_class(const std::vector<std::string>& classes, const std::string& name) {
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return int(i);
  return -1;
}

// truth class per epoch: majority fraction, or -1 when unknown dominates
std::vector<int> truth_classes(const pipeline::DatasetRecord& rec) {
  std::vector<int> out(size_t(rec.labels.epochs), -1);
  for (int64_t e = 0; e < rec.labels.epochs; ++e) {
    if (rec.labels.unknown[size_t(e)] > 0.5) continue;
    int best = 0;
    for (int c = 1; c < rec.labels.n_classes; ++c)
      if (rec.labels.fraction(e, c) > rec.labels.fraction(e, best)) best = c;
    out[size_t(e)] = best;
  }
  return out;
}

json evaluate_scored(const evaluation::ScoredEpochs& scored, int n_iter, uint64_t seed) {
  json report;
  report["classes"] = scored.classes;
  report["n_epochs"] = scored.n_epochs();
  report["n_patients"] = scored.patients.size();
  report["bootstrap_iterations"] = n_iter;
  report["seed"] = seed;

  json per_class = json::object();
  for (int c = 0; c < scored.n_classes(); ++c) {
    auto metric = evaluation::class_auroc_metric(scored, c);
    const std::vector<double> ones(scored.patients.size(), 1.0);
    auto point = metric(scored, ones);
    if (!point) {
      per_class[scored.classes[size_t(c)]] = nullptr;  // class absent from this data
      continue;
    }
    per_class[scored.classes[size_t(c)]] =
        ci_json(evaluation::bootstrap_ci(metric, scored, n_iter, seed));
  }
  report["auroc"] = per_class;
  report["macro_auroc"] =
      ci_json(evaluation::bootstrap_ci(evaluation::macro_auroc_metric(scored), scored, n_iter,
                                       seed));

  const int af = find_class(scored.classes, "AF");
  if (af >= 0) {
    auto metric = evaluation::specificity_metric(scored, af, 0.9);
    const std::vector<double> ones(scored.patients.size(), 1.0);
    if (metric(scored, ones)) {
      report["af_specificity_at_sensitivity_0.9"] =
          ci_json(evaluation::bootstrap_ci(metric, scored, n_iter, seed));
      // AF burden: actual from targets, predicted from thresholded scores
      std::vector<double> af_targets, af_scores;
      std::vector<uint8_t> af_labels;
      for (int64_t e = 0; e < scored.n_epochs(); ++e) {
        af_targets.push_back(scored.target(e, af));
        af_scores.push_back(scored.score(e, af));
        af_labels.push_back(scored.target(e, af) >= 0.5 ? 1 : 0);
      }
      auto theta = evaluation::threshold_at_fnr(af_scores, af_labels, 0.1);
      report["af_burden"] = {
          {"actual", evaluation::af_burden(af_targets)},
          {"predicted", theta ? evaluation::af_burden_predicted(af_scores, *theta) : -1.0}};
    }
  }
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S4ECG: multi-epoch arrhythmia classification toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread count (default: hardware)");

  std::vector<std::string> raw_args(argv, argv + argc);

  // ---- synth ----
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic WFDB corpus");
  std::string synth_spec_path, synth_out;
  uint64_t synth_seed = 0;
  bool synth_seed_set = false;
  cmd_synth->add_option("--spec", synth_spec_path, "flat key-value spec document");
  cmd_synth->add_option("--out", synth_out, "output WFDB directory")->required();
  cmd_synth->add_option("--seed", synth_seed, "override the spec seed")
      ->each([&](const std::string&) { synth_seed_set = true; });

  // ---- preprocess ----
  auto* cmd_pre = app.add_subcommand("preprocess", "WFDB directory -> dataset archive");
  std::string pre_input, pre_classes = "N,AF,AFLT", pre_out;
  uint64_t pre_split_seed = 1;
  cmd_pre->add_option("--input", pre_input, "WFDB directory")->required();
  cmd_pre->add_option("--classes", pre_classes, "ordered class list");
  cmd_pre->add_option("--out", pre_out, "archive directory")->required();
  cmd_pre->add_option("--split-seed", pre_split_seed, "patient split seed stored in the archive");

  // ---- split ----
  auto* cmd_split = app.add_subcommand("split", "compute the patient split of an archive");
  std::string split_data, split_ratios = "8:1:1", split_out;
  uint64_t split_seed = 0;
  cmd_split->add_option("--data", split_data, "archive directory")->required();
  cmd_split->add_option("--ratios", split_ratios, "train:valid:test");
  cmd_split->add_option("--seed", split_seed, "override the archive split seed");
  cmd_split->add_option("--out", split_out, "output JSON path")->required();

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "train a model on an archive");
  std::string train_data, train_config_path, train_out;
  int64_t train_epochs_in = 0;
  uint64_t train_seed = 0;
  bool train_seed_set = false, train_single = false;
  cmd_train->add_option("--data", train_data, "archive directory")->required();
  cmd_train->add_option("--config", train_config_path, "flat key-value config file");
  cmd_train->add_option("--epochs-in", train_epochs_in, "input window in 30 s epochs");
  cmd_train->add_option("--out", train_out, "checkpoint directory")->required();
  cmd_train->add_option("--seed", train_seed, "override the config seed")
      ->each([&](const std::string&) { train_seed_set = true; });
  cmd_train->add_flag("--single-epoch", train_single,
                      "predictor-less single-epoch baseline configuration");

  // ---- evaluate ----
  auto* cmd_eval = app.add_subcommand("evaluate", "score a checkpoint on an archive split");
  std::string eval_ckpt, eval_data, eval_report, eval_which = "test",
              eval_ratios = "8:1:1", eval_band_dir;
  int64_t eval_stride = 1;
  int eval_bootstrap = 10000;
  uint64_t eval_seed = 0;
  cmd_eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  cmd_eval->add_option("--data", eval_data, "archive directory")->required();
  cmd_eval->add_option("--stride", eval_stride, "sliding window stride in epochs");
  cmd_eval->add_option("--report", eval_report, "metrics report JSON path")->required();
  cmd_eval->add_option("--split", eval_which, "train|valid|test|all");
  cmd_eval->add_option("--ratios", eval_ratios, "train:valid:test");
  cmd_eval->add_option("--bootstrap", eval_bootstrap, "bootstrap iterations");
  cmd_eval->add_option("--seed", eval_seed, "bootstrap / split seed override");
  cmd_eval->add_option("--band-dir", eval_band_dir, "write per-record rhythm bands here");

  // ---- predict ----
  auto* cmd_pred = app.add_subcommand("predict", "per-epoch probabilities for one record");
  std::string pred_ckpt, pred_data, pred_record, pred_out;
  int64_t pred_stride = 1;
  cmd_pred->add_option("--ckpt", pred_ckpt, "checkpoint file")->required();
  cmd_pred->add_option("--data", pred_data, "archive directory")->required();
  cmd_pred->add_option("--record", pred_record, "record name")->required();
  cmd_pred->add_option("--stride", pred_stride, "sliding window stride in epochs");
  cmd_pred->add_option("--out", pred_out, "output CSV path")->required();

  // ---- plot ----
  auto* cmd_plot = app.add_subcommand("plot", "render a rhythm band CSV as SVG");
  std::string plot_band, plot_out;
  cmd_plot->add_option("--band", plot_band, "band CSV (from evaluate --band-dir)")->required();
  cmd_plot->add_option("--out", plot_out, "output SVG path")->required();

  // ---- compare ----
  auto* cmd_cmp = app.add_subcommand("compare", "paired bootstrap of two checkpoints");
  std::string cmp_a, cmp_b, cmp_data, cmp_report, cmp_which = "test", cmp_ratios = "8:1:1";
  int64_t cmp_stride = 1;
  int cmp_bootstrap = 10000;
  uint64_t cmp_seed = 0;
  cmd_cmp->add_option("--ckpt-a", cmp_a, "first checkpoint")->required();
  cmd_cmp->add_option("--ckpt-b", cmp_b, "second checkpoint")->required();
  cmd_cmp->add_option("--data", cmp_data, "archive directory")->required();
  cmd_cmp->add_option("--report", cmp_report, "difference report JSON path")->required();
  cmd_cmp->add_option("--split", cmp_which, "train|valid|test|all");
  cmd_cmp->add_option("--ratios", cmp_ratios, "train:valid:test");
  cmd_cmp->add_option("--stride", cmp_stride, "sliding window stride in epochs");
  cmd_cmp->add_option("--bootstrap", cmp_bootstrap, "bootstrap iterations");
  cmd_cmp->add_option("--seed", cmp_seed, "bootstrap / split seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  if (threads > 0) setenv("S4ECG_THREADS", std::to_string(threads).c_str(), 1);

  try {
    if (cmd_synth->parsed()) {
      ManifestScope man{"synth", raw_args};
      auto kv = load_config_file(synth_spec_path);
      auto spec = synth::spec_from_kv(kv);
      if (synth_seed_set) spec.seed = synth_seed;
      man.config = kv;
      man.seed = spec.seed;
      auto names = synth::generate_corpus(spec, synth_out);
      for (const auto& n : names) man.outputs.push_back((fs::path(synth_out) / n).string());
      man.write(synth_out);
      std::cout << "wrote " << names.size() << " records to " << synth_out << "\n";
    }

    if (cmd_pre->parsed()) {
      ManifestScope man{"preprocess", raw_args};
      std::vector<std::string> classes;
      for (auto& c : split(pre_classes, ',')) classes.push_back(trim(c));
      pipeline::EpochDataset data;
      data.classes = classes;
      data.split_seed = pre_split_seed;
      man.seed = pre_split_seed;
      std::vector<std::string> names;
      for (const auto& entry : fs::directory_iterator(pre_input))
        if (entry.path().extension() == ".hea") names.push_back(entry.path().stem().string());
      std::sort(names.begin(), names.end());
      require(!names.empty(), "preprocess: no .hea files in " + pre_input);
      data.records.resize(names.size());
      parallel_for(int64_t(names.size()), [&](int64_t i) {
        data.records[size_t(i)] =
            pipeline::process_record(wfdb::read_record(pre_input, names[size_t(i)]), classes);
      });
      pipeline::export_dataset(data, pre_out);
      man.outputs.push_back(pre_out);
      man.write(pre_out);
      int64_t epochs = 0;
      for (auto& r : data.records) epochs += r.labels.epochs;
      std::cout << "archived " << data.records.size() << " records, " << epochs
                << " epochs, classes";
      for (auto& c : classes) std::cout << " " << c;
      std::cout << "\n";
    }

    if (cmd_split->parsed()) {
      ManifestScope man{"split", raw_args};
      auto data = pipeline::load_dataset(split_data);
      auto assignment = dataset_split(data, split_ratios, split_seed);
      man.seed = assignment.seed;
      json j = {{"seed", assignment.seed},
                {"train", assignment.train},
                {"valid", assignment.valid},
                {"test", assignment.test}};
      const std::string text = j.dump(2) + "\n";
      wfdb::write_file_bytes(split_out, text.data(), text.size());
      man.outputs.push_back(split_out);
      man.write(split_out);
      std::cout << "split " << assignment.train.size() << "/" << assignment.valid.size() << "/"
                << assignment.test.size() << " -> " << split_out << "\n";
    }

    if (cmd_train->parsed()) {
      ManifestScope man{"train", raw_args};
      auto kv = load_config_file(train_config_path);
      man.config = kv;
      auto data = pipeline::load_dataset(train_data);
      auto tcfg = training::TrainConfig::from_kv(kv);
      if (train_seed_set) tcfg.seed = train_seed;
      man.seed = tcfg.seed;
      auto mcfg = model::ModelConfig::from_kv(kv);
      mcfg.n_classes = int(data.classes.size());
      if (train_epochs_in > 0) mcfg.input_epochs = train_epochs_in;
      if (train_single) {
        mcfg.predictor_layers = 0;
        mcfg.input_epochs = 1;
      }
      mcfg.validate();
      model::Model<float> m(mcfg, tcfg.seed);
      std::cout << "training " << (train_single ? "single-epoch" : "multi-epoch") << " model, "
                << m.parameter_count() << " parameters, input " << mcfg.input_epochs
                << " epochs (" << mcfg.input_epochs * mcfg.epoch_len << " samples)\n";
      fs::create_directories(train_out);
      std::ofstream log_file(fs::path(train_out) / "train.log");
      auto result = training::train(m, data, tcfg, &log_file);
      const std::string ckpt = (fs::path(train_out) / "best.ckpt").string();
      model::save_checkpoint(ckpt, *result.best_model, result.best_meta);
      man.outputs.push_back(ckpt);
      man.outputs.push_back((fs::path(train_out) / "train.log").string());
      man.write(train_out);
      std::cout << "best validation macro-AUROC "
                << result.best_meta.validation_macro_auroc << " -> " << ckpt << "\n";
    }

    if (cmd_eval->parsed()) {
      ManifestScope man{"evaluate", raw_args};
      man.seed = eval_seed;
      auto loaded = model::load_checkpoint(eval_ckpt);
      auto data = pipeline::load_dataset(eval_data);
      require(int(data.classes.size()) == loaded.config.n_classes,
              "evaluate: archive classes do not match the checkpoint");
      auto assignment = dataset_split(data, eval_ratios, eval_seed);
      std::vector<std::string> all_storage;
      const auto& subset = subset_of(assignment, eval_which, all_storage, data);
      require(!subset.empty(), "evaluate: selected split is empty");
      auto scored = evaluation::score_dataset(*loaded.model, data, subset,
                                              loaded.config.input_epochs, eval_stride);
      require(scored.n_epochs() > 0, "evaluate: no scored epochs");
      auto report = evaluate_scored(scored, eval_bootstrap, eval_seed);
      report["checkpoint"] = eval_ckpt;
      report["split"] = eval_which;
      report["stride"] = eval_stride;
      report["input_epochs"] = loaded.config.input_epochs;

      if (!eval_band_dir.empty()) {
        // per-class thresholds on this split, then one band per record
        fs::create_directories(eval_band_dir);
        std::vector<double> thresholds(data.classes.size(), 0.5);
        for (int c = 0; c < int(data.classes.size()); ++c) {
          std::vector<double> sc;
          std::vector<uint8_t> lb;
          for (int64_t e = 0; e < scored.n_epochs(); ++e) {
            sc.push_back(scored.score(e, c));
            lb.push_back(scored.target(e, c) >= 0.5 ? 1 : 0);
          }
          if (auto th = evaluation::threshold_at_fnr(sc, lb, 0.1)) thresholds[size_t(c)] = *th;
        }
        json bands = json::object();
        for (const auto& rec : data.records) {
          if (std::find(subset.begin(), subset.end(), rec.patient_id) == subset.end()) continue;
          if (rec.labels.epochs == 0) continue;
          auto probs = evaluation::sliding_window_predict(*loaded.model, rec.signal,
                                                          loaded.config.input_epochs,
                                                          eval_stride);
          evaluation::ScoredEpochs rec_scored;
          rec_scored.classes = data.classes;
          rec_scored.patients = {rec.patient_id};
          for (int64_t e = 0; e < rec.labels.epochs; ++e) {
            rec_scored.patient_of.push_back(0);
            for (int c = 0; c < int(data.classes.size()); ++c) {
              rec_scored.scores.push_back(probs[e * int(data.classes.size()) + c]);
              rec_scored.targets.push_back(rec.labels.fraction(e, c));
            }
            rec_scored.unknown_fraction.push_back(rec.labels.unknown[size_t(e)]);
          }
          auto pred = evaluation::classify_epochs(rec_scored, thresholds);
          auto truth = truth_classes(rec);
          const std::string svg =
              (fs::path(eval_band_dir) / (rec.record_name + ".svg")).string();
          const std::string csv =
              (fs::path(eval_band_dir) / (rec.record_name + ".csv")).string();
          auto frag = evaluation::render_rhythm_band(
              {{"truth", truth}, {"model", pred}}, data.classes, svg, csv);
          bands[rec.record_name] = {{"svg", svg},
                                    {"csv", csv},
                                    {"fragmentation_truth", frag[0]},
                                    {"fragmentation_model", frag[1]}};
          man.outputs.push_back(svg);
          man.outputs.push_back(csv);
        }
        report["bands"] = bands;
      }

      const std::string text = report.dump(2) + "\n";
      wfdb::write_file_bytes(eval_report, text.data(), text.size());
      man.outputs.push_back(eval_report);
      man.write(eval_report);
      std::cout << "macro-AUROC " << report["macro_auroc"]["point"].get<double>();
      if (report.contains("af_specificity_at_sensitivity_0.9"))
        std::cout << ", AF specificity@0.9 sensitivity "
                  << report["af_specificity_at_sensitivity_0.9"]["point"].get<double>();
      std::cout << " -> " << eval_report << "\n";
    }

    if (cmd_pred->parsed()) {
      ManifestScope man{"predict", raw_args};
      auto loaded = model::load_checkpoint(pred_ckpt);
      auto data = pipeline::load_dataset(pred_data);
      const pipeline::DatasetRecord* rec = nullptr;
      for (const auto& r : data.records)
        if (r.record_name == pred_record) rec = &r;
      require(rec != nullptr, "predict: record '" + pred_record + "' not in the archive");
      auto probs = evaluation::sliding_window_predict(*loaded.model, rec->signal,
                                                      loaded.config.input_epochs, pred_stride);
      std::ostringstream csv;
      csv << "epoch";
      for (auto& c : data.classes) csv << ",prob_" << c;
      for (auto& c : data.classes) csv << ",target_" << c;
      csv << ",unknown_fraction\n";
      for (int64_t e = 0; e < probs.dim(0); ++e) {
        csv << e;
        for (int c = 0; c < int(data.classes.size()); ++c)
          csv << "," << probs[e * int(data.classes.size()) + c];
        for (int c = 0; c < int(data.classes.size()); ++c)
          csv << "," << (e < rec->labels.epochs ? rec->labels.fraction(e, c) : 0.0);
        csv << "," << (e < rec->labels.epochs ? rec->labels.unknown[size_t(e)] : 1.0) << "\n";
      }
      const std::string text = csv.str();
      wfdb::write_file_bytes(pred_out, text.data(), text.size());
      man.outputs.push_back(pred_out);
      man.write(pred_out);
      std::cout << "wrote " << probs.dim(0) << " epochs -> " << pred_out << "\n";
    }

    if (cmd_plot->parsed()) {
      ManifestScope man{"plot", raw_args};
      std::istringstream is(wfdb::read_file_text(plot_band));
      std::string line;
      require(bool(std::getline(is, line)), "plot: empty band CSV");
      auto header = split(trim(line), ',');
      require(header.size() >= 2 && header[0] == "epoch", "plot: not a band CSV");
      std::vector<evaluation::BandRow> rows(header.size() - 1);
      for (size_t r = 0; r < rows.size(); ++r) rows[r].label = header[r + 1];
      std::vector<std::string> class_names;
      while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        auto cols = split(trim(line), ',');
        require(cols.size() == header.size(), "plot: ragged band CSV");
        for (size_t r = 0; r < rows.size(); ++r) {
          const std::string& name = cols[r + 1];
          if (name.empty()) {
            rows[r].classes.push_back(-1);
            continue;
          }
          int idx = find_class(class_names, name);
          if (idx < 0) {
            class_names.push_back(name);
            idx = int(class_names.size()) - 1;
          }
          rows[r].classes.push_back(idx);
        }
      }
      auto frag = evaluation::render_rhythm_band(rows, class_names, plot_out,
                                                 plot_out + ".csv");
      man.outputs.push_back(plot_out);
      man.write(plot_out);
      std::cout << "rendered " << rows.size() << " rows (fragmentation:";
      for (size_t r = 0; r < rows.size(); ++r)
        std::cout << " " << rows[r].label << "=" << frag[r];
      std::cout << ") -> " << plot_out << "\n";
    }

    if (cmd_cmp->parsed()) {
      ManifestScope man{"compare", raw_args};
      man.seed = cmp_seed;
      auto la = model::load_checkpoint(cmp_a);
      auto lb = model::load_checkpoint(cmp_b);
      auto data = pipeline::load_dataset(cmp_data);
      auto assignment = dataset_split(data, cmp_ratios, cmp_seed);
      std::vector<std::string> all_storage;
      const auto& subset = subset_of(assignment, cmp_which, all_storage, data);
      auto scored_a = evaluation::score_dataset(*la.model, data, subset,
                                                la.config.input_epochs, cmp_stride);
      auto scored_b = evaluation::score_dataset(*lb.model, data, subset,
                                                lb.config.input_epochs, cmp_stride);
      auto diff = evaluation::paired_bootstrap_diff(
          evaluation::macro_auroc_metric(scored_a), evaluation::macro_auroc_metric(scored_b),
          scored_a, scored_b, cmp_bootstrap, cmp_seed);
      json j = {{"ckpt_a", cmp_a},
                {"ckpt_b", cmp_b},
                {"metric", "macro_auroc"},
                {"diff_point", diff.point},
                {"diff_lo", diff.lo},
                {"diff_hi", diff.hi},
                {"significant", diff.significant},
                {"bootstrap_iterations", cmp_bootstrap},
                {"redraws", diff.redraws}};
      const std::string text = j.dump(2) + "\n";
      wfdb::write_file_bytes(cmp_report, text.data(), text.size());
      man.outputs.push_back(cmp_report);
      man.write(cmp_report);
      std::cout << "macro-AUROC difference " << diff.point << " [" << diff.lo << ", "
                << diff.hi << "] " << (diff.significant ? "significant" : "not significant")
                << " -> " << cmp_report << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
