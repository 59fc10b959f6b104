// SPDX-License-Identifier: Apache-2.0
#include "skullnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "skullnet/data.hpp"
#include "skullnet/error.hpp"
#include "skullnet/metrics.hpp"
#include "skullnet/mlknn.hpp"
#include "skullnet/parallel.hpp"
#include "skullnet/serialize.hpp"
#include "skullnet/synthetic.hpp"
#include "skullnet/text.hpp"
#include "skullnet/train.hpp"

namespace skullnet {

namespace fs = std::filesystem;

namespace {

fs::path with_suffix(fs::path p, const std::string& suffix) { return p.replace_extension(suffix); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) throw IoError("cannot write " + path.string());
}

/// filename -> partition name from a split file written by `train`.
std::map<std::string, std::string> read_split(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read split file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "filename,partition") {
    throw ValidationError(path.string() + ": header must be filename,partition");
  }
  std::map<std::string, std::string> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) {
      throw ValidationError(path.string() + " line " + std::to_string(line_no) +
                            ": expected 2 columns");
    }
    out[std::string(cells[0])] = std::string(cells[1]);
  }
  return out;
}

std::set<std::string> parse_partitions(const std::string& spec) {
  std::set<std::string> out;
  for (auto p : split_csv_line(spec)) {
    if (p != "train" && p != "val" && p != "test") {
      throw InvalidArgument("unknown partition '" + std::string(p) + "' (use train, val, test)");
    }
    out.emplace(p);
  }
  return out;
}

/// Row indices of `filenames` whose partition in the split file is selected;
/// every row when no split file is given.
std::vector<std::size_t> select_rows(const std::vector<std::string>& filenames,
                                     const std::string& split_path, const std::string& partitions) {
  std::vector<std::size_t> rows;
  if (split_path.empty()) {
    rows.resize(filenames.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
  }
  const auto split = read_split(split_path);
  const auto wanted = parse_partitions(partitions);
  for (std::size_t i = 0; i < filenames.size(); ++i) {
    const auto it = split.find(filenames[i]);
    if (it == split.end()) {
      throw ValidationError("'" + filenames[i] + "' is not listed in " + split_path);
    }
    if (wanted.count(it->second)) rows.push_back(i);
  }
  return rows;
}

FeatureMatrix extract_all(const ModelParams& model, const fs::path& dir,
                          const std::vector<std::string>& filenames) {
  FeatureMatrix features(filenames.size(), model.feature_dim());
  parallel_for(filenames.size(), [&](std::size_t i) {
    const auto f = extract_features(model, load_image(dir / filenames[i]));
    std::copy(f.begin(), f.end(), features.row(i).begin());
  });
  return features;
}

void check_compatible(const ModelParams& model, const MlknnModel& knn) {
  if (knn.dim() != model.feature_dim()) {
    throw ValidationError("ML-KNN model expects " + std::to_string(knn.dim()) +
                          " features but the CNN produces " + std::to_string(model.feature_dim()));
  }
  if (knn.num_labels() != kNumLabels) {
    throw ValidationError("ML-KNN model has " + std::to_string(knn.num_labels()) +
                          " labels, expected " + std::to_string(kNumLabels));
  }
}

void check_labels(const LabelTable& table, std::ostream& err) {
  for (const auto& v : validate_consistency(table.labels)) {
    const std::string where = table.filenames[v.row] + ": " + v.message;
    if (v.warning) {
      err << "warning: " << where << '\n';
    } else {
      throw ValidationError("inconsistent labels for " + where);
    }
  }
}

// --- commands ----------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 0;
  std::uint64_t seed = 42;
  std::string out;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto table = generate_synthetic(a.n, a.seed, a.out);
  out << "wrote " << table.size() << " images and labels.csv to " << a.out << '\n';
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
};

void cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  cfg.split.seed = cfg.seed;
  const fs::path data(a.data);
  const auto table = load_labels_csv(data / "labels.csv");
  if (table.size() == 0) throw InvalidArgument("no labelled images in " + a.data);
  check_labels(table, err);

  const auto split = split_dataset(table.size(), cfg.split, table.study_ids);
  if (split.train.empty()) throw InvalidArgument("the training partition is empty");
  out << "split: " << split.train.size() << " train, " << split.val.size() << " val, "
      << split.test.size() << " test\n";

  auto load = [&](const std::vector<std::size_t>& rows) {
    const auto part = table.select(rows);
    return TrainingSet{load_images(data, part.filenames), part.labels};
  };
  const TrainingSet train_set = load(split.train);
  const TrainingSet val_set = load(split.val);

  Rng rng(cfg.seed);
  ModelParams model = build_extractor(rng, cfg.leaky_slope);
  const auto history =
      train(model, train_set, val_set.size() ? &val_set : nullptr, cfg,
            [&](std::size_t epoch, double tl, double vl) {
              out << "epoch " << epoch << " train_loss=" << format_double(tl)
                  << " val_loss=" << format_double(vl) << std::endl;
            });
  if (history.stopped_early) {
    out << "early stop; keeping epoch " << history.best_epoch << '\n';
  }

  save_model(a.out, model);
  std::string csv = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < history.epochs(); ++e) {
    csv += std::to_string(e + 1) + "," + format_double(history.train_loss[e]) + "," +
           format_double(history.val_loss[e]) + "\n";
  }
  write_text(with_suffix(a.out, ".history.csv"), csv);

  std::vector<std::string> partition(table.size());
  for (auto i : split.train) partition[i] = "train";
  for (auto i : split.val) partition[i] = "val";
  for (auto i : split.test) partition[i] = "test";
  std::string split_csv = "filename,partition\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    split_csv += table.filenames[i] + "," + partition[i] + "\n";
  }
  write_text(with_suffix(a.out, ".split.csv"), split_csv);
  out << "wrote " << a.out << '\n';
}

struct ExtractArgs {
  std::string model;
  std::string data;
  std::string out;
};

void cmd_extract(const ExtractArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const fs::path data(a.data);
  std::vector<std::string> files;
  if (fs::exists(data / "labels.csv")) {
    files = load_labels_csv(data / "labels.csv").filenames;
  } else {
    files = list_image_files(data);
  }
  if (files.empty()) throw InvalidArgument("no images found in " + a.data);
  FeatureTable table{files, extract_all(model, data, files)};
  write_features_csv(a.out, table);
  out << "wrote " << files.size() << " feature rows of length " << model.feature_dim() << " to "
      << a.out << '\n';
}

struct FitArgs {
  std::string features;
  std::string labels;
  std::size_t k = kDefaultK;
  double s = kDefaultSmoothing;
  std::string out;
  std::string split;
  std::string partition = "train";
  bool l2 = false;
};

void cmd_fit_knn(const FitArgs& a, std::ostream& out) {
  const auto features = read_features_csv(a.features);
  const auto labels = load_labels_csv(a.labels);
  std::map<std::string, std::size_t> label_row;
  for (std::size_t i = 0; i < labels.size(); ++i) label_row[labels.filenames[i]] = i;

  const auto rows = select_rows(features.filenames, a.split, a.partition);
  FeatureMatrix x(0, features.features.cols());
  LabelMatrix y(0, kNumLabels);
  for (auto r : rows) {
    const auto it = label_row.find(features.filenames[r]);
    if (it == label_row.end()) {
      throw ValidationError("no labels for '" + features.filenames[r] + "' in " + a.labels);
    }
    x.append_row(features.features.row(r));
    y.append_row(labels.labels.row(it->second));
  }
  const auto model = fit_mlknn(std::move(x), std::move(y), a.k, a.s, a.l2);
  save_knn(a.out, model);
  out << "fitted ML-KNN on " << model.features.rows() << " samples (k=" << model.k
      << ", s=" << format_double(model.s) << "); wrote " << a.out << '\n';
}

struct PredictArgs {
  std::string model;
  std::string knn;
  std::string image;
};

void cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto knn = load_knn(a.knn);
  check_compatible(model, knn);
  const auto features = extract_features(model, load_image(a.image));
  const auto p = predict_mlknn(knn, features);
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    char conf[32];
    std::snprintf(conf, sizeof conf, "%.6f", p.confidences[l]);
    out << kLabelNames[l] << ' ' << int{p.labels[l]} << ' ' << conf << '\n';
  }
}

struct EvalArgs {
  std::string model;
  std::string knn;
  std::string data;
  std::string labels;
  std::string report_dir;
  std::string split;
  std::string partition = "test";
};

void cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto knn = load_knn(a.knn);
  check_compatible(model, knn);
  const fs::path data(a.data);
  const auto all = load_labels_csv(a.labels.empty() ? data / "labels.csv" : fs::path(a.labels));
  const auto table = all.select(select_rows(all.filenames, a.split, a.partition));
  if (table.size() == 0) throw InvalidArgument("no samples selected for evaluation");

  const auto features = extract_all(model, data, table.filenames);
  const auto [pred, conf] = predict_mlknn(knn, features);
  const auto names = label_names();
  const auto report = full_report(table.labels, pred, conf, names);
  write_report_files(report, a.report_dir);
  out << "evaluated " << report.n_samples << " samples\n"
      << "subset_accuracy=" << format_double(report.subset_accuracy) << '\n'
      << "micro.f1=" << format_double(report.micro.f1) << '\n'
      << "hamming_score=" << format_double(report.hamming_score) << '\n'
      << "hamming_loss=" << format_double(report.hamming_loss) << '\n'
      << "wrote report to " << a.report_dir << '\n';
}

void cmd_summary(const std::string& model_path, std::ostream& out) {
  ModelParams model;
  if (model_path.empty()) {
    Rng rng(0);
    model = build_extractor(rng);
  } else {
    model = load_model(model_path);
  }
  char line[128];
  std::snprintf(line, sizeof line, "%-18s %-18s %10s\n", "layer", "activation shape", "params");
  out << line;
  for (const auto& row : summarize(model)) {
    std::snprintf(line, sizeof line, "%-18s %-18s %10zu\n", row.name.c_str(),
                  shape_to_string(row.activation_shape).c_str(), row.parameters);
    out << line;
  }
  out << "conv stack params: " << count_params(model) << '\n'
      << "head params: " << head_param_count(model) << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skull fracture CNN + ML-KNN pipeline", "skullnet"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  c_synth->add_option("--n", synth.n, "Number of images")->required()->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the CNN with a sigmoid head");
  c_train->add_option("--data", tr.data, "Dataset directory with labels.csv")->required();
  c_train->add_option("--config", tr.config, "key=value training configuration");
  c_train->add_option("--out", tr.out, "Output model file (.skn)")->required();

  ExtractArgs ex;
  auto* c_extract = app.add_subcommand("extract", "Write flatten-layer features to CSV");
  c_extract->add_option("--model", ex.model, "Model file")->required();
  c_extract->add_option("--data", ex.data, "Image directory")->required();
  c_extract->add_option("--out", ex.out, "Output features CSV")->required();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-knn", "Fit ML-KNN on extracted features");
  c_fit->add_option("--features", fit.features, "Features CSV")->required();
  c_fit->add_option("--labels", fit.labels, "labels.csv")->required();
  c_fit->add_option("--k", fit.k, "Neighbours")->capture_default_str()->check(CLI::PositiveNumber);
  c_fit->add_option("--s", fit.s, "Laplace smoothing")->capture_default_str()->check(
      CLI::PositiveNumber);
  c_fit->add_option("--out", fit.out, "Output ML-KNN file (.skk)")->required();
  c_fit->add_option("--split", fit.split, "Split CSV written by train");
  c_fit->add_option("--partition", fit.partition, "Partitions to fit on, comma separated")
      ->capture_default_str();
  c_fit->add_flag("--l2-normalize", fit.l2, "Scale feature vectors to unit length");

  PredictArgs pr;
  auto* c_predict = app.add_subcommand("predict", "Predict labels for one image");
  c_predict->add_option("--model", pr.model, "Model file")->required();
  c_predict->add_option("--knn", pr.knn, "ML-KNN file")->required();
  c_predict->add_option("--image", pr.image, "Image file")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Evaluate the pipeline on a labelled dataset");
  c_eval->add_option("--model", ev.model, "Model file")->required();
  c_eval->add_option("--knn", ev.knn, "ML-KNN file")->required();
  c_eval->add_option("--data", ev.data, "Image directory")->required();
  c_eval->add_option("--labels", ev.labels, "labels.csv (default: <data>/labels.csv)");
  c_eval->add_option("--report-dir", ev.report_dir, "Output directory")->required();
  c_eval->add_option("--split", ev.split, "Split CSV written by train");
  c_eval->add_option("--partition", ev.partition, "Partitions to evaluate, comma separated")
      ->capture_default_str();

  std::string summary_model;
  auto* c_summary = app.add_subcommand("summary", "Print the layer table");
  c_summary->add_option("--model", summary_model, "Model file (default: a fresh extractor)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_synth->parsed()) {
      cmd_synth(synth, out);
    } else if (c_train->parsed()) {
      cmd_train(tr, out, err);
    } else if (c_extract->parsed()) {
      cmd_extract(ex, out);
    } else if (c_fit->parsed()) {
      cmd_fit_knn(fit, out);
    } else if (c_predict->parsed()) {
      cmd_predict(pr, out);
    } else if (c_eval->parsed()) {
      cmd_evaluate(ev, out);
    } else if (c_summary->parsed()) {
      cmd_summary(summary_model, out);
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace skullnet
