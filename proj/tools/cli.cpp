#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>

#include "auralcnn/analysis.hpp"
#include "auralcnn/auralize.hpp"
#include "auralcnn/deconv.hpp"
#include "auralcnn/errors.hpp"
#include "auralcnn/nn/serialize.hpp"
#include "auralcnn/nn/train.hpp"
#include "auralcnn/synth.hpp"
#include "auralcnn/wav.hpp"
#include "run_config.hpp"

namespace auralcnn::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Bound {
  CLI::Option* option = nullptr;
  std::string key;
  std::string value;
};

// Everything a subcommand needs besides the resolved configuration.
struct Request {
  std::string config_path;
  std::string data_dir, train_dir, val_dir, corpus_dir, wav;
  std::vector<std::string> features, attributes;
  bool csv = false;
};

fs::path require_out(const RunConfig& cfg) {
  if (cfg.output_dir.empty()) throw InvalidArgument("an output directory is required (--out or 'out' in the config file)");
  return cfg.output_dir;
}

fs::path require_model(const RunConfig& cfg) {
  if (cfg.model_path.empty()) throw InvalidArgument("a model is required (--model or 'model' in the config file)");
  return cfg.model_path;
}

void write_sidecar(const RunConfig& cfg, const std::string& command) {
  const fs::path dir = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / (command + ".config");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "# resolved configuration of `" << command << "`\n" << cfg.to_text();
  if (!f) throw IoError("write failed for " + path.string());
}

GenreDatasetSpec genre_spec(const RunConfig& cfg, std::size_t clips, std::uint64_t seed) {
  return {clips, cfg.clip_seconds, cfg.sample_rate, seed};
}

std::vector<Example> examples_from_dir(const fs::path& dir, const RunConfig& cfg) {
  const auto clips = read_genre_dataset(dir);
  std::vector<Example> out(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].audio.sample_rate != cfg.sample_rate)
      throw InvalidArgument(dir.string() + ": clip " + std::to_string(i) + " is at " +
                            std::to_string(clips[i].audio.sample_rate) + " Hz, expected " +
                            std::to_string(cfg.sample_rate));
    out[i] = {spectrogram_input(clips[i].audio, cfg.stft()), clips[i].label};
  }
  return out;
}

std::vector<Example> validation_examples(const Request& req, const RunConfig& cfg, const std::string& dir) {
  if (!dir.empty()) return examples_from_dir(dir, cfg);
  if (cfg.val_clips_per_class == 0) return {};
  (void)req;
  return generate_genre_dataset(genre_spec(cfg, cfg.val_clips_per_class, validation_seed(cfg.seed)), cfg.jobs);
}

void print_confusion(std::ostream& out, const Evaluation& ev, const std::vector<std::string>& names) {
  out << "confusion (rows: true class, columns: predicted)\n";
  std::size_t width = 10;
  for (const auto& n : names) width = std::max(width, n.size() + 2);
  out << std::string(width, ' ');
  for (const auto& n : names) out << std::string(width - n.size(), ' ') << n;
  out << '\n';
  for (std::size_t t = 0; t < ev.confusion.size(); ++t) {
    const std::string& n = t < names.size() ? names[t] : std::to_string(t);
    out << n << std::string(width - n.size(), ' ');
    for (auto c : ev.confusion[t]) {
      const auto s = std::to_string(c);
      out << std::string(width - s.size(), ' ') << s;
    }
    out << '\n';
  }
}

int cmd_synth_dataset(const RunConfig& cfg, std::ostream& out) {
  const auto dir = require_out(cfg);
  write_sidecar(cfg, "synth-dataset");
  const auto train_clips = generate_genre_audio(genre_spec(cfg, cfg.train_clips_per_class, cfg.seed));
  write_genre_dataset(train_clips, dir / "train");
  out << "wrote " << train_clips.size() << " training clips to " << (dir / "train").string() << '\n';
  if (cfg.val_clips_per_class > 0) {
    const auto val = generate_genre_audio(genre_spec(cfg, cfg.val_clips_per_class, validation_seed(cfg.seed)));
    write_genre_dataset(val, dir / "validation");
    out << "wrote " << val.size() << " validation clips to " << (dir / "validation").string() << '\n';
  }
  return 0;
}

int cmd_train(const Request& req, const RunConfig& cfg, std::ostream& out) {
  const auto dir = require_out(cfg);
  write_sidecar(cfg, "train");
  const auto train_set =
      req.train_dir.empty()
          ? generate_genre_dataset(genre_spec(cfg, cfg.train_clips_per_class, cfg.seed), cfg.jobs)
          : examples_from_dir(req.train_dir, cfg);
  const auto val_set = validation_examples(req, cfg, req.val_dir);
  if (train_set.empty()) throw InvalidArgument("the training set is empty");
  out << "training on " << train_set.size() << " clips, validating on " << val_set.size() << '\n';

  const auto model = make_model(cfg.model_shape(train_set.front().input.shape()), cfg.seed, genre_class_names());
  TrainHyper hyper = cfg.hyper();
  hyper.on_epoch = [&](const EpochMetrics& m) {
    out << "epoch " << m.epoch << ": train loss " << fixed(m.train_loss, 4) << ", train accuracy "
        << fixed(m.train_accuracy, 3) << ", validation loss " << fixed(m.val_loss, 4)
        << ", validation accuracy " << fixed(m.val_accuracy, 3) << std::endl;
  };
  const auto result = train(model, train_set, val_set, hyper);

  save_model(result.model, dir / "model.cnn");
  const auto metrics_path = dir / "metrics.csv";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + metrics_path.string() + " for writing");
  metrics << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& m : result.history)
    metrics << m.epoch << ',' << fixed(m.train_loss, 6) << ',' << fixed(m.train_accuracy, 6) << ','
            << fixed(m.val_loss, 6) << ',' << fixed(m.val_accuracy, 6) << '\n';
  metrics.flush();
  if (!metrics) throw IoError("write failed for " + metrics_path.string());
  out << "saved " << (dir / "model.cnn").string() << '\n';
  return 0;
}

int cmd_eval(const Request& req, const RunConfig& cfg, std::ostream& out) {
  const auto model = load_model(require_model(cfg));
  if (!cfg.output_dir.empty()) write_sidecar(cfg, "eval");
  const auto data = validation_examples(req, cfg, req.data_dir);
  if (data.empty()) throw InvalidArgument("nothing to evaluate");
  const auto ev = evaluate(model, data, cfg.jobs);
  out << "examples: " << data.size() << "\nloss: " << fixed(ev.loss, 4) << "\naccuracy: " << fixed(ev.accuracy, 4)
      << '\n';
  auto names = model.class_names;
  if (names.size() != model.num_classes()) {
    names.clear();
    for (std::size_t i = 0; i < model.num_classes(); ++i) names.push_back(std::to_string(i));
  }
  print_confusion(out, ev, names);
  if (!cfg.output_dir.empty()) {
    const auto path = fs::path(cfg.output_dir) / "evaluation.csv";
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "true_class";
    for (const auto& n : names) f << ",predicted_" << n;
    f << '\n';
    for (std::size_t t = 0; t < ev.confusion.size(); ++t) {
      f << names[t];
      for (auto c : ev.confusion[t]) f << ',' << c;
      f << '\n';
    }
    if (!f) throw IoError("write failed for " + path.string());
  }
  return 0;
}

int cmd_model_signals(const RunConfig& cfg, std::ostream& out) {
  const auto dir = require_out(cfg);
  write_sidecar(cfg, "model-signals");
  const auto corpus = build_model_corpus(cfg.jobs);
  write_model_corpus(corpus, dir);
  out << "wrote " << corpus.size() << " model signals and manifest.csv to " << dir.string() << '\n';
  return 0;
}

std::vector<DeconvRequest> parse_features(const std::vector<std::string>& texts, std::ostream& err, bool& failed) {
  std::vector<DeconvRequest> reqs;
  for (const auto& t : texts) {
    try {
      reqs.push_back(parse_feature_address(t));
    } catch (const InvalidArgument& e) {
      err << "error: " << e.what() << '\n';
      failed = true;
    }
  }
  return reqs;
}

int cmd_deconv(const Request& req, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto dir = require_out(cfg);
  write_sidecar(cfg, "deconv");
  bool failed = false;
  const auto reqs = parse_features(req.features, err, failed);
  const auto model = load_model(require_model(cfg));
  AudioBuffer signal = read_wav(req.wav);
  if (signal.sample_rate != cfg.sample_rate)
    throw InvalidArgument(req.wav + ": sample rate " + std::to_string(signal.sample_rate) + " Hz, expected " +
                          std::to_string(cfg.sample_rate) + " Hz");
  signal.samples.resize(istft_length(model.input_shape.cols, cfg.n_fft, cfg.hop), 0.0);
  const auto spec = stft(signal, cfg.n_fft, cfg.hop);
  const auto trace = forward(model, normalize_magnitude(spec.magnitude));
  for (const auto& r : reqs) {
    try {
      const auto map = deconv_feature(model, trace, r);
      const auto stem = output_stem(r);
      write_map_binary(dir / (stem + ".dmap"), map.values);
      if (req.csv) write_map_csv(dir / (stem + ".csv"), map.values);
      out << "feature " << r.label() << " -> " << (dir / (stem + ".dmap")).string() << '\n';
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      err << "error: feature " << r.label() << ": " << e.what() << '\n';
      failed = true;
    }
  }
  return failed ? 1 : 0;
}

int cmd_auralize(const Request& req, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto dir = require_out(cfg);
  write_sidecar(cfg, "auralize");
  bool failed = false;
  const auto reqs = parse_features(req.features, err, failed);
  PipelineOptions opts;
  opts.stft = cfg.stft();
  opts.auralise.rectify = cfg.rectify;
  opts.auralise.normalize = cfg.normalize;
  opts.jobs = cfg.jobs;
  const auto result = auralise_pipeline(require_model(cfg), req.wav, reqs, dir, opts);
  for (const auto& r : result.results)
    out << "feature " << r.source.label() << " -> " << r.wav_path.string() << " (energy ratio "
        << fixed(r.energy_ratio, 6) << ")\n";
  for (const auto& e : result.errors) {
    err << "error: feature " << e.request.label() << ": " << e.message << '\n';
    failed = true;
  }
  return failed ? 1 : 0;
}

int cmd_correlate(const Request& req, const RunConfig& cfg, std::ostream& out) {
  const auto dir = require_out(cfg);
  write_sidecar(cfg, "correlate");
  std::vector<Attribute> attributes;
  for (const auto& a : req.attributes) attributes.push_back(parse_attribute(a));
  if (attributes.empty()) attributes.assign(std::begin(kAttributes), std::end(kAttributes));
  const auto model = load_model(require_model(cfg));
  const auto corpus = req.corpus_dir.empty() ? build_model_corpus(cfg.jobs) : read_model_corpus(req.corpus_dir);
  StudyOptions opts;
  opts.stft = cfg.stft();
  opts.jobs = cfg.jobs;
  const auto start = std::chrono::steady_clock::now();
  const auto report = correlation_study(model, corpus, attributes, opts);
  emit_report(report, dir);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "layer  attribute     mean      std  n_pairs  n_skipped\n";
  for (const auto& r : report.rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%5zu  %-10s %7.4f  %7.4f  %7zu  %9zu\n", r.layer,
                  std::string(attribute_name(r.attribute)).c_str(), r.mean, r.std, r.n_pairs, r.n_skipped);
    out << line;
  }
  out << "wrote correlation reports to " << dir.string() << " in " << fixed(seconds, 1) << " s\n";
  return 0;
}

int cmd_rf_table(const RunConfig& cfg, std::ostream& out) {
  const auto table = rf_table(cfg.stft());
  out << "layer  pixels  width_ms  height_hz  width_ms_exact  exact_rf_pixels\n";
  for (const auto& e : table) {
    char line[128];
    std::snprintf(line, sizeof line, "%5zu  %6zu  %8ld  %9ld  %14.2f  %15zu\n", e.layer, e.pixels_per_axis,
                  std::lround(e.width_ms), std::lround(e.height_hz), e.width_ms_exact,
                  exact_receptive_field(e.layer));
    out << line;
  }
  out << "note: the published table lists " << std::lround(kPublishedLayer5HeightHz)
      << " Hz for layer 5; the rule that reproduces the other rows gives " << std::lround(table.back().height_hz)
      << " Hz\n";
  if (!cfg.output_dir.empty()) {
    write_sidecar(cfg, "rf-table");
    write_rf_table(table, fs::path(cfg.output_dir) / "rf_table.csv");
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectrogram CNN auralisation: synthetic data, training, deconvolution and analysis",
               args.empty() ? "auralcnn" : fs::path(args[0]).filename().string()};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();

  Request req;
  std::deque<Bound> bound;
  const auto bind = [&](CLI::App* where, const std::string& flag, const std::string& key, const std::string& help) {
    bound.push_back({nullptr, key, {}});
    bound.back().option = where->add_option(flag, bound.back().value, help);
    return bound.back().option;
  };

  app.add_option("--config,-c", req.config_path, "key = value file; command-line flags override it")
      ->check(CLI::ExistingFile);
  bind(&app, "--jobs,-j", "jobs", "worker threads (default 1)");
  bind(&app, "--seed", "seed", "random seed (default 0)");
  bind(&app, "--out,-o", "out", "output directory");
  bind(&app, "--model,-m", "model", "model manifest (.cnn)");
  bind(&app, "--sample-rate", "sample_rate", "sample rate in Hz (default 11025)");
  bind(&app, "--n-fft", "n_fft", "FFT size (default 512)");
  bind(&app, "--hop", "hop", "hop size (default 256)");

  auto* synth = app.add_subcommand("synth-dataset", "write the synthetic three-class genre dataset");
  bind(synth, "--clips-per-class", "train_clips_per_class", "training clips per class (default 50)");
  bind(synth, "--val-clips-per-class", "val_clips_per_class", "validation clips per class (default 20)");
  bind(synth, "--clip-seconds", "clip_seconds", "clip length (default 4)");

  auto* train_cmd = app.add_subcommand("train", "train the genre CNN and save model.cnn and metrics.csv");
  train_cmd->add_option("--train-data", req.train_dir, "dataset directory (default: synthesize)");
  train_cmd->add_option("--val-data", req.val_dir, "validation directory (default: synthesize)");
  bind(train_cmd, "--clips-per-class", "train_clips_per_class", "synthesized training clips per class");
  bind(train_cmd, "--val-clips-per-class", "val_clips_per_class", "synthesized validation clips per class");
  bind(train_cmd, "--clip-seconds", "clip_seconds", "synthesized clip length");
  bind(train_cmd, "--epochs", "epochs", "maximum epochs (default 30)");
  bind(train_cmd, "--learning-rate", "learning_rate", "SGD step (default 0.01)");
  bind(train_cmd, "--momentum", "momentum", "SGD momentum (default 0.9)");
  bind(train_cmd, "--batch-size", "batch_size", "mini-batch size (default 16)");
  bind(train_cmd, "--stop-at", "stop_at_accuracy", "stop once validation accuracy reaches this");
  bind(train_cmd, "--channels", "conv_channels", "conv widths, e.g. 64,64,64,64,64");
  bind(train_cmd, "--hidden", "hidden", "hidden dense width (default 256)");
  bind(train_cmd, "--dropout", "dropout", "dropout rate (default 0.5)");

  auto* eval_cmd = app.add_subcommand("eval", "print accuracy and the confusion matrix");
  eval_cmd->add_option("--data", req.data_dir, "dataset directory (default: the synthesized validation set)");
  bind(eval_cmd, "--val-clips-per-class", "val_clips_per_class", "synthesized clips per class");
  bind(eval_cmd, "--clip-seconds", "clip_seconds", "synthesized clip length");

  app.add_subcommand("model-signals", "write the 224 model signals and manifest.csv");

  auto* deconv_cmd = app.add_subcommand("deconv", "write deconvolved maps (.dmap) for features of a WAV");
  deconv_cmd->add_option("--wav,-w", req.wav, "input WAV")->required();
  deconv_cmd->add_option("--feature,-f", req.features, "layer-feature[:k], e.g. 3-38 (repeatable)")->required();
  deconv_cmd->add_flag("--csv", req.csv, "also write each map as CSV");

  auto* aur_cmd = app.add_subcommand("auralize", "auralise features of a WAV into layer{l}_feat{f}.wav");
  aur_cmd->add_option("--wav,-w", req.wav, "input WAV")->required();
  aur_cmd->add_option("--feature,-f", req.features, "layer-feature[:k], e.g. 3-38 (repeatable)")->required();
  auto* rectify = aur_cmd->add_flag("--rectify", "clamp negative map values to zero");
  auto* no_norm = aur_cmd->add_flag("--no-normalize", "skip the 0.9 peak normalization");

  auto* corr_cmd = app.add_subcommand("correlate", "run the key, chord and instrument correlation study");
  corr_cmd->add_option("--corpus", req.corpus_dir, "model-signal directory (default: synthesize in memory)");
  corr_cmd->add_option("--attribute,-a", req.attributes, "key, chord or instrument (repeatable; default all)");

  app.add_subcommand("rf-table", "print the effective receptive-field table");

  std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg;
    if (!req.config_path.empty()) load_config_file(req.config_path, cfg);
    for (const auto& b : bound)
      if (b.option->count() > 0) cfg.set(b.key, b.value);
    if (rectify->count() > 0) cfg.rectify = true;
    if (no_norm->count() > 0) cfg.normalize = false;
    cfg.validate();

    if (command == "synth-dataset") return cmd_synth_dataset(cfg, out);
    if (command == "train") return cmd_train(req, cfg, out);
    if (command == "eval") return cmd_eval(req, cfg, out);
    if (command == "model-signals") return cmd_model_signals(cfg, out);
    if (command == "deconv") return cmd_deconv(req, cfg, out, err);
    if (command == "auralize") return cmd_auralize(req, cfg, out, err);
    if (command == "correlate") return cmd_correlate(req, cfg, out);
    return cmd_rf_table(cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace auralcnn::cli
