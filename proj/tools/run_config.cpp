#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "auralcnn/errors.hpp"
#include "auralcnn/random.hpp"

namespace auralcnn::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw InvalidArgument("bad value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument("bad value '" + std::string(v) + "' for " + std::string(key) + " (true or false)");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(parse_number<std::size_t>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ec == std::errc{} ? end : buf);
}

}  // namespace

TrainHyper RunConfig::hyper() const {
  TrainHyper h;
  h.learning_rate = learning_rate;
  h.momentum = momentum;
  h.batch_size = batch_size;
  h.epochs = epochs;
  h.seed = seed;
  h.jobs = jobs;
  h.stop_at_val_accuracy = stop_at_accuracy;
  return h;
}

ModelShape RunConfig::model_shape(Shape3 input) const {
  ModelShape s;
  s.input = input;
  s.conv_channels = conv_channels;
  s.hidden = hidden;
  s.classes = 3;
  s.dropout_rate = dropout;
  return s;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "sample_rate") sample_rate = parse_number<int>(key, value);
  else if (key == "n_fft") n_fft = parse_number<int>(key, value);
  else if (key == "hop") hop = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "jobs") jobs = parse_number<unsigned>(key, value);
  else if (key == "model") model_path = value;
  else if (key == "out") output_dir = value;
  else if (key == "train_clips_per_class") train_clips_per_class = parse_number<std::size_t>(key, value);
  else if (key == "val_clips_per_class") val_clips_per_class = parse_number<std::size_t>(key, value);
  else if (key == "clip_seconds") clip_seconds = parse_number<double>(key, value);
  else if (key == "conv_channels") conv_channels = parse_list(key, value);
  else if (key == "hidden") hidden = parse_number<std::size_t>(key, value);
  else if (key == "dropout") dropout = parse_number<double>(key, value);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "momentum") momentum = parse_number<double>(key, value);
  else if (key == "batch_size") batch_size = parse_number<std::size_t>(key, value);
  else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "stop_at_accuracy") stop_at_accuracy = parse_number<double>(key, value);
  else if (key == "rectify") rectify = parse_bool(key, value);
  else if (key == "normalize") normalize = parse_bool(key, value);
  else throw InvalidArgument("unknown configuration key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  stft().validate();
  const auto need = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(what);
  };
  need(jobs >= 1, "jobs must be at least 1");
  need(train_clips_per_class >= 1, "train_clips_per_class must be at least 1");
  need(clip_seconds > 0, "clip_seconds must be positive");
  need(!conv_channels.empty(), "conv_channels must list at least one layer");
  for (auto c : conv_channels) need(c >= 1, "conv_channels entries must be positive");
  need(hidden >= 1, "hidden must be positive");
  need(dropout >= 0 && dropout < 1, "dropout must be in [0, 1)");
  need(learning_rate >= 0, "learning_rate must be non-negative");
  need(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
  need(batch_size >= 1, "batch_size must be at least 1");
  need(epochs >= 1, "epochs must be at least 1");
  need(stop_at_accuracy >= 0 && stop_at_accuracy <= 1, "stop_at_accuracy must be in [0, 1]");
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "sample_rate = " << sample_rate << '\n'
    << "n_fft = " << n_fft << '\n'
    << "hop = " << hop << '\n'
    << "seed = " << seed << '\n'
    << "jobs = " << jobs << '\n'
    << "model = " << model_path << '\n'
    << "out = " << output_dir << '\n'
    << "train_clips_per_class = " << train_clips_per_class << '\n'
    << "val_clips_per_class = " << val_clips_per_class << '\n'
    << "clip_seconds = " << fmt(clip_seconds) << '\n'
    << "conv_channels = ";
  for (std::size_t i = 0; i < conv_channels.size(); ++i) o << (i ? "," : "") << conv_channels[i];
  o << '\n'
    << "hidden = " << hidden << '\n'
    << "dropout = " << fmt(dropout) << '\n'
    << "learning_rate = " << fmt(learning_rate) << '\n'
    << "momentum = " << fmt(momentum) << '\n'
    << "batch_size = " << batch_size << '\n'
    << "epochs = " << epochs << '\n'
    << "stop_at_accuracy = " << fmt(stop_at_accuracy) << '\n'
    << "rectify = " << (rectify ? "true" : "false") << '\n'
    << "normalize = " << (normalize ? "true" : "false") << '\n';
  return o.str();
}

void load_config_file(const std::filesystem::path& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    try {
      if (eq == std::string_view::npos) throw InvalidArgument("expected key = value");
      cfg.set(trim(v.substr(0, eq)), v.substr(eq + 1));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::uint64_t validation_seed(std::uint64_t seed) { return derive_seed(seed, 0x76616C); }

}  // namespace auralcnn::cli
