#pragma once

// Resolved settings of one CLI run, readable from and writable to a
// `key = value` text file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "auralcnn/dsp.hpp"
#include "auralcnn/nn/model.hpp"
#include "auralcnn/nn/train.hpp"

namespace auralcnn::cli {

struct RunConfig {
  int sample_rate = kDefaultSampleRate;
  int n_fft = kDefaultFftSize;
  int hop = kDefaultHop;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string model_path;
  std::string output_dir;

  // synthetic genre data
  std::size_t train_clips_per_class = 50;
  std::size_t val_clips_per_class = 20;
  double clip_seconds = 4.0;

  // network and training
  std::vector<std::size_t> conv_channels{64, 64, 64, 64, 64};
  std::size_t hidden = 256;
  double dropout = 0.5;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  int epochs = 30;
  double stop_at_accuracy = 0.0;

  // auralisation
  bool rectify = false;
  bool normalize = true;

  StftParams stft() const { return {n_fft, hop, sample_rate}; }
  TrainHyper hyper() const;
  ModelShape model_shape(Shape3 input) const;

  /// Sets one key from its text form. Throws InvalidArgument for an unknown
  /// key or a malformed value.
  void set(std::string_view key, std::string_view value);
  /// Checks ranges (positive sizes, hop <= n_fft, ...). Throws InvalidArgument.
  void validate() const;
  /// Every key in a fixed order, one `key = value` per line.
  std::string to_text() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Applies each `key = value` line of `path` ('#' starts a comment). Errors
/// name the file and line.
void load_config_file(const std::filesystem::path& path, RunConfig& cfg);

/// Seed of the synthetic validation set belonging to training seed `seed`.
std::uint64_t validation_seed(std::uint64_t seed);

}  // namespace auralcnn::cli
