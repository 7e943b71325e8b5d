#pragma once

// Auralisation: a deconvolved spectrogram map recombined with the analysis
// phase of the original signal and inverse-transformed to audio.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "auralcnn/deconv.hpp"
#include "auralcnn/dsp.hpp"
#include "auralcnn/grid.hpp"

namespace auralcnn {

inline constexpr double kAuralisePeak = 0.9;

struct AuraliseOptions {
  /// Clamp negative map values to zero instead of treating them as a phase flip.
  bool rectify = false;
  /// Scale to a 0.9 peak when the output would otherwise exceed 1.
  bool normalize = true;
};

/// istft(map * exp(i phase)). Throws InvalidArgument when map and phase differ in shape.
AudioBuffer auralise(const Grid& map, const Grid& phase, const StftParams& params,
                     const AuraliseOptions& opts = {});

/// Scales to `peak` if the largest magnitude exceeds 1; returns the gain applied.
double normalize_peak(AudioBuffer& audio, double peak = kAuralisePeak);

struct AuralisationResult {
  AudioBuffer audio;
  DeconvRequest source;
  double energy_ratio = 0;  // before peak normalization, relative to the input signal
  std::filesystem::path wav_path;
  std::filesystem::path map_path;
};

struct RequestError {
  DeconvRequest request;
  std::string message;
};

struct PipelineOptions {
  StftParams stft;
  AuraliseOptions auralise;
  DeconvOptions deconv;
  unsigned jobs = 1;
};

struct PipelineOutput {
  std::vector<AuralisationResult> results;  // in request order, failed requests omitted
  std::vector<RequestError> errors;
};

/// `layer{l}_feat{f}.wav`, with a `_top{k}` suffix for top-k requests.
std::string output_stem(const DeconvRequest& req);

/// Loads the model and the WAV, fits the signal to the model's frame count
/// (zero padding or cropping), analyses it, runs one inference pass, then
/// deconvolves and auralises each request. Writes `<stem>.wav` and `<stem>.dmap`
/// into `out_dir`; the map file holds deconv_feature's output as is. Before
/// auralisation the map is rescaled by the input's normalization peak so it
/// shares the original magnitude's units. File problems throw with the path in
/// the message; a bad request is reported in `errors` and the others proceed.
PipelineOutput auralise_pipeline(const std::filesystem::path& model_path,
                                 const std::filesystem::path& wav_path,
                                 const std::vector<DeconvRequest>& requests,
                                 const std::filesystem::path& out_dir,
                                 const PipelineOptions& opts = {});

}  // namespace auralcnn
