#include "auralcnn/auralize.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "auralcnn/errors.hpp"
#include "auralcnn/nn/serialize.hpp"
#include "auralcnn/parallel.hpp"
#include "auralcnn/wav.hpp"

namespace auralcnn {

AudioBuffer auralise(const Grid& map, const Grid& phase, const StftParams& params,
                     const AuraliseOptions& opts) {
  if (!map.same_shape(phase))
    throw InvalidArgument("auralise: map is " + std::to_string(map.rows) + "x" +
                          std::to_string(map.cols) + " but phase is " + std::to_string(phase.rows) +
                          "x" + std::to_string(phase.cols));
  ComplexSpectrogram spec{map, phase, params};
  if (opts.rectify)
    for (double& v : spec.magnitude.data) v = std::max(v, 0.0);
  AudioBuffer audio = istft(spec);
  if (opts.normalize) normalize_peak(audio);
  return audio;
}

double normalize_peak(AudioBuffer& audio, double peak) {
  double m = 0.0;
  for (double s : audio.samples) m = std::max(m, std::abs(s));
  if (m <= 1.0) return 1.0;
  const double gain = peak / m;
  for (double& s : audio.samples) s *= gain;
  return gain;
}

std::string output_stem(const DeconvRequest& req) {
  std::string s = "layer" + std::to_string(req.layer) + "_feat" + std::to_string(req.feature);
  if (req.top_k) s += "_top" + std::to_string(*req.top_k);
  return s;
}

PipelineOutput auralise_pipeline(const std::filesystem::path& model_path,
                                 const std::filesystem::path& wav_path,
                                 const std::vector<DeconvRequest>& requests,
                                 const std::filesystem::path& out_dir, const PipelineOptions& opts) {
  PipelineOutput out;
  if (requests.empty()) return out;

  const CnnModel model = load_model(model_path);
  AudioBuffer signal = read_wav(wav_path);
  if (signal.sample_rate != opts.stft.sample_rate)
    throw InvalidArgument(wav_path.string() + ": sample rate " + std::to_string(signal.sample_rate) +
                          " Hz, expected " + std::to_string(opts.stft.sample_rate) + " Hz");
  if (model.input_shape.rows != static_cast<std::size_t>(opts.stft.n_bins()))
    throw InvalidArgument(model_path.string() + ": model expects " +
                          std::to_string(model.input_shape.rows) + " frequency bins, n_fft " +
                          std::to_string(opts.stft.n_fft) + " gives " +
                          std::to_string(opts.stft.n_bins()));
  signal.samples.resize(istft_length(model.input_shape.cols, opts.stft.n_fft, opts.stft.hop), 0.0);
  const double input_energy = signal_energy(signal.samples);

  const ComplexSpectrogram spec = stft(signal, opts.stft.n_fft, opts.stft.hop);
  double peak = 0.0;
  for (double v : spec.magnitude.data) peak = std::max(peak, v);
  const ForwardTrace trace = forward(model, normalize_magnitude(spec.magnitude));

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<std::optional<AuralisationResult>> slots(requests.size());
  std::vector<std::string> failures(requests.size());
  parallel_for(requests.size(), opts.jobs, [&](std::size_t i) {
    const auto& req = requests[i];
    try {
      const DeconvolvedMap map = deconv_feature(model, trace, req, opts.deconv);
      Grid scaled = map.values;
      for (double& v : scaled.data) v *= peak;
      AuraliseOptions ao = opts.auralise;
      ao.normalize = false;
      AuralisationResult r;
      r.source = req;
      r.audio = auralise(scaled, spec.phase, spec.params, ao);
      r.energy_ratio = input_energy > 0.0 ? signal_energy(r.audio.samples) / input_energy : 0.0;
      if (opts.auralise.normalize) normalize_peak(r.audio);
      const std::string stem = output_stem(req);
      r.wav_path = out_dir / (stem + ".wav");
      r.map_path = out_dir / (stem + ".dmap");
      write_wav(r.wav_path, r.audio);
      write_map_binary(r.map_path, map.values);
      slots[i] = std::move(r);
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (slots[i]) out.results.push_back(std::move(*slots[i]));
    else out.errors.push_back({requests[i], failures[i]});
  }
  return out;
}

}  // namespace auralcnn
