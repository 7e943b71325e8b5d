#include "auralcnn/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "auralcnn/errors.hpp"
#include "fft.hpp"

namespace auralcnn {

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

void AudioBuffer::validate() const {
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
  if (!all_finite(samples)) throw InvalidArgument("audio contains non-finite samples");
}

void StftParams::validate() const {
  if (n_fft < 2 || n_fft % 2 != 0)
    throw InvalidArgument("n_fft must be even and >= 2, got " + std::to_string(n_fft));
  if (hop < 1 || hop > n_fft)
    throw InvalidArgument("hop must lie in [1, n_fft], got " + std::to_string(hop));
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
}

void ComplexSpectrogram::validate() const {
  params.validate();
  if (!magnitude.same_shape(phase))
    throw InvalidArgument("magnitude and phase grids differ in shape");
  if (magnitude.rows != static_cast<std::size_t>(params.n_bins()))
    throw InvalidArgument("spectrogram has " + std::to_string(magnitude.rows) +
                          " bins, expected " + std::to_string(params.n_bins()));
  if (magnitude.cols == 0) throw InvalidArgument("spectrogram has no frames");
  if (magnitude.data.size() != magnitude.rows * magnitude.cols ||
      phase.data.size() != phase.rows * phase.cols)
    throw InvalidArgument("spectrogram storage does not match its dimensions");
  if (!all_finite(magnitude.data) || !all_finite(phase.data))
    throw InvalidArgument("spectrogram contains non-finite values");
}

std::vector<double> hann_window(int n) {
  if (n < 2 || n % 2 != 0)
    throw InvalidArgument("Hann window length must be even and >= 2, got " + std::to_string(n));
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k)
    w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / n));
  // Exact values at the quarter points keep the 50% overlap sum at exactly 1.
  w[0] = 0.0;
  w[n / 2] = 1.0;
  if (n % 4 == 0) w[n / 4] = w[3 * n / 4] = 0.5;
  return w;
}

std::size_t stft_frame_count(std::size_t length, int n_fft, int hop) {
  if (length < static_cast<std::size_t>(n_fft)) return 0;
  return (length - n_fft) / hop + 1;
}

std::size_t istft_length(std::size_t n_frames, int n_fft, int hop) {
  if (n_frames == 0) return 0;
  return (n_frames - 1) * hop + n_fft;
}

ComplexSpectrogram stft(const AudioBuffer& signal, int n_fft, int hop) {
  StftParams params{n_fft, hop, signal.sample_rate};
  params.validate();
  signal.validate();
  if (signal.size() < static_cast<std::size_t>(n_fft))
    throw InvalidArgument("signal of " + std::to_string(signal.size()) +
                          " samples is shorter than one frame (" + std::to_string(n_fft) + ")");

  const auto window = hann_window(n_fft);
  const std::size_t frames = stft_frame_count(signal.size(), n_fft, hop);
  const int bins = params.n_bins();

  ComplexSpectrogram out{Grid(bins, frames), Grid(bins, frames), params};
  detail::RealFft fft(n_fft);
  std::vector<double> frame(n_fft);
  std::vector<std::complex<double>> spectrum(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = signal.samples.data() + t * hop;
    for (int i = 0; i < n_fft; ++i) frame[i] = src[i] * window[i];
    fft.forward(frame, spectrum);
    for (int k = 0; k < bins; ++k) {
      out.magnitude(k, t) = std::abs(spectrum[k]);
      out.phase(k, t) = std::arg(spectrum[k]);
    }
  }
  return out;
}

AudioBuffer istft(const ComplexSpectrogram& spec) {
  spec.validate();
  const int n_fft = spec.params.n_fft;
  const int hop = spec.params.hop;
  const int bins = spec.params.n_bins();
  const std::size_t frames = spec.n_frames();
  const auto window = hann_window(n_fft);

  AudioBuffer out;
  out.sample_rate = spec.params.sample_rate;
  out.samples.assign(istft_length(frames, n_fft, hop), 0.0);
  std::vector<double> norm(out.samples.size(), 0.0);

  detail::RealFft fft(n_fft);
  std::vector<std::complex<double>> spectrum(bins);
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int k = 0; k < bins; ++k)
      spectrum[k] = std::polar(1.0, spec.phase(k, t)) * spec.magnitude(k, t);
    fft.inverse(spectrum, frame);
    double* dst = out.samples.data() + t * hop;
    double* nrm = norm.data() + t * hop;
    for (int i = 0; i < n_fft; ++i) {
      dst[i] += frame[i] * window[i];
      nrm[i] += window[i] * window[i];
    }
  }
  // Steady-state minimum of the overlapped squared window. Edge samples covered
  // by fewer frames are divided by this floor rather than their own tiny sum.
  double floor = INFINITY;
  for (int k = 0; k < hop; ++k) {
    double sum = 0.0;
    for (int i = k; i < n_fft; i += hop) sum += window[i] * window[i];
    floor = std::min(floor, sum);
  }
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] /= std::max(norm[i], floor);
  return out;
}

double signal_energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace auralcnn
