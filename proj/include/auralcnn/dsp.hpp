#pragma once

// Time-frequency analysis and synthesis. Frames start at sample 0 (no
// centering or padding) and use a periodic Hann window.

#include <cstddef>
#include <vector>

#include "auralcnn/grid.hpp"

namespace auralcnn {

inline constexpr int kDefaultSampleRate = 11025;
inline constexpr int kDefaultFftSize = 512;
inline constexpr int kDefaultHop = 256;

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }

  /// Throws InvalidArgument on a non-positive rate or non-finite samples.
  void validate() const;
};

struct StftParams {
  int n_fft = kDefaultFftSize;
  int hop = kDefaultHop;
  int sample_rate = kDefaultSampleRate;

  int n_bins() const { return n_fft / 2 + 1; }
  double bin_hz() const { return static_cast<double>(sample_rate) / n_fft; }
  void validate() const;

  friend bool operator==(const StftParams&, const StftParams&) = default;
};

/// Magnitude and phase over [bin][frame].
struct ComplexSpectrogram {
  Grid magnitude;
  Grid phase;
  StftParams params;

  std::size_t n_bins() const { return magnitude.rows; }
  std::size_t n_frames() const { return magnitude.cols; }

  /// Checks bin count against n_fft, matching grid shapes and finiteness.
  void validate() const;
};

/// Periodic Hann window: w[k] = 0.5 (1 - cos(2 pi k / n)). n must be even and >= 2.
std::vector<double> hann_window(int n);

/// floor((length - n_fft) / hop) + 1, or 0 when the signal is shorter than one frame.
std::size_t stft_frame_count(std::size_t length, int n_fft, int hop);

/// (n_frames - 1) * hop + n_fft.
std::size_t istft_length(std::size_t n_frames, int n_fft, int hop);

ComplexSpectrogram stft(const AudioBuffer& signal, int n_fft = kDefaultFftSize,
                        int hop = kDefaultHop);

/// Weighted overlap-add of the windowed inverse DFT of magnitude * exp(i phase),
/// divided pointwise by the overlapped squared window. Near the ends, where
/// fewer frames overlap, the divisor is floored at the interior minimum of that
/// sum, so edges fade instead of amplifying inconsistent spectrogram content.
AudioBuffer istft(const ComplexSpectrogram& spec);

/// Sum of squares.
double signal_energy(const std::vector<double>& x);

}  // namespace auralcnn
