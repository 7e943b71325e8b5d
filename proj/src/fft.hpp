#pragma once

// Private FFTW wrapper. Plans are created with FFTW_ESTIMATE so the chosen
// algorithm, and therefore every output bit, is the same from run to run.

#include <complex>
#include <span>

#include <fftw3.h>

namespace auralcnn::detail {

class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }

  /// in: n reals -> out: n/2 + 1 bins (unnormalized).
  void forward(std::span<const double> in, std::span<std::complex<double>> out);

  /// in: n/2 + 1 bins -> out: n reals, scaled by 1/n.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  int n_;
  double* real_;
  fftw_complex* spec_;
  fftw_plan forward_plan_;
  fftw_plan inverse_plan_;
};

}  // namespace auralcnn::detail
