#include "auralcnn/nn/layers.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "auralcnn/errors.hpp"
#include "kernels.hpp"

namespace auralcnn {

namespace detail {

std::vector<double> pack_forward(const ConvLayer& layer) {
  const std::size_t ci = layer.in_channels, co = layer.out_channels;
  std::vector<double> packed(kKernelTaps * ci * co);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t t = 0; t < kKernelTaps; ++t)
        packed[(t * ci + i) * co + o] = layer.weights[(o * ci + i) * kKernelTaps + t];
  return packed;
}

std::vector<double> pack_transposed(const ConvLayer& layer) {
  const std::size_t ci = layer.in_channels, co = layer.out_channels;
  std::vector<double> packed(kKernelTaps * ci * co);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t t = 0; t < kKernelTaps; ++t)
        packed[(t * co + o) * ci + i] = layer.weights[(o * ci + i) * kKernelTaps + (8 - t)];
  return packed;
}

SparsePixels compact(const Tensor3& t) {
  SparsePixels sp{t.channels(), t.rows(), t.cols(), {}, {}, {}};
  const std::size_t pixels = t.rows() * t.cols();
  sp.offsets.resize(pixels + 1);
  sp.index.reserve(t.size() / 2);
  sp.value.reserve(t.size() / 2);
  const auto raw = t.raw();
  for (std::size_t p = 0; p < pixels; ++p) {
    sp.offsets[p] = static_cast<std::uint32_t>(sp.value.size());
    const double* v = raw.data() + p * t.channels();
    for (std::size_t c = 0; c < t.channels(); ++c) {
      if (v[c] != 0.0) {
        sp.index.push_back(static_cast<std::uint32_t>(c));
        sp.value.push_back(v[c]);
      }
    }
  }
  sp.offsets[pixels] = static_cast<std::uint32_t>(sp.value.size());
  return sp;
}

SparsePixels unpool_compact(const Tensor3& pooled, const SwitchRecord& switches, bool rectify) {
  const Shape3& ps = switches.output_shape;
  const Shape3& is = switches.input_shape;
  if (!(pooled.shape() == ps) || switches.codes.size() != ps.size() ||
      is.channels != ps.channels || is.rows / 2 != ps.rows || is.cols / 2 != ps.cols)
    throw CorruptionError("unpool: switch record does not match the pooled tensor");
  for (auto code : switches.codes)
    if (code > 3) throw CorruptionError("unpool: switch code outside its 2x2 window");

  const std::size_t ch = ps.channels;
  SparsePixels sp{ch, is.rows, is.cols, {}, {}, {}};
  sp.offsets.resize(is.rows * is.cols + 1);
  // Every pooled value lands on exactly one pixel, so ps.size() bounds the
  // entry count. Entries are written unconditionally and kept by advancing n.
  sp.index.resize(ps.size() + ch);
  sp.value.resize(ps.size() + ch);
  std::uint32_t* index = sp.index.data();
  double* value = sp.value.data();
  std::size_t n = 0;
  for (std::size_t y = 0; y < is.rows; ++y) {
    for (std::size_t x = 0; x < is.cols; ++x) {
      sp.offsets[y * is.cols + x] = static_cast<std::uint32_t>(n);
      const std::size_t py = y / 2, px = x / 2;
      if (py >= ps.rows || px >= ps.cols) continue;
      const auto want = static_cast<std::uint8_t>((y % 2) * 2 + x % 2);
      const double* v = pooled.pixel(py, px);
      const std::uint8_t* code = switches.codes.data() + (py * ps.cols + px) * ch;
      for (std::size_t c = 0; c < ch; ++c) {
        const double val = v[c];
        index[n] = static_cast<std::uint32_t>(c);
        value[n] = val;
        n += (code[c] == want) & (rectify ? val > 0.0 : val != 0.0);
      }
    }
  }
  sp.offsets[is.rows * is.cols] = static_cast<std::uint32_t>(n);
  sp.index.resize(n);
  sp.value.resize(n);
  return sp;
}

namespace {

using v8d = double __attribute__((vector_size(64)));
using v8d_unaligned = double __attribute__((vector_size(64), aligned(8), may_alias));

inline v8d load8(const double* p) { return *reinterpret_cast<const v8d_unaligned*>(p); }
inline void store8(double* p, v8d v) { *reinterpret_cast<v8d_unaligned*>(p) = v; }

struct Tap {
  std::uint32_t begin, end;
  const double* w;
};

// out[0 .. 8N) = init + sum over taps and list entries of value * w[index][0 .. 8N).
template <std::size_t N>
inline void pixel_block(double* out, const double* init, const Tap* taps, std::size_t ntaps,
                        const std::uint32_t* idx, const double* val, std::size_t cout,
                        std::size_t o0) {
  v8d acc[N];
#pragma GCC unroll 16
  for (std::size_t j = 0; j < N; ++j) {
    if (init) acc[j] = load8(init + 8 * j);
    else acc[j] = v8d{};
  }
  for (std::size_t t = 0; t < ntaps; ++t) {
    const double* w = taps[t].w;
    for (std::uint32_t k = taps[t].begin; k < taps[t].end; ++k) {
      const double v = val[k];
      const double* wr = w + idx[k] * cout + o0;
#pragma GCC unroll 16
      for (std::size_t j = 0; j < N; ++j) {
        acc[j] += v * load8(wr + 8 * j);
      }
    }
  }
#pragma GCC unroll 16
  for (std::size_t j = 0; j < N; ++j) store8(out + 8 * j, acc[j]);
}

// out(q) = bias + sum_t contrib[q + offset(t)][t] over in-bounds taps.
void combine_taps(const std::vector<double>& contrib, std::size_t rows_u, std::size_t cols_u,
                  double bias, Tensor3& out) {
  const auto rows = static_cast<std::ptrdiff_t>(rows_u);
  const auto cols = static_cast<std::ptrdiff_t>(cols_u);
  for (std::ptrdiff_t y = 0; y < rows; ++y) {
    for (std::ptrdiff_t x = 0; x < cols; ++x) {
      double acc = bias;
      for (std::size_t t = 0; t < kKernelTaps; ++t) {
        const std::ptrdiff_t iy = y + static_cast<std::ptrdiff_t>(t / 3) - 1;
        const std::ptrdiff_t ix = x + static_cast<std::ptrdiff_t>(t % 3) - 1;
        if (iy < 0 || ix < 0 || iy >= rows || ix >= cols) continue;
        acc += contrib[static_cast<std::size_t>(iy * cols + ix) * kKernelTaps + t];
      }
      *out.pixel(y, x) = acc;
    }
  }
}

// [tap][c][0] -> [c][tap]
std::vector<double> by_channel(std::span<const double> packed, std::size_t cin) {
  std::vector<double> w(cin * kKernelTaps);
  for (std::size_t t = 0; t < kKernelTaps; ++t)
    for (std::size_t c = 0; c < cin; ++c) w[c * kKernelTaps + t] = packed[t * cin + c];
  return w;
}

// One output channel: collapse each input pixel's list into its nine tap
// contributions, then sum the contributions landing on each output pixel.
void correlate_single_output(const SparsePixels& in, std::span<const double> packed, double bias,
                             Tensor3& out) {
  const auto w = by_channel(packed, in.channels);
  const std::size_t pixels = in.rows * in.cols;
  std::vector<double> contrib(pixels * kKernelTaps, 0.0);  // [pixel][tap]
  for (std::size_t p = 0; p < pixels; ++p) {
    double acc[kKernelTaps] = {};
    for (std::uint32_t k = in.offsets[p]; k < in.offsets[p + 1]; ++k) {
      const double v = in.value[k];
      const double* wc = w.data() + in.index[k] * kKernelTaps;
      for (std::size_t t = 0; t < kKernelTaps; ++t) acc[t] += v * wc[t];
    }
    std::copy(acc, acc + kKernelTaps, contrib.data() + p * kKernelTaps);
  }
  combine_taps(contrib, in.rows, in.cols, bias, out);
}

}  // namespace

void correlate3x3(const SparsePixels& in, std::span<const double> packed,
                  std::span<const double> bias, Tensor3& out) {
  const std::size_t cin = in.channels;
  const std::size_t cout = out.channels();
  if (cout == 1) {
    correlate_single_output(in, packed, bias.empty() ? 0.0 : bias[0], out);
    return;
  }
  const auto rows = static_cast<std::ptrdiff_t>(in.rows);
  const auto cols = static_cast<std::ptrdiff_t>(in.cols);
  const std::uint32_t* idx = in.index.data();
  const double* val = in.value.data();
  const double* b0 = bias.empty() ? nullptr : bias.data();
  for (std::ptrdiff_t y = 0; y < rows; ++y) {
    for (std::ptrdiff_t x = 0; x < cols; ++x) {
      Tap taps[kKernelTaps];
      std::size_t ntaps = 0;
      for (std::size_t t = 0; t < kKernelTaps; ++t) {
        const std::ptrdiff_t iy = y + static_cast<std::ptrdiff_t>(t / 3) - 1;
        const std::ptrdiff_t ix = x + static_cast<std::ptrdiff_t>(t % 3) - 1;
        if (iy < 0 || ix < 0 || iy >= rows || ix >= cols) continue;
        const std::size_t p = static_cast<std::size_t>(iy * cols + ix);
        if (in.offsets[p] == in.offsets[p + 1]) continue;
        taps[ntaps++] = {in.offsets[p], in.offsets[p + 1], packed.data() + t * cin * cout};
      }
      double* o = out.pixel(y, x);
      std::size_t o0 = 0;
      for (; o0 + 64 <= cout; o0 += 64)
        pixel_block<8>(o + o0, b0 ? b0 + o0 : nullptr, taps, ntaps, idx, val, cout, o0);
      for (; o0 + 8 <= cout; o0 += 8)
        pixel_block<1>(o + o0, b0 ? b0 + o0 : nullptr, taps, ntaps, idx, val, cout, o0);
      for (; o0 < cout; ++o0) {
        double acc = b0 ? b0[o0] : 0.0;
        for (std::size_t t = 0; t < ntaps; ++t)
          for (std::uint32_t k = taps[t].begin; k < taps[t].end; ++k)
            acc += val[k] * taps[t].w[idx[k] * cout + o0];
        o[o0] = acc;
      }
    }
  }
}

void unpool_transpose_single(const Tensor3& pooled, const SwitchRecord& switches, bool rectify,
                             std::span<const double> packed, Tensor3& out) {
  const Shape3& ps = switches.output_shape;
  const Shape3& is = switches.input_shape;
  if (!(pooled.shape() == ps) || switches.codes.size() != ps.size() ||
      is.channels != ps.channels || is.rows / 2 != ps.rows || is.cols / 2 != ps.cols)
    throw CorruptionError("unpool: switch record does not match the pooled tensor");
  for (auto code : switches.codes)
    if (code > 3) throw CorruptionError("unpool: switch code outside its 2x2 window");

  const std::size_t ch = ps.channels;
  const std::size_t blocks = (ch + 7) / 8;
  const std::size_t padded = blocks * 8;
  // [tap][channel] with zero padding, and the four masked copies [d][channel] of one cell
  std::vector<double> w(kKernelTaps * padded, 0.0);
  for (std::size_t t = 0; t < kKernelTaps; ++t)
    std::copy_n(packed.data() + t * ch, ch, w.data() + t * padded);
  std::vector<double> masked(4 * padded);
  thread_local std::vector<double> contrib;
  contrib.assign(is.rows * is.cols * kKernelTaps, 0.0);
  if (ch < 16) {
    // Few channels: scatter each nonzero value into its switch position's taps.
    for (std::size_t py = 0; py < ps.rows; ++py) {
      for (std::size_t px = 0; px < ps.cols; ++px) {
        const double* v = pooled.pixel(py, px);
        const std::uint8_t* code = switches.codes.data() + (py * ps.cols + px) * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          const double val = rectify ? std::max(v[c], 0.0) : v[c];
          if (val == 0.0) continue;
          double* dst =
              contrib.data() + ((2 * py + code[c] / 2) * is.cols + 2 * px + code[c] % 2) * kKernelTaps;
          for (std::size_t t = 0; t < kKernelTaps; ++t) dst[t] += val * w[t * padded + c];
        }
      }
    }
    combine_taps(contrib, is.rows, is.cols, 0.0, out);
    return;
  }
  for (std::size_t py = 0; py < ps.rows; ++py) {
    for (std::size_t px = 0; px < ps.cols; ++px) {
      const double* v = pooled.pixel(py, px);
      const std::uint8_t* code = switches.codes.data() + (py * ps.cols + px) * ch;
      std::fill(masked.begin(), masked.end(), 0.0);
      for (std::size_t c = 0; c < ch; ++c)
        masked[code[c] * padded + c] = rectify ? std::max(v[c], 0.0) : v[c];
      for (std::size_t d = 0; d < 4; ++d) {
        v8d acc[kKernelTaps] = {};
        const double* md = masked.data() + d * padded;
        for (std::size_t j = 0; j < blocks; ++j) {
          const v8d mv = load8(md + 8 * j);
#pragma GCC unroll 9
          for (std::size_t t = 0; t < kKernelTaps; ++t) {
            acc[t] += mv * load8(w.data() + t * padded + 8 * j);
          }
        }
        double* dst = contrib.data() + ((2 * py + d / 2) * is.cols + 2 * px + d % 2) * kKernelTaps;
        for (std::size_t t = 0; t < kKernelTaps; ++t) {
          double a = 0.0;
          for (std::size_t e = 0; e < 8; ++e) a += acc[t][e];
          dst[t] = a;
        }
      }
    }
  }
  combine_taps(contrib, is.rows, is.cols, 0.0, out);
}

}  // namespace detail

Tensor3 conv2d_same(const Tensor3& input, const ConvLayer& layer) {
  if (input.channels() != layer.in_channels)
    throw ShapeError("conv2d_same: input has " + std::to_string(input.channels()) +
                     " channels, layer expects " + std::to_string(layer.in_channels));
  Tensor3 out(layer.out_channels, input.rows(), input.cols());
  const auto packed = detail::pack_forward(layer);
  detail::correlate3x3(detail::compact(input), packed, layer.bias, out);
  return out;
}

Tensor3 relu(Tensor3 x) {
  for (double& v : x.raw()) v = v > 0.0 ? v : 0.0;
  return x;
}

PoolResult maxpool2x2(const Tensor3& x) {
  const std::size_t ch = x.channels();
  const std::size_t rows = x.rows() / 2, cols = x.cols() / 2;
  PoolResult r{Tensor3(ch, rows, cols), SwitchRecord{x.shape(), {ch, rows, cols}, {}}};
  r.switches.codes.resize(ch * rows * cols);
  for (std::size_t py = 0; py < rows; ++py) {
    for (std::size_t px = 0; px < cols; ++px) {
      const double* cand[4] = {x.pixel(2 * py, 2 * px), x.pixel(2 * py, 2 * px + 1),
                               x.pixel(2 * py + 1, 2 * px), x.pixel(2 * py + 1, 2 * px + 1)};
      double* out = r.pooled.pixel(py, px);
      std::uint8_t* code = r.switches.codes.data() + (py * cols + px) * ch;
      for (std::size_t c = 0; c < ch; ++c) {
        double best = cand[0][c];
        std::uint8_t k = 0;
        for (std::uint8_t j = 1; j < 4; ++j) {
          if (cand[j][c] > best) {
            best = cand[j][c];
            k = j;
          }
        }
        out[c] = best;
        code[c] = k;
      }
    }
  }
  return r;
}

void conv2d_param_grad(const Tensor3& input, const Tensor3& grad_out, const ConvLayer& layer,
                       ConvGrad& grad) {
  const std::size_t ci = layer.in_channels, co = layer.out_channels;
  if (input.channels() != ci || grad_out.channels() != co || input.rows() != grad_out.rows() ||
      input.cols() != grad_out.cols())
    throw ShapeError("conv2d_param_grad: shape mismatch");
  grad.weights.resize(co * ci * kKernelTaps, 0.0);
  grad.bias.resize(co, 0.0);

  // Accumulate into [tap][o][i] so the inner loop runs over contiguous input channels.
  std::vector<double> packed(kKernelTaps * co * ci, 0.0);
  const std::size_t rows = input.rows(), cols = input.cols();
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < cols; ++x) {
      const double* g = grad_out.pixel(y, x);
      for (std::size_t o = 0; o < co; ++o) grad.bias[o] += g[o];
      for (std::size_t t = 0; t < kKernelTaps; ++t) {
        const auto iy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(t / 3) - 1;
        const auto ix = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(t % 3) - 1;
        if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(rows) ||
            ix >= static_cast<std::ptrdiff_t>(cols))
          continue;
        const double* s = input.pixel(iy, ix);
        double* dk = packed.data() + t * co * ci;
        for (std::size_t o = 0; o < co; ++o) {
          const double gv = g[o];
          if (gv == 0.0) continue;
          double* row = dk + o * ci;
          for (std::size_t i = 0; i < ci; ++i) row[i] += gv * s[i];
        }
      }
    }
  }
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t t = 0; t < kKernelTaps; ++t)
        grad.weights[(o * ci + i) * kKernelTaps + t] += packed[(t * co + o) * ci + i];
}

}  // namespace auralcnn
