#include "auralcnn/deconv.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <vector>

#include "auralcnn/errors.hpp"
#include "nn/kernels.hpp"

namespace auralcnn {

Tensor3 unpool(const Tensor3& pooled, const SwitchRecord& switches) {
  const Shape3& ps = switches.output_shape;
  const Shape3& is = switches.input_shape;
  if (!(pooled.shape() == ps) || switches.codes.size() != ps.size() ||
      is.channels != ps.channels || is.rows / 2 != ps.rows || is.cols / 2 != ps.cols)
    throw CorruptionError("unpool: switch record does not match the pooled tensor");
  Tensor3 out(is);
  const std::size_t ch = ps.channels;
  for (std::size_t py = 0; py < ps.rows; ++py) {
    for (std::size_t px = 0; px < ps.cols; ++px) {
      const double* v = pooled.pixel(py, px);
      const std::uint8_t* code = switches.codes.data() + (py * ps.cols + px) * ch;
      for (std::size_t c = 0; c < ch; ++c) {
        if (code[c] > 3) throw CorruptionError("unpool: switch code outside its 2x2 window");
        if (v[c] == 0.0) continue;
        out(c, 2 * py + code[c] / 2, 2 * px + code[c] % 2) = v[c];
      }
    }
  }
  return out;
}

Tensor3 transpose_conv(const Tensor3& input, const ConvLayer& layer) {
  if (input.channels() != layer.out_channels)
    throw ShapeError("transpose_conv: input has " + std::to_string(input.channels()) +
                     " channels, layer produces " + std::to_string(layer.out_channels));
  Tensor3 out(layer.in_channels, input.rows(), input.cols());
  const auto packed = detail::pack_transposed(layer);
  detail::correlate3x3(detail::compact(input), packed, {}, out);
  return out;
}

std::string DeconvRequest::label() const {
  return std::to_string(layer) + "-" + std::to_string(feature);
}

DeconvRequest parse_feature_address(const std::string& text) {
  const auto bad = [&] {
    return InvalidArgument("feature address must look like <layer>-<feature>[:k], got '" + text + "'");
  };
  const auto dash = text.find('-');
  if (dash == std::string::npos) throw bad();
  const auto colon = text.find(':', dash);
  auto parse = [&](std::size_t from, std::size_t to) {
    std::size_t v = 0;
    const char* b = text.data() + from;
    const char* e = text.data() + to;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e || b == e) throw bad();
    return v;
  };
  DeconvRequest r;
  r.layer = parse(0, dash);
  r.feature = parse(dash + 1, colon == std::string::npos ? text.size() : colon);
  if (colon != std::string::npos) r.top_k = parse(colon + 1, text.size());
  return r;
}

Grid deconv_project(const CnnModel& model, std::span<const SwitchRecord> switches,
                    std::size_t layer, Tensor3 start, const DeconvOptions& opts) {
  if (layer < 1 || layer > model.conv.size() || switches.size() < layer)
    throw InvalidArgument("deconv_project: layer " + std::to_string(layer) + " out of range");
  Tensor3 cur = std::move(start);
  const bool rectify = opts.activation == Activation::relu;
  for (std::size_t k = layer; k-- > 0;) {
    const auto& conv = model.conv[k];
    if (cur.channels() != conv.out_channels)
      throw ShapeError("deconv_project: activations do not match conv layer " + std::to_string(k + 1));
    const Shape3& target = switches[k].input_shape;
    Tensor3 next(conv.in_channels, target.rows, target.cols);
    if (conv.in_channels == 1) {
      detail::unpool_transpose_single(cur, switches[k], rectify, detail::pack_transposed(conv), next);
    } else {
      const auto up = detail::unpool_compact(cur, switches[k], rectify);
      detail::correlate3x3(up, detail::pack_transposed(conv), {}, next);
    }
    cur = std::move(next);
  }
  return cur.channel(0);
}

DeconvolvedMap deconv_feature(const CnnModel& model, const ForwardTrace& trace,
                              const DeconvRequest& req, const DeconvOptions& opts) {
  const std::size_t n = model.conv.size();
  if (req.layer < 1 || req.layer > n)
    throw InvalidArgument("layer " + std::to_string(req.layer) + " outside 1.." + std::to_string(n));
  const auto& conv = model.conv[req.layer - 1];
  if (req.feature >= conv.out_channels)
    throw InvalidArgument("feature " + std::to_string(req.feature) + " outside 0.." +
                          std::to_string(conv.out_channels - 1));
  if (req.top_k && *req.top_k == 0) throw InvalidArgument("top-k must be at least 1");
  bool matches = trace.pooled.size() == n && trace.switches.size() == n &&
                 trace.input.shape() == model.input_shape;
  for (std::size_t l = 0; matches && l < n; ++l)
    matches = trace.pooled[l].shape() == model.pooled_shape(l) &&
              trace.switches[l].output_shape == model.pooled_shape(l);
  if (!matches) throw InvalidArgument("trace does not belong to this model");

  const Tensor3& pooled = trace.pooled[req.layer - 1];
  Tensor3 start(pooled.shape());
  const std::size_t f = req.feature;
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t r = 0; r < pooled.rows(); ++r)
    for (std::size_t x = 0; x < pooled.cols(); ++x) cells.emplace_back(r, x);
  if (req.top_k && *req.top_k < cells.size()) {
    std::stable_sort(cells.begin(), cells.end(), [&](const auto& a, const auto& b) {
      return pooled(f, a.first, a.second) > pooled(f, b.first, b.second);
    });
    cells.resize(*req.top_k);
  }
  for (const auto& [r, x] : cells) start(f, r, x) = pooled(f, r, x);

  return {deconv_project(model, trace.switches, req.layer, std::move(start), opts), req};
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

}  // namespace

void write_map_binary(const std::filesystem::path& path, const Grid& values) {
  std::string out = "DMAP";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(values.rows));
  put_u32(out, static_cast<std::uint32_t>(values.cols));
  for (double v : values.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Grid read_map_binary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> b(std::istreambuf_iterator<char>(f), {});
  if (b.size() < 16 || std::memcmp(b.data(), "DMAP", 4) != 0)
    throw FormatError(path.string() + ": not a DMAP file");
  if (get_u32(b.data() + 4) != 1) throw FormatError(path.string() + ": unsupported DMAP version");
  Grid g(get_u32(b.data() + 8), get_u32(b.data() + 12));
  if (b.size() != 16 + 4 * g.size()) throw CorruptionError(path.string() + ": payload size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i)
    g.data[i] = std::bit_cast<float>(get_u32(b.data() + 16 + 4 * i));
  return g;
}

void write_map_csv(const std::filesystem::path& path, const Grid& values) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  char buf[32];
  for (std::size_t r = 0; r < values.rows; ++r) {
    for (std::size_t c = 0; c < values.cols; ++c) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, values(r, c));
      if (c) f.put(',');
      f.write(buf, p - buf);
    }
    f.put('\n');
  }
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace auralcnn
