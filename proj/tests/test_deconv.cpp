#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <thread>

#include "auralcnn/deconv.hpp"
#include "auralcnn/errors.hpp"
#include "auralcnn/nn/layers.hpp"
#include "auralcnn/nn/model.hpp"
#include "oracles.hpp"

using namespace auralcnn;
namespace fs = std::filesystem;

namespace {

CnnModel small_model(std::vector<std::size_t> channels, Shape3 input, std::uint64_t seed) {
  ModelShape s;
  s.input = input;
  s.conv_channels = std::move(channels);
  s.hidden = 8;
  s.dropout_rate = 0.0;
  auto m = make_model(s, seed);
  std::mt19937_64 rng(seed * 31 + 1);
  std::uniform_real_distribution<double> d(-0.1, 0.1);
  for (auto& c : m.conv)
    for (auto& b : c.bias) b = d(rng);
  return m;
}

Tensor3 unpool_oracle(const Tensor3& pooled, const SwitchRecord& s) {
  Tensor3 out(s.input_shape);
  for (std::size_t c = 0; c < pooled.channels(); ++c)
    for (std::size_t r = 0; r < pooled.rows(); ++r)
      for (std::size_t x = 0; x < pooled.cols(); ++x) {
        const auto [sr, sx] = s.source(c, r, x);
        out(c, sr, sx) = pooled(c, r, x);
      }
  return out;
}

Tensor3 masked(const Tensor3& t, std::size_t keep) {
  Tensor3 out(t.shape());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t x = 0; x < t.cols(); ++x) out(keep, r, x) = t(keep, r, x);
  return out;
}

double sum_channel(const Tensor3& t, std::size_t c) {
  double s = 0;
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t x = 0; x < t.cols(); ++x) s += t(c, r, x);
  return s;
}

}  // namespace

TEST_CASE("unpool places the maximum") {
  Tensor3 t(1, 2, 2);
  t(0, 0, 0) = 1;
  t(0, 0, 1) = 2;
  t(0, 1, 0) = 3;
  t(0, 1, 1) = 4;
  const auto p = maxpool2x2(t);
  const auto u = unpool(p.pooled, p.switches);
  CHECK(u(0, 0, 0) == 0.0);
  CHECK(u(0, 0, 1) == 0.0);
  CHECK(u(0, 1, 0) == 0.0);
  CHECK(u(0, 1, 1) == 4.0);
}

TEST_CASE("unpool is a right inverse of pooling") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + rng() % 5, h = 2 + rng() % 9, w = 2 + rng() % 9;
    const auto x = relu(oracle::random_tensor(c, h, w, rng));
    const auto p = maxpool2x2(x);
    const auto u = unpool(p.pooled, p.switches);
    CHECK(u == unpool_oracle(p.pooled, p.switches));
    CHECK(maxpool2x2(u).pooled == p.pooled);
  }
}

TEST_CASE("unpool of zeros is zero and bad switches are corruption") {
  std::mt19937_64 rng(2);
  const auto p = maxpool2x2(oracle::random_tensor(2, 6, 6, rng));
  const auto z = unpool(Tensor3(p.pooled.shape()), p.switches);
  for (double v : z.raw()) CHECK(v == 0.0);

  auto bad = p.switches;
  bad.codes[3] = 4;
  CHECK_THROWS_AS(unpool(p.pooled, bad), CorruptionError);
  auto short_codes = p.switches;
  short_codes.codes.pop_back();
  CHECK_THROWS_AS(unpool(p.pooled, short_codes), CorruptionError);
  CHECK_THROWS_AS(unpool(Tensor3(2, 2, 3), p.switches), CorruptionError);
}

TEST_CASE("transpose_conv matches the scatter oracle") {
  std::mt19937_64 rng(3);
  SUBCASE("identity kernel") {
    ConvLayer id(1, 1);
    id.w(0, 0, 1, 1) = 1.0;
    const auto in = oracle::random_tensor(1, 5, 4, rng);
    CHECK(transpose_conv(in, id) == in);
  }
  SUBCASE("single channel") {
    const auto layer = oracle::random_conv(1, 1, rng);
    const auto g = oracle::random_tensor(1, 7, 9, rng);
    CHECK(oracle::max_abs_diff(transpose_conv(g, layer), oracle::transpose_scatter(g, layer)) < 1e-6);
  }
  SUBCASE("many channels both ways") {
    const auto layer = oracle::random_conv(77, 6, rng);
    auto g = oracle::random_tensor(6, 6, 5, rng);
    for (auto& v : g.raw())
      if (v < 0) v = 0;
    CHECK(oracle::max_abs_diff(transpose_conv(g, layer), oracle::transpose_scatter(g, layer)) < 1e-10);
    const auto to_one = oracle::random_conv(1, 9, rng);
    const auto g2 = oracle::random_tensor(9, 6, 5, rng);
    CHECK(oracle::max_abs_diff(transpose_conv(g2, to_one), oracle::transpose_scatter(g2, to_one)) < 1e-10);
  }
  CHECK_THROWS_AS(transpose_conv(Tensor3(2, 3, 3), ConvLayer(1, 3)), ShapeError);
}

TEST_CASE("transpose_conv is the adjoint of conv2d_same") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ci = 1 + rng() % 6, co = 1 + rng() % 70, h = 1 + rng() % 10, w = 1 + rng() % 10;
    auto layer = oracle::random_conv(ci, co, rng);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    const auto x = oracle::random_tensor(ci, h, w, rng);
    const auto y = oracle::random_tensor(co, h, w, rng);
    const double lhs = inner_product(conv2d_same(x, layer), y);
    const double rhs = inner_product(x, transpose_conv(y, layer));
    CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("single-layer deconv equals inline transpose_conv of the unpooled feature") {
  const auto m = small_model({6}, {1, 10, 9}, 5);
  std::mt19937_64 rng(6);
  const auto in = oracle::random_tensor(1, 10, 9, rng, 0, 1);
  const auto tr = forward(m, in);
  for (std::size_t f = 0; f < 6; ++f) {
    const auto map = deconv_feature(m, tr, {1, f, std::nullopt});
    const auto ref = oracle::transpose_scatter(relu(unpool_oracle(masked(tr.pooled[0], f), tr.switches[0])), m.conv[0]);
    REQUIRE(map.values.rows == 10);
    REQUIRE(map.values.cols == 9);
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t x = 0; x < 9; ++x) CHECK(map.values(r, x) == doctest::Approx(ref(0, r, x)).epsilon(1e-12));
  }
}

TEST_CASE("projecting every channel of layer 1 matches the oracle at several widths") {
  for (std::size_t ch : {3, 15, 16, 21, 70}) {
    CAPTURE(ch);
    const auto m = small_model({ch}, {1, 14, 11}, 40 + ch);
    std::mt19937_64 rng(ch);
    const auto tr = forward(m, oracle::random_tensor(1, 14, 11, rng, 0, 1));
    Tensor3 start = tr.pooled[0];
    for (double& v : start.raw()) v -= 0.3;  // some negatives for the rectification
    for (bool rectify : {true, false}) {
      const auto map = deconv_project(m, tr.switches, 1, start,
                                      {rectify ? Activation::relu : Activation::identity});
      const auto up = unpool_oracle(start, tr.switches[0]);
      const auto ref = oracle::transpose_scatter(rectify ? relu(up) : up, m.conv[0]);
      for (std::size_t r = 0; r < 14; ++r)
        for (std::size_t x = 0; x < 11; ++x) REQUIRE(std::abs(map(r, x) - ref(0, r, x)) < 1e-12);
    }
  }
}

TEST_CASE("multi-layer deconv matches the explicit chain") {
  const auto m = small_model({5, 7, 66}, {1, 33, 21}, 7);
  std::mt19937_64 rng(8);
  const auto in = oracle::random_tensor(1, 33, 21, rng, 0, 1);
  const auto tr = forward(m, in);
  for (std::size_t layer = 1; layer <= 3; ++layer) {
    const std::size_t f = layer == 3 ? 65 : 2;
    Tensor3 cur = masked(tr.pooled[layer - 1], f);
    for (std::size_t k = layer; k-- > 0;)
      cur = oracle::transpose_scatter(relu(unpool_oracle(cur, tr.switches[k])), m.conv[k]);
    const auto map = deconv_feature(m, tr, {layer, f, std::nullopt});
    double scale = 1e-12;
    for (double v : cur.raw()) scale = std::max(scale, std::abs(v));
    for (std::size_t r = 0; r < 33; ++r)
      for (std::size_t x = 0; x < 21; ++x) CHECK(std::abs(map.values(r, x) - cur(0, r, x)) <= 1e-12 * scale);
  }
}

TEST_CASE("with rectification bypassed, deconv is the input gradient of the selected activations") {
  // On the linear path a = J x, so deconv of the recorded activations gives
  // J^T a = grad(0.5 sum a^2), and a unit start gives J^T 1 = grad(sum a).
  const auto m = small_model({4, 5}, {1, 16, 16}, 9);
  std::mt19937_64 rng(10);
  const auto in = oracle::random_tensor(1, 16, 16, rng, 0, 1);
  ForwardOptions lin;
  lin.activation = Activation::identity;
  const auto tr = forward(m, in, lin);
  const DeconvOptions id{Activation::identity};
  for (std::size_t layer = 1; layer <= 2; ++layer) {
    for (std::size_t f : {0u, 3u}) {
      const auto map = deconv_feature(m, tr, {layer, f, std::nullopt}, id);
      Tensor3 unit(tr.pooled[layer - 1].shape());
      for (std::size_t r = 0; r < unit.rows(); ++r)
        for (std::size_t x = 0; x < unit.cols(); ++x) unit(f, r, x) = 1.0;
      const auto unit_map = deconv_project(m, tr.switches, layer, unit, id);

      auto selected = [&](const Tensor3& x, bool squared) {
        const auto p = forward(m, x, lin).pooled[layer - 1];
        double s = 0;
        for (std::size_t r = 0; r < p.rows(); ++r)
          for (std::size_t c = 0; c < p.cols(); ++c) s += squared ? 0.5 * p(f, r, c) * p(f, r, c) : p(f, r, c);
        return s;
      };
      const double eps = 1e-4;
      double worst = 0.0, worst_unit = 0.0;
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t x = 0; x < 16; ++x) {
          auto up = in, down = in;
          up(0, r, x) += eps;
          down(0, r, x) -= eps;
          const double g2 = (selected(up, true) - selected(down, true)) / (2 * eps);
          const double g1 = (selected(up, false) - selected(down, false)) / (2 * eps);
          worst = std::max(worst, std::abs(g2 - map.values(r, x)));
          worst_unit = std::max(worst_unit, std::abs(g1 - unit_map(r, x)));
        }
      CHECK(worst < 1e-4);
      CHECK(worst_unit < 1e-4);
    }
  }
}

TEST_CASE("deconv is linear in its start and superposes without rectification") {
  const auto m = small_model({4, 6}, {1, 16, 12}, 11);
  std::mt19937_64 rng(12);
  const auto tr = forward(m, oracle::random_tensor(1, 16, 12, rng, 0, 1));
  const auto a = masked(tr.pooled[1], 1);
  auto a2 = a;
  for (auto& v : a2.raw()) v *= 2.0;
  const auto ga = deconv_project(m, tr.switches, 2, a);
  const auto ga2 = deconv_project(m, tr.switches, 2, a2);
  for (std::size_t i = 0; i < ga.data.size(); ++i) CHECK(ga2.data[i] == 2.0 * ga.data[i]);

  const DeconvOptions id{Activation::identity};
  const auto b = masked(tr.pooled[1], 4);
  Tensor3 both = a;
  for (std::size_t i = 0; i < both.size(); ++i) both.raw()[i] += b.raw()[i];
  const auto sa = deconv_project(m, tr.switches, 2, a, id);
  const auto sb = deconv_project(m, tr.switches, 2, b, id);
  const auto sab = deconv_project(m, tr.switches, 2, both, id);
  for (std::size_t i = 0; i < sa.data.size(); ++i) CHECK(sab.data[i] == doctest::Approx(sa.data[i] + sb.data[i]).epsilon(1e-10));
}

TEST_CASE("a never-activated feature deconvolves to zero") {
  auto m = small_model({3, 3}, {1, 8, 8}, 13);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) m.conv[1].w(2, i, ky, kx) = -1.0;
  m.conv[1].bias[2] = -1.0;
  std::mt19937_64 rng(14);
  const auto tr = forward(m, oracle::random_tensor(1, 8, 8, rng, 0, 1));
  const auto map = deconv_feature(m, tr, {2, 2, std::nullopt});
  for (double v : map.values.data) CHECK(v == 0.0);
}

TEST_CASE("top-k keeps the strongest activations and stays inside the receptive field") {
  const auto m = small_model({4, 4, 4}, {1, 40, 40}, 15);
  std::mt19937_64 rng(16);
  const auto tr = forward(m, oracle::random_tensor(1, 40, 40, rng, 0, 1));
  for (std::size_t layer = 1; layer <= 3; ++layer) {
    const auto& pooled = tr.pooled[layer - 1];
    std::size_t f = 0;
    while (f < 4 && sum_channel(pooled, f) == 0.0) ++f;
    REQUIRE(f < 4);
    std::size_t br = 0, bx = 0;
    for (std::size_t r = 0; r < pooled.rows(); ++r)
      for (std::size_t x = 0; x < pooled.cols(); ++x)
        if (pooled(f, r, x) > pooled(f, br, bx)) br = r, bx = x;

    // Interval bound: unpooling maps [lo, hi] to [2lo, 2hi + 1], the 3x3 kernel widens by one each side.
    long r0 = static_cast<long>(br), r1 = r0, x0 = static_cast<long>(bx), x1 = x0;
    for (std::size_t k = 0; k < layer; ++k) {
      r0 = 2 * r0 - 1, r1 = 2 * r1 + 2, x0 = 2 * x0 - 1, x1 = 2 * x1 + 2;
    }
    const auto map = deconv_feature(m, tr, {layer, f, 1});
    double inside = 0;
    for (long r = 0; r < 40; ++r)
      for (long x = 0; x < 40; ++x) {
        const double v = map.values(static_cast<std::size_t>(r), static_cast<std::size_t>(x));
        if (r < r0 || r > r1 || x < x0 || x > x1) CHECK(v == 0.0);
        else inside += std::abs(v);
      }
    CHECK(inside > 0.0);

    Tensor3 single(pooled.shape());
    single(f, br, bx) = pooled(f, br, bx);
    CHECK(deconv_project(m, tr.switches, layer, single).data == map.values.data);
  }
}

TEST_CASE("invalid requests and feature addresses") {
  const auto m = small_model({3, 3}, {1, 8, 8}, 17);
  const auto tr = forward(m, Tensor3(1, 8, 8, 0.5));
  CHECK_THROWS_AS(deconv_feature(m, tr, {0, 0, std::nullopt}), InvalidArgument);
  CHECK_THROWS_AS(deconv_feature(m, tr, {3, 0, std::nullopt}), InvalidArgument);
  CHECK_THROWS_AS(deconv_feature(m, tr, {1, 3, std::nullopt}), InvalidArgument);
  CHECK_THROWS_AS(deconv_feature(m, tr, {1, 0, 0}), InvalidArgument);

  const auto other = small_model({3, 3}, {1, 10, 8}, 17);
  CHECK_THROWS_AS(deconv_feature(other, tr, {1, 0, std::nullopt}), InvalidArgument);

  CHECK(parse_feature_address("3-38") == DeconvRequest{3, 38, std::nullopt});
  CHECK(parse_feature_address("1-9:5") == DeconvRequest{1, 9, 5});
  CHECK(parse_feature_address("3-38").label() == "3-38");
  for (const char* bad : {"", "3", "3-", "-2", "a-b", "3-38:", "3-38:x", "3--1", "3-38 "})
    CHECK_THROWS_AS(parse_feature_address(bad), InvalidArgument);
}

TEST_CASE("concurrent deconvolution over a shared trace") {
  const auto m = small_model({8, 8}, {1, 24, 20}, 18);
  std::mt19937_64 rng(19);
  const auto tr = forward(m, oracle::random_tensor(1, 24, 20, rng, 0, 1));
  std::vector<Grid> serial, parallel(8);
  for (std::size_t f = 0; f < 8; ++f) serial.push_back(deconv_feature(m, tr, {2, f, std::nullopt}).values);
  std::vector<std::thread> threads;
  for (std::size_t f = 0; f < 8; ++f)
    threads.emplace_back([&, f] { parallel[f] = deconv_feature(m, tr, {2, f, std::nullopt}).values; });
  for (auto& t : threads) t.join();
  for (std::size_t f = 0; f < 8; ++f) CHECK(serial[f] == parallel[f]);
}

TEST_CASE("genre model maps have the input shape") {
  const auto m = make_model(genre_model_shape(), 20);
  std::mt19937_64 rng(21);
  const auto tr = forward(m, oracle::random_tensor(1, 257, 171, rng, 0, 1));
  for (std::size_t layer = 1; layer <= 5; ++layer) {
    const auto map = deconv_feature(m, tr, {layer, 7, std::nullopt});
    CHECK(map.values.rows == 257);
    CHECK(map.values.cols == 171);
    for (double v : map.values.data) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("map files") {
  const auto dir = fs::temp_directory_path() / "auralcnn_test_deconv";
  fs::create_directories(dir);
  Grid g(3, 2);
  g.data = {0.5, -1.25, 3.0, 1e-3, 0.0, -7.0};
  write_map_binary(dir / "m.dmap", g);
  const auto back = read_map_binary(dir / "m.dmap");
  CHECK(back.rows == 3);
  CHECK(back.cols == 2);
  for (std::size_t i = 0; i < 6; ++i) CHECK(back.data[i] == static_cast<double>(static_cast<float>(g.data[i])));

  std::ifstream f(dir / "m.dmap", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  CHECK(bytes.size() == 16 + 6 * 4);
  CHECK(bytes.substr(0, 4) == "DMAP");

  {
    std::ofstream t(dir / "t.dmap", std::ios::binary);
    t << bytes.substr(0, 20);
  }
  CHECK_THROWS_AS(read_map_binary(dir / "t.dmap"), CorruptionError);
  {
    std::ofstream t(dir / "t.dmap", std::ios::binary);
    t << "XMAP" << bytes.substr(4);
  }
  CHECK_THROWS_AS(read_map_binary(dir / "t.dmap"), FormatError);

  write_map_csv(dir / "m.csv", g);
  std::ifstream c(dir / "m.csv");
  std::string line;
  int lines = 0;
  while (std::getline(c, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), ',') == 1);
  }
  CHECK(lines == 3);
}
