#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "auralcnn/analysis.hpp"
#include "auralcnn/errors.hpp"

using namespace auralcnn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Input-axis extent of one unit, by pulling a single position back through
// each layer: a 3x3 conv widens [lo, hi] by one, unpooling maps it to [2lo, 2hi + 1].
long brute_rf(std::size_t layer, bool after_pool) {
  long lo = 100000, hi = 100000;
  for (std::size_t l = layer; l >= 1; --l) {
    if (l < layer || after_pool) lo = 2 * lo, hi = 2 * hi + 1;
    lo -= 1, hi += 1;
  }
  return hi - lo + 1;
}

CnnModel tiny_model(std::uint64_t seed) {
  ModelShape s;
  s.conv_channels = {2, 2, 2, 2, 2};
  s.hidden = 4;
  s.dropout_rate = 0.0;
  auto m = make_model(s, seed);
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<double> d(0.0, 0.05);
  for (auto& c : m.conv)
    for (auto& b : c.bias) b = d(rng);
  return m;
}

const std::vector<CorpusItem>& corpus() {
  static const auto c = build_model_corpus(2);
  return c;
}

StudyOptions with_jobs(unsigned jobs) {
  StudyOptions o;
  o.jobs = jobs;
  return o;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("receptive-field table matches the published widths and heights") {
  const auto t = rf_table();
  REQUIRE(t.size() == 5);
  const long ms[] = {93, 162, 302, 580, 1137};
  const long hz[] = {86, 151, 280, 538, 1055};
  for (std::size_t i = 0; i < 5; ++i) {
    CAPTURE(i);
    CHECK(t[i].layer == i + 1);
    CHECK(t[i].pixels_per_axis == (3u << i));
    CHECK(std::lround(t[i].width_ms) == ms[i]);
    CHECK(std::lround(t[i].height_hz) == hz[i]);
  }
  CHECK(kPublishedLayer5HeightHz == 1270.0);
}

TEST_CASE("exact widths follow the frame arithmetic") {
  for (std::size_t l = 1; l <= 5; ++l) {
    const double n = 3.0 * std::pow(2.0, static_cast<double>(l - 1));
    CHECK(effective_rf(l).width_ms_exact == doctest::Approx(((n - 1) * 256 + 512) / 11025.0 * 1000.0));
    CHECK(effective_rf(l).height_hz == doctest::Approx((n + 1) * 11025.0 / 512.0));
  }
  CHECK(effective_rf(2).width_ms_exact == doctest::Approx(162.54).epsilon(1e-4));
  CHECK_THROWS_AS(effective_rf(0), InvalidArgument);
  CHECK_THROWS_AS(effective_rf(6), InvalidArgument);
}

TEST_CASE("exact receptive field recurrence") {
  const std::size_t before[] = {3, 8, 18, 38, 78};
  const std::size_t after[] = {4, 10, 22, 46, 94};
  for (std::size_t l = 1; l <= 5; ++l) {
    CHECK(exact_receptive_field(l) == before[l - 1]);
    CHECK(exact_receptive_field(l, true) == after[l - 1]);
    CHECK(static_cast<long>(exact_receptive_field(l)) == brute_rf(l, false));
    CHECK(static_cast<long>(exact_receptive_field(l, true)) == brute_rf(l, true));
  }
  CHECK_THROWS_AS(exact_receptive_field(0), InvalidArgument);
}

TEST_CASE("pearson examples") {
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> neg = {-1, -2, -3, -4};
  CHECK(*pearson(x, x) == doctest::Approx(1.0));
  CHECK(*pearson(x, neg) == doctest::Approx(-1.0));
  CHECK(std::abs(*pearson(x, std::vector<double>{1, 2, 3, 5}) - 0.9827) < 1e-3);
  CHECK_FALSE(pearson(x, std::vector<double>{2, 2, 2, 2}).has_value());
  CHECK_FALSE(pearson(std::vector<double>{0, 0}, std::vector<double>{0, 0}).has_value());
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), InvalidArgument);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), InvalidArgument);
}

TEST_CASE("pearson is symmetric, bounded and affine invariant") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(200), b(200), c(200);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = d(rng);
      b[i] = 0.3 * a[i] + d(rng);
      c[i] = 7.5 * a[i] - 2.0;
    }
    const double r = *pearson(a, b);
    CHECK(r == *pearson(b, a));
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(*pearson(c, b) == doctest::Approx(r).epsilon(1e-12));
    CHECK(*pearson(a, c) <= 1.0);
  }
}

TEST_CASE("attribute bookkeeping") {
  CHECK(pairs_per_cell(Attribute::key) == 6);
  CHECK(pairs_per_cell(Attribute::chord) == 28);
  CHECK(pairs_per_cell(Attribute::instrument) == 21);
  CHECK(fixings(Attribute::key) == 56);
  CHECK(fixings(Attribute::chord) == 28);
  CHECK(fixings(Attribute::instrument) == 32);
  for (Attribute a : kAttributes) CHECK(parse_attribute(attribute_name(a)) == a);
  CHECK_THROWS_AS(parse_attribute("tempo"), InvalidArgument);
}

TEST_CASE("correlation study matches a brute-force recomputation") {
  const auto model = tiny_model(4);
  const auto report = correlation_study(model, corpus(), kAttributes, with_jobs(2));
  REQUIRE(report.rows.size() == 15);

  std::vector<Grid> maps[5][2];
  for (const auto& item : corpus()) {
    AudioBuffer a = item.audio;
    a.samples.resize(istft_length(171, 512, 256));
    const auto tr = forward(model, normalize_magnitude(stft(a).magnitude));
    for (std::size_t l = 0; l < 5; ++l)
      for (std::size_t f = 0; f < 2; ++f) maps[l][f].push_back(deconv_feature(model, tr, {l + 1, f, {}}).values);
  }
  // corpus order is instrument-major, then chord, then key
  const auto at = [](std::size_t i, std::size_t c, std::size_t k) { return (i * 8 + c) * 4 + k; };
  for (std::size_t l = 0; l < 5; ++l)
    for (Attribute a : kAttributes) {
      std::vector<double> rs;
      std::size_t skipped = 0;
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t i = 0; i < 7; ++i)
          for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t k = 0; k < 4; ++k) {
              std::vector<std::size_t> members;
              if (a == Attribute::key && k == 0)
                for (std::size_t v = 0; v < 4; ++v) members.push_back(at(i, c, v));
              if (a == Attribute::chord && c == 0)
                for (std::size_t v = 0; v < 8; ++v) members.push_back(at(i, v, k));
              if (a == Attribute::instrument && i == 0)
                for (std::size_t v = 0; v < 7; ++v) members.push_back(at(v, c, k));
              for (std::size_t x = 0; x < members.size(); ++x)
                for (std::size_t y = x + 1; y < members.size(); ++y) {
                  const auto r = pearson(maps[l][f][members[x]].data, maps[l][f][members[y]].data);
                  if (r) rs.push_back(*r);
                  else ++skipped;
                }
            }
      const auto& row = report.rows[l * 3 + static_cast<std::size_t>(a)];
      CAPTURE(l);
      CAPTURE(attribute_name(a));
      CHECK(row.layer == l + 1);
      CHECK(row.attribute == a);
      CHECK(row.n_pairs == rs.size());
      CHECK(row.n_skipped == skipped);
      CHECK(row.n_pairs + row.n_skipped == 2 * fixings(a) * pairs_per_cell(a));
      if (rs.empty()) continue;
      const double m = mean_of(rs);
      double var = 0;
      for (double r : rs) var += (r - m) * (r - m);
      CHECK(row.mean == doctest::Approx(m).epsilon(1e-10));
      CHECK(row.std == doctest::Approx(std::sqrt(var / static_cast<double>(rs.size()))).epsilon(1e-8));
      CHECK(row.mean >= -1.0);
      CHECK(row.mean <= 1.0);
    }
}

TEST_CASE("study is deterministic across job counts and per-attribute calls") {
  const auto model = tiny_model(5);
  const auto a = correlation_study(model, corpus(), kAttributes, with_jobs(1));
  const auto b = correlation_study(model, corpus(), kAttributes, with_jobs(3));
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(std::memcmp(&a.rows[i].mean, &b.rows[i].mean, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.rows[i].std, &b.rows[i].std, sizeof(double)) == 0);
    CHECK(a.rows[i].n_pairs == b.rows[i].n_pairs);
  }
  const auto chord = correlation_study(model, corpus(), Attribute::chord);
  REQUIRE(chord.rows.size() == 5);
  for (std::size_t l = 0; l < 5; ++l) CHECK(std::memcmp(&chord.rows[l].mean, &a.rows[l * 3 + 1].mean, sizeof(double)) == 0);
}

TEST_CASE("identical signals correlate perfectly at every layer") {
  auto same = corpus();
  for (auto& item : same) item.audio = corpus()[100].audio;
  const auto report = correlation_study(tiny_model(6), same, kAttributes);
  for (const auto& row : report.rows) {
    CAPTURE(row.layer);
    if (row.n_pairs == 0) continue;
    CHECK(row.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row.std < 1e-9);
  }
}

TEST_CASE("scaling every signal leaves the correlations unchanged") {
  auto scaled = corpus();
  for (auto& item : scaled)
    for (double& s : item.audio.samples) s *= 0.37;
  const auto model = tiny_model(7);
  const auto a = correlation_study(model, corpus(), kAttributes);
  const auto b = correlation_study(model, scaled, kAttributes);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].n_pairs == b.rows[i].n_pairs);
    if (a.rows[i].n_pairs) CHECK(std::abs(a.rows[i].mean - b.rows[i].mean) < 1e-9);
  }
}

TEST_CASE("incomplete corpus names the missing specs") {
  auto partial = corpus();
  partial.erase(partial.begin() + 5);
  try {
    correlation_study(tiny_model(8), partial, Attribute::key);
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("missing sine_major_Bb2") != std::string::npos);
  }
  partial.push_back(partial.front());
  CHECK_THROWS_AS(correlation_study(tiny_model(8), partial, Attribute::key), InvalidArgument);
}

TEST_CASE("report files round trip") {
  TempDir dir("auralcnn_test_report");
  CorrelationReport report;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (std::size_t l = 1; l <= 5; ++l)
    for (Attribute a : kAttributes)
      report.rows.push_back({l, a, d(rng), std::abs(d(rng)), 100 + l, l});
  report.rows[4].mean = NAN;
  report.rows[4].std = NAN;
  report.rows[4].n_pairs = 0;
  emit_report(report, dir.path);

  const auto back = read_report(dir.path / "correlation_long.csv");
  REQUIRE(back.rows.size() == 15);
  for (std::size_t i = 0; i < 15; ++i) {
    CHECK(back.rows[i].layer == report.rows[i].layer);
    CHECK(back.rows[i].attribute == report.rows[i].attribute);
    CHECK(back.rows[i].n_pairs == report.rows[i].n_pairs);
    CHECK(back.rows[i].n_skipped == report.rows[i].n_skipped);
    if (i == 4) {
      CHECK(std::isnan(back.rows[i].mean));
      continue;
    }
    CHECK(std::abs(back.rows[i].mean - report.rows[i].mean) < 1e-6);
    CHECK(std::abs(back.rows[i].std - report.rows[i].std) < 1e-6);
  }
  for (Attribute a : kAttributes) {
    const auto part = read_report(dir.path / ("correlation_" + std::string(attribute_name(a)) + ".csv"));
    REQUIRE(part.rows.size() == 5);
    for (const auto& r : part.rows) CHECK(r.attribute == a);
  }
  std::ifstream in(dir.path / "correlation_long.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "layer,attribute,mean,std,n_pairs,n_skipped");
}

TEST_CASE("empty report writes header-only files") {
  TempDir dir("auralcnn_test_report_empty");
  emit_report({}, dir.path);
  CHECK(read_report(dir.path / "correlation_long.csv").rows.empty());
  CHECK(read_report(dir.path / "correlation_key.csv").rows.empty());
}

TEST_CASE("malformed report files") {
  TempDir dir("auralcnn_test_report_bad");
  CHECK_THROWS_AS(read_report(dir.path / "absent.csv"), IoError);
  const auto write = [&](const std::string& text) {
    std::ofstream(dir.path / "r.csv") << text;
    return dir.path / "r.csv";
  };
  CHECK_THROWS_AS(read_report(write("nope\n")), FormatError);
  CHECK_THROWS_AS(read_report(write("layer,attribute,mean,std,n_pairs,n_skipped\n1,key,0.5\n")), FormatError);
  CHECK_THROWS_AS(read_report(write("layer,attribute,mean,std,n_pairs,n_skipped\n1,tempo,0.5,0,1,0\n")), FormatError);
  CHECK_THROWS_AS(read_report(write("layer,attribute,mean,std,n_pairs,n_skipped\n1,key,0.5x,0,1,0\n")), FormatError);
}

TEST_CASE("rf table file") {
  TempDir dir("auralcnn_test_rf");
  write_rf_table(rf_table(), dir.path / "rf_table.csv");
  std::ifstream in(dir.path / "rf_table.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,pixels_per_axis,width_ms,width_ms_exact,height_hz,exact_rf_pixels");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);
}
