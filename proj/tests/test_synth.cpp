#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "auralcnn/errors.hpp"
#include "auralcnn/synth.hpp"
#include "auralcnn/wav.hpp"
#include "oracles.hpp"

using namespace auralcnn;
namespace fs = std::filesystem;

namespace {

double peak(const std::vector<double>& x) {
  double m = 0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

std::vector<double> power_spectrum(const std::vector<double>& x, std::size_t begin, std::size_t n) {
  std::vector<double> frame(x.begin() + static_cast<long>(begin), x.begin() + static_cast<long>(begin + n));
  for (std::size_t t = 0; t < n; ++t)
    frame[t] *= 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / n));
  std::vector<double> p;
  for (const auto& c : oracle::dft(frame)) p.push_back(std::norm(c));
  return p;
}

double flatness(const std::vector<double>& p) {
  double log_sum = 0, sum = 0;
  for (double v : p) log_sum += std::log(v + 1e-20), sum += v;
  const double n = static_cast<double>(p.size());
  return std::exp(log_sum / n) / (sum / n);
}

double centroid_hz(const std::vector<double>& x, int sr) {
  double num = 0, den = 0;
  for (std::size_t begin = 0; begin + 512 <= x.size(); begin += 2048) {
    const auto p = power_spectrum(x, begin, 512);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double m = std::sqrt(p[k]);
      num += m * static_cast<double>(k) * sr / 512.0;
      den += m;
    }
  }
  return num / den;
}

bool finite_and_normal(const std::vector<double>& x) {
  for (double v : x)
    if (!std::isfinite(v) || std::fpclassify(v) == FP_SUBNORMAL) return false;
  return true;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("equal temperament reference notes") {
  CHECK(note_freq(69) == doctest::Approx(440.0).epsilon(1e-12));
  CHECK(note_freq(57) == doctest::Approx(220.0).epsilon(1e-12));
  CHECK(std::abs(note_freq(39) - 77.782) < 1e-3);
  CHECK_THROWS_AS(note_freq(-1), InvalidArgument);
  CHECK_THROWS_AS(note_freq(128), InvalidArgument);
}

TEST_CASE("chord interval table") {
  CHECK(chord_notes(Chord::major, 60) == std::vector<int>{60, 64, 67});
  CHECK(chord_notes(Chord::diminished, 60) == std::vector<int>{60, 63, 66});
  CHECK(chord_notes(Chord::intervals, 60) == std::vector<int>{60, 67});
  CHECK(chord_notes(Chord::dominant7, 60) == std::vector<int>{60, 64, 67, 70});
  CHECK(chord_notes(Chord::major7, 60) == std::vector<int>{60, 64, 67, 71});
  CHECK(chord_notes(Chord::minor7, 60) == std::vector<int>{60, 63, 67, 70});
  CHECK(chord_notes(Chord::sus4, 60) == std::vector<int>{60, 65, 67});
  CHECK(chord_notes(Chord::minor, 60) == std::vector<int>{60, 63, 67});
  for (Chord c : kChords) CHECK(parse_chord(chord_name(c)) == c);
  CHECK_THROWS_AS(parse_chord("augmented"), InvalidArgument);
}

TEST_CASE("key roots") {
  CHECK(key_midi(Key::Eb2) == 39);
  CHECK(key_midi(Key::Bb2) == 46);
  CHECK(key_midi(Key::A3) == 57);
  CHECK(key_midi(Key::G4) == 67);
  for (Key k : kKeys) CHECK(parse_key(key_name(k)) == k);
  CHECK_THROWS_AS(parse_key("C4"), InvalidArgument);
}

TEST_CASE("built-in timbre table") {
  const auto& t = builtin_timbres();
  REQUIRE(t.size() == 7);
  const std::vector<std::string> names = {"sine", "strings", "acoustic_guitar", "saxophone",
                                          "piano", "electric_guitar", "organ"};
  for (std::size_t i = 0; i < names.size(); ++i) CHECK(t[i].name == names[i]);
  CHECK(find_timbre("piano").harmonics.size() >= 6);
  CHECK_THROWS_AS(find_timbre("theremin"), InvalidArgument);
  CHECK_THROWS_AS(render_instrument("theremin", {60}, 1.0), InvalidArgument);
}

TEST_CASE("timbre parser errors") {
  CHECK(parse_timbres("# only comments\n\n").empty());
  const auto ok = parse_timbres("x 0.1 0.1 0.5 0.1 0 : 1 0.5\n");
  REQUIRE(ok.size() == 1);
  CHECK(ok[0].harmonics == std::vector<double>{1, 0.5});
  CHECK_THROWS_AS(parse_timbres("x 0.1 0.1 0.5 0.1 0 1 0.5\n"), FormatError);
  CHECK_THROWS_AS(parse_timbres("x 0.1 0.1 0.5 0.1 : 1\n"), FormatError);
  CHECK_THROWS_AS(parse_timbres("x 0.1 0.1 0.5 0.1 0 :\n"), FormatError);
  CHECK_THROWS_AS(parse_timbres("x 0.1 0.1 1.5 0.1 0 : 1\n"), FormatError);
  CHECK_THROWS_AS(parse_timbres("x 0.1 0.1 0.5 0.1 0 : 1 q\n"), FormatError);
  CHECK_THROWS_AS(parse_timbres("x 0 0 1 0 0 : 1\nx 0 0 1 0 0 : 1\n"), FormatError);
}

TEST_CASE("envelope segments") {
  Timbre t;
  t.attack = 0.1, t.decay = 0.1, t.sustain = 0.5, t.release = 0.2;
  CHECK(adsr(t, 0.0, 1.0) == 0.0);
  CHECK(adsr(t, 0.05, 1.0) == doctest::Approx(0.5));
  CHECK(adsr(t, 0.1, 1.0) == doctest::Approx(1.0));
  CHECK(adsr(t, 0.15, 1.0) == doctest::Approx(0.75));
  CHECK(adsr(t, 0.5, 1.0) == doctest::Approx(0.5));
  CHECK(adsr(t, 0.9, 1.0) == doctest::Approx(0.25));
  CHECK(adsr(t, 1.0, 1.0) == 0.0);
  CHECK(adsr(t, -0.1, 1.0) == 0.0);
}

TEST_CASE("sine render has a single spectral peak at bin 20") {
  const auto a = render_instrument("sine", {69}, 1.0);
  REQUIRE(a.size() == 11025);
  const auto p = power_spectrum(a.samples, 4000, 512);
  std::size_t best = 0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  CHECK(best == 20);
  for (std::size_t k = 40; k < p.size(); ++k) CHECK(10.0 * std::log10(p[best] / (p[k] + 1e-300)) >= 40.0);
}

TEST_CASE("every instrument renders at a 0.8 peak without denormals") {
  for (const auto& t : builtin_timbres()) {
    CAPTURE(t.name);
    for (const auto& notes : {std::vector<int>{39}, std::vector<int>{67, 71, 74, 77}}) {
      const auto a = render_instrument(t, notes, 0.7);
      CHECK(std::abs(peak(a.samples) - kSynthPeak) < 1e-6);
      CHECK(finite_and_normal(a.samples));
    }
  }
  CHECK_THROWS_AS(render_instrument("sine", {}, 1.0), InvalidArgument);
  CHECK_THROWS_AS(render_instrument("sine", {60}, 0.0), InvalidArgument);
}

TEST_CASE("partials above Nyquist are dropped") {
  // 30 harmonics of a 98 Hz tone at 2 kHz: partials above 1 kHz must not fold back.
  Timbre t;
  t.name = "dense";
  t.harmonics.assign(30, 1.0);
  const auto a = render_instrument(t, {43}, 1.0, 2000);
  CHECK(finite_and_normal(a.samples));
  const double f0 = note_freq(43);
  const double top = std::floor(999.0 / f0) * f0;
  const auto p = power_spectrum(a.samples, 500, 1000);
  // frame of 1000 samples at 2 kHz: 2 Hz bins
  const double aliased = p[static_cast<std::size_t>(std::lround((2000.0 - (top + f0)) / 2.0))];
  const double kept = p[static_cast<std::size_t>(std::lround(top / 2.0))];
  CHECK(10.0 * std::log10(kept / (aliased + 1e-300)) > 20.0);
}

TEST_CASE("piano is spectrally flatter than a sine") {
  const auto piano = render_instrument("piano", {69}, 1.0);
  const auto sine = render_instrument("sine", {69}, 1.0);
  CHECK(flatness(power_spectrum(piano.samples, 1000, 512)) > flatness(power_spectrum(sine.samples, 1000, 512)));
}

TEST_CASE("stepped voicings raise the lowest tone by an octave") {
  const std::vector<int> c = {60, 64, 67};
  CHECK(stepped_voicing(c, 0) == c);
  CHECK(stepped_voicing(c, 1) == std::vector<int>{64, 67, 72});
  CHECK(stepped_voicing(c, 2) == std::vector<int>{67, 72, 76});
  CHECK(stepped_voicing(c, 3) == std::vector<int>{72, 76, 79});
}

TEST_CASE("model signal is four seconds of six hits") {
  const ModelSignalSpec spec{"sine", Chord::major, Key::G4};
  const auto a = model_signal(spec);
  CHECK(a.size() == 44100);
  CHECK(a.sample_rate == 11025);
  CHECK(spec.stem() == "sine_major_G4");
  CHECK(model_signal(spec).samples == a.samples);
  CHECK(peak(a.samples) <= kSynthPeak + 1e-12);
  CHECK(finite_and_normal(a.samples));

  // lowest spectral peak of the first hit sits at bin 18 (392 Hz) of a 512-point frame
  const auto p = power_spectrum(a.samples, 2000, 512);
  double top = 0;
  for (double v : p) top = std::max(top, v);
  std::size_t lowest = 0;
  for (std::size_t k = 1; k + 1 < p.size(); ++k)
    if (p[k] > 1e-3 * top && p[k] >= p[k - 1] && p[k] >= p[k + 1]) {
      lowest = k;
      break;
    }
  CHECK(std::abs(static_cast<long>(lowest) - 18) <= 1);
}

TEST_CASE("pure sine chord tones appear within one bin") {
  const std::size_t hit = kModelSignalSamples / kHitsPerSignal;
  const std::size_t n = 4096;
  for (Chord c : kChords)
    for (Key k : kKeys) {
      const auto a = model_signal({"sine", c, k});
      for (std::size_t h = 0; h < kHitsPerSignal; ++h) {
        const auto notes = stepped_voicing(chord_notes(c, key_midi(k)), h);
        for (int note : notes) {
          CAPTURE(note);
          CHECK(oracle::has_peak_near(a.samples, h * hit + 1500, n, 11025, note_freq(note),
                                      0.05 * static_cast<double>(n) / 4.0));
        }
      }
    }
}

TEST_CASE("corpus covers every combination exactly once") {
  const auto specs = model_signal_specs();
  REQUIRE(specs.size() == kCorpusSize);
  std::set<std::string> stems;
  for (const auto& s : specs) stems.insert(s.stem());
  CHECK(stems.size() == 224);
  CHECK(specs.front().stem() == "sine_intervals_Eb2");
  CHECK(specs.back().stem() == "organ_diminished_G4");
}

TEST_CASE("corpus write and read back") {
  TempDir dir("auralcnn_test_corpus");
  auto corpus = build_model_corpus(2);
  REQUIRE(corpus.size() == 224);
  const auto serial = build_model_corpus(1);
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(serial[i].audio.samples == corpus[i].audio.samples);
  std::set<std::vector<double>> distinct;
  for (const auto& item : corpus) {
    CHECK(item.audio.size() == 44100);
    CHECK(finite_and_normal(item.audio.samples));
    distinct.insert(item.audio.samples);
  }
  CHECK(distinct.size() == 224);

  write_model_corpus(corpus, dir.path);
  std::size_t wavs = 0;
  for (const auto& e : fs::directory_iterator(dir.path)) wavs += e.path().extension() == ".wav";
  CHECK(wavs == 224);
  const auto back = read_model_corpus(dir.path);
  REQUIRE(back.size() == 224);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].spec == corpus[i].spec);
    CHECK(back[i].audio.size() == 44100);
    for (std::size_t s = 0; s < 44100; s += 997)
      CHECK(std::abs(back[i].audio.samples[s] - corpus[i].audio.samples[s]) <= 1.0 / 32767);
  }
}

TEST_CASE("corpus manifest errors") {
  TempDir dir("auralcnn_test_manifest");
  CHECK_THROWS_AS(read_model_corpus(dir.path), IoError);
  {
    std::ofstream(dir.path / "manifest.csv") << "file,instrument,chord,key,root_midi\nx.wav,kazoo,major,A3,57\n";
  }
  CHECK_THROWS_AS(read_model_corpus(dir.path), FormatError);
  {
    std::ofstream(dir.path / "manifest.csv") << "wrong header\n";
  }
  CHECK_THROWS_AS(read_model_corpus(dir.path), FormatError);
}

TEST_CASE("genre dataset shapes, labels and determinism") {
  GenreDatasetSpec spec;
  spec.seed = 11;
  const auto data = generate_genre_dataset(spec, 2);
  REQUIRE(data.size() == 150);
  std::array<int, 3> counts{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(data[i].input.shape() == Shape3{1, 257, 171});
    CHECK(data[i].label == static_cast<int>(i % 3));
    ++counts[static_cast<std::size_t>(data[i].label)];
  }
  CHECK(counts == std::array<int, 3>{50, 50, 50});
  const auto again = generate_genre_dataset(spec, 1);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(again[i].input == data[i].input);

  CHECK_FALSE(generate_genre_dataset({1, 4.0, 11025, 12})[0].input == data[0].input);

  CHECK(genre_class_names() == std::vector<std::string>{"percussive", "harmonic", "mixed"});
  CHECK_THROWS_AS(generate_genre_audio({0, 4.0, 11025, 0}), InvalidArgument);
}

TEST_CASE("genre clips are bounded and percussive ones are brighter") {
  const auto clips = generate_genre_audio({20, 4.0, 11025, 3});
  double c0 = 0, c1 = 0;
  for (const auto& clip : clips) {
    CHECK(clip.audio.size() == 44100);
    CHECK(peak(clip.audio.samples) <= kSynthPeak + 1e-12);
    CHECK(finite_and_normal(clip.audio.samples));
    if (clip.label == 0) c0 += centroid_hz(clip.audio.samples, 11025);
    if (clip.label == 1) c1 += centroid_hz(clip.audio.samples, 11025);
  }
  CHECK(c0 / 20 > c1 / 20);
}

TEST_CASE("spectrogram input is max-normalized") {
  const auto clips = generate_genre_audio({1, 4.0, 11025, 5});
  const auto t = spectrogram_input(clips[0].audio);
  double m = 0;
  for (double v : t.raw()) m = std::max(m, v);
  CHECK(m == doctest::Approx(1.0));
}

TEST_CASE("genre dataset write and read back") {
  TempDir dir("auralcnn_test_genre");
  const auto clips = generate_genre_audio({2, 1.0, 11025, 8});
  write_genre_dataset(clips, dir.path);
  CHECK(fs::exists(dir.path / "percussive_0000.wav"));
  CHECK(fs::exists(dir.path / "mixed_0005.wav"));
  const auto back = read_genre_dataset(dir.path);
  REQUIRE(back.size() == clips.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].label == clips[i].label);
    REQUIRE(back[i].audio.size() == clips[i].audio.size());
    for (std::size_t s = 0; s < back[i].audio.size(); s += 101)
      CHECK(std::abs(back[i].audio.samples[s] - clips[i].audio.samples[s]) <= 1.0 / 32767);
  }

  {
    std::ofstream(dir.path / "labels.csv") << "file,label,class\npercussive_0000.wav,7,percussive\n";
  }
  CHECK_THROWS_AS(read_genre_dataset(dir.path), FormatError);
  {
    std::ofstream(dir.path / "labels.csv") << "file,label,class\nnope.wav,0,percussive\n";
  }
  CHECK_THROWS_AS(read_genre_dataset(dir.path), IoError);
  fs::remove(dir.path / "labels.csv");
  CHECK_THROWS_AS(read_genre_dataset(dir.path), IoError);
}
