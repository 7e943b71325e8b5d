#include "auralcnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "auralcnn/errors.hpp"
#include "auralcnn/nn/model.hpp"
#include "auralcnn/parallel.hpp"
#include "auralcnn/random.hpp"
#include "auralcnn/wav.hpp"
#include "timbres_data.hpp"

namespace auralcnn {

double note_freq(int midi) {
  if (midi < 0 || midi > 127) throw InvalidArgument("MIDI note " + std::to_string(midi) + " outside 0..127");
  return 440.0 * std::exp2((midi - 69) / 12.0);
}

namespace {

constexpr std::string_view kChordNames[] = {"intervals", "major",  "minor",  "sus4",
                                            "dominant7", "major7", "minor7", "diminished"};
constexpr std::string_view kKeyNames[] = {"Eb2", "Bb2", "A3", "G4"};
constexpr int kKeyMidi[] = {39, 46, 57, 67};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view chord_name(Chord c) { return kChordNames[static_cast<int>(c)]; }

Chord parse_chord(std::string_view name) {
  for (Chord c : kChords)
    if (chord_name(c) == name) return c;
  throw InvalidArgument("unknown chord '" + std::string(name) + "'");
}

std::vector<int> chord_intervals(Chord c) {
  switch (c) {
    case Chord::intervals: return {0, 7};
    case Chord::major: return {0, 4, 7};
    case Chord::minor: return {0, 3, 7};
    case Chord::sus4: return {0, 5, 7};
    case Chord::dominant7: return {0, 4, 7, 10};
    case Chord::major7: return {0, 4, 7, 11};
    case Chord::minor7: return {0, 3, 7, 10};
    case Chord::diminished: return {0, 3, 6};
  }
  throw InvalidArgument("unknown chord");
}

std::vector<int> chord_notes(Chord c, int root_midi) {
  auto notes = chord_intervals(c);
  for (int& n : notes) n += root_midi;
  return notes;
}

std::string_view key_name(Key k) { return kKeyNames[static_cast<int>(k)]; }

Key parse_key(std::string_view name) {
  for (Key k : kKeys)
    if (key_name(k) == name) return k;
  throw InvalidArgument("unknown key '" + std::string(name) + "'");
}

int key_midi(Key k) { return kKeyMidi[static_cast<int>(k)]; }

std::vector<Timbre> parse_timbres(std::string_view text) {
  std::vector<Timbre> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fail = [&](const std::string& why) {
      return FormatError("timbre line " + std::to_string(line_no) + ": " + why);
    };
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw fail("missing ':' before the harmonic list");
    Timbre t;
    std::istringstream head(line.substr(0, colon));
    if (!(head >> t.name >> t.attack >> t.decay >> t.sustain >> t.release >> t.drive))
      throw fail("expected name attack decay sustain release drive");
    std::string extra;
    if (head >> extra) throw fail("unexpected field '" + extra + "'");
    std::istringstream tail(line.substr(colon + 1));
    for (double h; tail >> h;) t.harmonics.push_back(h);
    if (!tail.eof()) throw fail("bad harmonic amplitude");
    if (t.harmonics.empty()) throw fail("no harmonics");
    if (t.attack < 0 || t.decay < 0 || t.release < 0 || t.sustain < 0 || t.sustain > 1 || t.drive < 0)
      throw fail("envelope values out of range");
    for (const auto& other : out)
      if (other.name == t.name) throw fail("duplicate instrument '" + t.name + "'");
    out.push_back(std::move(t));
  }
  return out;
}

const std::vector<Timbre>& builtin_timbres() {
  static const std::vector<Timbre> table = parse_timbres(kTimbreTable);
  return table;
}

const Timbre& find_timbre(std::string_view name) {
  for (const auto& t : builtin_timbres())
    if (t.name == name) return t;
  throw InvalidArgument("unknown instrument '" + std::string(name) + "'");
}

double adsr(const Timbre& t, double time_s, double duration_s) {
  const auto held = [&](double s) {
    if (s < t.attack) return s / t.attack;
    if (s < t.attack + t.decay) return 1.0 - (1.0 - t.sustain) * (s - t.attack) / t.decay;
    return t.sustain;
  };
  if (time_s < 0 || time_s >= duration_s) return 0.0;
  const double release = std::min(t.release, duration_s);
  const double release_start = duration_s - release;
  if (time_s < release_start) return held(time_s);
  const double level = held(release_start);
  return release > 0 ? level * (duration_s - time_s) / release : 0.0;
}

namespace {

// Adds amp * sin(2 pi f n / sr) * env[n] over n by complex rotation,
// renormalized every block so the oscillator stays on the unit circle.
void add_partial(std::vector<double>& out, const std::vector<double>& env, double f, double amp, int sr) {
  const double w = 2.0 * std::numbers::pi * f / sr;
  const std::complex<double> step(std::cos(w), std::sin(w));
  std::complex<double> z(1.0, 0.0);
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] += amp * env[n] * z.imag();
    z *= step;
    if ((n & 1023) == 1023) z /= std::abs(z);
  }
}

void scale_to_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m == 0.0) return;
  const double g = peak / m;
  for (double& v : x) {
    v *= g;
    if (std::abs(v) < 1e-30) v = 0.0;
  }
}

std::vector<double> render_samples(const Timbre& t, const std::vector<int>& notes, std::size_t n, int sr) {
  if (notes.empty()) throw InvalidArgument("render_instrument: empty note set");
  const double duration = static_cast<double>(n) / sr;
  std::vector<double> env(n);
  for (std::size_t i = 0; i < n; ++i) env[i] = adsr(t, static_cast<double>(i) / sr, duration);
  std::vector<double> out(n, 0.0);
  for (int note : notes) {
    const double f0 = note_freq(note);
    for (std::size_t h = 0; h < t.harmonics.size(); ++h) {
      const double f = f0 * static_cast<double>(h + 1);
      if (f >= 0.5 * sr) break;
      if (t.harmonics[h] != 0.0) add_partial(out, env, f, t.harmonics[h], sr);
    }
  }
  if (t.drive > 0.0) {
    scale_to_peak(out, 1.0);
    const double norm = std::tanh(t.drive);
    for (double& v : out) v = std::tanh(t.drive * v) / norm;
  }
  scale_to_peak(out, kSynthPeak);
  return out;
}

}  // namespace

AudioBuffer render_instrument(const Timbre& timbre, const std::vector<int>& notes, double duration_s,
                              int sample_rate) {
  if (!(duration_s > 0)) throw InvalidArgument("render_instrument: duration must be positive");
  AudioBuffer b;
  b.sample_rate = sample_rate;
  b.samples = render_samples(timbre, notes, static_cast<std::size_t>(std::lround(duration_s * sample_rate)),
                             sample_rate);
  return b;
}

AudioBuffer render_instrument(std::string_view instrument, const std::vector<int>& notes, double duration_s,
                              int sample_rate) {
  return render_instrument(find_timbre(instrument), notes, duration_s, sample_rate);
}

std::string ModelSignalSpec::stem() const {
  return instrument + "_" + std::string(chord_name(chord)) + "_" + std::string(key_name(key));
}

std::vector<ModelSignalSpec> model_signal_specs() {
  std::vector<ModelSignalSpec> out;
  for (const auto& t : builtin_timbres())
    for (Chord c : kChords)
      for (Key k : kKeys) out.push_back({t.name, c, k});
  return out;
}

std::vector<int> stepped_voicing(const std::vector<int>& notes, std::size_t step) {
  std::vector<int> v = notes;
  std::sort(v.begin(), v.end());
  for (std::size_t s = 0; s < step && !v.empty(); ++s) {
    v.front() += 12;
    std::sort(v.begin(), v.end());
  }
  return v;
}

AudioBuffer model_signal(const ModelSignalSpec& spec) {
  const Timbre& timbre = find_timbre(spec.instrument);
  const auto notes = chord_notes(spec.chord, key_midi(spec.key));
  const std::size_t hit = kModelSignalSamples / kHitsPerSignal;
  AudioBuffer b;
  b.sample_rate = kDefaultSampleRate;
  b.samples.reserve(kModelSignalSamples);
  for (std::size_t i = 0; i < kHitsPerSignal; ++i) {
    const auto s = render_samples(timbre, stepped_voicing(notes, i), hit, kDefaultSampleRate);
    b.samples.insert(b.samples.end(), s.begin(), s.end());
  }
  return b;
}

std::vector<CorpusItem> build_model_corpus(unsigned jobs) {
  const auto specs = model_signal_specs();
  std::vector<CorpusItem> out(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t i) { out[i] = {specs[i], model_signal(specs[i])}; });
  return out;
}

void write_model_corpus(const std::vector<CorpusItem>& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError("cannot open " + (dir / "manifest.csv").string() + " for writing");
  manifest << "file,instrument,chord,key,root_midi\n";
  for (const auto& item : corpus) {
    const std::string file = item.spec.stem() + ".wav";
    write_wav(dir / file, item.audio);
    manifest << file << ',' << item.spec.instrument << ',' << chord_name(item.spec.chord) << ','
             << key_name(item.spec.key) << ',' << key_midi(item.spec.key) << '\n';
  }
  if (!manifest) throw IoError("write failed for " + (dir / "manifest.csv").string());
}

std::vector<CorpusItem> read_model_corpus(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != "file,instrument,chord,key,root_midi") throw FormatError(path.string() + ": bad header");
  std::vector<CorpusItem> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(trim(cell));
    if (f.size() != 5) throw FormatError(path.string() + ": line " + std::to_string(line_no) + " needs 5 fields");
    CorpusItem item;
    try {
      find_timbre(f[1]);
      item.spec = {f[1], parse_chord(f[2]), parse_key(f[3])};
    } catch (const InvalidArgument& e) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    item.audio = read_wav(dir / f[0]);
    out.push_back(std::move(item));
  }
  return out;
}

const std::vector<std::string>& genre_class_names() {
  static const std::vector<std::string> names = {"percussive", "harmonic", "mixed"};
  return names;
}

namespace {

// RBJ band-pass biquad (constant skirt gain).
struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad bandpass(double center_hz, double q, int sr) {
    const double w = 2.0 * std::numbers::pi * center_hz / sr;
    const double alpha = std::sin(w) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    return {alpha / a0, 0.0, -alpha / a0, -2.0 * std::cos(w) / a0, (1.0 - alpha) / a0};
  }
  double operator()(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1, x1 = x, y2 = y1, y1 = y;
    return y;
  }
};

void add_noise_bursts(std::vector<double>& out, int sr, std::mt19937_64& rng) {
  const double bpm = uniform(rng, 90.0, 150.0);
  const double step_s = 60.0 / bpm / 4.0;
  const double low_center = uniform(rng, 90.0, 220.0);
  for (std::size_t s = 0;; ++s) {
    const auto start = static_cast<std::size_t>(std::lround(static_cast<double>(s) * step_s * sr));
    if (start >= out.size()) break;
    const bool downbeat = s % 4 == 0;
    if (uniform01(rng) > (downbeat ? 0.9 : 0.35)) continue;
    const bool low = downbeat && uniform01(rng) < 0.5;
    auto filter = Biquad::bandpass(low ? low_center : uniform(rng, 800.0, 5000.0), uniform(rng, 0.7, 2.0), sr);
    const double tau = uniform(rng, 0.015, 0.06);
    const double amp = uniform(rng, 0.4, 1.0) * (low ? 3.0 : 1.0);
    const auto len = std::min(out.size() - start, static_cast<std::size_t>(6 * tau * sr));
    for (std::size_t n = 0; n < len; ++n)
      out[start + n] += amp * std::exp(-static_cast<double>(n) / (tau * sr)) * filter(uniform(rng, -1.0, 1.0));
  }
}

void add_pads(std::vector<double>& out, int sr, std::mt19937_64& rng) {
  static constexpr Chord kPadChords[] = {Chord::major, Chord::minor, Chord::sus4, Chord::major7, Chord::minor7};
  static constexpr const char* kPadTimbres[] = {"strings", "organ", "saxophone"};
  Timbre t = find_timbre(kPadTimbres[uniform_index(rng, 3)]);
  t.attack = uniform(rng, 0.2, 0.6);
  t.release = uniform(rng, 0.2, 0.5);
  t.sustain = 0.9;
  const std::size_t changes = 1 + uniform_index(rng, 3);
  const std::size_t seg = out.size() / changes;
  for (std::size_t c = 0; c < changes; ++c) {
    const int root = 45 + static_cast<int>(uniform_index(rng, 16));
    const auto notes = chord_notes(kPadChords[uniform_index(rng, 5)], root);
    const std::size_t len = c + 1 == changes ? out.size() - c * seg : seg;
    // two slightly detuned voices
    auto a = render_samples(t, notes, len, sr);
    std::vector<double> env(len);
    for (std::size_t i = 0; i < len; ++i) env[i] = adsr(t, static_cast<double>(i) / sr, static_cast<double>(len) / sr);
    const double detune = std::exp2(uniform(rng, 2.0, 6.0) / 1200.0);
    for (int note : notes)
      if (note_freq(note) * detune < 0.5 * sr) add_partial(a, env, note_freq(note) * detune, 0.3, sr);
    for (std::size_t i = 0; i < len; ++i) out[c * seg + i] += a[i];
  }
}

void add_bass(std::vector<double>& out, int sr, std::mt19937_64& rng) {
  const double beat_s = 60.0 / uniform(rng, 80.0, 140.0);
  const int root = 28 + static_cast<int>(uniform_index(rng, 13));
  static constexpr int kSteps[] = {0, 0, 7, 5, 12, 3};
  for (std::size_t b = 0;; ++b) {
    const auto start = static_cast<std::size_t>(std::lround(static_cast<double>(b) * beat_s * sr));
    if (start >= out.size()) break;
    const double f = note_freq(root + kSteps[uniform_index(rng, 6)]);
    const double tau = uniform(rng, 0.08, 0.2);
    const auto len = std::min(out.size() - start, static_cast<std::size_t>(5 * tau * sr));
    for (std::size_t n = 0; n < len; ++n) {
      const double t = static_cast<double>(n) / sr;
      const double env = std::min(1.0, t / 0.005) * std::exp(-t / tau);
      out[start + n] += 0.8 * env * (std::sin(2 * std::numbers::pi * f * t) + 0.4 * std::sin(4 * std::numbers::pi * f * t));
    }
  }
}

}  // namespace

std::vector<GenreClip> generate_genre_audio(const GenreDatasetSpec& spec) {
  if (spec.clips_per_class < 1) throw InvalidArgument("genre dataset needs at least one clip per class");
  if (!(spec.clip_seconds > 0) || spec.sample_rate <= 0) throw InvalidArgument("bad clip length or sample rate");
  const auto n = static_cast<std::size_t>(std::lround(spec.clip_seconds * spec.sample_rate));
  std::vector<GenreClip> clips(spec.clips_per_class * kGenreClasses);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const int label = static_cast<int>(i % kGenreClasses);
    std::mt19937_64 rng(derive_seed(spec.seed, 0x47454E5245ULL, i));
    std::vector<double> x(n, 0.0);
    if (label == 0) {
      add_noise_bursts(x, spec.sample_rate, rng);
    } else if (label == 1) {
      add_pads(x, spec.sample_rate, rng);
    } else {
      std::vector<double> drums(n, 0.0), pads(n, 0.0), bass(n, 0.0);
      add_noise_bursts(drums, spec.sample_rate, rng);
      add_pads(pads, spec.sample_rate, rng);
      add_bass(bass, spec.sample_rate, rng);
      scale_to_peak(drums, 1.0);
      scale_to_peak(pads, uniform(rng, 0.4, 0.8));
      scale_to_peak(bass, uniform(rng, 0.4, 0.8));
      for (std::size_t k = 0; k < n; ++k) x[k] = drums[k] + pads[k] + bass[k];
    }
    scale_to_peak(x, kSynthPeak);
    clips[i].audio.sample_rate = spec.sample_rate;
    clips[i].audio.samples = std::move(x);
    clips[i].label = label;
  }
  return clips;
}

void write_genre_dataset(const std::vector<GenreClip>& clips, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto labels_path = dir / "labels.csv";
  std::ofstream labels(labels_path, std::ios::trunc);
  if (!labels) throw IoError("cannot open " + labels_path.string() + " for writing");
  labels << "file,label,class\n";
  const auto& names = genre_class_names();
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto label = static_cast<std::size_t>(clips[i].label);
    if (label >= names.size()) throw InvalidArgument("genre label " + std::to_string(label) + " out of range");
    char file[64];
    std::snprintf(file, sizeof file, "%s_%04zu.wav", names[label].c_str(), i);
    write_wav(dir / file, clips[i].audio);
    labels << file << ',' << label << ',' << names[label] << '\n';
  }
  labels.flush();
  if (!labels) throw IoError("write failed for " + labels_path.string());
}

std::vector<GenreClip> read_genre_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "labels.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != "file,label,class") throw FormatError(path.string() + ": bad header");
  std::vector<GenreClip> out;
  for (int line_no = 2; std::getline(in, line); ++line_no) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(trim(cell));
    const auto fail = [&] { return FormatError(path.string() + ": malformed line " + std::to_string(line_no)); };
    if (f.size() != 3) throw fail();
    GenreClip clip;
    const auto& names = genre_class_names();
    const auto it = std::find(names.begin(), names.end(), f[2]);
    if (it == names.end() || f[1] != std::to_string(it - names.begin())) throw fail();
    clip.label = static_cast<int>(it - names.begin());
    clip.audio = read_wav(dir / f[0]);
    out.push_back(std::move(clip));
  }
  return out;
}

Tensor3 spectrogram_input(const AudioBuffer& audio, const StftParams& params) {
  return normalize_magnitude(stft(audio, params.n_fft, params.hop).magnitude);
}

std::vector<Example> generate_genre_dataset(const GenreDatasetSpec& spec, unsigned jobs) {
  const auto clips = generate_genre_audio(spec);
  std::vector<Example> out(clips.size());
  parallel_for(clips.size(), jobs, [&](std::size_t i) {
    out[i] = {spectrogram_input(clips[i].audio), clips[i].label};
  });
  return out;
}

}  // namespace auralcnn
