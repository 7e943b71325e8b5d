#pragma once

// Additive-synthesis chord signals and a synthetic three-class genre dataset.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "auralcnn/dsp.hpp"
#include "auralcnn/nn/train.hpp"

namespace auralcnn {

/// Equal temperament, A4 (MIDI 69) = 440 Hz. Throws InvalidArgument outside 0..127.
double note_freq(int midi);

enum class Chord { intervals, major, minor, sus4, dominant7, major7, minor7, diminished };
inline constexpr std::array<Chord, 8> kChords = {Chord::intervals, Chord::major,     Chord::minor,
                                                 Chord::sus4,      Chord::dominant7, Chord::major7,
                                                 Chord::minor7,    Chord::diminished};
std::string_view chord_name(Chord c);
/// Throws InvalidArgument for an unknown name.
Chord parse_chord(std::string_view name);
/// Semitone offsets from the root.
std::vector<int> chord_intervals(Chord c);
/// root + chord_intervals(c), ascending.
std::vector<int> chord_notes(Chord c, int root_midi);

enum class Key { Eb2, Bb2, A3, G4 };
inline constexpr std::array<Key, 4> kKeys = {Key::Eb2, Key::Bb2, Key::A3, Key::G4};
std::string_view key_name(Key k);
Key parse_key(std::string_view name);
/// 39, 46, 57, 67.
int key_midi(Key k);

struct Timbre {
  std::string name;
  double attack = 0.01, decay = 0.05, sustain = 1.0, release = 0.05;  // seconds, level
  double drive = 0.0;
  std::vector<double> harmonics;  // amplitude of partial n + 1
};

/// Parses the timbre table format (see data/timbres.txt). Throws FormatError.
std::vector<Timbre> parse_timbres(std::string_view text);
/// The seven built-in instruments, in corpus order.
const std::vector<Timbre>& builtin_timbres();
/// Throws InvalidArgument for an unknown instrument name.
const Timbre& find_timbre(std::string_view name);

/// Attack/decay/sustain envelope with the release occupying the final `release` seconds.
double adsr(const Timbre& t, double time_s, double duration_s);

/// Sum of each note's harmonic series under the instrument's envelope,
/// optionally saturated, then scaled to a 0.8 peak.
AudioBuffer render_instrument(const Timbre& timbre, const std::vector<int>& notes, double duration_s,
                              int sample_rate = kDefaultSampleRate);
AudioBuffer render_instrument(std::string_view instrument, const std::vector<int>& notes,
                              double duration_s, int sample_rate = kDefaultSampleRate);

inline constexpr double kSynthPeak = 0.8;
inline constexpr std::size_t kModelSignalSamples = 44100;
inline constexpr std::size_t kHitsPerSignal = 6;
inline constexpr std::size_t kCorpusSize = 224;

struct ModelSignalSpec {
  std::string instrument;
  Chord chord = Chord::major;
  Key key = Key::A3;

  /// "{instrument}_{chord}_{key}".
  std::string stem() const;
  friend bool operator==(const ModelSignalSpec&, const ModelSignalSpec&) = default;
};

/// All 224 specs, instrument-major, then chord, then key.
std::vector<ModelSignalSpec> model_signal_specs();

/// Voicing of hit `step`: the chord with its lowest tone raised an octave `step` times.
std::vector<int> stepped_voicing(const std::vector<int>& notes, std::size_t step);

/// Four seconds at 11025 Hz: six consecutive block-chord hits of 7350 samples
/// stepping through successive voicings.
AudioBuffer model_signal(const ModelSignalSpec& spec);

struct CorpusItem {
  ModelSignalSpec spec;
  AudioBuffer audio;
};

/// Renders every spec (in model_signal_specs order) on up to `jobs` threads.
std::vector<CorpusItem> build_model_corpus(unsigned jobs = 1);

/// Writes `{stem}.wav` per item and `manifest.csv` (file,instrument,chord,key,root_midi).
void write_model_corpus(const std::vector<CorpusItem>& corpus, const std::filesystem::path& dir);
/// Reads a corpus directory through its manifest.
std::vector<CorpusItem> read_model_corpus(const std::filesystem::path& dir);

struct GenreDatasetSpec {
  std::size_t clips_per_class = 50;
  double clip_seconds = 4.0;
  int sample_rate = kDefaultSampleRate;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kGenreClasses = 3;
/// percussive, harmonic, mixed.
const std::vector<std::string>& genre_class_names();

struct GenreClip {
  AudioBuffer audio;
  int label = 0;
};

/// Class 0: filtered noise bursts on a rhythmic grid. Class 1: sustained chord
/// pads. Class 2: both plus pitched bass pulses. Clips are ordered
/// 0, 1, 2, 0, 1, 2, ...; clip i depends only on (seed, i).
std::vector<GenreClip> generate_genre_audio(const GenreDatasetSpec& spec);

/// Writes `{class}_{index:04}.wav` per clip and labels.csv (file,label,class).
void write_genre_dataset(const std::vector<GenreClip>& clips, const std::filesystem::path& dir);
/// Reads a directory written by write_genre_dataset. Throws IoError or FormatError.
std::vector<GenreClip> read_genre_dataset(const std::filesystem::path& dir);

/// Magnitude spectrogram normalized by its maximum, shaped (1, bins, frames).
Tensor3 spectrogram_input(const AudioBuffer& audio, const StftParams& params = {});

/// generate_genre_audio followed by spectrogram_input.
std::vector<Example> generate_genre_dataset(const GenreDatasetSpec& spec, unsigned jobs = 1);

}  // namespace auralcnn
