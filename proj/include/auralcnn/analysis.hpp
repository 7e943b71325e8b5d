#pragma once

// Effective receptive-field table and the pairwise-correlation robustness
// study over the model-signal corpus.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "auralcnn/deconv.hpp"
#include "auralcnn/dsp.hpp"
#include "auralcnn/nn/model.hpp"
#include "auralcnn/synth.hpp"

namespace auralcnn {

inline constexpr std::size_t kRfLayers = 5;
/// Layer-5 height printed in the published table; the consistent rule gives about 1055 Hz.
inline constexpr double kPublishedLayer5HeightHz = 1270.0;

struct RfEntry {
  std::size_t layer = 0;
  std::size_t pixels_per_axis = 0;  // 3 * 2^(layer - 1)
  double width_ms = 0;              // with the frame hop rounded to 0.1 ms, as tabulated
  double width_ms_exact = 0;        // ((n - 1) hop + n_fft) / sr
  double height_hz = 0;             // (n + 1) sr / n_fft
};

/// Throws InvalidArgument for a layer outside 1..5.
RfEntry effective_rf(std::size_t layer, const StftParams& params = {});
std::vector<RfEntry> rf_table(const StftParams& params = {});

/// Exact receptive field in input pixels of one unit of 1-based `layer` for
/// 3x3 same convolutions and 2x2 pooling: 3, 8, 18, 38, 78 before pooling,
/// 4, 10, 22, 46, 94 after.
std::size_t exact_receptive_field(std::size_t layer, bool after_pool = false);

/// Pearson product-moment correlation, clamped to [-1, 1]. nullopt when either
/// input is constant. Throws InvalidArgument on differing lengths or fewer than two values.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

enum class Attribute { key, chord, instrument };
inline constexpr Attribute kAttributes[] = {Attribute::key, Attribute::chord, Attribute::instrument};
std::string_view attribute_name(Attribute a);
Attribute parse_attribute(std::string_view name);
/// Values of the varied attribute per cell: 4, 8, 7.
std::size_t attribute_values(Attribute a);
/// C(values, 2): 6, 28, 21.
std::size_t pairs_per_cell(Attribute a);
/// Settings of the two fixed attributes: 56, 28, 32.
std::size_t fixings(Attribute a);

struct CorrelationRow {
  std::size_t layer = 0;
  Attribute attribute = Attribute::key;
  double mean = 0;
  double std = 0;  // population standard deviation
  std::size_t n_pairs = 0;
  std::size_t n_skipped = 0;  // pairs involving a constant map
  friend bool operator==(const CorrelationRow&, const CorrelationRow&) = default;
};

struct CorrelationReport {
  std::vector<CorrelationRow> rows;  // layer-major, attributes in request order
};

struct StudyOptions {
  StftParams stft;
  DeconvOptions deconv;
  unsigned jobs = 1;
};

/// For every layer, feature and fixing of the two other attributes, deconvolves
/// the feature (keep all) for each value of the varied attributes and
/// correlates every pair of flattened maps. One forward pass per signal and
/// one deconvolution per (signal, layer, feature) are shared by all requested
/// attributes. Deterministic for any `jobs`. Throws InvalidArgument listing
/// missing or duplicated specs when the corpus is not the complete 224 set.
CorrelationReport correlation_study(const CnnModel& model, const std::vector<CorpusItem>& corpus,
                                    std::span<const Attribute> attributes, const StudyOptions& opts = {});
CorrelationReport correlation_study(const CnnModel& model, const std::vector<CorpusItem>& corpus,
                                    Attribute attribute, const StudyOptions& opts = {});

/// Header of every correlation file.
inline constexpr std::string_view kCorrelationHeader = "layer,attribute,mean,std,n_pairs,n_skipped";

/// Writes correlation_{key,chord,instrument}.csv (that attribute's rows) and
/// correlation_long.csv (all rows). Throws IoError.
void emit_report(const CorrelationReport& report, const std::filesystem::path& out_dir);
/// Parses any file written by emit_report. Throws IoError or FormatError.
CorrelationReport read_report(const std::filesystem::path& csv);

/// rf_table.csv: layer,pixels_per_axis,width_ms,width_ms_exact,height_hz,exact_rf_pixels.
void write_rf_table(const std::vector<RfEntry>& table, const std::filesystem::path& csv);

}  // namespace auralcnn
