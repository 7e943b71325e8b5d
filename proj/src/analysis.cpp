#include "auralcnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "auralcnn/errors.hpp"
#include "auralcnn/parallel.hpp"

namespace auralcnn {

RfEntry effective_rf(std::size_t layer, const StftParams& params) {
  if (layer < 1 || layer > kRfLayers)
    throw InvalidArgument("receptive field layer " + std::to_string(layer) + " outside 1.." +
                          std::to_string(kRfLayers));
  params.validate();
  RfEntry e;
  e.layer = layer;
  e.pixels_per_axis = std::size_t{3} << (layer - 1);
  const double n = static_cast<double>(e.pixels_per_axis);
  const double span_hops = (n - 1) + static_cast<double>(params.n_fft) / params.hop;
  const double hop_ms = 1000.0 * params.hop / params.sample_rate;
  e.width_ms = span_hops * std::round(hop_ms * 10.0) / 10.0;
  e.width_ms_exact = span_hops * hop_ms;
  e.height_hz = (n + 1) * params.bin_hz();
  return e;
}

std::vector<RfEntry> rf_table(const StftParams& params) {
  std::vector<RfEntry> out;
  for (std::size_t l = 1; l <= kRfLayers; ++l) out.push_back(effective_rf(l, params));
  return out;
}

std::size_t exact_receptive_field(std::size_t layer, bool after_pool) {
  if (layer < 1) throw InvalidArgument("receptive field layer must be >= 1");
  std::size_t rf = 1, jump = 1;
  for (std::size_t l = 1; l <= layer; ++l) {
    rf += 2 * jump;  // 3x3 convolution
    if (l < layer || after_pool) {
      rf += jump;  // 2x2 pooling
      jump *= 2;
    }
  }
  return rf;
}

namespace {

// Centers x and returns the sum of squares, or nullopt for a constant input.
std::optional<double> center(std::span<const double> x, std::vector<double>& out) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*lo == *hi) return std::nullopt;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  out.resize(x.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] - mean;
    ss += out[i] * out[i];
  }
  return ss;
}

// Eight interleaved partial sums (vectorizable, fixed summation order).
double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double part[8] = {};
  const std::size_t n = a.size(), body = n - n % 8;
  for (std::size_t i = 0; i < body; i += 8)
    for (std::size_t j = 0; j < 8; ++j) part[j] += a[i + j] * b[i + j];
  double s = 0.0;
  for (double p : part) s += p;
  for (std::size_t i = body; i < n; ++i) s += a[i] * b[i];
  return s;
}

double clamp_r(double r) { return std::clamp(r, -1.0, 1.0); }

}  // namespace

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw InvalidArgument("pearson: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  if (a.size() < 2) throw InvalidArgument("pearson needs at least two values");
  std::vector<double> ca, cb;
  const auto ssa = center(a, ca);
  const auto ssb = center(b, cb);
  if (!ssa || !ssb) return std::nullopt;
  return clamp_r(dot(ca, cb) / std::sqrt(*ssa * *ssb));
}

std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::key: return "key";
    case Attribute::chord: return "chord";
    case Attribute::instrument: return "instrument";
  }
  throw InvalidArgument("unknown attribute");
}

Attribute parse_attribute(std::string_view name) {
  for (Attribute a : kAttributes)
    if (attribute_name(a) == name) return a;
  throw InvalidArgument("unknown attribute '" + std::string(name) + "' (key, chord or instrument)");
}

std::size_t attribute_values(Attribute a) {
  switch (a) {
    case Attribute::key: return kKeys.size();
    case Attribute::chord: return kChords.size();
    case Attribute::instrument: return builtin_timbres().size();
  }
  throw InvalidArgument("unknown attribute");
}

std::size_t pairs_per_cell(Attribute a) {
  const std::size_t n = attribute_values(a);
  return n * (n - 1) / 2;
}

std::size_t fixings(Attribute a) { return kCorpusSize / attribute_values(a); }

namespace {

constexpr std::size_t kInstruments = 7;

// Position of a spec in model_signal_specs order: instrument-major, then chord, then key.
std::size_t spec_index(std::size_t instrument, std::size_t chord, std::size_t key) {
  return (instrument * kChords.size() + chord) * kKeys.size() + key;
}

// Reorders the corpus into canonical spec order, rejecting gaps and duplicates.
std::vector<const CorpusItem*> index_corpus(const std::vector<CorpusItem>& corpus) {
  const auto specs = model_signal_specs();
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < specs.size(); ++i) position[specs[i].stem()] = i;
  std::vector<const CorpusItem*> slots(specs.size(), nullptr);
  std::vector<std::string> problems;
  for (const auto& item : corpus) {
    const auto it = position.find(item.spec.stem());
    if (it == position.end()) {
      problems.push_back("unexpected " + item.spec.stem());
    } else if (slots[it->second]) {
      problems.push_back("duplicate " + item.spec.stem());
    } else {
      slots[it->second] = &item;
    }
  }
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (!slots[i]) problems.push_back("missing " + specs[i].stem());
  if (!problems.empty()) {
    std::string msg = "incomplete model-signal corpus (" + std::to_string(problems.size()) + " problems):";
    for (const auto& p : problems) msg += " " + p + ";";
    throw InvalidArgument(msg);
  }
  return slots;
}

// Corpus indices of every cell of `a`: each cell lists the spec indices for
// the attribute's values with the other two attributes fixed.
std::vector<std::vector<std::size_t>> cells(Attribute a) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < kInstruments; ++i)
    for (std::size_t c = 0; c < kChords.size(); ++c)
      for (std::size_t k = 0; k < kKeys.size(); ++k) {
        const bool first = (a == Attribute::key && k == 0) || (a == Attribute::chord && c == 0) ||
                           (a == Attribute::instrument && i == 0);
        if (!first) continue;
        std::vector<std::size_t> cell;
        for (std::size_t v = 0; v < attribute_values(a); ++v)
          cell.push_back(a == Attribute::key     ? spec_index(i, c, v)
                         : a == Attribute::chord ? spec_index(i, v, k)
                                                 : spec_index(v, c, k));
        out.push_back(std::move(cell));
      }
  return out;
}

struct Accumulator {
  std::vector<double> values;
  std::size_t skipped = 0;
};

CorrelationRow summarize(std::size_t layer, Attribute a, const Accumulator& acc) {
  CorrelationRow row{layer, a, NAN, NAN, acc.values.size(), acc.skipped};
  if (acc.values.empty()) return row;
  const double n = static_cast<double>(acc.values.size());
  row.mean = std::accumulate(acc.values.begin(), acc.values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : acc.values) ss += (v - row.mean) * (v - row.mean);
  row.std = std::sqrt(ss / n);
  return row;
}

}  // namespace

CorrelationReport correlation_study(const CnnModel& model, const std::vector<CorpusItem>& corpus,
                                    std::span<const Attribute> attributes, const StudyOptions& opts) {
  const auto items = index_corpus(corpus);
  opts.stft.validate();
  const std::size_t samples = istft_length(model.input_shape.cols, opts.stft.n_fft, opts.stft.hop);

  std::vector<ForwardTrace> traces(items.size());
  parallel_for(items.size(), opts.jobs, [&](std::size_t i) {
    AudioBuffer audio = items[i]->audio;
    if (audio.sample_rate != opts.stft.sample_rate)
      throw InvalidArgument(items[i]->spec.stem() + ": sample rate " + std::to_string(audio.sample_rate) +
                            " Hz, expected " + std::to_string(opts.stft.sample_rate));
    audio.samples.resize(samples, 0.0);
    const auto spec = stft(audio, opts.stft.n_fft, opts.stft.hop);
    ForwardOptions fo;
    fo.keep_pre_pool = false;
    traces[i] = forward(model, normalize_magnitude(spec.magnitude), fo);
  });

  std::vector<std::vector<std::vector<std::size_t>>> attribute_cells;
  for (Attribute a : attributes) attribute_cells.push_back(cells(a));

  CorrelationReport report;
  std::vector<std::vector<double>> unit(items.size());
  std::vector<std::uint8_t> constant(items.size());
  for (std::size_t layer = 1; layer <= model.conv.size(); ++layer) {
    std::vector<Accumulator> acc(attributes.size());
    for (std::size_t f = 0; f < model.conv[layer - 1].out_channels; ++f) {
      parallel_for(items.size(), opts.jobs, [&](std::size_t i) {
        const auto map = deconv_feature(model, traces[i], {layer, f, std::nullopt}, opts.deconv);
        const auto ss = center(map.values.data, unit[i]);
        constant[i] = !ss;
        if (ss) {
          const double inv = 1.0 / std::sqrt(*ss);
          for (double& v : unit[i]) v *= inv;
        }
      });
      for (std::size_t ai = 0; ai < attributes.size(); ++ai) {
        const auto& cs = attribute_cells[ai];
        const std::size_t per_cell = pairs_per_cell(attributes[ai]);
        std::vector<double> r(cs.size() * per_cell);
        std::vector<std::uint8_t> skip(r.size());
        parallel_for(cs.size(), opts.jobs, [&](std::size_t c) {
          std::size_t p = c * per_cell;
          for (std::size_t x = 0; x < cs[c].size(); ++x)
            for (std::size_t y = x + 1; y < cs[c].size(); ++y, ++p) {
              const std::size_t a = cs[c][x], b = cs[c][y];
              skip[p] = constant[a] || constant[b];
              if (!skip[p]) r[p] = clamp_r(dot(unit[a], unit[b]));
            }
        });
        for (std::size_t p = 0; p < r.size(); ++p) {
          if (skip[p]) ++acc[ai].skipped;
          else acc[ai].values.push_back(r[p]);
        }
      }
    }
    for (std::size_t ai = 0; ai < attributes.size(); ++ai)
      report.rows.push_back(summarize(layer, attributes[ai], acc[ai]));
  }
  return report;
}

CorrelationReport correlation_study(const CnnModel& model, const std::vector<CorpusItem>& corpus,
                                    Attribute attribute, const StudyOptions& opts) {
  const Attribute one[] = {attribute};
  return correlation_study(model, corpus, one, opts);
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_rows(const std::filesystem::path& path, const std::vector<CorrelationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kCorrelationHeader << '\n';
  for (const auto& r : rows)
    out << r.layer << ',' << attribute_name(r.attribute) << ',' << format_double(r.mean) << ','
        << format_double(r.std) << ',' << r.n_pairs << ',' << r.n_skipped << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

void emit_report(const CorrelationReport& report, const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  for (Attribute a : kAttributes) {
    std::vector<CorrelationRow> rows;
    for (const auto& r : report.rows)
      if (r.attribute == a) rows.push_back(r);
    write_rows(out_dir / ("correlation_" + std::string(attribute_name(a)) + ".csv"), rows);
  }
  write_rows(out_dir / "correlation_long.csv", report.rows);
}

CorrelationReport read_report(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != kCorrelationHeader)
    throw FormatError(csv.string() + ": expected header '" + std::string(kCorrelationHeader) + "'");
  CorrelationReport report;
  for (int line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    const auto fail = [&] { return FormatError(csv.string() + ": malformed line " + std::to_string(line_no)); };
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw fail();
    CorrelationRow r;
    try {
      std::size_t used = 0;
      const auto whole = [&](const std::string& s) {
        if (used != s.size()) throw fail();
      };
      r.layer = std::stoul(f[0], &used), whole(f[0]);
      r.attribute = parse_attribute(f[1]);
      r.mean = std::stod(f[2], &used), whole(f[2]);
      r.std = std::stod(f[3], &used), whole(f[3]);
      r.n_pairs = std::stoul(f[4], &used), whole(f[4]);
      r.n_skipped = std::stoul(f[5], &used), whole(f[5]);
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception&) {
      throw fail();
    }
    report.rows.push_back(r);
  }
  return report;
}

void write_rf_table(const std::vector<RfEntry>& table, const std::filesystem::path& csv) {
  if (csv.has_parent_path()) ensure_dir(csv.parent_path());
  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw IoError("cannot open " + csv.string() + " for writing");
  out << "layer,pixels_per_axis,width_ms,width_ms_exact,height_hz,exact_rf_pixels\n";
  for (const auto& e : table)
    out << e.layer << ',' << e.pixels_per_axis << ',' << format_double(e.width_ms) << ','
        << format_double(e.width_ms_exact) << ',' << format_double(e.height_hz) << ','
        << exact_receptive_field(e.layer) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + csv.string());
}

}  // namespace auralcnn
