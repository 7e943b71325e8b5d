#include "auralcnn/nn/serialize.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "auralcnn/errors.hpp"

namespace auralcnn {

namespace {

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t count_floats(const CnnModel& m) {
  std::size_t n = 0;
  for (const auto& c : m.conv) n += c.weights.size() + c.bias.size();
  for (const auto& d : m.dense) n += d.weights.size() + d.bias.size();
  return n;
}

void append_floats(std::string& out, const std::vector<double>& v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidArgument("save_model: non-finite parameter in " + what);
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
  }
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + p.string());
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  if (p == manifest) p += ".bin";
  return p;
}

}  // namespace

void save_model(const CnnModel& model, const std::filesystem::path& manifest_path) {
  model.validate();
  const auto blob_path = blob_path_for(manifest_path);

  std::string blob;
  blob.reserve(4 * count_floats(model));
  for (std::size_t l = 0; l < model.conv.size(); ++l) {
    append_floats(blob, model.conv[l].weights, "conv layer " + std::to_string(l + 1));
    append_floats(blob, model.conv[l].bias, "conv layer " + std::to_string(l + 1));
  }
  for (std::size_t l = 0; l < model.dense.size(); ++l) {
    append_floats(blob, model.dense[l].weights, "dense layer " + std::to_string(l + 1));
    append_floats(blob, model.dense[l].bias, "dense layer " + std::to_string(l + 1));
  }

  std::ostringstream m;
  m << "# auralcnn model manifest\n";
  m << "format_version = " << kModelFormatVersion << "\n";
  m << "blob = " << blob_path.filename().string() << "\n";
  m << "blob_floats = " << count_floats(model) << "\n";
  m << "input_shape = " << model.input_shape.channels << " " << model.input_shape.rows << " "
    << model.input_shape.cols << "\n";
  m << "dropout_rate = " << format_double(model.dropout_rate) << "\n";
  m << "class_names = ";
  for (std::size_t i = 0; i < model.class_names.size(); ++i) m << (i ? "," : "") << model.class_names[i];
  m << "\n";
  for (const auto& c : model.conv)
    m << "layer = conv " << c.in_channels << " " << c.out_channels << " " << kKernelSize << " "
      << kKernelSize << "\n";
  for (const auto& d : model.dense) m << "layer = dense " << d.in_features << " " << d.out_features << "\n";

  write_file(blob_path, blob);
  write_file(manifest_path, m.str());
}

CnnModel load_model(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  const auto fail = [&](const std::string& why) {
    return FormatError(manifest_path.string() + ": " + why);
  };

  CnnModel model;
  int version = -1;
  std::string blob_name;
  std::size_t blob_floats = 0;
  bool have_input = false, have_dropout = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("line " + std::to_string(line_no) + " has no '='");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream vs(value);
    if (key == "format_version") {
      vs >> version;
    } else if (key == "blob") {
      blob_name = value;
    } else if (key == "blob_floats") {
      vs >> blob_floats;
    } else if (key == "input_shape") {
      vs >> model.input_shape.channels >> model.input_shape.rows >> model.input_shape.cols;
      have_input = true;
    } else if (key == "dropout_rate") {
      vs >> model.dropout_rate;
      have_dropout = true;
    } else if (key == "class_names") {
      model.class_names.clear();
      for (std::size_t begin = 0; !value.empty() && begin <= value.size();) {
        const auto comma = std::min(value.find(',', begin), value.size());
        model.class_names.push_back(trim(value.substr(begin, comma - begin)));
        begin = comma + 1;
      }
    } else if (key == "layer") {
      std::string kind;
      vs >> kind;
      if (kind == "conv") {
        std::size_t ci = 0, co = 0, kh = 0, kw = 0;
        vs >> ci >> co >> kh >> kw;
        if (kh != kKernelSize || kw != kKernelSize) throw fail("only 3x3 conv kernels are supported");
        model.conv.emplace_back(ci, co);
      } else if (kind == "dense") {
        std::size_t fi = 0, fo = 0;
        vs >> fi >> fo;
        model.dense.emplace_back(fi, fo);
      } else {
        throw fail("unknown layer kind '" + kind + "'");
      }
    } else {
      throw fail("unknown key '" + key + "'");
    }
    if (vs.fail()) throw fail("bad value for '" + key + "' on line " + std::to_string(line_no));
  }
  if (version != kModelFormatVersion)
    throw fail("unsupported format_version " + std::to_string(version));
  if (blob_name.empty() || !have_input || !have_dropout) throw fail("manifest is incomplete");

  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw CorruptionError(manifest_path.string() + ": " + e.what());
  }
  const std::size_t expected = count_floats(model);
  if (blob_floats != expected)
    throw CorruptionError(manifest_path.string() + ": manifest layers need " +
                          std::to_string(expected) + " floats but blob_floats says " +
                          std::to_string(blob_floats));

  const auto blob_path = manifest_path.parent_path() / blob_name;
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw IoError("cannot open " + blob_path.string());
  const std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(bf), {});
  if (bytes.size() != 4 * expected)
    throw CorruptionError(blob_path.string() + ": holds " + std::to_string(bytes.size()) +
                          " bytes, manifest implies " + std::to_string(4 * expected));

  std::size_t pos = 0;
  auto read_into = [&](std::vector<double>& v) {
    for (double& x : v) {
      const unsigned char* p = bytes.data() + pos;
      const std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                              std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
      x = std::bit_cast<float>(u);
      if (!std::isfinite(x)) throw CorruptionError(blob_path.string() + ": non-finite parameter");
      pos += 4;
    }
  };
  for (auto& c : model.conv) {
    read_into(c.weights);
    read_into(c.bias);
  }
  for (auto& d : model.dense) {
    read_into(d.weights);
    read_into(d.bias);
  }
  return model;
}

}  // namespace auralcnn
