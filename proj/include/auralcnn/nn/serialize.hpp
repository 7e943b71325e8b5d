#pragma once

#include <filesystem>

#include "auralcnn/nn/model.hpp"

namespace auralcnn {

inline constexpr int kModelFormatVersion = 1;

/// Writes `manifest_path` (key = value text) and a sibling blob with the
/// extension replaced by ".bin". The blob holds little-endian float32
/// parameters in model order: each conv layer's weights [out][in][3][3] then
/// bias, then each dense layer's weights [out][in] then bias.
void save_model(const CnnModel& model, const std::filesystem::path& manifest_path);

/// Throws FormatError for an unreadable manifest, CorruptionError when the
/// blob disagrees with the manifest shapes.
CnnModel load_model(const std::filesystem::path& manifest_path);

}  // namespace auralcnn
