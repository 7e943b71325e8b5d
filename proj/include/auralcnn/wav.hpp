#pragma once

#include <filesystem>

#include "auralcnn/dsp.hpp"

namespace auralcnn {

/// Reads a RIFF/WAVE file. Integer PCM of 8/16/24/32 bits and 32-bit float
/// are accepted; channels are averaged to mono. Throws FormatError.
AudioBuffer read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono, little-endian. Samples are clamped to [-1, 1] and
/// scaled by 32767.
void write_wav(const std::filesystem::path& path, const AudioBuffer& buffer);

}  // namespace auralcnn
