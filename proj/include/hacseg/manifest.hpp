#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hacseg {

struct ManifestEntry {
  std::filesystem::path image;
  std::optional<std::filesystem::path> mask;
};

/// Reads `image_path[,mask_path]` lines. Blank lines and lines starting with
/// '#' are skipped. Relative paths resolve against `data_root` when given,
/// otherwise against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path,
                                         const std::optional<std::filesystem::path>& data_root = {});

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// File stem without extension, used to name derived outputs.
std::string frame_stem(const std::filesystem::path& image);

}  // namespace hacseg
