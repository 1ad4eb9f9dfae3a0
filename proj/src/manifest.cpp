#include "hacseg/manifest.hpp"

#include <fstream>

#include "hacseg/error.hpp"

namespace hacseg {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path,
                                         const std::optional<std::filesystem::path>& data_root) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot open manifest: " + path.string());
  const std::filesystem::path base = data_root ? *data_root : path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    ManifestEntry e;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      e.image = resolve(line);
    } else {
      const std::string image = trim(line.substr(0, comma));
      const std::string mask = trim(line.substr(comma + 1));
      if (image.empty() || mask.find(',') != std::string::npos) {
        fail(ErrorKind::Data, path.string() + ":" + std::to_string(line_no) + ": malformed entry");
      }
      e.image = resolve(image);
      if (!mask.empty()) e.mask = resolve(mask);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write manifest: " + path.string());
  for (const auto& e : entries) {
    out << e.image.string();
    if (e.mask) out << ',' << e.mask->string();
    out << '\n';
  }
}

std::string frame_stem(const std::filesystem::path& image) { return image.stem().string(); }

}  // namespace hacseg
