#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace cocodr {

/// Named float64 blocks plus a JSON metadata header.
///
/// On disk: the line "COCODR-ARCHIVE 1", one line of compact JSON
/// {"kind", "meta", "blocks": [{"name", "length"}...]}, then the raw
/// little-endian doubles of every block in header order. Reloading is
/// bit-exact.
struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<double>>> blocks;

  void add(std::string name, std::vector<double> values);
  bool has(const std::string& name) const;
  /// Throws DataError when absent.
  const std::vector<double>& block(const std::string& name) const;
};

/// Writes to a temporary sibling and renames, so an interrupted write never
/// clobbers an existing archive.
void write_archive(const std::filesystem::path& path, const Archive& archive);
/// Throws DataError on a malformed file or when `expected_kind` is nonempty
/// and differs from the stored kind.
Archive read_archive(const std::filesystem::path& path, const std::string& expected_kind = {});

/// Atomic text-file replacement with the same temporary-and-rename scheme.
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace cocodr
