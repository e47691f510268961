#include "cocodr/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cocodr/error.hpp"

namespace cocodr {
namespace {

constexpr const char* kMagic = "COCODR-ARCHIVE 1";

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  return tmp;
}

void commit(const std::filesystem::path& tmp, const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace

void Archive::add(std::string name, std::vector<double> values) {
  blocks.emplace_back(std::move(name), std::move(values));
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, v] : blocks)
    if (n == name) return true;
  return false;
}

const std::vector<double>& Archive::block(const std::string& name) const {
  for (const auto& [n, v] : blocks)
    if (n == name) return v;
  throw DataError("archive has no block `" + name + "`");
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header = {{"kind", archive.kind}, {"meta", archive.meta}, {"blocks", nlohmann::json::array()}};
  for (const auto& [name, values] : archive.blocks)
    header["blocks"].push_back({{"name", name}, {"length", values.size()}});
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << kMagic << '\n' << header.dump() << '\n';
    for (const auto& [name, values] : archive.blocks)
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  commit(tmp, path);
}

Archive read_archive(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kMagic) throw DataError(path.string() + ": not a cocodr archive");
  if (!std::getline(in, header_line)) throw DataError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header (" + e.what() + ")");
  }
  Archive archive;
  try {
    archive.kind = header.at("kind").get<std::string>();
    archive.meta = header.at("meta");
    for (const auto& b : header.at("blocks")) {
      std::vector<double> values(b.at("length").get<std::size_t>());
      in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
      if (!in) throw DataError(path.string() + ": truncated block `" + b.at("name").get<std::string>() + "`");
      archive.add(b.at("name").get<std::string>(), std::move(values));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header (" + e.what() + ")");
  }
  if (!expected_kind.empty() && archive.kind != expected_kind)
    throw DataError(path.string() + ": expected a `" + expected_kind + "` archive, found `" + archive.kind + "`");
  return archive;
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  commit(tmp, path);
}

}  // namespace cocodr
