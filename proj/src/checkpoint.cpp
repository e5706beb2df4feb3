#include "nav/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace nav {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'N', 'A', 'V', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["meta"] = ck.meta;
  nlohmann::json dir = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& t : ck.tensors) {
    dir.push_back({{"name", t.name},
                   {"shape", t.shape},
                   {"offset", offset},
                   {"count", static_cast<std::int64_t>(t.values.size())}});
    offset += static_cast<std::int64_t>(t.values.size());
  }
  manifest["tensors"] = std::move(dir);
  const std::string mjson = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  NAV_CHECK(out.good(), IoError, "cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t mlen = mjson.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& t : ck.tensors)
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  out.flush();
  NAV_CHECK(out.good(), IoError, "checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  NAV_CHECK(in.good(), IoError, "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  NAV_CHECK(in.gcount() == sizeof(magic) &&
                std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
            IoError, "not a checkpoint file (bad magic): " + path);
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  NAV_CHECK(in.gcount() == sizeof(mlen), IoError,
            "truncated checkpoint header: " + path);
  std::string mjson(mlen, '\0');
  in.read(mjson.data(), static_cast<std::streamsize>(mlen));
  NAV_CHECK(in.gcount() == static_cast<std::streamsize>(mlen), IoError,
            "truncated checkpoint manifest: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mjson);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid checkpoint manifest: " + std::string(e.what()));
  }
  NAV_CHECK(manifest.value("format_version", 0) == 1, IoError,
            "unsupported checkpoint format version in " + path);

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::int64_t>();
    NAV_CHECK(count == shape_numel(t.shape), IoError,
              "checkpoint manifest inconsistent for tensor " + t.name);
    t.values.resize(static_cast<std::size_t>(count));
    ck.tensors.push_back(std::move(t));
  }
  // Payload is stored in directory order; offsets are informational.
  for (auto& t : ck.tensors) {
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    NAV_CHECK(in.gcount() ==
                  static_cast<std::streamsize>(t.values.size() * sizeof(float)),
              IoError, "truncated checkpoint payload at tensor " + t.name);
  }
  return ck;
}

}  // namespace nav
