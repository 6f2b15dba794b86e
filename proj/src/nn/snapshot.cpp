#include "fedclust/nn/snapshot.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "fedclust/errors.hpp"
#include "json.hpp"

namespace fedclust::nn {

namespace {

constexpr char kMagic[8] = {'F', 'C', 'N', 'E', 'T', 'B', 'I', 'N'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("snapshot: truncated file");
  return v;
}

}  // namespace

void save_snapshot_binary(const std::string& path, const Snapshot& snap) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StageError("snapshot: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(snap.layout.blocks.size()));
  for (const auto& b : snap.layout.blocks) {
    write_pod(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_pod(out, static_cast<std::uint64_t>(b.offset));
    write_pod(out, static_cast<std::uint64_t>(b.rows));
    write_pod(out, static_cast<std::uint64_t>(b.cols));
  }
  write_pod(out, static_cast<std::uint64_t>(snap.params.size()));
  out.write(reinterpret_cast<const char*>(snap.params.data()),
            static_cast<std::streamsize>(snap.params.size() * sizeof(double)));
  if (!out) throw StageError("snapshot: write failed for " + path);
}

Snapshot load_snapshot_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("snapshot: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("snapshot: bad magic in " + path);
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw ParseError("snapshot: unsupported version " + std::to_string(version));
  }
  Snapshot snap;
  const auto n_blocks = read_pod<std::uint64_t>(in);
  snap.layout.blocks.resize(n_blocks);
  for (auto& b : snap.layout.blocks) {
    const auto len = read_pod<std::uint32_t>(in);
    b.name.resize(len);
    in.read(b.name.data(), len);
    b.offset = read_pod<std::uint64_t>(in);
    b.rows = read_pod<std::uint64_t>(in);
    b.cols = read_pod<std::uint64_t>(in);
  }
  const auto n_params = read_pod<std::uint64_t>(in);
  snap.params.resize(n_params);
  in.read(reinterpret_cast<char*>(snap.params.data()),
          static_cast<std::streamsize>(n_params * sizeof(double)));
  if (!in) throw ParseError("snapshot: truncated parameter vector");
  snap.layout.total = n_params;
  return snap;
}

void save_snapshot_json(const std::string& path, const Snapshot& snap) {
  nlohmann::json j;
  j["format"] = "fedclust-net";
  j["version"] = kVersion;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : snap.layout.blocks) {
    j["blocks"].push_back({{"name", b.name},
                           {"offset", b.offset},
                           {"rows", b.rows},
                           {"cols", b.cols}});
  }
  j["params"] = snap.params;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StageError("snapshot: cannot write " + path);
  out << j.dump(2) << "\n";
}

Snapshot load_snapshot_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StageError("snapshot: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("snapshot: invalid JSON in " + path + ": " + e.what());
  }
  if (j.value("format", "") != "fedclust-net" || j.value("version", 0) != kVersion) {
    throw ParseError("snapshot: unrecognized JSON container in " + path);
  }
  Snapshot snap;
  for (const auto& jb : j.at("blocks")) {
    snap.layout.blocks.push_back({jb.at("name").get<std::string>(),
                                  jb.at("offset").get<std::size_t>(),
                                  jb.at("rows").get<std::size_t>(),
                                  jb.at("cols").get<std::size_t>()});
  }
  snap.params = j.at("params").get<std::vector<double>>();
  snap.layout.total = snap.params.size();
  return snap;
}

}  // namespace fedclust::nn
