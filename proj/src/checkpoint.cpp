#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "bignet/gat.hpp"
#include "json.hpp"

namespace bignet::nn {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'B', 'N', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& at) {
  if (at + sizeof(T) > buf.size()) throw CheckpointError("truncated checkpoint");
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  json header;
  try {
    header["config"] = json::parse(archive.config_json);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("config is not valid JSON: ") + e.what());
  }
  header["format"] = "bignet-checkpoint";
  header["version"] = kCheckpointVersion;
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : archive.tensors) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  header["tensors"] = tensors;
  header["values"] = offset;
  const std::string h = header.dump();

  std::string buf;
  buf.reserve(32 + h.size() + offset * sizeof(double));
  buf.append(kMagic, sizeof kMagic);
  put(buf, kCheckpointVersion);
  put(buf, static_cast<std::uint64_t>(h.size()));
  buf += h;
  for (const auto& [name, m] : archive.tensors)
    buf.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  put(buf, crc_of(buf.data(), buf.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 4 + 8 + 4 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint");
  std::size_t at = sizeof kMagic;
  const auto version = take<std::uint32_t>(buf, at);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  if (stored != crc_of(buf.data(), buf.size() - 4)) throw CheckpointError("checkpoint checksum mismatch");

  const auto hlen = take<std::uint64_t>(buf, at);
  if (at + hlen > buf.size() - 4) throw CheckpointError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(buf.substr(at, hlen));
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  at += hlen;
  const auto values = header.at("values").get<std::uint64_t>();
  if (at + values * sizeof(double) != buf.size() - 4) throw CheckpointError("checkpoint size does not match header");

  Archive a;
  a.config_json = header.at("config").dump();
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
    const auto off = t.at("offset").get<std::uint64_t>();
    if (rows < 0 || cols < 0 || off + static_cast<std::uint64_t>(rows * cols) > values)
      throw CheckpointError("tensor outside data block");
    Mat m(rows, cols);
    std::memcpy(m.data(), buf.data() + at + off * sizeof(double), static_cast<std::size_t>(m.size()) * sizeof(double));
    a.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return a;
}

Archive snapshot(const ParameterStore& store, std::string config_json) {
  Archive a;
  a.config_json = std::move(config_json);
  for (const auto& [name, v] : store.items()) a.tensors.emplace_back(name, v->value);
  return a;
}

void restore(ParameterStore& store, const Archive& archive) {
  std::unordered_map<std::string, const Mat*> by_name;
  for (const auto& [name, m] : archive.tensors) by_name[name] = &m;
  for (const auto& [name, v] : store.items()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (it->second->rows() != v->value.rows() || it->second->cols() != v->value.cols())
      throw CheckpointError("shape mismatch for parameter '" + name + "'");
    v->value = *it->second;
  }
}

}  // namespace bignet::nn
