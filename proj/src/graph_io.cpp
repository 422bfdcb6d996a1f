#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "bignet/graph.hpp"
#include "json.hpp"

namespace bignet {

static_assert(std::endian::native == std::endian::little, "graph files are little-endian; add byte swapping");

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'B', 'G', 'R', 'A', 'P', 'H', '0', '1'};

class CrcWriter {
 public:
  explicit CrcWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw GraphIoError("cannot open " + path.string() + " for writing");
  }
  void write(const void* data, std::size_t bytes) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    crc_ = update(crc_, data, bytes);
  }
  template <typename T>
  void pod(const T& v) {
    write(&v, sizeof(T));
  }
  void finish() {
    const std::uint32_t crc = static_cast<std::uint32_t>(crc_);
    out_.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    out_.flush();
    if (!out_) throw GraphIoError("write failed");
  }

  static uLong update(uLong crc, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const Bytef*>(data);
    while (bytes > 0) {
      const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
      crc = crc32(crc, p, chunk);
      p += chunk;
      bytes -= chunk;
    }
    return crc;
  }

 private:
  std::ofstream out_;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

class CrcReader {
 public:
  explicit CrcReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw GraphIoError("cannot open " + path.string());
  }
  void read(void* data, std::size_t bytes) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in_.gcount()) != bytes) throw GraphIoError("truncated file");
    crc_ = CrcWriter::update(crc_, data, bytes);
  }
  template <typename T>
  T pod() {
    T v{};
    read(&v, sizeof(T));
    return v;
  }
  void verify() {
    std::uint32_t stored = 0;
    in_.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (in_.gcount() != sizeof(stored)) throw GraphIoError("truncated file (missing checksum)");
    if (stored != static_cast<std::uint32_t>(crc_)) throw GraphIoError("checksum mismatch");
    if (in_.peek() != std::char_traits<char>::eof()) throw GraphIoError("trailing bytes after checksum");
  }

 private:
  std::ifstream in_;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

}  // namespace

void save_graph(const BimGraph& g, const std::filesystem::path& path) {
  const std::size_t n = g.nodes.size();
  std::vector<std::uint64_t> source_offsets(2 * n + 1, 0);
  std::string blob;
  for (std::size_t i = 0; i < n; ++i) {
    blob += g.nodes[i].source_a;
    source_offsets[2 * i + 1] = blob.size();
    blob += g.nodes[i].source_b;
    source_offsets[2 * i + 2] = blob.size();
  }

  json header = {{"format", "bgraph"},
                 {"version", kGraphFormatVersion},
                 {"mode", to_string(g.mode)},
                 {"nodes", n},
                 {"edges", g.edges.size()},
                 {"feature_values", g.features.size()},
                 {"source_bytes", blob.size()},
                 {"layout", {{"semantic", kSemanticWidth},
                             {"topological", kTopologicalWidth},
                             {"spatial", kSpatialWidth},
                             {"homogeneous", kHomogeneousWidth}}},
                 {"meta", {{"floor_id", g.meta.floor_id},
                           {"spatial_radius_m", g.meta.spatial_radius_m},
                           {"region_id", g.meta.region_id}}}};
  const std::string header_text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    CrcWriter w(tmp);
    w.write(kMagic, sizeof(kMagic));
    w.pod(kGraphFormatVersion);
    w.pod(static_cast<std::uint64_t>(header_text.size()));
    w.write(header_text.data(), header_text.size());
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(g.nodes[i].type);
    w.write(bytes.data(), n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(g.nodes[i].label);
    w.write(bytes.data(), n);
    w.write(g.features.data(), g.features.size() * sizeof(float));
    w.write(g.edges.data(), g.edges.size() * sizeof(std::array<std::uint32_t, 2>));
    w.write(source_offsets.data(), source_offsets.size() * sizeof(std::uint64_t));
    w.write(blob.data(), blob.size());
    w.finish();
  }
  std::filesystem::rename(tmp, path);
}

BimGraph load_graph(const std::filesystem::path& path) {
  CrcReader r(path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw GraphIoError(path.string() + ": not a .bgraph file");
  const auto version = r.pod<std::uint32_t>();
  if (version != kGraphFormatVersion) {
    throw GraphIoError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  const auto header_len = r.pod<std::uint64_t>();
  if (header_len > (1u << 26)) throw GraphIoError("implausible header length");
  std::string header_text(header_len, '\0');
  r.read(header_text.data(), header_len);
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    throw GraphIoError(std::string("corrupt header: ") + e.what());
  }
  if (header.value("version", 0u) != kGraphFormatVersion) throw GraphIoError("header version mismatch");

  BimGraph g;
  try {
    g.mode = graph_mode_from_string(header.at("mode").get<std::string>());
    const auto& meta = header.at("meta");
    g.meta.floor_id = meta.at("floor_id").get<std::string>();
    g.meta.spatial_radius_m = meta.at("spatial_radius_m").get<double>();
    g.meta.region_id = meta.at("region_id").get<std::string>();
  } catch (const std::exception& e) {
    throw GraphIoError(std::string("corrupt header: ") + e.what());
  }
  const auto n = header.at("nodes").get<std::size_t>();
  const auto n_edges = header.at("edges").get<std::size_t>();
  const auto n_values = header.at("feature_values").get<std::size_t>();
  const auto n_source = header.at("source_bytes").get<std::size_t>();

  std::vector<std::uint8_t> types(n), labels(n);
  r.read(types.data(), n);
  r.read(labels.data(), n);
  g.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (types[i] >= kNodeTypeCount) throw GraphIoError("invalid node type at node " + std::to_string(i));
    g.nodes[i].type = static_cast<NodeType>(types[i]);
    g.nodes[i].label = static_cast<NodeLabel>(labels[i]);
  }
  g.rebuild_offsets();
  if (g.offsets.back() != n_values) throw GraphIoError("feature block size does not match node types");
  g.features.resize(n_values);
  r.read(g.features.data(), n_values * sizeof(float));
  g.edges.resize(n_edges);
  r.read(g.edges.data(), n_edges * sizeof(std::array<std::uint32_t, 2>));
  std::vector<std::uint64_t> source_offsets(2 * n + 1);
  r.read(source_offsets.data(), source_offsets.size() * sizeof(std::uint64_t));
  std::string blob(n_source, '\0');
  r.read(blob.data(), n_source);
  r.verify();

  for (std::size_t i = 0; i < 2 * n; ++i) {
    if (source_offsets[i] > source_offsets[i + 1] || source_offsets[i + 1] > n_source) {
      throw GraphIoError("corrupt source table");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    g.nodes[i].source_a = blob.substr(source_offsets[2 * i], source_offsets[2 * i + 1] - source_offsets[2 * i]);
    g.nodes[i].source_b =
        blob.substr(source_offsets[2 * i + 1], source_offsets[2 * i + 2] - source_offsets[2 * i + 1]);
  }
  for (const auto& e : g.edges) {
    if (e[0] >= n || e[1] >= n) throw GraphIoError("edge endpoint out of range");
  }
  return g;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::pretrain: return "pretrain";
    case Split::transfer_train: return "transfer_train";
    case Split::transfer_val: return "transfer_val";
    case Split::transfer_test: return "transfer_test";
  }
  return "unknown";
}

Split split_from_string(std::string_view s) {
  for (auto v : {Split::pretrain, Split::transfer_train, Split::transfer_val, Split::transfer_test}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::vector<std::size_t> GraphDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

DatasetStats dataset_stats(const GraphDataset& d) {
  DatasetStats s;
  s.graphs = d.graphs.size();
  for (const auto& g : d.graphs) {
    s.nodes += g.node_count();
    s.edges += g.edge_count();
    const auto by_type = g.count_by_type();
    for (int t = 0; t < kNodeTypeCount; ++t) s.nodes_by_type[t] += by_type[t];
  }
  return s;
}

void write_manifest(const std::filesystem::path& manifest, std::span<const std::filesystem::path> graph_paths,
                    const GraphDataset& dataset) {
  if (graph_paths.size() != dataset.graphs.size() || dataset.splits.size() != dataset.graphs.size()) {
    throw GraphIoError("manifest: graph, path and split counts differ");
  }
  const auto base = manifest.parent_path().empty() ? std::filesystem::path(".") : manifest.parent_path();
  json doc = {{"version", 1}, {"graphs", json::array()}};
  for (std::size_t i = 0; i < graph_paths.size(); ++i) {
    const auto& g = dataset.graphs[i];
    const auto by_type = g.count_by_type();
    doc["graphs"].push_back({{"path", std::filesystem::proximate(graph_paths[i], base).generic_string()},
                             {"split", to_string(dataset.splits[i])},
                             {"floor_id", g.meta.floor_id},
                             {"region_id", g.meta.region_id},
                             {"mode", to_string(g.mode)},
                             {"nodes", g.node_count()},
                             {"edges", g.edge_count()},
                             {"nodes_by_type", by_type}});
  }
  const auto stats = dataset_stats(dataset);
  doc["stats"] = {{"graphs", stats.graphs},
                  {"nodes", stats.nodes},
                  {"edges", stats.edges},
                  {"nodes_by_type", stats.nodes_by_type}};
  std::ofstream out(manifest);
  if (!out) throw GraphIoError("cannot write manifest " + manifest.string());
  out << doc.dump(1) << '\n';
}

namespace {

json read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw GraphIoError("cannot open manifest " + manifest.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw GraphIoError("manifest " + manifest.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<std::filesystem::path> manifest_graph_paths(const std::filesystem::path& manifest) {
  const json doc = read_manifest(manifest);
  const auto base = manifest.parent_path();
  std::vector<std::filesystem::path> out;
  for (const auto& entry : doc.at("graphs")) out.push_back(base / entry.at("path").get<std::string>());
  return out;
}

GraphDataset load_dataset(const std::filesystem::path& manifest) {
  const json doc = read_manifest(manifest);
  const auto base = manifest.parent_path();
  GraphDataset d;
  for (const auto& entry : doc.at("graphs")) {
    d.graphs.push_back(load_graph(base / entry.at("path").get<std::string>()));
    d.splits.push_back(split_from_string(entry.value("split", std::string("pretrain"))));
  }
  return d;
}

}  // namespace bignet
