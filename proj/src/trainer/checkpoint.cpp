#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "micropatch/error.hpp"
#include "micropatch/trainer.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace micropatch {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'K'};

struct NamedTensor {
  std::string name;
  const TensorF* tensor;
  std::string kind;
};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

std::vector<std::uint8_t> pack(nlohmann::json manifest, const std::vector<NamedTensor>& tensors) {
  std::uint64_t offset = 0;
  auto& list = manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    list.push_back({{"name", t.name}, {"kind", t.kind}, {"shape", t.tensor->shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.tensor->size()) * sizeof(float);
  }
  manifest["data_bytes"] = offset;
  manifest["version"] = kCheckpointVersion;
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.tensor->data());
    out.insert(out.end(), p, p + t.tensor->size() * sizeof(float));
  }
  return out;
}

struct Unpacked {
  nlohmann::json manifest;
  std::vector<TensorF> tensors;
};

Unpacked unpack(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw CheckpointError("checkpoint truncated: header incomplete");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  std::uint32_t version;
  std::uint64_t length;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&length, bytes.data() + 8, 8);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  if (length > bytes.size() - 16) throw CheckpointError("checkpoint truncated: manifest incomplete");
  Unpacked u;
  try {
    u.manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(length));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest unreadable: ") + e.what());
  }
  const std::size_t data_start = 16 + length;
  const std::uint64_t data_bytes = u.manifest.value("data_bytes", std::uint64_t{0});
  if (bytes.size() - data_start < data_bytes)
    throw CheckpointError("checkpoint truncated: expected " + std::to_string(data_bytes) + " data bytes, found " +
                          std::to_string(bytes.size() - data_start));
  if (bytes.size() - data_start > data_bytes) throw CheckpointError("checkpoint has trailing bytes");
  for (const auto& entry : u.manifest.at("tensors")) {
    const Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    TensorF t(shape);
    const auto n = static_cast<std::uint64_t>(t.size()) * sizeof(float);
    if (offset + n > data_bytes) throw CheckpointError("tensor '" + entry.at("name").get<std::string>() +
                                                       "' lies outside the data block");
    std::memcpy(t.data(), bytes.data() + data_start + offset, n);
    u.tensors.push_back(std::move(t));
  }
  return u;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path.string() + "'");
}

}  // namespace

std::vector<std::uint8_t> checkpoint_bytes(const ModelF& model) {
  std::vector<NamedTensor> tensors;
  for (const auto& e : model.entries())
    tensors.push_back({e.name, &e.var->value, e.kind == EntryKind::parameter ? "parameter" : "buffer"});
  return pack({{"format", "model"}, {"spec", model.spec().to_json()}, {"seed", model.spec().init_seed}}, tensors);
}

ModelF checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  auto u = unpack(bytes);
  if (u.manifest.value("format", "") != "model") throw CheckpointError("checkpoint does not hold a model");
  ModelSpec spec;
  try {
    spec = ModelSpec::from_json(u.manifest.at("spec"));
  } catch (const ConfigurationError& e) {
    throw CheckpointError(std::string("checkpoint spec invalid: ") + e.what());
  }
  ModelF model = build<float>(spec);
  auto& entries = model.entries();
  const auto& listed = u.manifest.at("tensors");
  if (listed.size() != entries.size())
    throw CheckpointError("checkpoint lists " + std::to_string(listed.size()) + " tensors, architecture has " +
                          std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto name = listed[i].at("name").get<std::string>();
    if (name != entries[i].name) throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" + name +
                                                       "', expected '" + entries[i].name + "'");
    if (u.tensors[i].shape() != entries[i].var->value.shape())
      throw CheckpointError("shape of '" + name + "' disagrees: file " + shape_string(u.tensors[i].shape()) +
                            ", architecture " + shape_string(entries[i].var->value.shape()));
    entries[i].var->value = std::move(u.tensors[i]);
  }
  return model;
}

void save_checkpoint(const ModelF& model, const std::filesystem::path& path) { write_file(path, checkpoint_bytes(model)); }

ModelF load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return checkpoint_from_bytes(bytes);
}

std::int64_t model_size_bytes(const ModelF& model) { return static_cast<std::int64_t>(checkpoint_bytes(model).size()); }

void save_feature_table(const FeatureTable& table, const std::filesystem::path& path) {
  table.validate();
  TensorF labels(Shape{table.size()});
  for (Index i = 0; i < table.size(); ++i) labels[i] = static_cast<float>(table.labels[i]);
  write_file(path, pack({{"format", "features"}, {"num_classes", table.num_classes}},
                        {{"features", &table.features, "features"}, {"labels", &labels, "labels"}}));
}

FeatureTable load_feature_table(const std::filesystem::path& path) {
  auto u = unpack(read_file(path));
  if (u.manifest.value("format", "") != "features" || u.tensors.size() != 2)
    throw CheckpointError("'" + path.string() + "' does not hold a feature table");
  FeatureTable t;
  t.features = std::move(u.tensors[0]);
  t.num_classes = u.manifest.at("num_classes").get<int>();
  for (float v : u.tensors[1].values()) t.labels.push_back(static_cast<int>(v));
  t.validate();
  return t;
}

}  // namespace micropatch
