#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "micropatch/datapipe.hpp"
#include "micropatch/error.hpp"
#include "micropatch/rng.hpp"

namespace micropatch {

namespace fs = std::filesystem;

namespace {

constexpr int kMinNativeSize = 40;

// Splits one CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv(const std::string& line, bool& ok) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  ok = true;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  ok = !quoted;
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::string sample_id(const std::string& relative) {
  std::string id = fs::path(relative).replace_extension().generic_string();
  std::replace(id.begin(), id.end(), '/', '_');
  return id;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  return h;
}

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  h = fnv1a(h, s.data(), s.size());
  return fnv1a(h, "\0", 1);
}

}  // namespace

Dataset Dataset::from_patches(std::vector<LabeledPatch> patches) {
  std::set<std::string> flags;
  for (const auto& p : patches) flags.insert(p.flag);
  return {std::move(patches), {flags.begin(), flags.end()}};
}

int Dataset::class_of(const std::string& flag) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), flag);
  if (it == classes.end() || *it != flag) throw DataError("unknown flag '" + flag + "'");
  return static_cast<int>(it - classes.begin());
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(patches.size());
  for (const auto& p : patches) out.push_back(class_of(p.flag));
  return out;
}

std::map<std::string, std::int64_t> Dataset::counts() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& p : patches) ++out[p.flag];
  return out;
}

Dataset load_dataset(const fs::path& root) {
  const fs::path manifest = root / "manifest.csv";
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open '" + manifest.string() + "'");
  std::string line;
  int row = 1;
  const auto fail = [&](const std::string& why) {
    throw DataError(manifest.string() + " row " + std::to_string(row) + ": " + why);
  };
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,flag,source_id") fail("header must be 'path,flag,source_id'");

  std::vector<LabeledPatch> patches;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    bool ok = true;
    auto fields = split_csv(line, ok);
    if (!ok || fields.size() != 3) fail("expected 3 comma-separated fields");
    if (fields[0].empty()) fail("empty path");
    if (fields[1].empty()) fail("empty flag");
    const fs::path file = root / fields[0];
    if (!fs::is_regular_file(file)) fail("missing file '" + file.string() + "'");
    LabeledPatch patch;
    try {
      patch.image = read_png(file);
    } catch (const DataError& e) {
      fail(e.what());
    }
    if (!patch.image.square())
      fail("image is not square (" + std::to_string(patch.image.width) + "x" + std::to_string(patch.image.height) + ")");
    if (patch.image.width < kMinNativeSize)
      fail("image size " + std::to_string(patch.image.width) + " is below the minimum of 40");
    patch.flag = std::move(fields[1]);
    patch.source_id = std::move(fields[2]);
    patch.id = sample_id(fields[0]);
    patches.push_back(std::move(patch));
  }
  return Dataset::from_patches(std::move(patches));
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("cannot write '" + (dir / "manifest.csv").string() + "'");
  manifest << "path,flag,source_id\n";
  for (const auto& p : ds.patches) {
    std::string tags;
    for (const auto& t : p.tags) tags += (tags.empty() ? "" : "+") + t;
    const std::string name = p.id + "__" + (tags.empty() ? "orig" : tags) + ".png";
    write_png(dir / name, p.image);
    manifest << csv_field(name) << ',' << csv_field(p.flag) << ',' << csv_field(p.source_id) << '\n';
  }
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : ds.patches) {
    h = fnv1a(h, p.flag);
    h = fnv1a(h, p.source_id);
    for (const auto& t : p.tags) h = fnv1a(h, t);
    const std::int32_t dims[2] = {p.image.height, p.image.width};
    h = fnv1a(h, dims, sizeof dims);
    h = fnv1a(h, p.image.pixels.data(), p.image.pixels.size());
  }
  return h;
}

// ---- sampling ---------------------------------------------------------------

std::map<std::string, std::int64_t> balanced_counts(const std::map<std::string, std::int64_t>& counts,
                                                    const SamplingConfig& cfg) {
  std::map<std::string, std::int64_t> out;
  for (const auto& [flag, n] : counts)
    if (n >= cfg.flag_min()) out[flag] = std::min(n, cfg.flag_limit);
  return out;
}

Dataset class_balanced_sample(const Dataset& ds, const SamplingConfig& cfg) {
  if (cfg.flag_limit < 1) throw ConfigurationError("flag_limit must be positive");
  std::vector<std::vector<std::size_t>> members(ds.classes.size());
  for (std::size_t i = 0; i < ds.patches.size(); ++i) members[ds.class_of(ds.patches[i].flag)].push_back(i);

  std::vector<LabeledPatch> kept;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const auto& idx = members[c];
    const auto n = static_cast<std::int64_t>(idx.size());
    if (n < cfg.flag_min()) continue;
    if (n <= cfg.flag_limit) {
      for (auto i : idx) kept.push_back(ds.patches[i]);
      continue;
    }
    Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(c), 0x73616d70ULL}));
    for (auto j : rng.sample_without_replacement(idx.size(), static_cast<std::size_t>(cfg.flag_limit)))
      kept.push_back(ds.patches[idx[j]]);
  }
  if (kept.empty())
    throw DataError("sampling: every class has fewer than flag_min = " + std::to_string(cfg.flag_min()) +
                    " samples (flag_limit " + std::to_string(cfg.flag_limit) + ")");
  return Dataset::from_patches(std::move(kept));
}

SplitIndices stratified_indices(std::span<const int> labels, int num_classes, double train_fraction,
                                std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigurationError("train fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(std::max(num_classes, 0)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw DataError("split: label out of range at row " + std::to_string(i));
    members[labels[i]].push_back(i);
  }
  SplitIndices out;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto idx = members[c];
    if (idx.empty()) continue;
    if (idx.size() < 2)
      throw DataError("split: class " + std::to_string(c) + " has 1 sample; at least 2 are required");
    Rng rng(derive_seed({seed, static_cast<std::uint64_t>(c), 0x73706c74ULL}));
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size()) + 1e-9)));
    std::vector<std::size_t> train(idx.begin(), idx.begin() + n_train), val(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    out.train.insert(out.train.end(), train.begin(), train.end());
    out.val.insert(out.val.end(), val.begin(), val.end());
  }
  return out;
}

Split stratified_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  const auto labels = ds.labels();
  for (const auto& [flag, n] : ds.counts())
    if (n < 2)
      throw DataError("split: class '" + flag + "' has " + std::to_string(n) + " sample(s); at least 2 are required");
  const auto idx = stratified_indices(labels, ds.num_classes(), train_fraction, seed);
  Split out;
  out.train.classes = out.val.classes = ds.classes;
  for (auto i : idx.train) out.train.patches.push_back(ds.patches[i]);
  for (auto i : idx.val) out.val.patches.push_back(ds.patches[i]);
  return out;
}

}  // namespace micropatch
