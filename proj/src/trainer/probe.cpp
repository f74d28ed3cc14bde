#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "micropatch/datapipe.hpp"
#include "micropatch/error.hpp"
#include "micropatch/optim.hpp"
#include "micropatch/trainer.hpp"

namespace micropatch {

void FeatureTable::validate() const {
  if (features.rank() != 2) throw DataError("feature table must be [N, d]");
  if (features.dim(0) != size()) throw DataError("feature table has mismatched row and label counts");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw DataError("feature table label out of range at row " + std::to_string(i));
}

FeatureTable extract_features(ModelF& model, const TensorSet& set) {
  FeatureTable t;
  t.features = model.features(set.images);
  t.labels = set.labels;
  t.num_classes = set.num_classes;
  return t;
}

void write_features_csv(const std::filesystem::path& path, const FeatureTable& table) {
  table.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "label";
  for (Index j = 0; j < table.dim(); ++j) out << ",f" << j;
  out << '\n';
  out.precision(9);
  const auto m = table.features.as_rows();
  for (Index i = 0; i < table.size(); ++i) {
    out << table.labels[i];
    for (Index j = 0; j < table.dim(); ++j) out << ',' << m(i, j);
    out << '\n';
  }
}

FeatureTable read_features_csv(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) throw DataError(path.string() + ": missing header");
  const auto d = static_cast<Index>(std::count(line.begin(), line.end(), ','));
  std::vector<float> values;
  std::vector<int> labels;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<Index>(cells.size()) != d + 1)
      throw DataError(path.string() + " row " + std::to_string(row) + ": expected " + std::to_string(d + 1) +
                      " fields, got " + std::to_string(cells.size()));
    try {
      labels.push_back(std::stoi(cells[0]));
      for (Index j = 1; j <= d; ++j) values.push_back(std::stof(cells[j]));
    } catch (const std::exception&) {
      throw DataError(path.string() + " row " + std::to_string(row) + ": not a number");
    }
  }
  FeatureTable t;
  t.labels = std::move(labels);
  t.features = TensorF(Shape{t.size(), d}, values);
  t.num_classes = num_classes > 0 ? num_classes
                                  : (t.labels.empty() ? 0 : *std::max_element(t.labels.begin(), t.labels.end()) + 1);
  t.validate();
  return t;
}

TensorF LinearHead::logits(const TensorF& features) const {
  TensorF out(Shape{features.dim(0), weight.dim(1)});
  out.as_rows() = (features.as_rows() * weight.matrix(weight.dim(0), weight.dim(1))).rowwise() +
                  bias.vec().transpose();
  return out;
}

ProbeResult linear_probe(const FeatureTable& table, const ProbeConfig& cfg) {
  table.validate();
  if (cfg.batch_size < 1 || cfg.epochs < 1) throw ConfigurationError("probe batch size and epochs must be positive");
  const Index d = table.dim();
  const int c = table.num_classes;
  const auto split = stratified_indices(table.labels, c, cfg.train_fraction, cfg.seed);

  auto gather = [&](const std::vector<std::size_t>& idx) {
    TensorF x(Shape{static_cast<Index>(idx.size()), d});
    std::vector<int> y;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.as_rows().row(static_cast<Index>(i)) = table.features.as_rows().row(static_cast<Index>(idx[i]));
      y.push_back(table.labels[idx[i]]);
    }
    return std::pair{std::move(x), std::move(y)};
  };
  const auto [train_x, train_y] = gather(split.train);
  const auto [val_x, val_y] = gather(split.val);

  Rng init(derive_seed({cfg.seed, 0x68656164ULL}));
  const double bound = std::sqrt(6.0 / static_cast<double>(d + c));
  TensorF w0(Shape{d, c});
  for (auto& v : w0.values()) v = static_cast<float>(init.uniform(-bound, bound));
  auto weight = parameter(std::move(w0));
  auto bias = parameter(TensorF(Shape{c}));
  Adam<float> optimizer({weight, bias}, {.learning_rate = cfg.learning_rate});

  const auto n = split.train.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffler(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0x73687566ULL}));
    const auto order = shuffler.permutation(n);
    for (std::size_t start = 0; start < n; start += batch) {
      const auto len = std::min(batch, n - start);
      TensorF xb(Shape{static_cast<Index>(len), d});
      std::vector<int> yb(len);
      for (std::size_t i = 0; i < len; ++i) {
        xb.as_rows().row(static_cast<Index>(i)) = train_x.as_rows().row(static_cast<Index>(order[start + i]));
        yb[i] = train_y[order[start + i]];
      }
      optimizer.zero_grad();
      auto loss = cross_entropy(linear(leaf(std::move(xb)), weight, bias), std::span<const int>(yb));
      backward(loss);
      optimizer.step();
    }
  }

  ProbeResult result;
  result.head = {weight->value, bias->value};
  result.trained_parameters = weight->value.size() + bias->value.size();
  std::vector<int> predicted;
  if (!val_y.empty()) predicted = argmax_rows(result.head.logits(val_x));
  result.report = macro_scores(confusion(val_y, predicted, c));
  return result;
}

}  // namespace micropatch
