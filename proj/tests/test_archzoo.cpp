#include <doctest.h>

#include <cmath>
#include <set>

#include "micropatch/archzoo.hpp"
#include "micropatch/error.hpp"
#include "micropatch/optim.hpp"

using namespace micropatch;

namespace {

TensorF random_batch(Index b, std::uint64_t seed) {
  Rng rng(seed);
  TensorF x(Shape{b, 3, 40, 40});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  return x;
}

// Linear d -> C over flattened input, for the param_count contract.
class TinyNet : public Network<float> {
 public:
  explicit TinyNet(ModelEntry<float> w, ModelEntry<float> b) : w_(w.var), b_(b.var) {}
  Var<float> forward(const Var<float>& x, ForwardContext<float>&) override { return linear(flatten(x), w_, b_); }

 private:
  Var<float> w_, b_;
};

std::int64_t closed_form_vit(int classes) {
  const std::int64_t d = 160, hidden = 640, tokens = 26;
  const std::int64_t embed = 8 * 8 * 3 * d + d;
  const std::int64_t block = 2 * (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (d * hidden + hidden) + (hidden * d + d);
  return embed + tokens * d + d + 6 * block + 2 * d + d * classes + classes;
}

std::int64_t closed_form_cnn(int classes) {
  auto conv = [](std::int64_t in, std::int64_t out) { return in * 9 * out + out; };
  auto fc = [](std::int64_t in, std::int64_t out) { return in * out + out; };
  return conv(3, 48) + conv(48, 64) + conv(64, 128) + conv(128, 128) + fc(3200, 512) + fc(512, 256) +
         fc(256, classes);
}

}  // namespace

TEST_SUITE("archzoo") {
  TEST_CASE("parameter counts match closed forms and published totals") {
    CHECK(param_count(ModelSpec::defaults(Arch::CustomViT)) == closed_form_vit(16));
    CHECK(param_count(ModelSpec::defaults(Arch::CNN)) == closed_form_cnn(16));
    CHECK(closed_form_vit(16) == 1'893'776);
    CHECK(std::abs(closed_form_vit(16) / 1.89e6 - 1.0) < 0.01);
    CHECK(std::abs(closed_form_cnn(16) / 2.02e6 - 1.0) < 0.01);
    const auto resnet = param_count(ModelSpec::defaults(Arch::ResNetD4));
    CHECK(std::abs(resnet / 2.27e6 - 1.0) < 0.03);
    // frozen values of the remaining builders
    CHECK(param_count(ModelSpec::defaults(Arch::MLP)) == 8'892'516);
    CHECK(resnet == 2'208'832);
    CHECK(param_count(ModelSpec::defaults(Arch::SEResNetD4)) == 2'266'944);
    CHECK(param_count(ModelSpec::defaults(Arch::NIN)) == 11'101'332);
    CHECK(param_count(ModelSpec::defaults(Arch::EfficientNetB0)) == 3'926'668);
    CHECK(param_count(ModelSpec::defaults(Arch::ConvNeXtTiny)) == 4'786'336);
  }

  TEST_CASE("parameter count ignores the init seed") {
    for (Arch a : {Arch::CNN, Arch::CustomViT, Arch::SEResNetD4}) {
      auto s = ModelSpec::defaults(a);
      const auto base = param_count(s);
      s.init_seed = 1234;
      CHECK(param_count(s) == base);
    }
  }

  TEST_CASE("single linear 10 -> 5 has 55 parameters") {
    ModelEntry<float> w{"w", parameter(TensorF(Shape{10, 5})), EntryKind::parameter, true};
    ModelEntry<float> b{"b", parameter(TensorF(Shape{5})), EntryKind::parameter, true};
    auto net = std::make_unique<TinyNet>(w, b);
    Model<float> m(ModelSpec::defaults(Arch::MLP), {w, b}, std::move(net));
    CHECK(param_count(m) == 55);
  }

  TEST_CASE("every architecture yields [B, C] finite logits, deterministic in inference mode") {
    const auto x = random_batch(2, 5);
    for (Arch a : kAllArchs) {
      INFO(arch_name(a));
      auto m = build<float>(ModelSpec::defaults(a, 7));
      const auto y1 = m.predict(x);
      const auto y2 = m.predict(x);
      CHECK(y1.shape() == Shape{2, 7});
      CHECK(y1.all_finite());
      CHECK(y1.vec() == y2.vec());
      CHECK_THROWS_AS(m.predict(TensorF(Shape{2, 3, 32, 32})), DimensionError);
    }
  }

  TEST_CASE("names are unique and builds are reproducible") {
    for (Arch a : kAllArchs) {
      auto m1 = build<float>(ModelSpec::defaults(a));
      auto m2 = build<float>(ModelSpec::defaults(a));
      std::set<std::string> names;
      for (std::size_t i = 0; i < m1.entries().size(); ++i) {
        CHECK(names.insert(m1.entries()[i].name).second);
        CHECK(m1.entries()[i].var->value.vec() == m2.entries()[i].var->value.vec());
      }
    }
  }

  TEST_CASE("pooled families follow the 40 -> 20 -> 10 -> 5 chain") {
    for (Arch a : {Arch::CNN, Arch::ResNetD4, Arch::NIN, Arch::SEResNetD4}) {
      auto m = build<float>(ModelSpec::defaults(a));
      std::vector<std::pair<std::string, Shape>> trace;
      ForwardContext<float> ctx;
      ctx.trace = &trace;
      NoGradGuard guard;
      m.forward(random_batch(1, 2), ctx);
      std::vector<Index> sizes = {40};
      for (const auto& [name, shape] : trace)
        if (shape.size() == 4 && sizes.back() != shape[2]) sizes.push_back(shape[2]);
      CHECK(sizes == std::vector<Index>{40, 20, 10, 5});
    }
  }

  TEST_CASE("CustomViT attention maps are [B, 4, 26, 26] with unit rows") {
    auto m = build<float>(ModelSpec::defaults(Arch::CustomViT));
    std::vector<TensorF> maps;
    ForwardContext<float> ctx;
    ctx.attention_maps = &maps;
    NoGradGuard guard;
    m.forward(random_batch(2, 3), ctx);
    REQUIRE(maps.size() == 6);
    for (const auto& a : maps) {
      CHECK(a.shape() == Shape{2, 4, 26, 26});
      const auto rows = a.as_rows();
      for (Index r = 0; r < rows.rows(); ++r) CHECK(std::abs(rows.row(r).sum() - 1.0f) < 1e-6f);
    }
  }

  TEST_CASE("untrained CustomViT on a zero image gives a well-defined softmax") {
    auto m = build<float>(ModelSpec::defaults(Arch::CustomViT));
    const auto y = m.predict(TensorF(Shape{1, 3, 40, 40}));
    CHECK(y.all_finite());
    auto p = softmax(leaf(y));
    CHECK(std::abs(p->value.vec().sum() - 1.0f) < 1e-6f);
  }

  TEST_CASE("SE gates stay inside (0, 1)") {
    for (Arch a : {Arch::SEResNetD4, Arch::EfficientNetB0}) {
      auto m = build<float>(ModelSpec::defaults(a));
      ForwardContext<float> ctx;
      ctx.check_gates = true;
      NoGradGuard guard;
      CHECK_NOTHROW(m.forward(random_batch(2, 8), ctx));
    }
  }

  TEST_CASE("freezing the backbone keeps it bit-identical through training steps") {
    auto m = build<float>(ModelSpec::defaults(Arch::CNN, 4));
    m.freeze_backbone();
    std::vector<TensorF> before;
    for (const auto& e : m.entries()) before.push_back(e.var->value);
    Adam<float> opt(m.trainable_parameters(), {});
    m.set_training(true);
    const std::vector<int> labels = {0, 1, 2, 3};
    for (int step = 0; step < 3; ++step) {
      opt.zero_grad();
      backward(cross_entropy(m.forward(random_batch(4, step)), labels));
      opt.step();
    }
    bool head_moved = false;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& e = m.entries()[i];
      if (e.head)
        head_moved |= e.var->value.vec() != before[i].vec();
      else if (e.kind == EntryKind::parameter)
        CHECK(e.var->value.vec() == before[i].vec());
    }
    CHECK(head_moved);
  }

  TEST_CASE("spec validation and parsing") {
    CHECK(parse_arch("customvit") == Arch::CustomViT);
    CHECK_THROWS_AS(parse_arch("AlexNet"), ConfigurationError);
    auto s = ModelSpec::defaults(Arch::CNN);
    s.num_classes = 1;
    CHECK_THROWS_AS(build<float>(s), ConfigurationError);
    const auto v = ModelSpec::defaults(Arch::ConvNeXtTiny, 9);
    CHECK(ModelSpec::from_json(v.to_json()) == v);
  }

  TEST_CASE("forward cost ordering") {
    CHECK(forward_macs(ModelSpec::defaults(Arch::MLP)) < forward_macs(ModelSpec::defaults(Arch::CNN)));
    CHECK(forward_macs(ModelSpec::defaults(Arch::CNN)) < forward_macs(ModelSpec::defaults(Arch::ConvNeXtTiny)));
  }
}
