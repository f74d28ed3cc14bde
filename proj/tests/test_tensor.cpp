#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "micropatch/error.hpp"
#include "micropatch/optim.hpp"

using namespace micropatch;

using check::VarD;

namespace {

TensorD tensor(Shape s, std::initializer_list<double> v) { return TensorD(std::move(s), v); }

VarD constant(Shape s, std::initializer_list<double> v) { return leaf(tensor(std::move(s), v)); }

}  // namespace

TEST_SUITE("tensor-core") {
  TEST_CASE("linear examples") {
    auto out = linear(constant({1, 2}, {1, 2}), constant({2, 2}, {1, 0, 0, 1}), constant({2}, {0, 0}));
    CHECK(out->value.vec() == Eigen::Vector2d(1, 2));
    out = linear(constant({1, 2}, {1, 1}), constant({2, 2}, {0, 0, 0, 0}), constant({2}, {3, 4}));
    CHECK(out->value.vec() == Eigen::Vector2d(3, 4));
    CHECK_THROWS_AS(linear(constant({1, 3}, {1, 2, 3}), constant({2, 2}, {1, 0, 0, 1}), constant({2}, {0, 0})),
                    DimensionError);
  }

  TEST_CASE("conv2d examples") {
    TensorD img(Shape{1, 1, 3, 3});
    for (Index i = 0; i < 9; ++i) img[i] = static_cast<double>(i + 1);
    auto same = conv2d(leaf(img), constant({1, 1, 1, 1}, {1}), VarD{});
    CHECK(same->value.vec() == img.vec());

    TensorD delta(Shape{1, 1, 5, 5});
    delta.at({0, 0, 2, 2}) = 1.0;
    TensorD k(Shape{1, 1, 3, 3});
    for (Index i = 0; i < 9; ++i) k[i] = static_cast<double>(i + 1);
    auto out = conv2d(leaf(delta), leaf(k), VarD{}, {.stride = 1, .padding = 1});
    // cross-correlation with a delta places the flipped kernel around it
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) CHECK(out->value.at({0, 0, 2 + dy, 2 + dx}) == k.at({0, 0, 1 - dy, 1 - dx}));
    CHECK(out->value.vec().sum() == doctest::Approx(45.0));

    CHECK_THROWS_AS(conv2d(leaf(TensorD(Shape{1, 1, 4, 4})), leaf(TensorD(Shape{1, 1, 3, 3})), VarD{}, {.stride = 2}),
                    DimensionError);
  }

  TEST_CASE("pooling examples") {
    auto m = pool2d(constant({1, 1, 2, 2}, {1, 2, 3, 4}), PoolKind::max);
    CHECK(m->value.size() == 1);
    CHECK(m->value[0] == 4.0);
    auto a = pool2d(leaf(TensorD(Shape{1, 2, 4, 4}, 3.5)), PoolKind::avg);
    for (double v : a->value.values()) CHECK(v == 3.5);
    CHECK_THROWS_AS(pool2d(leaf(TensorD(Shape{1, 1, 3, 3})), PoolKind::max), DimensionError);

    auto x = leaf(TensorD(Shape{1, 2, 40, 40}));
    for (int i = 0; i < 3; ++i) x = pool2d(x, PoolKind::max);
    CHECK(x->shape() == Shape{1, 2, 5, 5});

    // ties send the gradient to the first maximal element
    auto p = parameter(tensor({1, 1, 2, 2}, {2, 2, 1, 2}));
    backward(sum(pool2d(p, PoolKind::max)));
    CHECK(p->grad.vec() == Eigen::Vector4d(1, 0, 0, 0));
  }

  TEST_CASE("activation values") {
    auto x = constant({2}, {-1, 2});
    CHECK(relu(x)->value.vec() == Eigen::Vector2d(0, 2));
    CHECK(micropatch::tanh(constant({1}, {0}))->value[0] == 0.0);
    CHECK(sigmoid(constant({1}, {0}))->value[0] == 0.5);
    const double g = gelu(constant({1}, {1.0}))->value[0];
    CHECK(g == doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))).epsilon(1e-12));
  }

  TEST_CASE("gelu derivative matches finite differences at fixed points") {
    for (double x0 : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
      auto p = parameter(tensor({1}, {x0}));
      backward(sum(gelu(p)));
      const double h = 1e-6;
      const double fd = (gelu(constant({1}, {x0 + h}))->value[0] - gelu(constant({1}, {x0 - h}))->value[0]) / (2 * h);
      CHECK(std::abs(p->grad[0] - fd) < 1e-5);
    }
  }

  TEST_CASE("normalization examples") {
    auto ln = layer_norm(leaf(TensorD(Shape{2, 5}, 3.0)), constant({5}, {2, 2, 2, 2, 2}),
                         constant({5}, {0.5, 0.5, 0.5, 0.5, 0.5}), kTransformerLayerNormEps);
    for (double v : ln->value.values()) CHECK(v == doctest::Approx(0.5));

    Rng rng(3);
    TensorD x(Shape{8, 3, 4, 4});
    for (auto& v : x.values()) v = rng.normal() * 3 + 2;
    TensorD rm(Shape{3}), rv(Shape{3}, 1.0);
    auto bn = batch_norm(leaf(x), constant({3}, {1, 1, 1}), constant({3}, {0, 0, 0}), {&rm, &rv}, true);
    for (Index c = 0; c < 3; ++c) {
      double s = 0;
      for (Index b = 0; b < 8; ++b)
        for (Index i = 0; i < 16; ++i) s += bn->value[(b * 3 + c) * 16 + i];
      CHECK(std::abs(s / 128) < 1e-5);
    }
    CHECK(rm[0] != 0.0);  // running estimate moved toward the batch mean
  }

  TEST_CASE("attention examples") {
    Rng rng(9);
    auto rand = [&](Shape s) {
      TensorD t(std::move(s));
      for (auto& v : t.values()) v = rng.normal() * 0.3;
      return leaf(std::move(t));
    };
    AttentionWeights<double> w{rand({8, 24}), rand({24}), rand({8, 8}), rand({8})};
    TensorD probe;
    auto one = rand({1, 1, 8});
    auto out = multi_head_attention(one, 2, w, &probe);
    for (double v : probe.values()) CHECK(v == 1.0);
    // T = 1: output is the projected value vector
    auto qkv = linear(one, w.qkv_weight, w.qkv_bias);
    auto value = narrow(qkv, 2, 16, 8);
    auto expected = linear(value, w.proj_weight, w.proj_bias);
    CHECK((out->value.vec() - expected->value.vec()).norm() < 1e-12);

    auto many = rand({2, 5, 8});
    multi_head_attention(many, 2, w, &probe);
    CHECK(probe.shape() == Shape{2, 2, 5, 5});
    const auto rows = probe.as_rows();
    for (Index r = 0; r < rows.rows(); ++r) CHECK(std::abs(rows.row(r).sum() - 1.0) < 1e-6);
    CHECK_THROWS_AS(multi_head_attention(many, 3, w), ConfigurationError);
  }

  TEST_CASE("regularizer examples") {
    Rng rng(1);
    auto x = constant({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(dropout(x, 0.0, true, rng)->value.vec() == x->value.vec());
    CHECK(dropout(x, 0.7, false, rng)->value.vec() == x->value.vec());
    CHECK(drop_path(x, 0.7, false, rng)->value.vec() == x->value.vec());
    CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigurationError);
    CHECK_THROWS_AS(drop_path(x, 1.5, true, rng), ConfigurationError);

    const Index n = 1'000'000;
    auto big = leaf(TensorD(Shape{n}, 1.0));
    auto d = dropout(big, 0.5, true, rng);
    const double survivors = static_cast<double>((d->value.array() != 0.0).count()) / n;
    CHECK(std::abs(survivors - 0.5) < 0.01);
    CHECK(std::abs(d->value.vec().mean() - 1.0) < 0.02);

    auto branch = leaf(TensorD(Shape{1000, 4}, 1.0));
    auto dp = drop_path(branch, 0.25, true, rng);
    for (Index b = 0; b < 1000; ++b) {
      const double first = dp->value[b * 4];
      CHECK((first == 0.0 || std::abs(first - 1.0 / 0.75) < 1e-12));
      for (Index j = 1; j < 4; ++j) CHECK(dp->value[b * 4 + j] == first);
    }
  }

  TEST_CASE("cross entropy examples") {
    const std::vector<int> zero = {0};
    CHECK(cross_entropy(constant({1, 2}, {0, 0}), zero)->value[0] == doctest::Approx(std::log(2.0)));
    const double big = cross_entropy(constant({1, 2}, {1e4, -1e4}), zero)->value[0];
    CHECK(std::isfinite(big));
    CHECK(big < 1e-12);
    const std::vector<int> bad = {2};
    CHECK_THROWS_AS(cross_entropy(constant({1, 2}, {0, 0}), bad), DataError);

    auto logits = parameter(tensor({2, 3}, {0.5, -1, 2, 0, 0.3, -0.2}));
    const std::vector<int> labels = {2, 0};
    backward(cross_entropy(logits, labels));
    auto probs = softmax(leaf(logits->value));
    for (Index r = 0; r < 2; ++r)
      for (Index c = 0; c < 3; ++c) {
        const double expected = (probs->value.at({r, c}) - (labels[r] == c ? 1.0 : 0.0)) / 2.0;
        CHECK(logits->grad.at({r, c}) == doctest::Approx(expected).epsilon(1e-12));
      }
  }

  TEST_CASE("adam examples") {
    auto p = parameter(tensor({3}, {1, -2, 3}));
    Adam<double> zero_grad({p}, {.learning_rate = 0.1});
    p->ensure_grad().set_zero();
    zero_grad.step();
    CHECK(p->value.vec() == Eigen::Vector3d(1, -2, 3));

    auto q = parameter(tensor({2}, {0, 0}));
    Adam<double> first({q}, {.learning_rate = 0.01});
    q->ensure_grad() = tensor({2}, {5, -0.3});
    first.step();
    CHECK(q->value[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(q->value[1] == doctest::Approx(0.01).epsilon(1e-6));

    auto s = parameter(tensor({1}, {1.0}));
    Adam<double> descent({s}, {.learning_rate = 0.01});
    double previous = 1.0;
    for (int i = 0; i < 20; ++i) {
      descent.zero_grad();
      backward(sum(mul(s, s)));
      descent.step();
      CHECK(std::abs(s->value[0]) < previous);
      previous = std::abs(s->value[0]);
    }

    auto w = parameter(tensor({1}, {2.0}));
    Adam<double> decay({w}, {.learning_rate = 0.1, .weight_decay = 0.5});
    w->ensure_grad().set_zero();
    decay.step();
    CHECK(w->value[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
    CHECK(decay.steps() == 1);
  }

  TEST_CASE("shared node accumulates both consumers") {
    auto x = parameter(tensor({1}, {3.0}));
    auto y = add(mul(x, x), scale(x, 4.0));  // d/dx = 2x + 4
    backward(sum(y));
    CHECK(x->grad[0] == 10.0);
  }

  TEST_CASE("non-finite forward values raise a numeric error naming the layer") {
    LayerScope scope("probe_layer");
    auto x = constant({1}, {1e308});
    try {
      scale(x, 10.0);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("probe_layer") != std::string::npos);
    }
  }

  TEST_CASE("forward and backward are bit-identical across runs") {
    auto run = [] {
      Rng rng(21);
      TensorD xv(Shape{2, 3, 6, 6}), kv(Shape{4, 3, 3, 3});
      for (auto& v : xv.values()) v = rng.normal();
      for (auto& v : kv.values()) v = rng.normal();
      auto x = parameter(xv), k = parameter(kv);
      auto y = gelu(conv2d(x, k, VarD{}, {.padding = 1}));
      backward(mean(y));
      return std::pair{y->value, k->grad};
    };
    const auto a = run(), b = run();
    CHECK(a.first.vec() == b.first.vec());
    CHECK(a.second.vec() == b.second.vec());
  }

  TEST_CASE("softmax rows are non-negative and sum to one") {
    Rng rng(4);
    TensorD x(Shape{16, 7});
    for (auto& v : x.values()) v = rng.normal() * 10;
    auto s = softmax(leaf(x));
    CHECK((s->value.array() >= 0.0).all());
    const auto rows = s->value.as_rows();
    for (Index r = 0; r < rows.rows(); ++r) CHECK(std::abs(rows.row(r).sum() - 1.0) < 1e-6);
  }

  TEST_CASE("every operator passes the finite-difference gradient check over five seeds") {
    for (const auto& c : check::all_grad_cases()) {
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const double err = check::grad_error(c, seed);
        INFO(c.name << " seed " << seed << " rel err " << err);
        CHECK(err < c.tolerance);
      }
    }
  }
}
