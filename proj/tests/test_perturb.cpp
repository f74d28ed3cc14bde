#include <doctest.h>

#include <cmath>

#include "micropatch/datapipe.hpp"
#include "micropatch/error.hpp"
#include "micropatch/perturb.hpp"
#include "micropatch/synthetic.hpp"

using namespace micropatch;

namespace {

Image noise_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

// Independent reference: direct evaluation of the truncated, renormalized Gaussian.
std::vector<double> reference_taps(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w;
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    w.push_back(std::exp(-0.5 * (i / sigma) * (i / sigma)));
    total += w.back();
  }
  for (auto& v : w) v /= total;
  return w;
}

Dataset small_synthetic(int classes, int per_class, int size, std::uint64_t seed = 1) {
  SyntheticConfig cfg;
  cfg.num_classes = classes;
  cfg.per_class = {per_class};
  cfg.size = size;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

}  // namespace

TEST_SUITE("perturb") {
  TEST_CASE("gaussian kernel frozen values") {
    CHECK(gaussian_kernel(0.0) == std::vector<double>{1.0});
    CHECK(gaussian_kernel(0.1).size() == 3);
    CHECK(gaussian_kernel(0.8)[3] == doctest::Approx(0.49867645200647487).epsilon(1e-14));
    CHECK(gaussian_kernel(1.6)[5] == doctest::Approx(0.24945803257588858).epsilon(1e-14));
    CHECK(gaussian_kernel(0.4)[2] == doctest::Approx(0.9192179156927948).epsilon(1e-14));
    CHECK_THROWS_AS(gaussian_kernel(-0.1), ConfigurationError);
    CHECK_THROWS_AS(gaussian_blur(Image(4, 4), -1.0), ConfigurationError);
  }

  TEST_CASE("blur examples") {
    const auto img = noise_image(20, 4);
    CHECK(gaussian_blur(img, 0.0) == img);
    const Image flat(12, 12, 87);
    for (double s : kSigmaGrid) CHECK(gaussian_blur(flat, s) == flat);
  }

  TEST_CASE("blurred delta equals the outer product of the 1-D kernel") {
    for (double sigma : kSigmaGrid) {
      ImageF delta(21, 21);
      for (int c = 0; c < 3; ++c) delta.at(10, 10, c) = 1.0f;
      const auto out = gaussian_blur(delta, sigma);
      const auto w = reference_taps(sigma);
      const int r = static_cast<int>(w.size() / 2);
      double worst = 0.0;
      for (int y = 0; y < 21; ++y)
        for (int x = 0; x < 21; ++x) {
          const int dy = y - 10, dx = x - 10;
          const double expected = (std::abs(dy) <= r && std::abs(dx) <= r) ? w[dy + r] * w[dx + r] : 0.0;
          for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(out.at(y, x, c) - expected));
        }
      INFO("sigma " << sigma);
      CHECK(worst < 1e-6);
    }
  }

  TEST_CASE("blur commutes with every flip byte-exactly") {
    const auto img = noise_image(33, 8);
    for (double s : kSigmaGrid) {
      const auto b = gaussian_blur(img, s);
      CHECK(gaussian_blur(flip_horizontal(img), s) == flip_horizontal(b));
      CHECK(gaussian_blur(flip_vertical(img), s) == flip_vertical(b));
      CHECK(gaussian_blur(transpose(img), s) == transpose(b));
      CHECK(gaussian_blur(flip_vertical(flip_horizontal(img)), s) == flip_vertical(flip_horizontal(b)));
    }
  }

  TEST_CASE("blur variance grows with sigma") {
    double previous = -1.0;
    for (double s : {0.0, 0.1, 0.2, 0.4, 0.8, 1.6, 2.5}) {
      ImageF delta(31, 31);
      delta.at(15, 15, 0) = 1.0f;
      const auto out = gaussian_blur(delta, s);
      double var = 0.0;
      for (int y = 0; y < 31; ++y)
        for (int x = 0; x < 31; ++x) var += out.at(y, x, 0) * ((y - 15) * (y - 15) + (x - 15) * (x - 15));
      CHECK(var >= previous);
      previous = var;
    }
  }

  TEST_CASE("resize examples") {
    const auto img = noise_image(40, 2);
    CHECK(resize_bicubic(img, 40) == img);
    const Image flat(80, 80, 140);
    CHECK(resize_bicubic(flat, 40) == Image(40, 40, 140));
    CHECK(resize_bicubic(flat, 57) == Image(57, 57, 140));

    // 2x upscale of a horizontal ramp stays on the ramp away from the borders
    ImageF ramp(20, 20);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x)
        for (int c = 0; c < 3; ++c) ramp.at(y, x, c) = static_cast<float>(10 * x + 5);
    const auto up = resize_bicubic(ramp, 40);
    for (int y = 0; y < 40; ++y)
      for (int x = 4; x < 36; ++x) {
        const double u = (x + 0.5) / 2.0 - 0.5;
        CHECK(std::abs(up.at(y, x, 1) - (10 * u + 5)) <= 1.0);
      }
  }

  TEST_CASE("blur schemes") {
    CHECK(pre_resize_sigma(0.4, 80, 40) == doctest::Approx(0.8));
    CHECK(pre_resize_sigma(0.4, 40, 40) == 0.4);
    CHECK_THROWS_AS(pre_resize_sigma(0.4, 30, 40), ConfigurationError);

    const auto native40 = noise_image(40, 6);
    for (double s : kSigmaGrid)
      CHECK(apply_blur_scheme(native40, {BlurScheme::pre, s}) == apply_blur_scheme(native40, {BlurScheme::post, s}));

    const auto native80 = noise_image(80, 7);
    const auto plain = resize_bicubic(to_float(native80), 40);
    CHECK(apply_blur_scheme(native80, {BlurScheme::pre, 0.0}) == plain);
    CHECK(apply_blur_scheme(native80, {BlurScheme::post, 0.0}) == plain);
    CHECK(apply_blur_scheme(native80, {BlurScheme::pre, 0.4}) ==
          resize_bicubic(gaussian_blur(to_float(native80), 0.8), 40));
    CHECK(parse_scheme("pre") == BlurScheme::pre);
    CHECK_THROWS_AS(parse_scheme("mid"), ConfigurationError);
  }

  TEST_CASE("whitening") {
    TensorF x(Shape{3, 40, 40});
    for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i % 17) / 17.0f;
    CHECK(whiten(x, TensorF(x.shape())).vec() == x.vec());
    CHECK(whiten(x, x).vec().isZero(0.0));
    CHECK_THROWS_AS(whiten(x, TensorF(Shape{3, 20, 20})), DimensionError);

    const auto ds = small_synthetic(3, 6, 80);
    const auto mean = dataset_mean(ds);
    const auto set = make_tensor_set(ds, mean);
    const Index per = 3 * 40 * 40;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(per);
    for (Index i = 0; i < set.size(); ++i)
      acc += Eigen::Map<const Eigen::VectorXf>(set.images.data() + i * per, per).cast<double>();
    CHECK((acc / static_cast<double>(set.size())).cwiseAbs().maxCoeff() < 1e-5);
  }

  TEST_CASE("drop slope examples and properties") {
    const std::vector<BlurPoint> flat = {{0, 0.7}, {0.4, 0.7}, {1.6, 0.7}};
    CHECK(drop_slope(flat) == 0.0);
    const std::vector<BlurPoint> two = {{0, 1}, {1, 0}};
    CHECK(drop_slope(two) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK_THROWS_AS(drop_slope(std::vector<BlurPoint>{{0.4, 1}, {0.4, 2}}), StatisticsError);
    CHECK_THROWS_AS(drop_slope(std::vector<BlurPoint>{}), StatisticsError);

    const std::vector<BlurPoint> table = {{0, 0.553571},   {0.1, 0.553384}, {0.2, 0.553114},
                                          {0.4, 0.548343}, {0.8, 0.526534}, {1.6, 0.435413}};
    // reference from an independent least-squares fit
    CHECK(std::abs(drop_slope(table) - (-0.0828935969566811)) < 1e-9);

    auto shifted = table, scaled = table;
    for (auto& p : shifted) p.metric += 0.25;
    for (auto& p : scaled) p.metric *= 3.0;
    CHECK(std::abs(drop_slope(shifted) - drop_slope(table)) < 1e-12);
    CHECK(std::abs(drop_slope(scaled) - 3.0 * drop_slope(table)) < 1e-12);
  }

  TEST_CASE("robustness sweep layout") {
    const auto val = small_synthetic(3, 4, 80, 5);
    const auto mean = dataset_mean(val);
    auto model = build<float>(ModelSpec::defaults(Arch::CNN, 3));
    const std::vector<BlurScheme> schemes = {BlurScheme::pre, BlurScheme::post};

    const std::vector<double> zero = {0.0};
    const auto clean_only = robustness_sweep(model, val, mean, zero, schemes, "cnn");
    CHECK(clean_only.rows.size() == 1);
    CHECK(clean_only.clean().delta_accuracy == 0.0);
    CHECK(clean_only.clean().accuracy == doctest::Approx(evaluate(model, make_tensor_set(val, mean)).accuracy));

    const auto full = robustness_sweep(model, val, mean, kSigmaGrid, schemes, "cnn");
    CHECK(full.rows.size() == 11);
    CHECK(full.clean().scheme == "clean");
    CHECK(full.clean().sigma == 0.0);
    CHECK(full.slopes.size() == 2);
    CHECK(full.at("post", 1.6).delta_accuracy == doctest::Approx(full.at("post", 1.6).accuracy - full.clean().accuracy));
    CHECK_THROWS_AS(full.at("post", 0.3), std::out_of_range);

    // a constant predictor is blind to blur
    for (auto& e : model.entries())
      if (e.head) {
        e.var->value.set_zero();
        if (e.var->value.rank() == 1) e.var->value[1] = 1.0f;
      }
    const auto flat = robustness_sweep(model, val, mean, kSigmaGrid, schemes, "const");
    for (const auto& r : flat.rows) CHECK(r.accuracy == flat.clean().accuracy);
    for (const auto& s : flat.slopes) {
      CHECK(s.accuracy_slope == 0.0);
      CHECK(s.macro_f1_slope == 0.0);
    }
    CHECK(flat.clean().accuracy == doctest::Approx(1.0 / 3.0));
  }
}
