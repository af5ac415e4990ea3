#include <algorithm>
#include <cmath>
#include <numeric>

#include "adamix/grad_check.hpp"
#include "adamix/mixblock.hpp"
#include "adamix/ops.hpp"
#include "doctest.h"

using namespace adamix;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v));
}

ArchDescriptor tiny_arch() {
  ArchDescriptor d;
  d.input = {3, 8, 8};
  d.widths = {4, 6};
  d.blocks_per_stage = 1;
  d.num_classes = 3;
  return d;
}

std::vector<MixSet> consecutive_sets(std::size_t k, std::size_t n, std::mt19937_64& rng) {
  std::vector<MixSet> sets;
  for (std::size_t s = 0; s < k; ++s) {
    MixSet set;
    for (std::size_t j = 0; j < n; ++j) set.members.push_back(s * n + j);
    set.ratios = sample_mix_ratios(n, 1.0, rng);
    sets.push_back(set);
  }
  return sets;
}

}  // namespace

TEST_CASE("embed_ratio examples") {
  const Tensor z = random_tensor({2, 64, 8, 8}, 1);
  const std::vector<double> lambdas{0.4, 0.0};
  const Tensor e = embed_ratio(z, lambdas);
  CHECK(e.shape() == Shape{2, 65, 8, 8});
  for (std::size_t p = 0; p < 64; ++p) {
    CHECK(e.data()[p] == 0.4);
    CHECK(e.data()[65 * 64 + p] == 0.0);
  }
  const Tensor back = strip_ratio(e);
  CHECK(std::equal(back.data().begin(), back.data().end(), z.data().begin()));
  const std::vector<double> bad{1.2, 0.0};
  CHECK_THROWS_AS(embed_ratio(z, bad), Error);
}

TEST_CASE("qkv_project examples") {
  GeneratorParams theta = GeneratorParams::init(64, 3);
  CHECK(theta.d() == 32);
  const Tensor z = embed_ratio(random_tensor({1, 64, 4, 4}, 2), std::vector<double>{0.5});
  auto heads = qkv_project(z, theta);
  CHECK(heads.q.shape() == Shape{1, 32, 16});
  CHECK(heads.k.shape() == Shape{1, 32, 16});
  CHECK(heads.v.shape() == Shape{1, 16});

  // 1-channel features: value weight picks the feature channel.
  GeneratorParams one = GeneratorParams::init(1, 4);
  one.value = Tensor::from({1, 2, 1, 1}, {0.0, 1.0});
  const Tensor z1 = random_tensor({1, 1, 3, 3}, 5);
  heads = qkv_project(embed_ratio(z1, std::vector<double>{0.3}), one);
  CHECK(std::equal(heads.v.data().begin(), heads.v.data().end(), z1.data().begin()));

  GeneratorParams zero = GeneratorParams::init(1, 4);
  for (auto& p : zero.parameters())
    for (auto& v : p.mutable_data()) v = 0.0;
  heads = qkv_project(embed_ratio(z1, std::vector<double>{0.3}), zero);
  for (const Tensor* t : {&heads.q, &heads.k, &heads.v})
    for (double v : t->data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(qkv_project(random_tensor({1, 5, 2, 2}, 1), one), Error);
}

TEST_CASE("cross_attention matches a dense oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::size_t n = 2 + seed % 3, d = 3, h = 2, w = 2, wh = h * w, sets = 2;
    AttentionHeads heads{random_tensor({sets * n, d, wh}, 10 + seed),
                         random_tensor({sets * n, d, wh}, 20 + seed),
                         random_tensor({sets * n, wh}, 30 + seed), h, w};
    const Tensor p = cross_attention(heads, n);
    REQUIRE(p.shape() == Shape{sets, n, h, w});
    const auto q = heads.q.data(), k = heads.k.data(), v = heads.v.data();
    for (std::size_t s = 0; s < sets; ++s)
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t row = s * n + t;
        for (std::size_t a = 0; a < wh; ++a) {
          std::vector<double> score(wh, 0.0);
          for (std::size_t b = 0; b < wh; ++b) {
            for (std::size_t i = 0; i < n; ++i) {
              if (i == t) continue;
              for (std::size_t c = 0; c < d; ++c)
                score[b] += q[(row * d + c) * wh + a] * k[((s * n + i) * d + c) * wh + b];
            }
            score[b] /= std::sqrt(double(d));
          }
          const double mx = *std::max_element(score.begin(), score.end());
          double z = 0.0, out = 0.0;
          for (std::size_t b = 0; b < wh; ++b) z += std::exp(score[b] - mx);
          for (std::size_t b = 0; b < wh; ++b) out += std::exp(score[b] - mx) / z * v[row * wh + b];
          CHECK(std::abs(p.data()[row * wh + a] - out) < 1e-9);
        }
      }
  }
}

TEST_CASE("cross_attention examples") {
  const std::size_t n = 3, d = 2, wh = 4;
  AttentionHeads heads{random_tensor({n, d, wh}, 1), Tensor::zeros({n, d, wh}),
                       random_tensor({n, wh}, 2), 2, 2};
  Tensor p = cross_attention(heads, n);
  for (std::size_t t = 0; t < n; ++t) {
    double mean = 0.0;
    for (std::size_t b = 0; b < wh; ++b) mean += heads.v.data()[t * wh + b] / double(wh);
    for (std::size_t a = 0; a < wh; ++a) CHECK(p.data()[t * wh + a] == doctest::Approx(mean));
  }
  // Keys constant across positions add the same value to every score in a row.
  std::vector<double> kc(n * d * wh, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t b = 0; b < wh; ++b) kc[(i * d + c) * wh + b] = 0.5 + double(c);
  AttentionHeads constant{heads.q, Tensor::from({n, d, wh}, kc), heads.v, 2, 2};
  const Tensor pc = cross_attention(constant, n);
  for (std::size_t i = 0; i < pc.size(); ++i) CHECK(pc.data()[i] == doctest::Approx(p.data()[i]));

  AttentionHeads single{random_tensor({1, d, wh}, 1), random_tensor({1, d, wh}, 2),
                        random_tensor({1, wh}, 3), 2, 2};
  CHECK_THROWS_AS(cross_attention(single, 1), Error);
}

TEST_CASE("normalize_and_upsample examples") {
  const double l3 = std::log(3.0);
  const Tensor maps = Tensor::from({1, 2, 2, 2}, {0, 0, 0, 0, l3, l3, l3, l3});
  const Tensor small = normalize_and_upsample(maps, 2, 2);
  const Tensor big = normalize_and_upsample(maps, 8, 8);
  for (const Tensor* m : {&small, &big}) {
    const std::size_t plane = m->dim(2) * m->dim(3);
    for (std::size_t p = 0; p < plane; ++p) {
      CHECK(std::abs(m->data()[p] - 0.25) < 1e-12);
      CHECK(std::abs(m->data()[plane + p] - 0.75) < 1e-12);
    }
  }
  const Tensor same = normalize_and_upsample(Tensor::full({1, 4, 2, 2}, 0.7), 4, 4);
  for (double v : same.data()) CHECK(v == doctest::Approx(0.25));

  const Tensor masks = normalize_and_upsample(random_tensor({3, 4, 3, 3}, 7, -5, 5), 9, 9);
  CHECK_NOTHROW(check_masks(masks));
  CHECK_THROWS_AS(normalize_and_upsample(random_tensor({1, 1, 2, 2}, 1), 4, 4), Error);
}

TEST_CASE("mix_images examples") {
  const std::size_t k = 2, n = 3, c = 2, h = 4, w = 4;
  const Tensor images = random_tensor({k, n, c, h, w}, 4, 0.0, 1.0);
  const Tensor masks = normalize_and_upsample(random_tensor({k, n, 2, 2}, 5, -3, 3), h, w);
  const Tensor mixed = mix_images(images, masks);
  REQUIRE(mixed.shape() == Shape{k, c, h, w});
  const auto x = images.data(), m = masks.data();
  for (std::size_t s = 0; s < k; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) {
        double expect = 0.0, lo = 1e9, hi = -1e9;
        for (std::size_t i = 0; i < n; ++i) {
          const double xv = x[((s * n + i) * c + ch) * h * w + p];
          expect += xv * m[(s * n + i) * h * w + p];
          lo = std::min(lo, xv);
          hi = std::max(hi, xv);
        }
        const double got = mixed.data()[(s * c + ch) * h * w + p];
        CHECK(std::abs(got - expect) < 1e-9);
        CHECK(got >= lo - 1e-12);
        CHECK(got <= hi + 1e-12);
      }

  // Degenerate mask selects the first image.
  std::vector<double> hard(k * n * h * w, 0.0);
  for (std::size_t s = 0; s < k; ++s) std::fill_n(hard.begin() + long(s * n * h * w), h * w, 1.0);
  const Tensor first = mix_images(images, Tensor::from({k, n, h, w}, hard));
  for (std::size_t s = 0; s < k; ++s)
    for (std::size_t i = 0; i < c * h * w; ++i)
      CHECK(first.data()[s * c * h * w + i] == x[s * n * c * h * w + i]);

  std::vector<double> bad(k * n * h * w, 0.5);
  CHECK_THROWS_AS(mix_images(images, Tensor::from({k, n, h, w}, bad)), Error);
}

TEST_CASE("generate on identical images returns the image") {
  const auto arch = tiny_arch();
  Classifier net(arch, 1);
  EncoderView encoder(net, 1);
  GeneratorParams theta = GeneratorParams::init(arch.widths[0], 2);
  const Tensor one = random_tensor({1, 3, 8, 8}, 9, 0.0, 1.0);
  const Tensor batch = ops::concat({one, one, one}, 0);
  MixSet set{{0, 1, 2}, {0.2, 0.3, 0.5}};
  const Generated g = generate(batch, {set}, theta, encoder, 1);
  CHECK(g.masks.shape() == Shape{1, 3, 8, 8});
  for (std::size_t i = 0; i < one.size(); ++i)
    CHECK(std::abs(g.mixed.data()[i] - one.data()[i]) < 1e-12);
}

TEST_CASE("generate is convex, N-agnostic and permutation equivariant") {
  const auto arch = tiny_arch();
  Classifier net(arch, 3);
  EncoderView encoder(net, 2);
  GeneratorParams theta = GeneratorParams::init(arch.widths[1], 4);
  std::mt19937_64 rng(5);
  for (std::size_t n = 2; n <= 5; ++n) {
    const Tensor batch = random_tensor({2 * n, 3, 8, 8}, 100 + n, 0.0, 1.0);
    auto sets = consecutive_sets(2, n, rng);
    const Generated g = generate(batch, sets, theta, encoder, 2);
    CHECK_NOTHROW(check_masks(g.masks));
    const Tensor grouped = gather_sets(batch, sets);
    const std::size_t item = 3 * 64;
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t i = 0; i < item; ++i) {
        double lo = 1e9, hi = -1e9;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = grouped.data()[(s * n + j) * item + i];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        const double got = g.mixed.data()[s * item + i];
        CHECK(got >= lo - 1e-6);
        CHECK(got <= hi + 1e-6);
      }

    // Reverse members and ratios of each set together.
    auto reversed = sets;
    for (auto& set : reversed) {
      std::reverse(set.members.begin(), set.members.end());
      std::reverse(set.ratios.begin(), set.ratios.end());
    }
    const Generated r = generate(batch, reversed, theta, encoder, 2);
    for (std::size_t i = 0; i < g.mixed.size(); ++i)
      CHECK(std::abs(r.mixed.data()[i] - g.mixed.data()[i]) < 1e-6);
    const std::size_t plane = 64;
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < plane; ++p)
          CHECK(std::abs(r.masks.data()[(s * n + j) * plane + p] -
                         g.masks.data()[(s * n + (n - 1 - j)) * plane + p]) < 1e-9);
  }
}

TEST_CASE("generate gradient w.r.t. theta matches finite differences") {
  const auto arch = tiny_arch();
  Classifier net(arch, 6);
  EncoderView encoder(net, 1);
  GeneratorParams theta = GeneratorParams::init(arch.widths[0], 7);
  const Tensor batch = random_tensor({2, 3, 8, 8}, 8, 0.0, 1.0);
  MixSet set{{0, 1}, {0.3, 0.7}};
  const double err = grad_check(
      [&] { return ops::mean(generate(batch, {set}, theta, encoder, 1).mixed); },
      theta.parameters());
  CHECK(err < 1e-4);
  for (const auto& p : encoder.parameters()) CHECK_FALSE(p.has_grad());
}

TEST_CASE("mix_labels examples") {
  const std::vector<std::size_t> two{0, 1};
  const std::vector<double> r2{0.6, 0.4};
  CHECK(mix_labels(two, r2, 4) == std::vector<double>{0.6, 0.4, 0.0, 0.0});
  const std::vector<std::size_t> same{2, 2};
  CHECK(mix_labels(same, r2, 4) == std::vector<double>{0.0, 0.0, 1.0, 0.0});
  const std::vector<std::size_t> three{0, 0, 2};
  const std::vector<double> r3{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const auto y = mix_labels(three, r3, 4);
  CHECK(y[0] == doctest::Approx(2.0 / 3));
  CHECK(y[1] == 0.0);
  CHECK(y[2] == doctest::Approx(1.0 / 3));
  CHECK(std::abs(std::accumulate(y.begin(), y.end(), 0.0) - 1.0) < 1e-9);
  const std::vector<double> bad{0.6, 0.6};
  CHECK_THROWS_AS(mix_labels(two, bad, 4), Error);
  const std::vector<std::size_t> out_of_range{0, 7};
  CHECK_THROWS_AS(mix_labels(out_of_range, r2, 4), Error);
}
