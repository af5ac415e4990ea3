#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "adamix/data.hpp"
#include "doctest.h"

using namespace adamix;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "adamix_test_data";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size()));
}

}  // namespace

TEST_CASE("load_cifar_binary single record") {
  std::vector<unsigned char> bytes(1 + 3072, 255);
  bytes[0] = 5;
  const auto path = temp_file("one.bin");
  write_bytes(path, bytes);
  const auto images = load_cifar_binary(path.string(), 10);
  REQUIRE(images.size() == 1);
  CHECK(images[0].label == 5);
  CHECK(std::all_of(images[0].pixels.begin(), images[0].pixels.end(),
                    [](double v) { return v == 1.0; }));
}

TEST_CASE("load_cifar_binary empty file") {
  const auto path = temp_file("empty.bin");
  write_bytes(path, {});
  CHECK(load_cifar_binary(path.string(), 10).empty());
}

TEST_CASE("load_cifar_binary errors name the byte offset") {
  const auto path = temp_file("bad.bin");
  std::vector<unsigned char> bytes(2 * 3073, 0);
  bytes[3073] = 12;  // second record label
  write_bytes(path, bytes);
  try {
    load_cifar_binary(path.string(), 10);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
  bytes.resize(3073 + 100);
  bytes[3073] = 1;
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_cifar_binary(path.string(), 10), Error);
}

TEST_CASE("CIFAR fixture round-trips byte for byte") {
  for (bool coarse : {false, true}) {
    std::vector<unsigned char> bytes;
    std::mt19937_64 rng(coarse ? 9 : 4);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int r = 0; r < 3; ++r) {
      if (coarse) bytes.push_back(0);
      bytes.push_back(static_cast<unsigned char>(r * 3 + 1));
      for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>(byte(rng)));
    }
    const auto src = temp_file("fixture.bin");
    const auto dst = temp_file("fixture_copy.bin");
    write_bytes(src, bytes);
    const auto images = load_cifar_binary(src.string(), 100, coarse);
    REQUIRE(images.size() == 3);
    CHECK(images[2].label == 7);
    save_cifar_binary(dst.string(), images, coarse);
    CHECK(read_bytes(dst) == bytes);
  }
}

TEST_CASE("make_synthetic is deterministic and validated") {
  DatasetSpec spec;
  spec.seed = 17;
  const auto [train_a, test_a] = make_synthetic(spec);
  const auto [train_b, test_b] = make_synthetic(spec);
  CHECK(train_a.size() == 300);
  CHECK(test_a.size() == 300);
  for (std::size_t i = 0; i < train_a.size(); ++i) {
    CHECK(train_a.images[i].pixels == train_b.images[i].pixels);
    CHECK(train_a.images[i].label == train_b.images[i].label);
  }
  for (const auto& img : train_a.images)
    for (double v : img.pixels) CHECK((v >= 0.0 && v <= 1.0));

  spec.num_classes = 1;
  CHECK_THROWS_AS(make_synthetic(spec), Error);
}

TEST_CASE("make_synthetic without noise yields identical class members") {
  DatasetSpec spec;
  spec.noise = 0.0;
  spec.num_classes = 5;
  const auto [train, test] = make_synthetic(spec);
  for (std::size_t i = spec.num_classes; i < train.size(); ++i) {
    CHECK(train.images[i].pixels == train.images[i % spec.num_classes].pixels);
  }
}

TEST_CASE("synthetic classes separate under a nearest-centroid oracle") {
  for (std::size_t classes : {3u, 6u, 10u}) {
    DatasetSpec spec;
    spec.num_classes = classes;
    const auto [train, test] = make_synthetic(spec);
    const std::size_t dims = train.shape.size();
    std::vector<std::vector<double>> centroid(classes, std::vector<double>(dims, 0.0));
    std::vector<std::size_t> count(classes, 0);
    for (const auto& img : train.images) {
      for (std::size_t d = 0; d < dims; ++d) centroid[img.label][d] += img.pixels[d];
      ++count[img.label];
    }
    for (std::size_t c = 0; c < classes; ++c)
      for (auto& v : centroid[c]) v /= double(count[c]);
    std::size_t correct = 0;
    for (const auto& img : train.images) {
      std::size_t best = 0;
      double best_dist = INFINITY;
      for (std::size_t c = 0; c < classes; ++c) {
        double dist = 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
          const double diff = img.pixels[d] - centroid[c][d];
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = c;
        }
      }
      correct += best == img.label;
    }
    CHECK(double(correct) / double(train.size()) > 0.9);
  }
}

TEST_CASE("sample_mix_ratios examples") {
  std::mt19937_64 rng(1);
  CHECK(sample_mix_ratios(1, 1.0, rng) == std::vector<double>{1.0});
  for (double conc : {0.2, 1.0, 10.0}) {
    for (int i = 0; i < 1000; ++i) {
      const auto r = sample_mix_ratios(3, conc, rng);
      double total = 0.0;
      for (double v : r) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(sample_mix_ratios(2, 0.0, rng), Error);
  CHECK_THROWS_AS(sample_mix_ratios(2, -1.0, rng), Error);
}

TEST_CASE("Dirichlet(1,1) first coordinate is uniform (KS test, alpha 0.01)") {
  std::mt19937_64 rng(2024);
  const std::size_t draws = 10000;
  std::vector<double> xs;
  for (std::size_t i = 0; i < draws; ++i) xs.push_back(sample_mix_ratios(2, 1.0, rng)[0]);
  std::sort(xs.begin(), xs.end());
  double d = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    d = std::max(d, std::max(double(i + 1) / draws - xs[i], xs[i] - double(i) / draws));
  }
  // Asymptotic critical value c(0.01) = 1.628 / sqrt(n).
  CHECK(d < 1.628 / std::sqrt(double(draws)));
}

TEST_CASE("batch_iterator set counts") {
  DatasetSpec spec;
  spec.train_size = 12;
  const auto [train, test] = make_synthetic(spec);
  BatchOptions opts;
  opts.batch_size = 6;
  opts.per_set = 3;
  BatchIterator it(train, opts, 3);
  auto batch = it.next();
  REQUIRE(batch);
  CHECK(batch->sets.size() == 2);
  for (const auto& set : batch->sets) {
    std::set<std::size_t> distinct(set.members.begin(), set.members.end());
    CHECK(distinct.size() == 3);
    for (auto m : set.members) CHECK(m < 6);
  }

  opts.batch_size = 2;
  CHECK_THROWS_AS(BatchIterator(train, opts, 3), Error);
}

TEST_CASE("batch_iterator covers each image once per epoch") {
  DatasetSpec spec;
  spec.train_size = 1000;
  const auto [train, test] = make_synthetic(spec);
  BatchOptions opts;
  opts.batch_size = 100;
  opts.per_set = 2;
  BatchIterator it(train, opts, 8);
  std::vector<int> seen(1000, 0);
  std::size_t batches = 0;
  while (auto batch = it.next()) {
    ++batches;
    CHECK(batch->sets.size() == 50);
    for (auto idx : batch->indices) ++seen[idx];
    for (const auto& set : batch->sets) {
      CHECK(set.members[0] != set.members[1]);
      CHECK(std::abs(set.ratios[0] + set.ratios[1] - 1.0) < 1e-9);
    }
  }
  CHECK(batches == 10);
  CHECK(it.batches_per_epoch() == 10);
  CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
}

TEST_CASE("batch_iterator streams are reproducible") {
  DatasetSpec spec;
  spec.train_size = 40;
  const auto [train, test] = make_synthetic(spec);
  for (bool augment : {false, true}) {
    BatchOptions opts;
    opts.batch_size = 9;
    opts.per_set = 3;
    opts.augment.flip = augment;
    opts.augment.crop = augment;
    BatchIterator a(train, opts, 5), b(train, opts, 5);
    for (std::size_t epoch : {0u, 3u}) {
      a.start_epoch(epoch);
      b.start_epoch(epoch);
      while (true) {
        auto x = a.next();
        auto y = b.next();
        REQUIRE(x.has_value() == y.has_value());
        if (!x) break;
        CHECK(x->indices == y->indices);
        CHECK(std::equal(x->images.data().begin(), x->images.data().end(), y->images.data().begin()));
        for (std::size_t k = 0; k < x->sets.size(); ++k) CHECK(x->sets[k].ratios == y->sets[k].ratios);
      }
    }
  }
}

TEST_CASE("augmentation helpers") {
  ImageShape shape{1, 2, 3};
  std::vector<double> px = {1, 2, 3, 4, 5, 6};
  flip_horizontal(px, shape);
  CHECK(px == std::vector<double>{3, 2, 1, 6, 5, 4});
  px = {1, 2, 3, 4, 5, 6};
  pad_crop(px, shape, 1, 1, 1);  // centred crop is the identity
  CHECK(px == std::vector<double>{1, 2, 3, 4, 5, 6});
  pad_crop(px, shape, 1, 0, 0);  // shift down-right by one, zero fill
  CHECK(px == std::vector<double>{0, 0, 0, 0, 1, 2});
}
