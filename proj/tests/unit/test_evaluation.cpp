#include "doctest.h"

#include <cmath>

#include "stamps/errors.hpp"
#include "stamps/evaluation.hpp"
#include "support/fixtures.hpp"

using namespace stamps;

namespace {

MaskTensor rect(int64_t h, int64_t w, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
  auto t = torch::zeros({h, w});
  t.slice(0, r0, r1).slice(1, c0, c1).fill_(1);
  return MaskTensor::from(t, true);
}

// Shapes inscribed in the square [r0, r0 + n) x [c0, c0 + n).
MaskTensor disk(int64_t size, int64_t r0, int64_t c0, int64_t n) {
  auto t = torch::zeros({size, size});
  const double c = (n - 1) / 2.0;
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x)
      if ((y - c) * (y - c) + (x - c) * (x - c) <= c * c + 0.5) t[r0 + y][c0 + x] = 1;
  return MaskTensor::from(t, true);
}

MaskTensor ell(int64_t size, int64_t r0, int64_t c0, int64_t n) {
  auto t = torch::zeros({size, size});
  t.slice(0, r0, r0 + n).slice(1, c0, c0 + n / 3).fill_(1);
  t.slice(0, r0 + n - n / 3, r0 + n).slice(1, c0, c0 + n).fill_(1);
  return MaskTensor::from(t, true);
}

MaskTensor triangle(int64_t size, int64_t r0, int64_t c0, int64_t n) {
  auto t = torch::zeros({size, size});
  for (int64_t y = 0; y < n; ++y) t[r0 + y].slice(0, c0, c0 + y + 1).fill_(1);
  return MaskTensor::from(t, true);
}

}  // namespace

TEST_CASE("kid matches the brute-force oracle on small sets") {
  auto g = nn::make_generator(1);
  for (int64_t n = 2; n <= 10; ++n) {
    const auto x = torch::randn({n, 3}, g, torch::kFloat64);
    const auto y = torch::randn({n + 1, 3}, g, torch::kFloat64) + 0.3;
    const double want = oracle::kid(fixtures::to_matrix(x), fixtures::to_matrix(y));
    CHECK(std::fabs(kid(x, y) - want) <= 1e-10 * std::max(1.0, std::fabs(want)));
  }
}

TEST_CASE("kid is symmetric and its self-comparison follows the estimator identity") {
  auto g = nn::make_generator(2);
  const auto x = torch::randn({6, 4}, g, torch::kFloat64);
  const auto y = torch::randn({5, 4}, g, torch::kFloat64);
  CHECK(kid(x, y) == doctest::Approx(kid(y, x)).epsilon(1e-12));
  const auto k = (x.matmul(x.t()) / 4.0 + 1).pow(3);
  const double offdiag = (k.sum() - k.diagonal().sum()).item<double>() / 30.0;
  const double all = k.mean().item<double>();
  CHECK(kid(x, x) == doctest::Approx(2 * offdiag - 2 * all).epsilon(1e-12));
}

TEST_CASE("kid of two same-distribution samples is near zero") {
  auto g = nn::make_generator(3);
  const auto x = torch::randn({400, 8}, g, torch::kFloat64);
  const auto y = torch::randn({400, 8}, g, torch::kFloat64);
  const auto report = subset_protocol(x, {y}, 30, 100, 5);
  const double se = report.std[0] / std::sqrt(30.0);
  CHECK(std::fabs(kid(x, y)) <= 3 * std::max(se, 1e-12) + 3 * report.std[0]);
  CHECK(std::fabs(report.mean[0]) <= 3 * report.std[0]);
}

TEST_CASE("kid errors") {
  CHECK_THROWS_AS(kid(torch::zeros({1, 3}), torch::zeros({4, 3})), InsufficientSamplesError);
  CHECK_THROWS_AS(kid(torch::zeros({4, 3}), torch::zeros({4, 2})), DimensionError);
}

TEST_CASE("subset protocol examples") {
  auto g = nn::make_generator(4);
  const auto real = torch::randn({60, 5}, g, torch::kFloat64);
  const auto other = torch::randn({60, 5}, g, torch::kFloat64) + 0.5;
  const auto one = subset_protocol(real, {other}, 10, 20, 1);
  CHECK(one.count_best[0] == 1.0);
  const auto ab = subset_protocol(real, {real.clone(), other}, 10, 20, 1, {"A", "B"});
  CHECK(ab.count_best[0] == 1.0);
  CHECK(ab.count_best[1] == 0.0);
  const auto again = subset_protocol(real, {real.clone(), other}, 10, 20, 1, {"A", "B"});
  CHECK(ab.scores == again.scores);
  CHECK(ab.to_json() == again.to_json());
  CHECK(subset_protocol(real, {other}, 10, 20, 2).scores != one.scores);
  CHECK_THROWS_AS(subset_protocol(real, {other}, 10, 61, 1), ConfigError);
}

TEST_CASE("report statistics are recomputable from the scores") {
  auto g = nn::make_generator(5);
  const auto real = torch::randn({30, 4}, g, torch::kFloat64);
  std::vector<torch::Tensor> fakes;
  for (int s = 0; s < 3; ++s) fakes.push_back(torch::randn({30, 4}, g, torch::kFloat64) * (1 + 0.1 * s));
  const auto r = subset_protocol(real, fakes, 25, 10, 7);
  double share = 0;
  for (size_t s = 0; s < 3; ++s) {
    double mean = 0;
    for (double v : r.scores[s]) mean += v;
    mean /= 25;
    double var = 0;
    for (double v : r.scores[s]) var += (v - mean) * (v - mean);
    CHECK(r.mean[s] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.std[s] == doctest::Approx(std::sqrt(var / 25)).epsilon(1e-12));
    share += r.count_best[s];
  }
  CHECK(share == doctest::Approx(1.0));
}

TEST_CASE("tied systems credit the lowest index") {
  auto g = nn::make_generator(6);
  const auto real = torch::randn({20, 3}, g, torch::kFloat64);
  const auto fake = torch::randn({20, 3}, g, torch::kFloat64);
  const auto r = subset_protocol(real, {fake, fake.clone()}, 5, 10, 0);
  CHECK(r.count_best[0] == 1.0);
}

TEST_CASE("retrieval examples") {
  std::vector<MaskTensor> corpus{ell(32, 2, 2, 18), disk(32, 5, 5, 20), triangle(32, 8, 3, 21)};
  for (int64_t k = 0; k < 3; ++k) CHECK(nn_mask_retrieve(corpus[k], corpus) == k);
  const auto q = rect(32, 32, 8, 24, 6, 26);
  const auto complement = MaskTensor::from(1 - q.tensor(), true);
  std::vector<MaskTensor> pair{complement, q};
  CHECK(nn_mask_retrieve(q, pair) == 1);
  CHECK_THROWS_AS(nn_mask_retrieve(MaskTensor::filled(32, 32, 0), corpus), EmptyMaskError);
  CHECK_THROWS_AS(nn_mask_retrieve(q, std::span<const MaskTensor>{}), ConfigError);
}

TEST_CASE("retrieval matches the exhaustive-scan oracle") {
  const auto recs = fixtures::toy_records(11, 32, 900);
  std::vector<MaskTensor> corpus;
  std::vector<std::vector<double>> raw;
  for (size_t k = 1; k < recs.size(); ++k) {
    corpus.push_back(recs[k].mask);
    raw.push_back(fixtures::to_vec(recs[k].mask.tensor()));
  }
  for (size_t k = 0; k < recs.size(); ++k) {
    const auto& q = recs[k].mask;
    CHECK(nn_mask_retrieve(q, corpus) == oracle::retrieve(fixtures::to_vec(q.tensor()), raw, 32, 32));
  }
}

TEST_CASE("retrieval is scale consistent") {
  std::vector<MaskTensor> corpus{ell(64, 10, 10, 30), disk(64, 20, 20, 30), triangle(64, 5, 30, 30)};
  for (const int64_t n : {15, 24, 45, 60}) {
    CHECK(nn_mask_retrieve(ell(64, 64 - n, 0, n), corpus) == 0);
    CHECK(nn_mask_retrieve(disk(64, 0, 64 - n, n), corpus) == 1);
    CHECK(nn_mask_retrieve(triangle(64, 2, 2, n), corpus) == 2);
  }
}

TEST_CASE("feature extraction is per-image deterministic") {
  auto embedder = make_feature_embedder({});
  const auto recs = fixtures::toy_records(3, 32, 10);
  std::vector<ImageTensor> imgs{recs[0].image, recs[1].image, recs[2].image};
  const auto f = extract_features(embedder, imgs);
  CHECK(f.size(0) == 3);
  CHECK(f.size(1) == embedder->feature_dim());
  CHECK(torch::equal(f[0], extract_features(embedder, std::vector<ImageTensor>{imgs[0]})[0]));
  std::vector<ImageTensor> swapped{imgs[2], imgs[0], imgs[1]};
  const auto p = extract_features(embedder, swapped);
  CHECK(torch::equal(p[0], f[2]));
  CHECK(torch::equal(p[1], f[0]));
  std::vector<ImageTensor> same{imgs[1], imgs[1]};
  const auto s = extract_features(embedder, same);
  CHECK(torch::equal(s[0], s[1]));
  std::vector<MaskTensor> masks{recs[0].mask, recs[1].mask};
  CHECK(extract_mask_features(embedder, masks).size(1) == embedder->feature_dim());
}

TEST_CASE("diversity statistics") {
  std::vector<torch::Tensor> same{torch::ones({4, 4}), torch::ones({4, 4})};
  CHECK(mean_pairwise_l1(same) == 0.0);
  std::vector<torch::Tensor> three{torch::zeros({2}), torch::ones({2}), torch::full({2}, 3.0)};
  CHECK(mean_pairwise_l1(three) == doctest::Approx((1.0 + 3.0 + 2.0) / 3.0));
  auto phi = make_perceptual_net({});
  const auto recs = fixtures::toy_records(2, 32, 20);
  CHECK(perceptual_distance(phi, recs[0].image, recs[0].image) == 0.0);
  CHECK(perceptual_distance(phi, recs[0].image, recs[1].image) > 0.0);
  const auto box = make_bbox({0.25, 0.25, 0.75, 0.75}, 8, 8);
  CHECK(mass_inside_box(box.raster, box) == 1.0);
  CHECK(mass_inside_box(MaskTensor::filled(8, 8, 1), box) == doctest::Approx(0.25));
}
