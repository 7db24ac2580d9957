#include "doctest.h"

#include <cmath>

#include "stamps/coco.hpp"
#include "stamps/dataset.hpp"
#include "stamps/errors.hpp"
#include "support/fixtures.hpp"

using namespace stamps;

namespace {

MaskTensor blob(int64_t h, int64_t w, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
  auto t = torch::zeros({h, w});
  t.slice(0, r0, r1).slice(1, c0, c1).fill_(1);
  return MaskTensor::from(t, true);
}

InstanceRecord record_for(const MaskTensor& m, const std::string& id) {
  return InstanceRecord::make(id, "toy", ImageTensor::filled(m.height(), m.width(), 0.25f), m);
}

}  // namespace

TEST_CASE("instance filter examples") {
  // 50 pixels in a 100 x 100 image is 0.5% of the area.
  CHECK_FALSE(passes_instance_filter(blob(100, 100, 40, 45, 40, 50)));
  auto two = blob(64, 64, 10, 20, 10, 20).tensor().clone();
  two.slice(0, 40, 50).slice(1, 40, 50).fill_(1);
  CHECK_FALSE(passes_instance_filter(MaskTensor::from(two, true)));
  // Centered square covering 10% of a 100 x 100 frame.
  const auto centered = blob(100, 100, 34, 66, 35, 66);
  CHECK(area_fraction(centered) == doctest::Approx(0.0992));
  CHECK(passes_instance_filter(centered));
  CHECK_FALSE(passes_instance_filter(blob(32, 32, 0, 10, 5, 15)));
}

TEST_CASE("diagonal neighbours are separate components") {
  auto t = torch::zeros({10, 10});
  t[3][3] = 1;
  t[4][4] = 1;
  const auto m = MaskTensor::from(t, true);
  CHECK(count_components(m) == 2);
  CHECK(count_components(m) == oracle::count_components4(fixtures::to_vec(t), 10, 10));
}

TEST_CASE("component count matches the flood-fill oracle") {
  auto g = nn::make_generator(3);
  for (int k = 0; k < 20; ++k) {
    const auto t = (torch::rand({12, 12}, g) > 0.6).to(torch::kFloat32);
    CHECK(count_components(MaskTensor::from(t, true)) ==
          oracle::count_components4(fixtures::to_vec(t), 12, 12));
  }
}

TEST_CASE("filter_instances is idempotent and keeps box containment") {
  std::vector<InstanceRecord> recs;
  recs.push_back(record_for(blob(32, 32, 5, 20, 5, 20), "a"));
  recs.push_back(record_for(blob(32, 32, 0, 10, 5, 15), "b"));
  recs.push_back(record_for(blob(32, 32, 10, 11, 10, 11), "c"));
  for (auto& r : fixtures::toy_records(5, 32, 77)) recs.push_back(r);
  const auto once = filter_instances(recs);
  const auto twice = filter_instances(once);
  REQUIRE(once.size() == twice.size());
  CHECK(once.size() == 6);
  for (size_t k = 0; k < once.size(); ++k) {
    CHECK(once[k].image_id == twice[k].image_id);
    const auto outside = once[k].mask.tensor() * (1 - once[k].bbox.raster.tensor());
    CHECK(outside.sum().item<float>() == 0.0f);
  }
}

TEST_CASE("tight_bbox examples") {
  const auto full = tight_bbox(MaskTensor::filled(8, 8, 1));
  CHECK(full.vec == std::array<double, 4>{0, 0, 1, 1});
  auto t = torch::zeros({64, 64});
  t[32][32] = 1;
  const auto one = tight_bbox(MaskTensor::from(t, true));
  CHECK(one.vec == std::array<double, 4>{32.0 / 64, 32.0 / 64, 33.0 / 64, 33.0 / 64});
  CHECK(one.vec == oracle::tight_box(fixtures::to_vec(t), 64, 64));
  CHECK(one.raster.nonzero_count() == 1);
  CHECK_THROWS_AS(tight_bbox(MaskTensor::filled(8, 8, 0)), EmptyMaskError);
}

TEST_CASE("tight_bbox matches the scan oracle") {
  auto g = nn::make_generator(8);
  for (int k = 0; k < 30; ++k) {
    const auto t = (torch::rand({9, 13}, g) > 0.9).to(torch::kFloat32);
    if (t.sum().item<float>() == 0) continue;
    CHECK(tight_bbox(MaskTensor::from(t, true)).vec == oracle::tight_box(fixtures::to_vec(t), 9, 13));
  }
}

TEST_CASE("synthetic samples are deterministic") {
  SynthConfig c;
  const auto a = synth_sample(42, c);
  const auto b = synth_sample(42, c);
  CHECK(a.image.equal(b.image));
  CHECK(a.mask.equal(b.mask));
  CHECK_FALSE(synth_sample(43, c).mask.equal(a.mask));
}

TEST_CASE("1000 synthetic samples pass the filter within the area bounds") {
  SynthConfig c;
  c.texture = TextureFamily::kStripes;
  int passed = 0;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = synth_sample(seed, c);
    const double area = s.mask.tensor().sum().item<double>() / (64.0 * 64.0);
    passed += passes_instance_filter(s.mask) ? 1 : 0;
    CHECK(area >= c.min_area);
    CHECK(area <= c.max_area);
  }
  CHECK(passed == 1000);
}

TEST_CASE("synthetic class statistics are stable across seed ranges") {
  SynthConfig c;
  auto stats = [&](uint64_t first) {
    double area = 0, aspect = 0;
    for (uint64_t k = 0; k < 1000; ++k) {
      const auto s = synth_sample(first + k, c);
      const auto box = tight_bbox(s.mask);
      area += area_fraction(s.mask);
      aspect += (box.x2() - box.x1()) / (box.y2() - box.y1());
    }
    return std::pair{area / 1000, aspect / 1000};
  };
  const auto [a0, r0] = stats(0);
  const auto [a1, r1] = stats(100000);
  CHECK(std::fabs(a0 - a1) / a0 < 0.05);
  CHECK(std::fabs(r0 - r1) / r0 < 0.05);
}

TEST_CASE("make_example derived fields") {
  const auto recs = fixtures::toy_records(3, 32, 5);
  for (const auto& r : recs) {
    const auto ex = make_example(r);
    const auto braster = ex.b.raster.tensor().unsqueeze(-1);
    CHECK((ex.i_b.tensor() * braster).abs().max().item<float>() == 0.0f);
    const auto outside = (1 - ex.m.tensor()).unsqueeze(-1);
    CHECK((ex.s.tensor() * outside).abs().max().item<float>() == 0.0f);
    CHECK(composite(ex.i_m, ex.s, ex.m).equal(ex.i));
    CHECK(ex.b.vec == tight_bbox(ex.m).vec);
  }
}

TEST_CASE("epoch batches are deterministic per seed and epoch") {
  const auto a = epoch_batches(10, 4, 7, 3);
  CHECK(a == epoch_batches(10, 4, 7, 3));
  CHECK(a != epoch_batches(10, 4, 7, 4));
  CHECK(a.size() == 2);
  const auto keep = epoch_batches(10, 4, 7, 3, false);
  CHECK(keep.size() == 3);
  CHECK(keep.back().size() == 2);
  std::vector<int64_t> all;
  for (const auto& b : keep) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (int64_t k = 0; k < 10; ++k) CHECK(all[k] == k);
}

TEST_CASE("collate stacks examples in NCHW") {
  const auto batch = fixtures::toy_batch(fixtures::toy_records(3, 16, 0));
  CHECK(batch.size() == 3);
  CHECK(batch.i.sizes() == torch::IntArrayRef({3, 3, 16, 16}));
  CHECK(batch.m.sizes() == torch::IntArrayRef({3, 1, 16, 16}));
  CHECK(batch.b_vec.sizes() == torch::IntArrayRef({3, 4}));
  CHECK(batch.to(torch::kFloat64).i.dtype() == torch::kFloat64);
}

TEST_CASE("dataset directory round trip") {
  fixtures::TempDir dir;
  const auto recs = fixtures::toy_records(4, 16, 9);
  DatasetManifest manifest;
  manifest.source = "synth";
  manifest.label = recs[0].label;
  manifest.resolution = 16;
  manifest.provenance = {{"first_seed", 9}};
  for (const auto& r : recs) manifest.ids.push_back(r.image_id);
  write_dataset(dir.path(), manifest, recs);
  const auto read = read_manifest(dir.path());
  CHECK(read.ids == std::vector<std::string>{"000000", "000001", "000002", "000003"});
  CHECK(read.resolution == 16);
  const auto back = load_dataset(dir.path());
  REQUIRE(back.size() == recs.size());
  for (size_t k = 0; k < recs.size(); ++k) {
    CHECK(back[k].image_id == recs[k].image_id);
    CHECK(back[k].mask.equal(recs[k].mask));
    CHECK((back[k].image.tensor() - recs[k].image.tensor()).abs().max().item<float>() <= 1.0f / 127.5f);
  }
  const auto h = dataset_hash(dir.path());
  CHECK(h == dataset_hash(dir.path()));
  CHECK(h.size() == 64);
  CHECK_THROWS_AS(read_manifest(dir.path() / "nope"), FormatError);
}

TEST_CASE("coco run-length and polygon decoding") {
  // 3 x 2 frame, column-major: 1 background, 3 foreground, 2 background.
  const auto rle = coco::decode_rle({{"counts", {1, 3, 2}}, {"size", {3, 2}}});
  CHECK(fixtures::to_vec(rle.tensor()) == std::vector<double>{0, 1, 1, 0, 1, 0});
  const auto poly = coco::rasterize_polygons(nlohmann::json::array({{2, 2, 8, 2, 8, 8, 2, 8}}), 10, 10);
  CHECK(poly.nonzero_count() >= 36);
  CHECK(poly.nonzero_count() <= 49);
  CHECK(poly.tensor()[0][0].item<float>() == 0.0f);
  CHECK(poly.tensor()[5][5].item<float>() == 1.0f);
}
