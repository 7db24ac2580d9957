#include "stamps/evaluation.hpp"

#include <cmath>
#include <limits>

#include "stamps/dataset.hpp"
#include "stamps/errors.hpp"
#include "stamps/nn_blocks.hpp"

namespace stamps {

namespace F = torch::nn::functional;

double kid(const torch::Tensor& x_in, const torch::Tensor& y_in) {
  if (x_in.dim() != 2 || y_in.dim() != 2) throw DimensionError("kid expects [n, d] feature sets");
  if (x_in.size(0) < 2 || y_in.size(0) < 2) {
    throw InsufficientSamplesError("kid needs at least two samples per set");
  }
  if (x_in.size(1) != y_in.size(1)) throw DimensionError("kid feature dimensions differ");
  const auto x = x_in.to(torch::kFloat64);
  const auto y = y_in.to(torch::kFloat64);
  const double d = static_cast<double>(x.size(1));
  const double n = static_cast<double>(x.size(0));
  const double m = static_cast<double>(y.size(0));
  auto kernel = [d](const torch::Tensor& a, const torch::Tensor& b) {
    return (a.matmul(b.t()) / d + 1.0).pow(3);
  };
  const auto kxx = kernel(x, x);
  const auto kyy = kernel(y, y);
  const auto kxy = kernel(x, y);
  const double sxx = (kxx.sum() - kxx.diagonal().sum()).item<double>() / (n * (n - 1));
  const double syy = (kyy.sum() - kyy.diagonal().sum()).item<double>() / (m * (m - 1));
  const double sxy = kxy.sum().item<double>() / (n * m);
  return sxx + syy - 2.0 * sxy;
}

nlohmann::json KidReport::to_json() const {
  nlohmann::json systems_json = nlohmann::json::array();
  for (size_t s = 0; s < systems.size(); ++s) {
    systems_json.push_back({{"name", systems[s]},
                            {"mean", mean[s]},
                            {"std", std[s]},
                            {"count_best", count_best[s]},
                            {"scores", scores[s]}});
  }
  return {{"n_subsets", n_subsets}, {"subset_size", subset_size}, {"seed", seed},
          {"systems", systems_json}};
}

KidReport subset_protocol(const torch::Tensor& real, const std::vector<torch::Tensor>& fakes,
                          int64_t n_subsets, int64_t subset_size, uint64_t seed,
                          std::vector<std::string> names) {
  if (fakes.empty()) throw ConfigError("subset protocol needs at least one system");
  if (n_subsets < 1) throw ConfigError("n_subsets must be >= 1");
  if (subset_size < 2) throw InsufficientSamplesError("subset_size must be >= 2");
  int64_t fake_n = std::numeric_limits<int64_t>::max();
  for (const auto& f : fakes) fake_n = std::min(fake_n, f.size(0));
  if (subset_size > real.size(0) || subset_size > fake_n) {
    throw ConfigError("subset_size " + std::to_string(subset_size) + " exceeds a feature set of size " +
                      std::to_string(std::min(real.size(0), fake_n)));
  }
  if (names.empty()) {
    for (size_t s = 0; s < fakes.size(); ++s) names.push_back("system" + std::to_string(s));
  }
  if (names.size() != fakes.size()) throw ConfigError("one name per system is required");

  KidReport r;
  r.systems = std::move(names);
  r.n_subsets = n_subsets;
  r.subset_size = subset_size;
  r.seed = seed;
  r.scores.assign(fakes.size(), {});
  std::vector<int64_t> wins(fakes.size(), 0);

  auto gen = nn::make_generator(seed);
  const auto idx_opts = torch::TensorOptions().dtype(torch::kInt64);
  for (int64_t k = 0; k < n_subsets; ++k) {
    const auto real_idx = torch::randperm(real.size(0), gen, idx_opts).slice(0, 0, subset_size);
    const auto fake_idx = torch::randperm(fake_n, gen, idx_opts).slice(0, 0, subset_size);
    const auto real_sub = real.index_select(0, real_idx);
    size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (size_t s = 0; s < fakes.size(); ++s) {
      const double score = kid(real_sub, fakes[s].index_select(0, fake_idx));
      r.scores[s].push_back(score);
      if (score < best_score) {
        best_score = score;
        best = s;
      }
    }
    ++wins[best];
  }
  for (size_t s = 0; s < fakes.size(); ++s) {
    double mean = 0;
    for (double v : r.scores[s]) mean += v;
    mean /= static_cast<double>(n_subsets);
    double var = 0;
    for (double v : r.scores[s]) var += (v - mean) * (v - mean);
    r.mean.push_back(mean);
    r.std.push_back(std::sqrt(var / static_cast<double>(n_subsets)));
    r.count_best.push_back(static_cast<double>(wins[s]) / static_cast<double>(n_subsets));
  }
  return r;
}

namespace {

/// Crop of the nonzero support as [1, 1, h, w] float64.
torch::Tensor crop_support(const MaskTensor& m) {
  const auto t = m.tensor();
  const auto rows = t.sum(1).nonzero();
  const auto cols = t.sum(0).nonzero();
  const int64_t r0 = rows.min().item<int64_t>();
  const int64_t r1 = rows.max().item<int64_t>() + 1;
  const int64_t c0 = cols.min().item<int64_t>();
  const int64_t c1 = cols.max().item<int64_t>() + 1;
  return t.slice(0, r0, r1).slice(1, c0, c1).to(torch::kFloat64).unsqueeze(0).unsqueeze(0);
}

}  // namespace

int64_t nn_mask_retrieve(const MaskTensor& query, std::span<const MaskTensor> corpus) {
  if (query.nonzero_count() == 0) throw EmptyMaskError("query mask is empty");
  if (corpus.empty()) throw ConfigError("retrieval corpus is empty");
  const auto q = crop_support(query);
  const auto qv = q.flatten();
  const double qn = qv.norm().item<double>();
  const std::vector<int64_t> size{q.size(2), q.size(3)};

  int64_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < corpus.size(); ++k) {
    if (corpus[k].nonzero_count() == 0) continue;
    auto c = crop_support(corpus[k]);
    if (c.size(2) != size[0] || c.size(3) != size[1]) {
      c = F::interpolate(c, F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false));
    }
    const auto cv = c.flatten();
    const double cn = cv.norm().item<double>();
    if (cn == 0) continue;
    const double sim = qv.dot(cv).item<double>() / (qn * cn);
    if (sim > best_sim) {
      best_sim = sim;
      best = static_cast<int64_t>(k);
    }
  }
  return best;
}

torch::Tensor extract_features(FeatureEmbedder& embedder, std::span<const ImageTensor> images) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(embedder->forward(img.to_nchw()).to(torch::kFloat64));
  if (rows.empty()) return torch::zeros({0, embedder->feature_dim()}, torch::kFloat64);
  return torch::cat(rows, 0);
}

torch::Tensor extract_mask_features(FeatureEmbedder& embedder, std::span<const MaskTensor> masks) {
  std::vector<ImageTensor> images;
  images.reserve(masks.size());
  for (const auto& m : masks) {
    images.push_back(ImageTensor::from((m.tensor() * 2.0 - 1.0).unsqueeze(-1).expand({-1, -1, 3}).contiguous()));
  }
  return extract_features(embedder, images);
}

namespace {

torch::Tensor unit_channels(const torch::Tensor& f) {
  return f / (f.pow(2).sum(1, true).sqrt() + 1e-10);
}

}  // namespace

double perceptual_distance(PerceptualNet& phi, const ImageTensor& a, const ImageTensor& b) {
  torch::NoGradGuard no_grad;
  const auto fa = unit_channels(phi->forward(a.to_nchw()).to(torch::kFloat64));
  const auto fb = unit_channels(phi->forward(b.to_nchw()).to(torch::kFloat64));
  return (fa - fb).pow(2).sum(1).mean().item<double>();
}

double mean_pairwise_perceptual(PerceptualNet& phi, std::span<const ImageTensor> images) {
  if (images.size() < 2) throw InsufficientSamplesError("need at least two images");
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> feats;
  for (const auto& img : images) feats.push_back(unit_channels(phi->forward(img.to_nchw()).to(torch::kFloat64)));
  double total = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < feats.size(); ++i) {
    for (size_t j = i + 1; j < feats.size(); ++j) {
      total += (feats[i] - feats[j]).pow(2).sum(1).mean().item<double>();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double mean_pairwise_l1(std::span<const torch::Tensor> items) {
  if (items.size() < 2) throw InsufficientSamplesError("need at least two items");
  double total = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < items.size(); ++i) {
    for (size_t j = i + 1; j < items.size(); ++j) {
      total += (items[i].to(torch::kFloat64) - items[j].to(torch::kFloat64)).abs().mean().item<double>();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double mass_inside_box(const MaskTensor& mask, const BoundingBox& box) {
  const auto m = mask.tensor().to(torch::kFloat64);
  const double total = m.sum().item<double>();
  if (total <= 0) return 0.0;
  return (m * box.raster.tensor().to(torch::kFloat64)).sum().item<double>() / total;
}

}  // namespace stamps
