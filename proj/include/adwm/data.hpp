#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adwm/tensor.hpp"

namespace adwm {

inline constexpr Index kScale = 4;

/// pan [H,W], lrms [H/4,W/4,c], gt [H,W,c], all in [0,1].
struct SamplePair {
  std::string id;
  Tensor pan, lrms, gt;
};

/// Procedural scene [H,W,c]: Gaussian blobs, oriented gratings and flat
/// rectangles, each with an AR(1) spectrum across bands (rho = 0.9).
Tensor generate_scene(std::uint64_t seed, Index h, Index w, Index c);

/// 7x7 Gaussian (sigma 1.6) per band with reflect padding, [H,W,c] -> [H,W,c].
Tensor gaussian_blur(const Tensor& image);
/// Keeps every 4th pixel, starting at offset 2 of each 4x4 block.
Tensor decimate(const Tensor& image);
/// Weighted band sum [H,W,c] -> [H,W]; empty weights mean 1/c each.
Tensor spectral_sum(const Tensor& image, const std::vector<double>& weights = {});

struct Degraded {
  Tensor pan, lrms;
};
Degraded wald_degrade(const Tensor& gt, const std::vector<double>& pan_weights = {});

struct ManifestRow {
  std::string id;
  std::uint64_t seed;
  Index h, w, c;
};

struct Manifest {
  std::filesystem::path path;
  std::vector<ManifestRow> rows;
};

/// Seed for sample i of a dataset seeded with `seed`.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);
std::string sample_id(std::size_t index);

SamplePair make_sample(std::uint64_t seed, std::size_t index, Index h, Index w, Index c);

/// Writes sample_%05d/{pan,lrms,gt}.tnsr and manifest.txt (tab-separated id, seed, H, W, c).
Manifest build_dataset(std::uint64_t seed, std::size_t count, Index h, Index w, Index c,
                       const std::filesystem::path& out_dir);
Manifest read_manifest(const std::filesystem::path& dir);
SamplePair load_sample(const std::filesystem::path& dir, const ManifestRow& row);
std::vector<SamplePair> load_dataset(const std::filesystem::path& dir);

std::uint64_t fnv1a(std::string_view text);
/// True when the id hashes into the held-out fraction.
bool in_holdout(std::string_view id, double fraction);

struct Split {
  std::vector<SamplePair> train, holdout;
};
Split split_by_hash(std::vector<SamplePair> samples, double holdout_fraction);

}  // namespace adwm
