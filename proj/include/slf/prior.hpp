#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slf/sdf.hpp"

namespace slf {

using ShapeCode = Eigen::VectorXd;

/// Linear latent shape space: m = basis * s + mean over flattened SDF grids.
/// The basis is n x d with orthonormal columns; sigma holds the per-component
/// standard deviation of the bank's codes.
struct ShapePrior {
  GridMeta meta;
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;
  Eigen::VectorXd sigma;
  int model_count{0};

  int dim() const { return int(basis.cols()); }
};

inline constexpr std::uint64_t kBankSeed = 20240601;
inline constexpr int kBankSize = 79;

std::vector<CarParams> sample_car_params(int count, std::uint64_t seed);
std::vector<SdfGrid> procedural_bank(int count, std::uint64_t seed = kBankSeed,
                                     const GridMeta& meta = GridMeta::centered({64, 32, 32}, 0.1));

/// PCA via thin SVD of the centered n x N data matrix.
ShapePrior build_prior(std::span<const SdfGrid> bank, int d);

ShapeCode encode(const ShapePrior& prior, const Eigen::VectorXd& m);
SdfGrid decode(const ShapePrior& prior, const ShapeCode& s);
/// decode() into a preallocated value array.
void decode_into(const ShapePrior& prior, const ShapeCode& s, Eigen::VectorXd& values);

// "SLFP", u16 version, u16 d, u16 model_count, grid meta as in SLFG, then
// mean (n f32), basis column-major (n*d f32), sigma (d f32).
inline constexpr std::uint16_t kPriorVersion = 1;
void save_prior(const ShapePrior& prior, const std::string& path);
ShapePrior load_prior(const std::string& path);

}  // namespace slf
