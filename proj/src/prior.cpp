#include "slf/prior.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/SVD>

#include "slf/binary_io.hpp"

namespace slf {

std::vector<CarParams> sample_car_params(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::vector<CarParams> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    CarParams p;
    p.length = uniform(3.6, 5.1);
    p.width = uniform(1.65, 1.95);
    p.body_height = uniform(0.65, 0.95);
    p.cabin_fraction = uniform(0.35, 0.6);
    p.cabin_height = uniform(0.4, 0.55);
    p.hood_drop = uniform(0.0, 0.2);
    p.rounding = uniform(0.05, 0.25);
    out.push_back(p);
  }
  return out;
}

std::vector<SdfGrid> procedural_bank(int count, std::uint64_t seed, const GridMeta& meta) {
  std::vector<SdfGrid> bank;
  bank.reserve(count);
  for (const auto& p : sample_car_params(count, seed)) {
    SdfGrid g = make_car_sdf(p, meta.dims, meta.voxel_size);
    if (!(g.meta == meta)) throw Error(ErrorCode::MetaMismatch, "bank meta must be a centered grid");
    bank.push_back(std::move(g));
  }
  return bank;
}

ShapePrior build_prior(std::span<const SdfGrid> bank, int d) {
  if (d < 1) throw Error(ErrorCode::ParamOutOfRange, "latent dimension must be >= 1");
  if (int(bank.size()) < d + 1)
    throw Error(ErrorCode::InsufficientModels, "need at least d + 1 models");
  const GridMeta& meta = bank.front().meta;
  for (const auto& g : bank)
    if (!(g.meta == meta)) throw Error(ErrorCode::MetaMismatch, "bank grids differ in layout");

  const Eigen::Index n = meta.size();
  const Eigen::Index count = Eigen::Index(bank.size());
  Eigen::MatrixXd data(n, count);
  for (Eigen::Index i = 0; i < count; ++i) data.col(i) = bank[i].values;
  ShapePrior prior;
  prior.meta = meta;
  prior.model_count = int(count);
  prior.mean = data.rowwise().mean();
  data.colwise() -= prior.mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinU);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double scale = std::max(sv.size() ? sv[0] : 0.0, 1.0);
  if (sv[d - 1] <= 1e-10 * scale)
    throw Error(ErrorCode::DegenerateBank, "bank has fewer than d directions of variance");

  prior.basis = svd.matrixU().leftCols(d);
  // Sign convention: largest-magnitude entry of every component is positive.
  for (int k = 0; k < d; ++k) {
    Eigen::Index at;
    prior.basis.col(k).cwiseAbs().maxCoeff(&at);
    if (prior.basis(at, k) < 0) prior.basis.col(k) *= -1;
  }
  prior.sigma = sv.head(d) / std::sqrt(double(std::max<Eigen::Index>(count - 1, 1)));
  return prior;
}

ShapeCode encode(const ShapePrior& prior, const Eigen::VectorXd& m) {
  if (m.size() != prior.mean.size()) throw Error(ErrorCode::LengthMismatch, "grid length differs from prior");
  return prior.basis.transpose() * (m - prior.mean);
}

void decode_into(const ShapePrior& prior, const ShapeCode& s, Eigen::VectorXd& values) {
  if (s.size() != prior.dim()) throw Error(ErrorCode::LengthMismatch, "shape code length differs from prior");
  values.noalias() = prior.basis * s;
  values += prior.mean;
}

SdfGrid decode(const ShapePrior& prior, const ShapeCode& s) {
  Eigen::VectorXd values;
  decode_into(prior, s, values);
  return SdfGrid(prior.meta, std::move(values));
}

void save_prior(const ShapePrior& prior, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  out.write("SLFP", 4);
  io::put<std::uint16_t>(out, kPriorVersion);
  io::put<std::uint16_t>(out, std::uint16_t(prior.dim()));
  io::put<std::uint16_t>(out, std::uint16_t(prior.model_count));
  for (int a = 0; a < 3; ++a) io::put<std::uint32_t>(out, std::uint32_t(prior.meta.dims[a]));
  io::put<float>(out, float(prior.meta.voxel_size));
  for (int a = 0; a < 3; ++a) io::put<float>(out, float(prior.meta.origin[a]));
  for (Eigen::Index i = 0; i < prior.mean.size(); ++i) io::put<float>(out, float(prior.mean[i]));
  for (Eigen::Index k = 0; k < prior.basis.cols(); ++k)
    for (Eigen::Index i = 0; i < prior.basis.rows(); ++i) io::put<float>(out, float(prior.basis(i, k)));
  for (Eigen::Index k = 0; k < prior.sigma.size(); ++k) io::put<float>(out, float(prior.sigma[k]));
  if (!out) throw Error(ErrorCode::IoError, "prior write failed");
}

ShapePrior load_prior(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  io::expect_magic(in, "SLFP");
  if (io::get<std::uint16_t>(in) != kPriorVersion)
    throw Error(ErrorCode::VersionMismatch, "unsupported prior version");
  const int d = io::get<std::uint16_t>(in);
  ShapePrior prior;
  prior.model_count = io::get<std::uint16_t>(in);
  for (int a = 0; a < 3; ++a) prior.meta.dims[a] = int(io::get<std::uint32_t>(in));
  prior.meta.voxel_size = io::get<float>(in);
  for (int a = 0; a < 3; ++a) prior.meta.origin[a] = io::get<float>(in);
  if (d < 1 || (prior.meta.dims.array() < 2).any() || prior.meta.size() > (Eigen::Index(1) << 28))
    throw Error(ErrorCode::CorruptFile, "implausible prior header");
  const Eigen::Index n = prior.meta.size();
  prior.mean.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) prior.mean[i] = io::get<float>(in);
  prior.basis.resize(n, d);
  for (int k = 0; k < d; ++k)
    for (Eigen::Index i = 0; i < n; ++i) prior.basis(i, k) = io::get<float>(in);
  prior.sigma.resize(d);
  for (int k = 0; k < d; ++k) prior.sigma[k] = io::get<float>(in);
  const Eigen::MatrixXd gram = prior.basis.transpose() * prior.basis;
  if ((gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-6)
    throw Error(ErrorCode::CorruptFile, "prior basis is not orthonormal");
  return prior;
}

}  // namespace slf
