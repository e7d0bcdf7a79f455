#include "scone/encoder.hpp"

#include "scone/binary_io.hpp"
#include "scone/error.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace scone {

namespace {

constexpr std::string_view kThetaMagic = "SCONEEMB";

void check_alphas(std::span<const double> alphas, std::size_t expected) {
  if (alphas.size() != expected)
    throw ConfigError("expected " + std::to_string(expected) + " layer weights, got " +
                      std::to_string(alphas.size()));
  const double sum = std::accumulate(alphas.begin(), alphas.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("layer weights must sum to 1");
}

}  // namespace

std::vector<double> uniform_alphas(int layers) {
  if (layers < 0) throw ConfigError("layers must be >= 0");
  return std::vector<double>(static_cast<std::size_t>(layers) + 1, 1.0 / (layers + 1));
}

RowMatrix init_theta(std::size_t node_count, std::size_t embed_dim, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  RowMatrix theta(node_count, embed_dim);
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta.data()[k] = normal(rng);
  return theta;
}

std::vector<RowMatrix> propagate(const RowMatrix& theta, const NormalizedAdjacency& adjacency,
                                 int layers) {
  if (layers < 0) throw ConfigError("layers must be >= 0");
  if (static_cast<std::size_t>(theta.rows()) != adjacency.node_count())
    throw ConfigError("embedding rows (" + std::to_string(theta.rows()) +
                      ") do not match adjacency nodes (" + std::to_string(adjacency.node_count()) +
                      ")");
  std::vector<RowMatrix> out;
  out.reserve(static_cast<std::size_t>(layers) + 1);
  out.push_back(theta);
  for (int l = 0; l < layers; ++l) out.push_back(adjacency.matrix() * out.back());
  return out;
}

RowMatrix finalize(std::span<const RowMatrix> layer_embeddings, std::span<const double> alphas) {
  if (layer_embeddings.empty()) throw ConfigError("no layer embeddings");
  check_alphas(alphas, layer_embeddings.size());
  RowMatrix out = alphas[0] * layer_embeddings[0];
  for (std::size_t l = 1; l < layer_embeddings.size(); ++l) {
    if (layer_embeddings[l].rows() != out.rows() || layer_embeddings[l].cols() != out.cols())
      throw ConfigError("layer embeddings differ in shape");
    out += alphas[l] * layer_embeddings[l];
  }
  return out;
}

EncoderGradients backward_through_propagation(const RowMatrix& grad_final,
                                              const NormalizedAdjacency& adjacency,
                                              std::span<const double> alphas) {
  if (alphas.empty()) throw ConfigError("no layer weights");
  if (static_cast<std::size_t>(grad_final.rows()) != adjacency.node_count())
    throw ConfigError("gradient rows do not match adjacency nodes");
  // Horner form: α_0 G + Ã(α_1 G + Ã(α_2 G + ...))
  RowMatrix acc = alphas.back() * grad_final;
  for (std::size_t l = alphas.size() - 1; l-- > 0;) {
    RowMatrix next = adjacency.matrix() * acc;
    next += alphas[l] * grad_final;
    acc = std::move(next);
  }
  return {std::move(acc)};
}

void EmbeddingState::refresh(const NormalizedAdjacency& adjacency, std::span<const double> alphas) {
  layer_embeddings = propagate(theta, adjacency, static_cast<int>(alphas.size()) - 1);
  final_embeddings = finalize(layer_embeddings, alphas);
}

void save_theta(const RowMatrix& theta, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& out) {
    io::write_bytes(out, kThetaMagic);
    io::write_u32(out, kThetaFormatVersion);
    io::write_u32(out, static_cast<std::uint32_t>(theta.rows()));
    io::write_u32(out, static_cast<std::uint32_t>(theta.cols()));
    for (Eigen::Index k = 0; k < theta.size(); ++k)
      io::write_f32(out, static_cast<float>(theta.data()[k]));
  });
}

RowMatrix load_theta(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  if (io::read_bytes(in, kThetaMagic.size()) != kThetaMagic)
    throw InputError(path.string() + ": not an embedding checkpoint");
  const auto version = io::read_u32(in);
  if (version != kThetaFormatVersion)
    throw InputError(path.string() + ": unsupported version " + std::to_string(version));
  const auto rows = io::read_u32(in);
  const auto cols = io::read_u32(in);
  RowMatrix theta(rows, cols);
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta.data()[k] = io::read_f32(in);
  return theta;
}

}  // namespace scone
