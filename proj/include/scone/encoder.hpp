#pragma once

#include "scone/dataset.hpp"
#include "scone/types.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace scone {

/// LightGCN layer weights 1/(L+1).
std::vector<double> uniform_alphas(int layers);

/// Gaussian initial embedding table.
RowMatrix init_theta(std::size_t node_count, std::size_t embed_dim, double stddev, Rng& rng);

/// E^(l+1) = Ã E^(l); returns E^(0) .. E^(L).
std::vector<RowMatrix> propagate(const RowMatrix& theta, const NormalizedAdjacency& adjacency,
                                 int layers);

/// Σ_l α_l E^(l). The weights must sum to one.
RowMatrix finalize(std::span<const RowMatrix> layer_embeddings, std::span<const double> alphas);

struct EncoderGradients {
  RowMatrix grad_theta;
};

/// Adjoint of propagate + finalize: Σ_l α_l Ã^l G (Ã is symmetric).
EncoderGradients backward_through_propagation(const RowMatrix& grad_final,
                                              const NormalizedAdjacency& adjacency,
                                              std::span<const double> alphas);

/// Trainable table plus the embeddings derived from it.
struct EmbeddingState {
  RowMatrix theta;
  std::vector<RowMatrix> layer_embeddings;
  RowMatrix final_embeddings;

  void refresh(const NormalizedAdjacency& adjacency, std::span<const double> alphas);
  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(theta.cols()); }
};

/// "SCONEEMB" | version u32 | node_count u32 | embed_dim u32 | row-major f32.
inline constexpr std::uint32_t kThetaFormatVersion = 1;
void save_theta(const RowMatrix& theta, const std::filesystem::path& path);
RowMatrix load_theta(const std::filesystem::path& path);

}  // namespace scone
