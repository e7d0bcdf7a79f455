#pragma once

#include "scone/types.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace scone {

/// Variance-exploding noise schedule σ(t) = σ_min (σ_max/σ_min)^t, discretized
/// on T steps. Reverse sampling runs the last `sampling_steps` (N) of them.
class SdeSchedule {
 public:
  SdeSchedule(double sigma_min = 0.01, double sigma_max = 50.0, int total_steps = 100,
              int sampling_steps = 10);

  double sigma_min() const noexcept { return sigma_min_; }
  double sigma_max() const noexcept { return sigma_max_; }
  int total_steps() const noexcept { return total_steps_; }
  int sampling_steps() const noexcept { return sampling_steps_; }

  /// σ at continuous time t ∈ [0, 1].
  double sigma(double t) const;
  /// σ(step / T); throws std::out_of_range outside [0, T].
  double sigma_at(int step) const;
  /// σ²(step) − σ²(0): variance of the perturbation kernel from step 0.
  double perturb_variance(int step) const;
  /// σ²(step + 1) − σ²(step).
  double step_variance(int step) const;

  const std::vector<double>& sigma_grid() const noexcept { return grid_; }

 private:
  double sigma_min_;
  double sigma_max_;
  int total_steps_;
  int sampling_steps_;
  std::vector<double> grid_;
};

/// Adds sqrt(σ²(step) − σ²(0)) · noise to every row of `e0`.
RowMatrix perturb(const RowMatrix& e0, const SdeSchedule& schedule, int step, const RowMatrix& noise);
RowMatrix perturb(const RowMatrix& e0, const SdeSchedule& schedule, int step, Rng& rng);

RowMatrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Sinusoidal features: [2k] = sin(x ω_k), [2k+1] = cos(x ω_k), ω_k = 10000^{−2k/dim}.
RowVector sinusoidal_embedding(double x, int dim);

struct ScoreNetConfig {
  int data_dim = 64;    ///< D, input and output width
  int outer_dim = 64;   ///< dim(h0) = dim(h3)
  int inner_dim = 128;  ///< dim(h1) = dim(h2)
  int time_dim = 64;    ///< width of the sinusoidal embedding and of t_emb
};

/// Dense layers of the score network. Weights are (out × in), row-major.
enum class Layer : int {
  fc0,       ///< D → outer
  fc1_1,     ///< outer → inner
  fc1_t,     ///< time → inner
  fc1_2,     ///< inner → inner
  fc2,       ///< inner → inner
  fc3_1,     ///< 2·inner → outer
  fc3_t,     ///< time → outer
  fc3_2,     ///< outer → outer
  fc4,       ///< outer → D
  fc_emb_1,  ///< time → time
  fc_emb_2,  ///< time → time
};
inline constexpr int kLayerCount = 11;
std::string_view layer_name(Layer layer);

/// Location of one tensor inside the flat parameter vector.
struct TensorSlot {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index offset;

  Eigen::Index size() const noexcept { return rows * cols; }
};

class ScoreNetLayout {
 public:
  explicit ScoreNetLayout(const ScoreNetConfig& config);

  const TensorSlot& weight(Layer layer) const { return slots_[2 * static_cast<int>(layer)]; }
  const TensorSlot& bias(Layer layer) const { return slots_[2 * static_cast<int>(layer) + 1]; }
  const std::vector<TensorSlot>& slots() const noexcept { return slots_; }
  Eigen::Index size() const noexcept { return size_; }

 private:
  std::vector<TensorSlot> slots_;
  Eigen::Index size_ = 0;
};

using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Parameters φ, stored as one flat vector so optimizers and finite-difference
/// checks can treat them uniformly. Gradients use the same layout.
class ScoreNetParams {
 public:
  explicit ScoreNetParams(const ScoreNetConfig& config = {});

  const ScoreNetConfig& config() const noexcept { return config_; }
  const ScoreNetLayout& layout() const noexcept { return layout_; }

  Vector& values() noexcept { return values_; }
  const Vector& values() const noexcept { return values_; }

  ConstMatrixMap tensor(const TensorSlot& slot) const;
  MatrixMap tensor(const TensorSlot& slot);

  /// Weights ~ N(0, 1/fan_in), biases zero.
  void init(Rng& rng);

 private:
  ScoreNetConfig config_;
  ScoreNetLayout layout_;
  Vector values_;
};

/// Intermediate activations kept for backpropagation.
struct ScoreNetTrace {
  RowMatrix input;
  RowMatrix h0;
  RowMatrix a1;    // tanh(FC1¹ h0)
  RowMatrix pre1;  // a1 + FC1ᵗ t_emb
  RowMatrix h1;
  RowMatrix h2;
  RowMatrix cat;   // [h2, h1]
  RowMatrix a3;    // tanh(FC3¹ cat)
  RowMatrix pre3;  // a3 + FC3ᵗ t_emb
  RowMatrix h3;
  RowMatrix output;
  // time branch, one row per distinct noise level
  RowMatrix time_features;
  RowMatrix time_hidden;
  RowMatrix time_embedding;
  std::vector<Eigen::Index> time_row;  // batch row -> time branch row
};

/// S_φ(e, σ) for a batch of rows. `sigmas` holds either one value shared by
/// the batch or one value per row.
RowMatrix score_forward(const ScoreNetParams& params, const RowMatrix& e,
                        std::span<const double> sigmas);
ScoreNetTrace score_forward_trace(const ScoreNetParams& params, const RowMatrix& e,
                                  std::span<const double> sigmas);

/// Gradient of Σ ⟨grad_output, S_φ⟩ with respect to φ. If `grad_input` is not
/// null it receives the gradient with respect to the input rows.
Vector score_backward(const ScoreNetParams& params, const ScoreNetTrace& trace,
                      const RowMatrix& grad_output, RowMatrix* grad_input = nullptr);

/// Score of the Gaussian perturbation kernel: −(e_t − e0) / variance.
RowMatrix denoising_target(const RowMatrix& e_t, const RowMatrix& e0, double variance);

struct DsmResult {
  double loss = 0.0;
  Vector grad;  ///< same layout as ScoreNetParams::values()
};

/// Denoising score matching with λ(n) = σ²(n) − σ²(0): the mean over rows of
/// λ(n)‖S_φ(e_n, σ(n)) + (e_n − e0)/λ(n)‖². `steps` ∈ [1, T] and `noise`
/// fix the stochastic draws.
DsmResult dsm_loss(const ScoreNetParams& params, const RowMatrix& e0, const SdeSchedule& schedule,
                   std::span<const int> steps, const RowMatrix& noise);
/// Draws steps uniformly from {1..T} and standard normal noise.
DsmResult dsm_loss(const ScoreNetParams& params, const RowMatrix& e0, const SdeSchedule& schedule,
                   Rng& rng);

/// "SCONESGM" | version u32 | per tensor: name length u32, name bytes,
/// rank u32, dims u32..., row-major f32 payload.
inline constexpr std::uint32_t kScoreNetFormatVersion = 1;
void save_score_net(const ScoreNetParams& params, const std::filesystem::path& path);
ScoreNetParams load_score_net(const std::filesystem::path& path);

}  // namespace scone
