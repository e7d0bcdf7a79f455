#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace scone {

enum class ClReduction { mean, sum };
enum class ClMode { separate, joint };
enum class L2Scope { batch, full };
enum class UpdateOrder { simultaneous, phi_first };

/// Every knob of a training run. Parsed from `key = value` text whose keys
/// are the field names below.
struct TrainConfig {
  double lambda1 = 0.5;         ///< weight of the contrastive loss
  double lambda2 = 1e-4;        ///< weight of the L2 penalty on Θ
  double tau = 0.2;             ///< InfoNCE temperature
  double w = 0.8;               ///< positive-injection weight
  std::size_t batch_size = 2048;
  double learning_rate = 1e-3;  ///< Adam step for Θ
  double score_learning_rate = 1e-3;  ///< Adam step for φ
  int embed_dim = 64;
  int layers = 2;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 2024;
  bool use_cl = true;
  bool use_hard_neg = true;

  double init_std = 0.1;
  double sigma_min = 0.01;
  double sigma_max = 50.0;
  int total_steps = 100;
  int sampling_steps = 10;
  int score_outer_dim = 64;
  int score_inner_dim = 128;
  int time_dim = 64;

  int eval_k = 20;
  ClReduction cl_reduction = ClReduction::mean;
  ClMode cl_mode = ClMode::separate;
  L2Scope l2_scope = L2Scope::batch;
  UpdateOrder update_order = UpdateOrder::simultaneous;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

TrainConfig parse_config(std::string_view text, const std::string& source_name = "<config>");
std::string format_config(const TrainConfig& config);

/// Reads a config file. A path that does not exist but whose file name is a
/// built-in preset (douban, gowalla, tmall, yelp2018, amazon-cds, ml-1m,
/// default) resolves to that preset.
TrainConfig load_config(const std::filesystem::path& path);

std::vector<std::string> preset_names();
/// `key = value` text of a built-in preset; throws ConfigError if unknown.
std::string preset_text(std::string_view name);

/// Ablation labels used on the command line.
enum class Ablation { none, no_cl, no_ns, lightgcn };
Ablation parse_ablation(std::string_view label);
void apply_ablation(TrainConfig& config, Ablation ablation);

}  // namespace scone
